mod common;

use std::time::{Duration, Instant};

use restfuzz::campaign::{run_campaign, CampaignError};
use restfuzz::coverage::{encode_payload, CoverageError};
use restfuzz::report::EventKind;
use restfuzz::seeds::write_corpus_dir;
use restfuzz::sequence::parse_sequence;
use restfuzz::LineCoverageMap;

#[test]
fn black_box_campaign_reports_stats() {
    let server = common::mock();
    let dir = tempfile::tempdir().unwrap();
    let config = common::virtual_clock(common::config(&server, dir.path(), 1, 10.0));
    let stats = run_campaign(&common::minipet(), &config).unwrap();
    assert!(stats.requests_sent > 0);
    assert!(stats.requests_sent >= stats.sequences_executed);
    assert_eq!(stats.response_coverage.1, 16);
    assert_eq!(stats.line_bits_set, 0);

    let events = common::events(dir.path());
    let execs = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::SeedExec | EventKind::ChildExec))
        .count() as u64;
    assert_eq!(execs, stats.sequences_executed);
    assert!(events.windows(2).all(|w| w[0].tick < w[1].tick));
    // Findings follow the execution event of the same sequence.
    for (k, e) in events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::Finding)
    {
        let owner = events[..k]
            .iter()
            .rev()
            .find(|p| p.kind != EventKind::Finding && p.kind != EventKind::Warning)
            .unwrap();
        assert_eq!(owner.seq, e.seq);
        assert!(e.records[e.request.unwrap()].verdict.is_finding());
    }
}

#[test]
fn preloaded_corpus_is_used() {
    let server = common::mock();
    let report = tempfile::tempdir().unwrap();
    let corpus = tempfile::tempdir().unwrap();
    let seed = parse_sequence(r#"{"version":1,"requests":[{"method":"POST","path":"/store","params":{},"body":{"name":{"lit":"s"}}}]}"#).unwrap();
    write_corpus_dir(corpus.path(), std::slice::from_ref(&seed)).unwrap();
    let mut config = common::virtual_clock(common::config(&server, report.path(), 3, 1.0));
    config.corpus_dir = Some(corpus.path().to_path_buf());
    run_campaign(&common::minipet(), &config).unwrap();
    let seeds: Vec<_> = common::events(report.path())
        .into_iter()
        .filter(|e| e.kind == EventKind::SeedExec)
        .collect();
    assert_eq!(seeds.len(), 1);
    assert_eq!(seeds[0].sequence().unwrap().unwrap(), seed);
    assert_eq!(std::fs::read_dir(corpus.path()).unwrap().count(), 1);
}

#[test]
fn empty_corpus_dir_receives_generated_seeds() {
    let server = common::mock();
    let report = tempfile::tempdir().unwrap();
    let corpus = tempfile::tempdir().unwrap();
    let mut config = common::virtual_clock(common::config(&server, report.path(), 3, 0.5));
    config.corpus_dir = Some(corpus.path().join("seeds"));
    run_campaign(&common::minipet(), &config).unwrap();
    assert_eq!(
        std::fs::read_dir(corpus.path().join("seeds"))
            .unwrap()
            .count(),
        8
    );
}

#[test]
fn wall_clock_budget_is_respected() {
    let server = common::mock();
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    run_campaign(
        &common::minipet(),
        &common::config(&server, dir.path(), 5, 1.0),
    )
    .unwrap();
    assert!(
        start.elapsed() < Duration::from_millis(1500),
        "{:?}",
        start.elapsed()
    );
}

#[test]
fn unreachable_agent_fails_at_startup() {
    let server = common::mock();
    let dir = tempfile::tempdir().unwrap();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut config = common::config(&server, dir.path(), 1, 1.0);
    config.agent_url = Some(format!("http://127.0.0.1:{port}"));
    assert!(matches!(
        run_campaign(&common::minipet(), &config),
        Err(CampaignError::Agent(CoverageError::AgentUnreachable { .. }))
    ));
}

#[test]
fn lost_agent_downgrades_to_black_box() {
    // An agent that answers three fetches and then fails.
    let agent = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", agent.server_addr().to_ip().unwrap());
    std::thread::spawn(move || {
        let mut map = LineCoverageMap::new(8);
        map.set(1);
        for (n, req) in agent.incoming_requests().enumerate() {
            let _ = if n < 3 {
                req.respond(tiny_http::Response::from_string(encode_payload(&map)))
            } else {
                req.respond(tiny_http::Response::empty(503))
            };
        }
    });
    let server = common::mock();
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::virtual_clock(common::config(&server, dir.path(), 1, 2.0));
    config.agent_url = Some(url);
    let stats = run_campaign(&common::minipet(), &config).unwrap();
    assert_eq!(stats.line_bits_set, 1);
    assert!(stats.sequences_executed > 8);
    let lost: Vec<_> = common::events(dir.path())
        .into_iter()
        .filter(|e| e.kind == EventKind::Warning && e.source.as_deref() == Some("coverage"))
        .collect();
    assert_eq!(lost.len(), 1);
}
