mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restfuzz::coverage::{fetch_line_coverage, AgentClient, CoverageError};
use restfuzz::graph::build_dependency_graph;
use restfuzz::harness::{
    check_response, render_request, Env, Harness, TargetConfig, Transport, Verdict,
};
use restfuzz::mock::{bits, TOTAL_BITS};
use restfuzz::seeds::generate_corpus;
use restfuzz::sequence::parse_sequence;
use restfuzz::{Method, RequestSequence, Warning};

fn seed_ending_in(spec: &restfuzz::ApiSpec, method: Method, path: &str) -> RequestSequence {
    let graph = build_dependency_graph(spec);
    let (corpus, _) = generate_corpus(spec, &graph, &mut ChaCha8Rng::seed_from_u64(1));
    corpus
        .into_iter()
        .find(|s| {
            let last = s.requests.last().unwrap();
            last.method == method && last.path == path
        })
        .unwrap()
}

fn run(
    server: &restfuzz::mock::MockServer,
    seq: &RequestSequence,
) -> Vec<restfuzz::harness::ResponseRecord> {
    let spec = common::minipet();
    let harness = Harness::new(TargetConfig::new(server.api_url()));
    let mut warnings = Vec::new();
    harness.execute_sequence(&spec, seq, &mut warnings)
}

#[test]
fn happy_path_seed_runs_clean() {
    let server = common::mock();
    let spec = common::minipet();
    let seq = seed_ending_in(&spec, Method::Get, "/pet/{id}");
    assert_eq!(seq.len(), 3);
    let records = run(&server, &seq);
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.transport == Transport::Ok));
    assert_eq!(
        records
            .iter()
            .map(|r| r.status.unwrap())
            .collect::<Vec<_>>(),
        [201, 201, 200]
    );
    for (req, rec) in seq.requests.iter().zip(&records) {
        assert_eq!(
            check_response(&spec, req, rec, Default::default()).unwrap(),
            Verdict::ExpectedStatus
        );
    }
}

#[test]
fn reference_is_bound_from_earlier_response() {
    let server = common::mock();
    let spec = common::minipet();
    let seq = seed_ending_in(&spec, Method::Post, "/pet");
    let target = TargetConfig::new(server.api_url());
    let harness = Harness::new(target.clone());
    // Burn ids so the store created by the sequence gets id 7.
    for _ in 0..6 {
        let mut w = Vec::new();
        harness.execute_sequence(
            &spec,
            &RequestSequence::new(vec![seq.requests[0].clone()]),
            &mut w,
        );
    }
    let first = harness.send(
        0,
        &render_request(
            &spec,
            &seq.requests[0],
            &Env::new(),
            &target,
            &mut Vec::new(),
        ),
    );
    assert_eq!(first.body, br#"{"id":"7"}"#);
    let mut env = Env::new();
    env.push_response(&first.body);
    let pet = render_request(&spec, &seq.requests[1], &env, &target, &mut Vec::new());
    assert!(String::from_utf8(pet.body)
        .unwrap()
        .contains(r#""store_id":"7""#));
    assert!(pet
        .headers
        .iter()
        .any(|(k, v)| k == "Content-Type" && v == "application/json"));
}

#[test]
fn unknown_route_and_unresolved_reference() {
    let server = common::mock();
    let nope =
        parse_sequence(r#"{"version":1,"requests":[{"method":"GET","path":"/nope","params":{}}]}"#)
            .unwrap();
    let records = run(&server, &nope);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].status, Some(404));

    // GET /store/{id} answers 404 without an id field, so the second
    // request's reference falls back to a schema value.
    let dangling = parse_sequence(
        r#"{"version":1,"requests":[
            {"method":"GET","path":"/store/{id}","params":{"id":{"lit":"99"}}},
            {"method":"GET","path":"/store/{id}","params":{"id":{"ref":{"req":0,"field":"id"}}}}]}"#,
    )
    .unwrap();
    let spec = common::minipet();
    let mut warnings: Vec<Warning> = Vec::new();
    let records = Harness::new(TargetConfig::new(server.api_url())).execute_sequence(
        &spec,
        &dangling,
        &mut warnings,
    );
    assert_eq!(records.len(), 2);
    assert!(
        warnings.iter().any(|w| w.source == "harness"),
        "{warnings:?}"
    );
}

#[test]
fn unreachable_target_stops_after_one_record() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let spec = common::minipet();
    let seq = seed_ending_in(&spec, Method::Get, "/pet/{id}");
    let mut target = TargetConfig::new(format!("http://127.0.0.1:{port}"));
    target.timeout_ms = 500;
    let records = Harness::new(target).execute_sequence(&spec, &seq, &mut Vec::new());
    assert_eq!(records.len(), 1);
    assert_ne!(records[0].transport, Transport::Ok);
    assert_eq!(records[0].status, None);
}

#[test]
fn dangling_pet_chain_is_a_server_error() {
    let server = common::mock();
    let seq = parse_sequence(
        r#"{"version":1,"requests":[
            {"method":"POST","path":"/store","params":{},"body":{"name":{"lit":"s"}}},
            {"method":"POST","path":"/pet","params":{},"body":{"name":{"lit":"p"},"store_id":{"ref":{"req":0,"field":"id"}}}},
            {"method":"DELETE","path":"/store/{id}","params":{"id":{"lit":"1"}}},
            {"method":"GET","path":"/pet/{id}","params":{"id":{"lit":"2"}}}]}"#,
    )
    .unwrap();
    let statuses: Vec<_> = run(&server, &seq)
        .iter()
        .map(|r| r.status.unwrap())
        .collect();
    assert_eq!(statuses, [201, 201, 204, 500]);
}

#[test]
fn agent_fetch_and_reset() {
    let server = common::mock();
    let mut client = AgentClient::new(server.agent_url(), 1000);
    assert_eq!(client.fetch(true).unwrap().count_set(), 0);

    let voucher = parse_sequence(
        r#"{"version":1,"requests":[{"method":"GET","path":"/store/{id}","params":{"id":{"lit":"1"},"voucher":{"lit":"WU"}}}]}"#,
    )
    .unwrap();
    assert_eq!(run(&server, &voucher)[0].status, Some(404));
    let seen = client.fetch(false).unwrap();
    assert_eq!(seen.total_bits(), TOTAL_BITS);
    for b in [
        bits::GET_STORE,
        bits::VOUCHER_PRESENT,
        bits::VOUCHER_PREFIX[0],
        bits::VOUCHER_PREFIX[1],
    ] {
        assert!(seen.is_set(b), "bit {b}");
    }
    assert!(!seen.is_set(bits::VOUCHER_PREFIX[2]));

    assert_eq!(client.fetch(true).unwrap(), seen);
    assert_eq!(client.fetch(true).unwrap().count_set(), 0);
    assert_eq!(client.fetch(true).unwrap().count_set(), 0);
}

#[test]
fn reset_state_restarts_ids_and_coverage() {
    let server = common::mock();
    let post = parse_sequence(r#"{"version":1,"requests":[{"method":"POST","path":"/store","params":{},"body":{"name":{"lit":"s"}}}]}"#).unwrap();
    run(&server, &post);
    server.reset_state();
    server.reset_state();
    assert_eq!(server.coverage().count_set(), 0);
    assert_eq!(run(&server, &post)[0].body, br#"{"id":"1"}"#);
}

#[test]
fn unreachable_agent_is_reported() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let agent = ureq::AgentBuilder::new().build();
    let err = fetch_line_coverage(&agent, &format!("http://127.0.0.1:{port}"), true).unwrap_err();
    assert!(matches!(err, CoverageError::AgentUnreachable { .. }));
}
