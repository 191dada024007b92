#![allow(dead_code)]

use std::path::Path;

use restfuzz::config::{CampaignConfig, Clock};
use restfuzz::mock::MockServer;
use restfuzz::report::{parse_event_log, EventKind, EventRecord, EVENTS_FILE};
use restfuzz::{parse_spec, ApiSpec, MINIPET_SPEC};

pub fn minipet() -> ApiSpec {
    parse_spec(MINIPET_SPEC).unwrap()
}

pub fn mock() -> MockServer {
    MockServer::start(0, 0).unwrap()
}

pub fn config(
    server: &MockServer,
    report_dir: &Path,
    seed: u64,
    budget_secs: f64,
) -> CampaignConfig {
    CampaignConfig {
        base_url: Some(server.api_url()),
        rng_seed: seed,
        time_budget_secs: budget_secs,
        report_dir: Some(report_dir.to_path_buf()),
        ..CampaignConfig::default()
    }
}

pub fn virtual_clock(mut c: CampaignConfig) -> CampaignConfig {
    c.clock = Clock::Virtual { request_ms: 1 };
    c
}

pub fn events(report_dir: &Path) -> Vec<EventRecord> {
    parse_event_log(&std::fs::read_to_string(report_dir.join(EVENTS_FILE)).unwrap()).unwrap()
}

/// The injected bug behind a server-error finding, told apart by the
/// operation that answered 500.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bug {
    LongPetName,
    DanglingPet,
    MagicVoucher,
}

pub struct Finding {
    pub bug: Bug,
    pub sequence_len: usize,
}

pub fn server_error_findings(events: &[EventRecord]) -> Vec<Finding> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::Finding)
        .filter_map(|e| {
            let i = e.request?;
            if e.records.get(i)?.status != Some(500) {
                return None;
            }
            let reqs = e.seq.as_ref()?["requests"].as_array()?;
            let req = &reqs[i];
            let bug = match (req["method"].as_str()?, req["path"].as_str()?) {
                ("PUT", "/pet/{id}") => Bug::LongPetName,
                ("GET", "/pet/{id}") => Bug::DanglingPet,
                ("GET", "/store/{id}") => Bug::MagicVoucher,
                other => panic!("500 from an operation without an injected bug: {other:?}"),
            };
            Some(Finding {
                bug,
                sequence_len: reqs.len(),
            })
        })
        .collect()
}

/// Event lines with the wall-clock field removed.
pub fn without_timestamps(report_dir: &Path) -> Vec<String> {
    std::fs::read_to_string(report_dir.join(EVENTS_FILE))
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("ts");
            v.to_string()
        })
        .collect()
}
