//! Markdown reports and the line-delimited event log.
//!
//! A campaign writes four files into its report directory:
//! `dependency_graph.md`, `corpus.md`, `endpoint_coverage.md` and
//! `events.jsonl`. The first three are pure functions of the spec and the
//! event stream, so [`replay`] can rebuild them from the log alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::coverage::EndpointCoverageMap;
use crate::graph::{build_dependency_graph, DependencyGraph};
use crate::harness::{ResponseRecord, Transport, Verdict};
use crate::openapi::{ApiSpec, Method};
use crate::sequence::{parse_sequence, ParameterValue, RequestSequence};

pub const EVENT_LOG_VERSION: u32 = 1;

pub const DEPENDENCY_GRAPH_FILE: &str = "dependency_graph.md";
pub const CORPUS_FILE: &str = "corpus.md";
pub const ENDPOINT_COVERAGE_FILE: &str = "endpoint_coverage.md";
pub const EVENTS_FILE: &str = "events.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("event tick {tick} does not follow {previous}")]
    TickNotIncreasing { previous: u64, tick: u64 },
    #[error("event log line {line}: {message}")]
    MalformedEvent { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SeedExec,
    ChildExec,
    Warning,
    Finding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub status: Option<u16>,
    pub transport: Transport,
    pub latency_ms: u64,
    pub verdict: Verdict,
}

impl RecordSummary {
    pub fn new(record: &ResponseRecord, verdict: Verdict) -> Self {
        Self {
            status: record.status,
            transport: record.transport,
            latency_ms: record.latency_ms,
            verdict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NoveltyCounts {
    pub endpoint: usize,
    pub line: usize,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub v: u32,
    pub tick: u64,
    pub ts: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<Value>,
    #[serde(default)]
    pub records: Vec<RecordSummary>,
    #[serde(default)]
    pub novelty: NoveltyCounts,
    /// For `finding` events: which request of `seq` produced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl EventRecord {
    pub fn new(tick: u64, kind: EventKind) -> Self {
        Self {
            v: EVENT_LOG_VERSION,
            tick,
            ts: now_iso8601(),
            kind,
            seq: None,
            records: Vec::new(),
            novelty: NoveltyCounts::default(),
            request: None,
            source: None,
            message: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    pub fn sequence(&self) -> Option<Result<RequestSequence, String>> {
        self.seq
            .as_ref()
            .map(|v| parse_sequence(&v.to_string()).map_err(|e| e.to_string()))
    }
}

pub fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Append-only writer for `events.jsonl`. Every line is flushed as it is
/// written.
pub struct EventLog {
    path: PathBuf,
    file: File,
    last_tick: Option<u64>,
}

impl EventLog {
    /// Creates or truncates the log.
    pub fn create(path: &Path) -> Result<Self, ReportError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|source| ReportError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_tick: None,
        })
    }

    pub fn append(&mut self, event: &EventRecord) -> Result<(), ReportError> {
        if let Some(previous) = self.last_tick {
            if event.tick <= previous {
                return Err(ReportError::TickNotIncreasing {
                    previous,
                    tick: event.tick,
                });
            }
        }
        let mut line = event.to_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| ReportError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.last_tick = Some(event.tick);
        Ok(())
    }
}

pub fn parse_event_log(text: &str) -> Result<Vec<EventRecord>, ReportError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| ReportError::MalformedEvent {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Turns `METHOD /a/{b}` into a Mermaid-safe id: runs of
/// non-alphanumerics become one `_`, with no trailing `_`.
pub fn mermaid_id(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_');
    if trimmed.is_empty() {
        "n".into()
    } else {
        trimmed.to_string()
    }
}

fn mermaid_text(s: &str) -> String {
    s.replace('"', "#quot;").replace('|', "#124;")
}

/// Mermaid ids for `labels`, made unique by suffixing `_2`, `_3`, ...
fn unique_ids<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut taken = std::collections::BTreeSet::new();
    labels
        .map(|l| {
            let base = mermaid_id(l);
            let mut id = base.clone();
            let n = seen.entry(base.clone()).or_insert(1);
            while taken.contains(&id) {
                *n += 1;
                id = format!("{base}_{n}");
            }
            taken.insert(id.clone());
            id
        })
        .collect()
}

pub fn render_dependency_graph_markdown(graph: &DependencyGraph) -> String {
    let labels: Vec<String> = graph.nodes.iter().map(|n| n.label()).collect();
    let ids = unique_ids(labels.iter().map(String::as_str));
    let mut out = String::from("# Dependency graph\n\n");
    let _ = writeln!(
        out,
        "{} operations, {} inferred links. An edge label reads `response field → parameter`.\n",
        graph.nodes.len(),
        graph.edges.len()
    );
    out.push_str("```mermaid\ngraph TD\n");
    for (id, label) in ids.iter().zip(&labels) {
        let _ = writeln!(out, "    {id}[\"{}\"]", mermaid_text(label));
    }
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "    {} -->|{} → {}| {}",
            ids[e.producer],
            mermaid_text(&e.field),
            mermaid_text(&e.param),
            ids[e.consumer]
        );
    }
    out.push_str("```\n");
    out
}

pub fn render_corpus_report(corpus: &[RequestSequence]) -> String {
    let mut out = String::from("# Initial corpus\n\n");
    let _ = writeln!(out, "{} sequences.\n", corpus.len());
    for (k, seq) in corpus.iter().enumerate() {
        let _ = writeln!(out, "## Sequence {k}\n");
        out.push_str("```mermaid\ngraph TD\n");
        for (i, req) in seq.requests.iter().enumerate() {
            let _ = writeln!(out, "    r{i}[\"{i}: {}\"]", mermaid_text(&req.label()));
        }
        for i in 1..seq.len() {
            let _ = writeln!(out, "    r{} --> r{i}", i - 1);
        }
        for slot in seq.slots() {
            if let ParameterValue::Reference { request, field } = seq.value(&slot) {
                let name = match seq.slot_field_path(&slot) {
                    p if p.is_empty() => seq.slot_name(&slot),
                    p => p,
                };
                let _ = writeln!(
                    out,
                    "    r{request} -.->|{} → {}| r{}",
                    mermaid_text(field),
                    mermaid_text(&name),
                    slot.request
                );
            }
        }
        out.push_str("```\n\n");
    }
    out
}

/// The request shown for a covered triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub sequence: RequestSequence,
    pub request: usize,
}

fn status_cell(index: usize, mark: &str, examples: &BTreeMap<usize, Example>) -> String {
    match examples.get(&index) {
        Some(_) => format!("[{mark}](#example-{index})"),
        None => mark.to_string(),
    }
}

/// Table grouped by (path, method): listed statuses marked ✓ or ✗,
/// then unlisted observed statuses marked ⚠. Covered cells link to the
/// example for that triple.
pub fn render_endpoint_coverage_report(
    map: &EndpointCoverageMap,
    examples: &BTreeMap<usize, Example>,
) -> String {
    let (covered, listed) = map.response_coverage();
    let mut out = String::from("# Endpoint coverage\n\n");
    let _ = writeln!(
        out,
        "Response coverage: {covered}/{listed} listed status codes triggered. \
         {} unlisted status codes observed.\n",
        map.len() - map.listed()
    );
    out.push_str(
        "✓ listed and triggered, ✗ listed and not triggered, ⚠ triggered but not listed.\n\n",
    );
    out.push_str("| Path | Method | Status | Result |\n|---|---|---|---|\n");

    let mut groups: Vec<((&str, Method), Vec<usize>)> = Vec::new();
    for (i, (path, method, _)) in map.registry().iter().enumerate() {
        match groups
            .iter_mut()
            .find(|((p, m), _)| *p == path.as_str() && *m == *method)
        {
            Some((_, members)) => members.push(i),
            None => groups.push(((path.as_str(), *method), vec![i])),
        }
    }
    for ((path, method), members) in &groups {
        for &i in members {
            let status = map.registry()[i].2;
            let cell = if !map.is_listed(i) {
                status_cell(i, "⚠", examples)
            } else if map.is_set(i) {
                status_cell(i, "✓", examples)
            } else {
                "✗".to_string()
            };
            let _ = writeln!(out, "| `{path}` | {method} | {status} | {cell} |");
        }
    }

    if !examples.is_empty() {
        out.push_str("\n## Examples\n");
    }
    for (&i, ex) in examples {
        let (path, method, status) = &map.registry()[i];
        let _ = writeln!(
            out,
            "\n### <a id=\"example-{i}\"></a>{method} {path} → {status}\n\nRequest {} of:\n\n```json\n{}```",
            ex.request,
            ex.sequence.serialize()
        );
    }
    out
}

/// Report inputs accumulated from the event stream. The campaign and
/// [`replay`] feed it the same events, so both render the same bytes.
#[derive(Debug, Clone)]
pub struct ReportState {
    pub endpoint: EndpointCoverageMap,
    pub examples: BTreeMap<usize, Example>,
    pub seeds: Vec<RequestSequence>,
}

impl ReportState {
    pub fn new(spec: &ApiSpec) -> Self {
        Self {
            endpoint: EndpointCoverageMap::new(spec),
            examples: BTreeMap::new(),
            seeds: Vec::new(),
        }
    }

    /// Folds one event in. Only execution events carry coverage.
    pub fn observe(&mut self, event: &EventRecord) -> Result<(), String> {
        if !matches!(event.kind, EventKind::SeedExec | EventKind::ChildExec) {
            return Ok(());
        }
        let seq = event
            .sequence()
            .ok_or_else(|| format!("tick {}: execution event without `seq`", event.tick))??;
        for (i, r) in event.records.iter().enumerate() {
            let (Some(status), Transport::Ok) = (r.status, r.transport) else {
                continue;
            };
            let Some(req) = seq.requests.get(i) else {
                return Err(format!("tick {}: more records than requests", event.tick));
            };
            let bit = self.endpoint.endpoint_bit(&req.path, req.method, status);
            self.endpoint.set(bit);
            self.examples.entry(bit).or_insert_with(|| Example {
                sequence: seq.clone(),
                request: i,
            });
        }
        if event.kind == EventKind::SeedExec {
            self.seeds.push(seq);
        }
        Ok(())
    }
}

/// The three Markdown reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reports {
    pub dependency_graph: String,
    pub corpus: String,
    pub endpoint_coverage: String,
}

impl Reports {
    pub fn render(graph: &DependencyGraph, state: &ReportState) -> Self {
        Self {
            dependency_graph: render_dependency_graph_markdown(graph),
            corpus: render_corpus_report(&state.seeds),
            endpoint_coverage: render_endpoint_coverage_report(&state.endpoint, &state.examples),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, text) in [
            (DEPENDENCY_GRAPH_FILE, &self.dependency_graph),
            (CORPUS_FILE, &self.corpus),
            (ENDPOINT_COVERAGE_FILE, &self.endpoint_coverage),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|source| ReportError::Io { path, source })?;
        }
        Ok(())
    }
}

/// Rebuilds the reports from an event log.
pub fn replay(spec: &ApiSpec, events_text: &str) -> Result<Reports, ReportError> {
    let events = parse_event_log(events_text)?;
    let mut state = ReportState::new(spec);
    let mut previous: Option<u64> = None;
    for (n, e) in events.iter().enumerate() {
        if let Some(p) = previous.filter(|&p| e.tick <= p) {
            return Err(ReportError::TickNotIncreasing {
                previous: p,
                tick: e.tick,
            });
        }
        previous = Some(e.tick);
        state
            .observe(e)
            .map_err(|message| ReportError::MalformedEvent {
                line: n + 1,
                message,
            })?;
    }
    Ok(Reports::render(&build_dependency_graph(spec), &state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::TemplatedRequest;
    use crate::{parse_spec, MINIPET_SPEC};

    fn record(status: u16, verdict: Verdict) -> RecordSummary {
        RecordSummary {
            status: Some(status),
            transport: Transport::Ok,
            latency_ms: 1,
            verdict,
        }
    }

    fn get_store() -> RequestSequence {
        let mut r = TemplatedRequest::new(Method::Get, "/store/{id}");
        r.params.insert("id".into(), ParameterValue::literal("1"));
        RequestSequence::new(vec![r])
    }

    #[test]
    fn mermaid_ids_collapse_separators() {
        assert_eq!(mermaid_id("POST /store"), "POST_store");
        assert_eq!(mermaid_id("GET /store/{id}"), "GET_store_id");
        assert_eq!(mermaid_id("///"), "n");
        assert_eq!(
            unique_ids(["GET /a-b", "GET /a_b", "GET /a.b"].into_iter()),
            vec!["GET_a_b", "GET_a_b_2", "GET_a_b_3"]
        );
    }

    #[test]
    fn empty_graph_has_no_edges() {
        let g = DependencyGraph {
            nodes: Vec::new(),
            edges: Vec::new(),
        };
        let md = render_dependency_graph_markdown(&g);
        assert!(md.contains("```mermaid\ngraph TD\n```"));
        assert!(!md.contains("-->"));
    }

    #[test]
    fn single_request_corpus_is_one_node() {
        let md = render_corpus_report(&[get_store()]);
        assert!(md.contains("r0[\"0: GET /store/{id}\"]"));
        assert!(!md.contains("-->"));
    }

    #[test]
    fn fresh_map_is_all_crosses() {
        let spec = parse_spec(MINIPET_SPEC).unwrap();
        let md =
            render_endpoint_coverage_report(&EndpointCoverageMap::new(&spec), &BTreeMap::new());
        assert_eq!(md.matches("| ✗ |").count(), 16);
        assert!(
            !md.contains('⚠') || md.matches('⚠').count() == 1,
            "only the legend mentions ⚠"
        );
        assert!(!md.contains("example-"));
        assert!(md.contains("0/16"));
    }

    #[test]
    fn state_marks_listed_and_unlisted() {
        let spec = parse_spec(MINIPET_SPEC).unwrap();
        let mut state = ReportState::new(&spec);
        for (tick, status) in [(1, 200), (2, 418), (3, 200)] {
            let mut e = EventRecord::new(tick, EventKind::ChildExec);
            e.seq = Some(get_store().to_json());
            e.records = vec![record(status, Verdict::ExpectedStatus)];
            state.observe(&e).unwrap();
        }
        let md = render_endpoint_coverage_report(&state.endpoint, &state.examples);
        assert!(
            md.contains("| `/store/{id}` | GET | 200 | [✓](#example-2) |"),
            "{md}"
        );
        assert!(md.contains("| `/store/{id}` | GET | 404 | ✗ |"));
        assert!(md.contains("| `/store/{id}` | GET | 418 | [⚠](#example-16) |"));
        assert!(md.contains("<a id=\"example-16\"></a>"));
        assert_eq!(state.examples.len(), 2);
    }

    #[test]
    fn log_rejects_repeated_tick() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = EventLog::create(&dir.path().join(EVENTS_FILE)).unwrap();
        log.append(&EventRecord::new(1, EventKind::Warning))
            .unwrap();
        assert!(matches!(
            log.append(&EventRecord::new(1, EventKind::Warning)),
            Err(ReportError::TickNotIncreasing { .. })
        ));
    }

    #[test]
    fn event_line_schema() {
        let mut e = EventRecord::new(7, EventKind::ChildExec);
        e.seq = Some(get_store().to_json());
        e.records = vec![
            record(200, Verdict::ExpectedStatus),
            record(500, Verdict::ServerError),
        ];
        e.novelty = NoveltyCounts {
            endpoint: 1,
            line: 0,
        };
        let line = e.to_line();
        assert!(!line.contains('\n'));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["kind"], "child_exec");
        assert_eq!(v["records"].as_array().unwrap().len(), 2);
        assert_eq!(
            v["records"][0],
            serde_json::json!({"status":200,"transport":"ok","latency_ms":1,"verdict":"ExpectedStatus"})
        );
        assert_eq!(v["novelty"], serde_json::json!({"endpoint":1,"line":0}));
        let mut with_extra = v.clone();
        with_extra["future_field"] = Value::Bool(true);
        let back: EventRecord = serde_json::from_value(with_extra).unwrap();
        assert_eq!(back, e);
    }
}
