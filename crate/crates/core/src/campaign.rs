//! The fuzzing campaign: seed, then select → mutate → execute → check →
//! coverage → schedule until the budget runs out.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CampaignConfig, Clock, ConfigError};
use crate::coverage::{
    novelty, AgentClient, CoverageError, CoverageSnapshot, EndpointCoverageMap, LineCoverageMap,
    Novelty,
};
use crate::graph::{build_dependency_graph, DependencyGraph};
use crate::harness::{verdict_for, Harness, ResponseRecord, Verdict};
use crate::mutation::Mutator;
use crate::openapi::{parse_spec_with_warnings, ApiSpec, SpecError};
use crate::report::{
    now_iso8601, EventKind, EventLog, EventRecord, NoveltyCounts, RecordSummary, ReportError,
    ReportState, Reports, EVENTS_FILE,
};
use crate::scheduler::{Corpus, SchedulerError};
use crate::seeds::{generate_corpus, load_corpus_dir, write_corpus_dir, CorpusDirError};
use crate::sequence::RequestSequence;
use crate::Warning;

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("cannot read spec {path}: {source}")]
    SpecIo {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Agent(#[from] CoverageError),
    #[error(transparent)]
    Corpus(#[from] CorpusDirError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CampaignStats {
    pub sequences_executed: u64,
    pub requests_sent: u64,
    pub verdicts: BTreeMap<Verdict, u64>,
    pub findings: u64,
    pub warnings: u64,
    /// (covered spec-listed triples, spec-listed triples).
    pub response_coverage: (usize, usize),
    pub line_bits_set: usize,
    pub corpus_size: usize,
    pub rng_seed: u64,
    pub started_at: String,
    pub ended_at: String,
}

impl CampaignStats {
    pub fn verdict_count(&self, v: Verdict) -> u64 {
        self.verdicts.get(&v).copied().unwrap_or(0)
    }
}

/// Folds one event into the counters.
pub fn tick_stats(mut stats: CampaignStats, event: &EventRecord) -> CampaignStats {
    match event.kind {
        EventKind::SeedExec | EventKind::ChildExec => {
            stats.sequences_executed += 1;
            stats.requests_sent += event.records.len() as u64;
            for r in &event.records {
                *stats.verdicts.entry(r.verdict).or_insert(0) += 1;
            }
        }
        EventKind::Finding => stats.findings += 1,
        EventKind::Warning => stats.warnings += 1,
    }
    stats
}

pub fn load_spec(path: &Path) -> Result<(ApiSpec, Vec<Warning>), CampaignError> {
    let text = fs::read_to_string(path).map_err(|source| CampaignError::SpecIo {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_spec_with_warnings(&text)?)
}

/// Initial corpus: the `*.json` files of the corpus directory if it has
/// any, otherwise generated from the spec (and written there when set).
pub fn initial_corpus(
    spec: &ApiSpec,
    graph: &DependencyGraph,
    corpus_dir: Option<&Path>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<RequestSequence>, Vec<Warning>), CampaignError> {
    if let Some(dir) = corpus_dir {
        let loaded = load_corpus_dir(dir)?;
        if !loaded.is_empty() {
            return Ok((loaded, Vec::new()));
        }
    }
    let (corpus, warnings) = generate_corpus(spec, graph, rng);
    if let Some(dir) = corpus_dir {
        write_corpus_dir(dir, &corpus)?;
    }
    Ok((corpus, warnings))
}

enum Timer {
    Wall(Instant),
    Virtual { request_ms: u64, elapsed_ms: u64 },
}

impl Timer {
    fn new(clock: Clock) -> Self {
        match clock {
            Clock::Wall => Timer::Wall(Instant::now()),
            Clock::Virtual { request_ms } => Timer::Virtual {
                request_ms,
                elapsed_ms: 0,
            },
        }
    }

    fn elapsed_secs(&self) -> f64 {
        match self {
            Timer::Wall(start) => start.elapsed().as_secs_f64(),
            Timer::Virtual { elapsed_ms, .. } => *elapsed_ms as f64 / 1000.0,
        }
    }

    /// Advances virtual time and replaces measured latencies with the
    /// fixed per-request cost.
    fn charge(&mut self, records: &mut [ResponseRecord]) {
        if let Timer::Virtual {
            request_ms,
            elapsed_ms,
        } = self
        {
            for r in records {
                r.latency_ms = *request_ms;
                *elapsed_ms += *request_ms;
            }
        }
    }
}

struct Run<'a> {
    spec: &'a ApiSpec,
    config: &'a CampaignConfig,
    harness: Harness,
    agent: Option<AgentClient>,
    endpoint: EndpointCoverageMap,
    line: Option<LineCoverageMap>,
    corpus: Corpus,
    log: Option<EventLog>,
    report: ReportState,
    stats: CampaignStats,
    seen_warnings: HashSet<String>,
    tick: u64,
    timer: Timer,
}

impl Run<'_> {
    fn budget_left(&self) -> bool {
        if let Some(max) = self.config.max_execs {
            if self.stats.sequences_executed >= max {
                return false;
            }
        }
        self.timer.elapsed_secs() < self.config.time_budget_secs
    }

    fn emit(&mut self, mut event: EventRecord) -> Result<(), CampaignError> {
        self.tick += 1;
        event.tick = self.tick;
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.report
            .observe(&event)
            .expect("events built by the campaign are well formed");
        self.stats = tick_stats(std::mem::take(&mut self.stats), &event);
        Ok(())
    }

    /// Emits each distinct warning once.
    fn warn(&mut self, warnings: Vec<Warning>) -> Result<(), CampaignError> {
        for w in warnings {
            if !self.seen_warnings.insert(w.to_string()) {
                continue;
            }
            let mut e = EventRecord::new(0, EventKind::Warning);
            e.source = Some(w.source.to_string());
            e.message = Some(w.message);
            self.emit(e)?;
        }
        Ok(())
    }

    fn line_snapshot(&mut self) -> Result<Option<LineCoverageMap>, CampaignError> {
        let Some(agent) = &mut self.agent else {
            return Ok(None);
        };
        match agent.fetch(true) {
            Ok(map) => Ok(Some(map)),
            Err(e) => {
                self.agent = None;
                self.warn(vec![Warning::new(
                    "coverage",
                    format!("coverage agent lost, continuing black-box: {e}"),
                )])?;
                Ok(None)
            }
        }
    }

    /// Executes one sequence and logs it. Returns the snapshot, novelty
    /// and execution time for scheduling.
    fn execute(
        &mut self,
        seq: &RequestSequence,
        kind: EventKind,
    ) -> Result<(CoverageSnapshot, Novelty, u64), CampaignError> {
        let mut warnings = Vec::new();
        let mut records = self.harness.execute_sequence(self.spec, seq, &mut warnings);
        self.timer.charge(&mut records);
        self.warn(warnings)?;

        let endpoint = self.endpoint.record_responses(seq, &records);
        let line = self.line_snapshot()?;
        let snapshot = CoverageSnapshot { endpoint, line };
        let new = novelty(&mut self.endpoint, &mut self.line, &snapshot);

        let summaries: Vec<RecordSummary> = records
            .iter()
            .map(|r| {
                let verdict = verdict_for(
                    self.spec,
                    &seq.requests[r.request_index],
                    r,
                    self.config.checker,
                );
                RecordSummary::new(r, verdict)
            })
            .collect();
        let seq_json = seq.to_json();
        let mut event = EventRecord::new(0, kind);
        event.seq = Some(seq_json.clone());
        event.records = summaries.clone();
        event.novelty = NoveltyCounts {
            endpoint: new.endpoint.len(),
            line: new.line.len(),
        };
        self.emit(event)?;
        for (i, s) in summaries.iter().enumerate() {
            if s.verdict.is_finding() {
                let mut f = EventRecord::new(0, EventKind::Finding);
                f.seq = Some(seq_json.clone());
                f.records = summaries.clone();
                f.request = Some(i);
                self.emit(f)?;
            }
        }
        let exec_ms = records.iter().map(|r| r.latency_ms).sum();
        Ok((snapshot, new, exec_ms))
    }
}

/// Runs a campaign against the configured target and writes reports to
/// the report directory when one is set.
pub fn run_campaign(
    spec: &ApiSpec,
    config: &CampaignConfig,
) -> Result<CampaignStats, CampaignError> {
    config.validate()?;
    let started_at = now_iso8601();
    let graph = build_dependency_graph(spec);

    let mut startup = Vec::new();
    let rng_seed = if config.rng_seed == 0 {
        let derived = chrono::Utc::now().timestamp_nanos_opt().unwrap_or(1) as u64 | 1;
        startup.push(Warning::new(
            "campaign",
            format!("rng seed derived from clock: {derived}"),
        ));
        derived
    } else {
        config.rng_seed
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let agent = match &config.agent_url {
        Some(url) => {
            let mut client = AgentClient::new(url.clone(), config.fetch_timeout_ms);
            client.fetch(true)?;
            Some(client)
        }
        None => None,
    };

    let log = match &config.report_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|source| ReportError::Io {
                path: dir.clone(),
                source,
            })?;
            Some(EventLog::create(&dir.join(EVENTS_FILE))?)
        }
        None => None,
    };

    let (seeds, seed_warnings) =
        initial_corpus(spec, &graph, config.corpus_dir.as_deref(), &mut rng)?;
    startup.extend(seed_warnings);

    let mut run = Run {
        spec,
        config,
        harness: Harness::new(config.target(&spec.base_url)),
        agent,
        endpoint: EndpointCoverageMap::new(spec),
        line: None,
        corpus: Corpus::new(),
        log,
        report: ReportState::new(spec),
        stats: CampaignStats::default(),
        seen_warnings: HashSet::new(),
        tick: 0,
        timer: Timer::new(config.clock),
    };
    run.warn(startup)?;

    for seed in &seeds {
        if !run.budget_left() {
            break;
        }
        let (snapshot, _, exec_ms) = run.execute(seed, EventKind::SeedExec)?;
        let tick = run.tick;
        run.corpus.add_seed(seed, &snapshot, exec_ms, tick);
    }

    let mutator = Mutator::new(spec, &graph);
    'campaign: while run.budget_left() && !run.corpus.is_empty() {
        let parent = run.corpus.select_next()?;
        let energy = run
            .corpus
            .assign_energy(parent, config.schedule)
            .min(config.max_energy);
        run.corpus.mark_fuzzed(parent);
        let parent_seq = run.corpus.entry(parent).sequence.clone();
        for _ in 0..energy {
            if !run.budget_left() {
                break 'campaign;
            }
            let child = mutator.mutate(&parent_seq, &mut rng);
            let (snapshot, new, exec_ms) = run.execute(&child, EventKind::ChildExec)?;
            let tick = run.tick;
            run.corpus
                .add_if_interesting(&child, &snapshot, &new, exec_ms, tick);
        }
    }

    if let Some(dir) = &config.report_dir {
        Reports::render(&graph, &run.report).write(dir)?;
    }

    let mut stats = run.stats;
    stats.response_coverage = run.endpoint.response_coverage();
    stats.line_bits_set = run.line.as_ref().map_or(0, LineCoverageMap::count_set);
    stats.corpus_size = run.corpus.len();
    stats.rng_seed = rng_seed;
    stats.started_at = started_at;
    stats.ended_at = now_iso8601();
    Ok(stats)
}
