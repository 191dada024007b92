//! Corpus of interesting sequences and power-schedule energy assignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::coverage::{CoverageSnapshot, Novelty};
use crate::sequence::RequestSequence;

/// Divisor applied to the base energy by every schedule except Exploit.
pub const BETA: f64 = 4.0;
pub const MIN_ENERGY: u32 = 1;
pub const MAX_ENERGY: u32 = 64;
const MAX_ALPHA: f64 = 32.0;
const MAX_EXPONENT: u64 = 10;
/// Once the corpus is this large, medians are refreshed only every this
/// many additions.
const MEDIAN_REFRESH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchedulerError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown schedule `{0}` (expected fast, explore, lin, exploit, quad or coe)")]
    UnknownSchedule(String),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Fast,
    Explore,
    Lin,
    Exploit,
    Quad,
    Coe,
}

impl Schedule {
    pub const ALL: [Schedule; 6] = [
        Schedule::Fast,
        Schedule::Explore,
        Schedule::Lin,
        Schedule::Exploit,
        Schedule::Quad,
        Schedule::Coe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Fast => "fast",
            Schedule::Explore => "explore",
            Schedule::Lin => "lin",
            Schedule::Exploit => "exploit",
            Schedule::Quad => "quad",
            Schedule::Coe => "coe",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Schedule {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schedule::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SchedulerError::UnknownSchedule(s.to_string()))
    }
}

/// Base energy: faster and shorter than the corpus median earns more.
pub fn base_energy(exec_time_ms: u64, len: usize, median_exec_ms: f64, median_len: f64) -> f64 {
    let a =
        MAX_ALPHA * median_exec_ms / exec_time_ms.max(1) as f64 * median_len / len.max(1) as f64;
    a.clamp(1.0, MAX_ALPHA)
}

/// Energy for an entry picked `s` times whose signature was observed `f`
/// times, with `mu` the mean observation count over all signatures.
pub fn energy(schedule: Schedule, alpha: f64, s: u64, f: u64, mu: f64) -> u32 {
    let f = f.max(1) as f64;
    let boost = (1u64 << s.min(MAX_EXPONENT)) as f64;
    let raw = match schedule {
        Schedule::Exploit => alpha,
        Schedule::Explore => alpha / BETA,
        Schedule::Fast => alpha / BETA * boost / f,
        Schedule::Coe if f > mu => 1.0,
        Schedule::Coe => alpha / BETA * boost,
        Schedule::Lin => alpha / BETA * s.max(1) as f64 / f,
        Schedule::Quad => alpha / BETA * (s.saturating_mul(s)).max(1) as f64 / f,
    };
    (raw.floor() as u64).clamp(MIN_ENERGY as u64, MAX_ENERGY as u64) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub sequence: RequestSequence,
    /// Sum of request latencies of the first execution.
    pub exec_time_ms: u64,
    pub signature: u64,
    /// Child batches generated from this entry.
    pub fuzz_count: u64,
    /// Times the scheduler picked this entry.
    pub selection_count: u64,
    pub discovered_at: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    signature_freq: BTreeMap<u64, u64>,
    serialized: HashSet<String>,
    cursor: usize,
    median_exec_ms: f64,
    median_len: f64,
    additions_since_refresh: usize,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &CorpusEntry {
        &self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn signature_freq(&self, signature: u64) -> u64 {
        self.signature_freq.get(&signature).copied().unwrap_or(0)
    }

    /// Mean observation count over all signatures seen.
    pub fn mean_freq(&self) -> f64 {
        if self.signature_freq.is_empty() {
            return 0.0;
        }
        self.signature_freq.values().sum::<u64>() as f64 / self.signature_freq.len() as f64
    }

    pub fn medians(&self) -> (f64, f64) {
        (self.median_exec_ms, self.median_len)
    }

    /// Counts the observation, then appends the sequence if it found new
    /// coverage and is not already in the corpus.
    pub fn add_if_interesting(
        &mut self,
        seq: &RequestSequence,
        snapshot: &CoverageSnapshot,
        novelty: &Novelty,
        exec_time_ms: u64,
        tick: u64,
    ) -> bool {
        let signature = snapshot.signature();
        *self.signature_freq.entry(signature).or_insert(0) += 1;
        if novelty.is_empty() {
            return false;
        }
        self.insert(seq, signature, exec_time_ms, tick)
    }

    /// Appends a seed regardless of novelty (duplicates are still rejected).
    pub fn add_seed(
        &mut self,
        seq: &RequestSequence,
        snapshot: &CoverageSnapshot,
        exec_time_ms: u64,
        tick: u64,
    ) -> bool {
        let signature = snapshot.signature();
        *self.signature_freq.entry(signature).or_insert(0) += 1;
        self.insert(seq, signature, exec_time_ms, tick)
    }

    fn insert(
        &mut self,
        seq: &RequestSequence,
        signature: u64,
        exec_time_ms: u64,
        tick: u64,
    ) -> bool {
        if !self.serialized.insert(seq.serialize_compact()) {
            return false;
        }
        self.entries.push(CorpusEntry {
            sequence: seq.clone(),
            exec_time_ms,
            signature,
            fuzz_count: 0,
            selection_count: 0,
            discovered_at: tick,
        });
        self.additions_since_refresh += 1;
        if self.entries.len() <= MEDIAN_REFRESH || self.additions_since_refresh >= MEDIAN_REFRESH {
            self.refresh_medians();
        }
        true
    }

    fn refresh_medians(&mut self) {
        let exec: Vec<f64> = self.entries.iter().map(|e| e.exec_time_ms as f64).collect();
        let len: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.sequence.len() as f64)
            .collect();
        self.median_exec_ms = median(exec);
        self.median_len = median(len);
        self.additions_since_refresh = 0;
    }

    /// Next entry in insertion order, wrapping around. Increments its
    /// selection count.
    pub fn select_next(&mut self) -> Result<usize, SchedulerError> {
        if self.entries.is_empty() {
            return Err(SchedulerError::EmptyCorpus);
        }
        let i = self.cursor % self.entries.len();
        self.cursor = i + 1;
        self.entries[i].selection_count += 1;
        Ok(i)
    }

    pub fn assign_energy(&self, i: usize, schedule: Schedule) -> u32 {
        let e = &self.entries[i];
        let alpha = base_energy(
            e.exec_time_ms,
            e.sequence.len(),
            self.median_exec_ms,
            self.median_len,
        );
        energy(
            schedule,
            alpha,
            e.selection_count,
            self.signature_freq(e.signature),
            self.mean_freq(),
        )
    }

    /// Records that a child batch was generated from entry `i`.
    pub fn mark_fuzzed(&mut self, i: usize) {
        self.entries[i].fuzz_count += 1;
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
