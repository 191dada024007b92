//! Endpoint and line coverage, the coverage-agent wire protocol, and
//! novelty.
//!
//! The agent answers `GET /coverage?reset=true|false` with
//! `{"format":"wuppie-cov-1","total_bits":N,"bitmap":"<base64>"}`, where bit
//! `i` is bit `i % 8` (least significant first) of byte `i / 8`.

use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::harness::{ResponseRecord, Transport};
use crate::hash::Fnv64;
use crate::openapi::{ApiSpec, Method};
use crate::sequence::RequestSequence;

pub const PROTOCOL_FORMAT: &str = "wuppie-cov-1";

#[derive(Debug, thiserror::Error)]
pub enum CoverageError {
    #[error("coverage agent at {url} unreachable: {message}")]
    AgentUnreachable { url: String, message: String },
    #[error("bad coverage payload: {0}")]
    ProtocolError(String),
    #[error("coverage agent reported {now} bits, but {first} at campaign start")]
    TotalBitsChanged { first: usize, now: usize },
}

/// One bit per (path, method, status) triple. Spec-listed triples come
/// first, in document order; others are appended when first observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointCoverageMap {
    registry: Vec<(String, Method, u16)>,
    index: HashMap<(String, Method, u16), usize>,
    bits: FixedBitSet,
    listed: usize,
}

impl EndpointCoverageMap {
    pub fn new(spec: &ApiSpec) -> Self {
        let mut map = Self {
            registry: Vec::new(),
            index: HashMap::new(),
            bits: FixedBitSet::new(),
            listed: 0,
        };
        for (path, method, status) in spec.listed_triples() {
            map.endpoint_bit(&path, method, status);
        }
        map.listed = map.registry.len();
        map
    }

    /// Index of the triple, registering it if unseen.
    pub fn endpoint_bit(&mut self, path: &str, method: Method, status: u16) -> usize {
        let key = (path.to_string(), method, status);
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.registry.len();
        self.registry.push(key.clone());
        self.index.insert(key, i);
        self.bits.grow(i + 1);
        i
    }

    /// Registers the triple of every completed response and returns the
    /// indices the sequence touched. Bits are set when the snapshot is
    /// merged by [`novelty`].
    pub fn record_responses(
        &mut self,
        seq: &RequestSequence,
        records: &[ResponseRecord],
    ) -> BTreeSet<usize> {
        records
            .iter()
            .filter(|r| r.transport == Transport::Ok)
            .filter_map(|r| {
                let req = seq.requests.get(r.request_index)?;
                Some(self.endpoint_bit(&req.path, req.method, r.status?))
            })
            .collect()
    }

    pub fn registry(&self) -> &[(String, Method, u16)] {
        &self.registry
    }

    pub fn len(&self) -> usize {
        self.registry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registry.is_empty()
    }

    pub fn listed(&self) -> usize {
        self.listed
    }

    pub fn is_listed(&self, index: usize) -> bool {
        index < self.listed
    }

    pub fn is_set(&self, index: usize) -> bool {
        self.bits.contains(index)
    }

    pub fn set(&mut self, index: usize) {
        self.bits.insert(index);
    }

    pub fn count_set(&self) -> usize {
        self.bits.count_ones(..)
    }

    /// (covered spec-listed triples, spec-listed triples).
    pub fn response_coverage(&self) -> (usize, usize) {
        (self.bits.count_ones(..self.listed), self.listed)
    }
}

/// One bit per instrumented line; the length is fixed for a campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineCoverageMap {
    bits: FixedBitSet,
}

impl LineCoverageMap {
    pub fn new(total_bits: usize) -> Self {
        Self {
            bits: FixedBitSet::with_capacity(total_bits),
        }
    }

    pub fn total_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn set(&mut self, i: usize) {
        self.bits.insert(i);
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits.contains(i)
    }

    pub fn count_set(&self) -> usize {
        self.bits.count_ones(..)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.ones()
    }

    pub fn clear(&mut self) {
        self.bits.clear();
    }

    pub fn to_bitmap(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.total_bits().div_ceil(8)];
        for i in self.bits.ones() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    /// Bits past `total_bits` in the last byte, and bytes past the needed
    /// length, are ignored.
    pub fn from_bitmap(total_bits: usize, bitmap: &[u8]) -> Result<Self, CoverageError> {
        let needed = total_bits.div_ceil(8);
        if bitmap.len() < needed {
            return Err(CoverageError::ProtocolError(format!(
                "bitmap has {} bytes, {total_bits} bits need {needed}",
                bitmap.len()
            )));
        }
        let mut map = Self::new(total_bits);
        for i in 0..total_bits {
            if bitmap[i / 8] & (1 << (i % 8)) != 0 {
                map.set(i);
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Payload {
    format: String,
    total_bits: usize,
    bitmap: String,
}

pub fn encode_payload(map: &LineCoverageMap) -> String {
    serde_json::to_string(&Payload {
        format: PROTOCOL_FORMAT.into(),
        total_bits: map.total_bits(),
        bitmap: B64.encode(map.to_bitmap()),
    })
    .expect("payload serializes")
}

pub fn decode_payload(text: &str) -> Result<LineCoverageMap, CoverageError> {
    let p: Payload =
        serde_json::from_str(text).map_err(|e| CoverageError::ProtocolError(e.to_string()))?;
    if p.format != PROTOCOL_FORMAT {
        return Err(CoverageError::ProtocolError(format!(
            "unknown format `{}`",
            p.format
        )));
    }
    let bytes = B64
        .decode(&p.bitmap)
        .map_err(|e| CoverageError::ProtocolError(format!("bitmap: {e}")))?;
    LineCoverageMap::from_bitmap(p.total_bits, &bytes)
}

/// Client for a coverage agent. Remembers the bit count of the first
/// fetch and rejects later payloads of a different size.
pub struct AgentClient {
    url: String,
    agent: ureq::Agent,
    total_bits: Option<usize>,
}

impl AgentClient {
    pub fn new(url: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            url: url.into(),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_millis(timeout_ms.max(1)))
                .build(),
            total_bits: None,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn fetch(&mut self, reset: bool) -> Result<LineCoverageMap, CoverageError> {
        let map = fetch_line_coverage(&self.agent, &self.url, reset)?;
        match self.total_bits {
            None => self.total_bits = Some(map.total_bits()),
            Some(first) if first != map.total_bits() => {
                return Err(CoverageError::TotalBitsChanged {
                    first,
                    now: map.total_bits(),
                })
            }
            Some(_) => {}
        }
        Ok(map)
    }
}

/// One `wuppie-cov-1` exchange. `agent_url` is the agent's base URL.
pub fn fetch_line_coverage(
    agent: &ureq::Agent,
    agent_url: &str,
    reset: bool,
) -> Result<LineCoverageMap, CoverageError> {
    let url = format!("{}/coverage", agent_url.trim_end_matches('/'));
    let unreachable = |message: String| CoverageError::AgentUnreachable {
        url: agent_url.to_string(),
        message,
    };
    let response = match agent
        .get(&url)
        .query("reset", if reset { "true" } else { "false" })
        .call()
    {
        Ok(r) => r,
        Err(ureq::Error::Status(code, _)) => {
            return Err(CoverageError::ProtocolError(format!(
                "agent answered status {code}"
            )))
        }
        Err(ureq::Error::Transport(t)) => return Err(unreachable(t.to_string())),
    };
    let text = response
        .into_string()
        .map_err(|e| unreachable(e.to_string()))?;
    decode_payload(&text)
}

/// Coverage observed while executing one sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoverageSnapshot {
    pub endpoint: BTreeSet<usize>,
    pub line: Option<LineCoverageMap>,
}

impl CoverageSnapshot {
    /// Stable hash of the tagged set of bits the snapshot contains.
    pub fn signature(&self) -> u64 {
        let mut h = Fnv64::new();
        for &i in &self.endpoint {
            h.write(b"e");
            h.write_u64(i as u64);
        }
        if let Some(line) = &self.line {
            for i in line.ones() {
                h.write(b"l");
                h.write_u64(i as u64);
            }
        }
        h.finish()
    }
}

/// Bits that a snapshot set for the first time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Novelty {
    pub endpoint: Vec<usize>,
    pub line: Vec<usize>,
}

impl Novelty {
    pub fn is_empty(&self) -> bool {
        self.endpoint.is_empty() && self.line.is_empty()
    }
}

/// Returns the snapshot's bits missing from the global maps, then merges
/// the snapshot into them.
pub fn novelty(
    global_endpoint: &mut EndpointCoverageMap,
    global_line: &mut Option<LineCoverageMap>,
    snapshot: &CoverageSnapshot,
) -> Novelty {
    let mut out = Novelty::default();
    for &i in &snapshot.endpoint {
        if !global_endpoint.is_set(i) {
            global_endpoint.set(i);
            out.endpoint.push(i);
        }
    }
    if let Some(line) = &snapshot.line {
        let global = global_line.get_or_insert_with(|| LineCoverageMap::new(line.total_bits()));
        for i in line.ones() {
            if i < global.total_bits() && !global.is_set(i) {
                global.set(i);
                out.line.push(i);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::openapi::parse_spec;
    use crate::sequence::TemplatedRequest;
    use proptest::prelude::*;

    fn minipet() -> ApiSpec {
        parse_spec(crate::MINIPET_SPEC).unwrap()
    }

    fn record(i: usize, status: Option<u16>) -> ResponseRecord {
        ResponseRecord {
            request_index: i,
            status,
            body: Vec::new(),
            latency_ms: 0,
            transport: if status.is_some() {
                Transport::Ok
            } else {
                Transport::Timeout
            },
        }
    }

    #[test]
    fn registry_is_preseeded_in_document_order() {
        let mut map = EndpointCoverageMap::new(&minipet());
        assert_eq!(map.response_coverage(), (0, 16));
        // /store post: 201, 422; then /store/{id} get: 200, 404
        assert_eq!(map.endpoint_bit("/store/{id}", Method::Get, 200), 2);
        assert_eq!(map.endpoint_bit("/store", Method::Post, 201), 0);
        let fresh = map.endpoint_bit("/store/{id}", Method::Get, 418);
        assert_eq!(fresh, 16);
        assert_eq!(map.endpoint_bit("/store/{id}", Method::Get, 418), 16);
        assert!(!map.is_listed(16));
        assert_eq!(map.listed(), 16);
    }

    #[test]
    fn record_and_novelty() {
        let spec = minipet();
        let mut map = EndpointCoverageMap::new(&spec);
        let seq = RequestSequence::new(vec![
            TemplatedRequest::new(Method::Post, "/store"),
            TemplatedRequest::new(Method::Post, "/pet"),
            TemplatedRequest::new(Method::Get, "/pet/{id}"),
        ]);
        let records = [
            record(0, Some(201)),
            record(1, Some(201)),
            record(2, Some(200)),
        ];
        let snap = CoverageSnapshot {
            endpoint: map.record_responses(&seq, &records),
            line: None,
        };
        assert_eq!(snap.endpoint.len(), 3);
        let mut line = None;
        let n = novelty(&mut map, &mut line, &snap);
        assert_eq!(n.endpoint.len(), 3);
        assert_eq!(map.response_coverage(), (3, 16));
        let again = CoverageSnapshot {
            endpoint: map.record_responses(&seq, &records),
            line: None,
        };
        assert_eq!(again, snap);
        assert!(novelty(&mut map, &mut line, &again).is_empty());
        assert_eq!(map.response_coverage(), (3, 16));
        assert!(map.record_responses(&seq, &[record(0, None)]).is_empty());
    }

    #[test]
    fn payload_round_trip_and_bit_order() {
        let mut m = LineCoverageMap::new(10);
        m.set(0);
        m.set(9);
        assert_eq!(m.to_bitmap(), vec![0b0000_0001, 0b0000_0010]);
        let text = encode_payload(&m);
        assert!(text.contains("\"format\":\"wuppie-cov-1\""));
        assert_eq!(decode_payload(&text).unwrap(), m);
    }

    #[test]
    fn short_bitmap_is_a_protocol_error() {
        let text = format!(
            r#"{{"format":"wuppie-cov-1","total_bits":17,"bitmap":"{}"}}"#,
            B64.encode([0u8, 0])
        );
        assert!(matches!(
            decode_payload(&text),
            Err(CoverageError::ProtocolError(_))
        ));
        assert!(matches!(
            decode_payload(r#"{"format":"other","total_bits":0,"bitmap":""}"#),
            Err(CoverageError::ProtocolError(_))
        ));
        assert!(matches!(
            decode_payload("[]"),
            Err(CoverageError::ProtocolError(_))
        ));
    }

    #[test]
    fn unreachable_agent() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let mut client = AgentClient::new(format!("http://127.0.0.1:{port}"), 500);
        assert!(matches!(
            client.fetch(true),
            Err(CoverageError::AgentUnreachable { .. })
        ));
    }

    #[test]
    fn signatures_distinguish_endpoint_and_line_bits() {
        let e = CoverageSnapshot {
            endpoint: [3].into(),
            line: None,
        };
        let mut l = LineCoverageMap::new(8);
        l.set(3);
        let lsnap = CoverageSnapshot {
            endpoint: BTreeSet::new(),
            line: Some(l),
        };
        assert_ne!(e.signature(), lsnap.signature());
        assert_eq!(e.signature(), e.clone().signature());
    }

    proptest! {
        #[test]
        fn bitmap_round_trip(bits in proptest::collection::btree_set(0usize..200, 0..50), extra in 0usize..50) {
            let total = 200 + extra;
            let mut m = LineCoverageMap::new(total);
            for &b in &bits { m.set(b); }
            let back = LineCoverageMap::from_bitmap(total, &m.to_bitmap()).unwrap();
            prop_assert_eq!(back.ones().collect::<BTreeSet<_>>(), bits);
        }

        #[test]
        fn novelty_is_exact_and_monotone(
            first in proptest::collection::btree_set(0usize..64, 0..20),
            second in proptest::collection::btree_set(0usize..64, 0..20),
        ) {
            let mut map = EndpointCoverageMap::new(&minipet());
            let mut line = None;
            let snap = |s: &BTreeSet<usize>| {
                let mut l = LineCoverageMap::new(64);
                for &b in s { l.set(b); }
                CoverageSnapshot { endpoint: BTreeSet::new(), line: Some(l) }
            };
            let n1 = novelty(&mut map, &mut line, &snap(&first));
            prop_assert_eq!(n1.line.iter().copied().collect::<BTreeSet<_>>(), first.clone());
            let before = line.as_ref().unwrap().count_set();
            let n2 = novelty(&mut map, &mut line, &snap(&second));
            let expected: BTreeSet<usize> = second.difference(&first).copied().collect();
            prop_assert_eq!(n2.line.iter().copied().collect::<BTreeSet<_>>(), expected);
            prop_assert!(line.as_ref().unwrap().count_set() >= before);
        }
    }
}
