//! Request sequences: the unit of corpus, mutation and execution.
//!
//! On disk a sequence is one JSON document:
//!
//! ```json
//! {"version":1,"requests":[{"method":"POST","path":"/pet",
//!   "params":{},"body":{"name":{"lit":"rex"},"store_id":{"ref":{"req":0,"field":"id"}}}}]}
//! ```
//!
//! A value is `{"lit": "<utf-8>"}`, `{"lit_b64": "<base64>"}` for literals
//! that are not valid UTF-8, or `{"ref": {"req": N, "field": "a.b"}}`.
//! Body objects and arrays are plain JSON objects and arrays whose leaves
//! are values.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::{json, Map, Value};

use crate::openapi::Method;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ParameterValue {
    Literal(Vec<u8>),
    /// Resolved at execution time from the response to an earlier request.
    Reference {
        request: usize,
        field: String,
    },
}

impl ParameterValue {
    pub fn literal(s: impl AsRef<[u8]>) -> Self {
        ParameterValue::Literal(s.as_ref().to_vec())
    }

    pub fn is_reference(&self) -> bool {
        matches!(self, ParameterValue::Reference { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BodyNode {
    Object(Vec<(String, BodyNode)>),
    Array(Vec<BodyNode>),
    Leaf(ParameterValue),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemplatedRequest {
    pub method: Method,
    pub path: String,
    /// Path, query and header parameters by name.
    pub params: BTreeMap<String, ParameterValue>,
    pub body: Option<BodyNode>,
}

impl TemplatedRequest {
    pub fn new(method: Method, path: impl Into<String>) -> Self {
        Self {
            method,
            path: path.into(),
            params: BTreeMap::new(),
            body: None,
        }
    }

    pub fn label(&self) -> String {
        format!("{} {}", self.method, self.path)
    }

    pub fn to_json(&self) -> Value {
        let params: Map<String, Value> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), value_to_json(v)))
            .collect();
        let mut obj = Map::new();
        obj.insert("method".into(), Value::String(self.method.as_str().into()));
        obj.insert("path".into(), Value::String(self.path.clone()));
        obj.insert("params".into(), Value::Object(params));
        if let Some(body) = &self.body {
            obj.insert("body".into(), body_to_json(body));
        }
        Value::Object(obj)
    }
}

/// Where a value lives inside one request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotLoc {
    Param(String),
    /// Child indices from the body root down to the leaf.
    Body(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub request: usize,
    pub loc: SlotLoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestSequence {
    pub requests: Vec<TemplatedRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SequenceError {
    #[error("sequence has no requests")]
    Empty,
    #[error("request {request} references request {target}, which does not precede it")]
    ForwardReference { request: usize, target: usize },
}

impl RequestSequence {
    pub fn new(requests: Vec<TemplatedRequest>) -> Self {
        Self { requests }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn validate(&self) -> Result<(), SequenceError> {
        if self.requests.is_empty() {
            return Err(SequenceError::Empty);
        }
        for slot in self.slots() {
            if let ParameterValue::Reference { request, .. } = self.value(&slot) {
                if *request >= slot.request {
                    return Err(SequenceError::ForwardReference {
                        request: slot.request,
                        target: *request,
                    });
                }
            }
        }
        Ok(())
    }

    /// Every value slot, request by request: parameters by name, then body
    /// leaves in tree order.
    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        for (i, req) in self.requests.iter().enumerate() {
            out.extend(request_slots(i, req));
        }
        out
    }

    pub fn value(&self, slot: &Slot) -> &ParameterValue {
        slot_value(&self.requests[slot.request], &slot.loc)
    }

    pub fn value_mut(&mut self, slot: &Slot) -> &mut ParameterValue {
        slot_value_mut(&mut self.requests[slot.request], &slot.loc)
    }

    /// Name the slot is known by: the parameter name, or the body leaf's key.
    pub fn slot_name(&self, slot: &Slot) -> String {
        match &slot.loc {
            SlotLoc::Param(name) => name.clone(),
            SlotLoc::Body(_) => {
                let path = self.slot_field_path(slot);
                path.rsplit('.').next().unwrap_or_default().to_string()
            }
        }
    }

    /// Dotted field path of a body slot (empty for parameters and root leaves).
    pub fn slot_field_path(&self, slot: &Slot) -> String {
        let SlotLoc::Body(idx) = &slot.loc else {
            return String::new();
        };
        let mut node = self.requests[slot.request]
            .body
            .as_ref()
            .expect("body slot");
        let mut segs = Vec::new();
        for &i in idx {
            node = match node {
                BodyNode::Object(children) => {
                    segs.push(children[i].0.clone());
                    &children[i].1
                }
                BodyNode::Array(items) => {
                    segs.push(i.to_string());
                    &items[i]
                }
                BodyNode::Leaf(_) => unreachable!("slot path walks through a leaf"),
            };
        }
        segs.join(".")
    }

    pub fn reference_count(&self) -> usize {
        self.slots()
            .iter()
            .filter(|s| self.value(s).is_reference())
            .count()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "version": 1,
            "requests": self.requests.iter().map(TemplatedRequest::to_json).collect::<Vec<_>>(),
        })
    }

    /// Canonical on-disk form: pretty JSON, LF line endings, trailing newline.
    pub fn serialize(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("sequence serializes");
        s.push('\n');
        s
    }

    /// Compact single-line form used in event logs and as corpus identity.
    pub fn serialize_compact(&self) -> String {
        self.to_json().to_string()
    }
}

fn request_slots(i: usize, req: &TemplatedRequest) -> Vec<Slot> {
    let mut out: Vec<Slot> = req
        .params
        .keys()
        .map(|k| Slot {
            request: i,
            loc: SlotLoc::Param(k.clone()),
        })
        .collect();
    if let Some(body) = &req.body {
        let mut path = Vec::new();
        body_leaves(body, &mut path, &mut |p| {
            out.push(Slot {
                request: i,
                loc: SlotLoc::Body(p.to_vec()),
            })
        });
    }
    out
}

fn body_leaves(node: &BodyNode, path: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    match node {
        BodyNode::Leaf(_) => f(path),
        BodyNode::Object(children) => {
            for (i, (_, c)) in children.iter().enumerate() {
                path.push(i);
                body_leaves(c, path, f);
                path.pop();
            }
        }
        BodyNode::Array(items) => {
            for (i, c) in items.iter().enumerate() {
                path.push(i);
                body_leaves(c, path, f);
                path.pop();
            }
        }
    }
}

fn slot_value<'a>(req: &'a TemplatedRequest, loc: &SlotLoc) -> &'a ParameterValue {
    match loc {
        SlotLoc::Param(name) => &req.params[name],
        SlotLoc::Body(idx) => {
            let mut node = req.body.as_ref().expect("body slot");
            for &i in idx {
                node = match node {
                    BodyNode::Object(c) => &c[i].1,
                    BodyNode::Array(c) => &c[i],
                    BodyNode::Leaf(_) => unreachable!(),
                };
            }
            match node {
                BodyNode::Leaf(v) => v,
                _ => unreachable!("slot does not end at a leaf"),
            }
        }
    }
}

fn slot_value_mut<'a>(req: &'a mut TemplatedRequest, loc: &SlotLoc) -> &'a mut ParameterValue {
    match loc {
        SlotLoc::Param(name) => req.params.get_mut(name).expect("param slot"),
        SlotLoc::Body(idx) => {
            let mut node = req.body.as_mut().expect("body slot");
            for &i in idx {
                node = match node {
                    BodyNode::Object(c) => &mut c[i].1,
                    BodyNode::Array(c) => &mut c[i],
                    BodyNode::Leaf(_) => unreachable!(),
                };
            }
            match node {
                BodyNode::Leaf(v) => v,
                _ => unreachable!("slot does not end at a leaf"),
            }
        }
    }
}

pub(crate) fn value_to_json(v: &ParameterValue) -> Value {
    match v {
        ParameterValue::Literal(bytes) => match std::str::from_utf8(bytes) {
            Ok(s) => json!({ "lit": s }),
            Err(_) => json!({ "lit_b64": B64.encode(bytes) }),
        },
        ParameterValue::Reference { request, field } => {
            json!({ "ref": { "req": request, "field": field } })
        }
    }
}

fn body_to_json(node: &BodyNode) -> Value {
    match node {
        BodyNode::Leaf(v) => value_to_json(v),
        BodyNode::Object(children) => Value::Object(
            children
                .iter()
                .map(|(k, c)| (k.clone(), body_to_json(c)))
                .collect(),
        ),
        BodyNode::Array(items) => Value::Array(items.iter().map(body_to_json).collect()),
    }
}

/// A corpus file that could not be read back into a valid sequence.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed corpus file at {line}:{column}: {message}")]
pub struct MalformedCorpusFile {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Deserialize)]
struct RawFile<'a> {
    version: u32,
    #[serde(borrow)]
    requests: Vec<&'a RawValue>,
}

pub fn parse_sequence(text: &str) -> Result<RequestSequence, MalformedCorpusFile> {
    let raw: RawFile<'_> = serde_json::from_str(text).map_err(|e| MalformedCorpusFile {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if raw.version != 1 {
        return Err(at(text, 0, format!("unsupported version {}", raw.version)));
    }
    if raw.requests.is_empty() {
        let offset = text.find("\"requests\"").unwrap_or(0);
        return Err(at(text, offset, "`requests` is empty".into()));
    }
    let mut requests = Vec::with_capacity(raw.requests.len());
    for (i, r) in raw.requests.iter().enumerate() {
        let offset = r.get().as_ptr() as usize - text.as_ptr() as usize;
        let value: Value = serde_json::from_str(r.get()).expect("raw value re-parses");
        let req =
            request_from_json(&value).map_err(|m| at(text, offset, format!("request {i}: {m}")))?;
        requests.push(req);
    }
    let seq = RequestSequence { requests };
    if let Err(e) = seq.validate() {
        let SequenceError::ForwardReference { request, .. } = e else {
            unreachable!("emptiness checked above")
        };
        let offset = raw.requests[request].get().as_ptr() as usize - text.as_ptr() as usize;
        return Err(at(text, offset, e.to_string()));
    }
    Ok(seq)
}

fn at(text: &str, offset: usize, message: String) -> MalformedCorpusFile {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    MalformedCorpusFile {
        line,
        column,
        message,
    }
}

pub(crate) fn request_from_json(v: &Value) -> Result<TemplatedRequest, String> {
    let obj = v.as_object().ok_or("request is not an object")?;
    let method = obj
        .get("method")
        .and_then(Value::as_str)
        .ok_or("missing `method`")?
        .parse::<Method>()
        .map_err(|e| e.to_string())?;
    let path = obj
        .get("path")
        .and_then(Value::as_str)
        .ok_or("missing `path`")?
        .to_string();
    let mut params = BTreeMap::new();
    if let Some(p) = obj.get("params") {
        let p = p.as_object().ok_or("`params` is not an object")?;
        for (k, v) in p {
            let value = leaf_from_json(v)?.ok_or_else(|| format!("param `{k}` is not a value"))?;
            params.insert(k.clone(), value);
        }
    }
    let body = match obj.get("body") {
        None | Some(Value::Null) => None,
        Some(b) => Some(body_from_json(b)?),
    };
    Ok(TemplatedRequest {
        method,
        path,
        params,
        body,
    })
}

/// `Ok(None)` when the JSON is a container rather than a value encoding.
fn leaf_from_json(v: &Value) -> Result<Option<ParameterValue>, String> {
    match v {
        Value::String(s) => Ok(Some(ParameterValue::literal(s))),
        Value::Number(_) | Value::Bool(_) => {
            Ok(Some(ParameterValue::Literal(v.to_string().into_bytes())))
        }
        Value::Object(o) if o.len() == 1 => {
            let (k, inner) = o.iter().next().expect("one entry");
            match (k.as_str(), inner) {
                ("lit", Value::String(s)) => Ok(Some(ParameterValue::literal(s))),
                ("lit_b64", Value::String(s)) => B64
                    .decode(s)
                    .map(|b| Some(ParameterValue::Literal(b)))
                    .map_err(|e| format!("bad base64 literal: {e}")),
                ("ref", Value::Object(r)) => {
                    let req = r
                        .get("req")
                        .and_then(Value::as_u64)
                        .ok_or("reference without a numeric `req`")?;
                    let field = r
                        .get("field")
                        .and_then(Value::as_str)
                        .ok_or("reference without a `field`")?;
                    Ok(Some(ParameterValue::Reference {
                        request: req as usize,
                        field: field.to_string(),
                    }))
                }
                _ => Ok(None),
            }
        }
        _ => Ok(None),
    }
}

fn body_from_json(v: &Value) -> Result<BodyNode, String> {
    if let Some(leaf) = leaf_from_json(v)? {
        return Ok(BodyNode::Leaf(leaf));
    }
    match v {
        Value::Object(o) => o
            .iter()
            .map(|(k, c)| body_from_json(c).map(|n| (k.clone(), n)))
            .collect::<Result<Vec<_>, _>>()
            .map(BodyNode::Object),
        Value::Array(items) => items
            .iter()
            .map(body_from_json)
            .collect::<Result<Vec<_>, _>>()
            .map(BodyNode::Array),
        Value::Null => Err("null inside body".into()),
        _ => unreachable!("scalars are leaves"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pet_chain() -> RequestSequence {
        let mut store = TemplatedRequest::new(Method::Post, "/store");
        store.body = Some(BodyNode::Object(vec![(
            "name".into(),
            BodyNode::Leaf(ParameterValue::literal("corner")),
        )]));
        let mut pet = TemplatedRequest::new(Method::Post, "/pet");
        pet.body = Some(BodyNode::Object(vec![
            (
                "name".into(),
                BodyNode::Leaf(ParameterValue::literal("rex")),
            ),
            (
                "store_id".into(),
                BodyNode::Leaf(ParameterValue::Reference {
                    request: 0,
                    field: "id".into(),
                }),
            ),
        ]));
        let mut get = TemplatedRequest::new(Method::Get, "/pet/{id}");
        get.params.insert(
            "id".into(),
            ParameterValue::Reference {
                request: 1,
                field: "id".into(),
            },
        );
        RequestSequence::new(vec![store, pet, get])
    }

    #[test]
    fn round_trip_and_canonical_form() {
        let seq = pet_chain();
        let text = seq.serialize();
        assert!(text.ends_with("}\n"));
        assert!(!text.contains('\r'));
        assert_eq!(parse_sequence(&text).unwrap(), seq);
        assert_eq!(parse_sequence(&seq.serialize_compact()).unwrap(), seq);
        assert_eq!(
            seq.serialize_compact(),
            r#"{"version":1,"requests":[{"method":"POST","path":"/store","params":{},"body":{"name":{"lit":"corner"}}},{"method":"POST","path":"/pet","params":{},"body":{"name":{"lit":"rex"},"store_id":{"ref":{"req":0,"field":"id"}}}},{"method":"GET","path":"/pet/{id}","params":{"id":{"ref":{"req":1,"field":"id"}}}}]}"#
        );
    }

    #[test]
    fn non_utf8_literals_survive() {
        let mut seq = pet_chain();
        seq.requests[0]
            .params
            .insert("q".into(), ParameterValue::Literal(vec![0xff, 0x00, b'a']));
        let text = seq.serialize();
        assert!(text.contains("lit_b64"));
        assert_eq!(parse_sequence(&text).unwrap(), seq);
    }

    #[test]
    fn forward_reference_rejected_with_position() {
        let text = "{\"version\":1,\"requests\":[\n  {\"method\":\"GET\",\"path\":\"/a\",\"params\":{\"x\":{\"ref\":{\"req\":0,\"field\":\"id\"}}}}\n]}";
        let err = parse_sequence(text).unwrap_err();
        assert_eq!((err.line, err.column), (2, 3));
        assert!(err.message.contains("does not precede"));
    }

    #[test]
    fn empty_requests_rejected() {
        let err = parse_sequence("{\"version\":1,\"requests\":[]}").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.message.contains("empty"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_sequence("{\"version\":1,\n\"requests\": [ oops ]}").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(parse_sequence("{\"version\":2,\"requests\":[]}").is_err());
        assert!(parse_sequence(
            "{\"version\":1,\"requests\":[{\"method\":\"TRACE\",\"path\":\"/\"}]}"
        )
        .is_err());
    }

    #[test]
    fn slots_and_names() {
        let seq = pet_chain();
        let slots = seq.slots();
        assert_eq!(slots.len(), 4);
        let names: Vec<String> = slots.iter().map(|s| seq.slot_name(s)).collect();
        assert_eq!(names, ["name", "name", "store_id", "id"]);
        assert_eq!(seq.reference_count(), 2);
        assert_eq!(seq.slot_field_path(&slots[2]), "store_id");
    }
}
