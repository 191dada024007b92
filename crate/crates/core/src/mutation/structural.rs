//! Sequence-level mutators: they add, drop, reorder and relink requests.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Mutator, MutatorKind, MAX_SEQUENCE_LEN};
use crate::graph::names_related;
use crate::openapi::{OperationDescriptor, ParamLocation, SchemaKind};
use crate::seeds::{build_request, Link, ParamKey};
use crate::sequence::{BodyNode, ParameterValue, RequestSequence, Slot, TemplatedRequest};

/// Values placed by the interesting-string mutator.
pub fn interesting_strings() -> Vec<Vec<u8>> {
    let mut v: Vec<Vec<u8>> = [
        "",
        "'",
        "\"",
        "%s%s%s",
        "../../etc/passwd",
        "<script>alert(1)</script>",
        "0",
        "-1",
        "999999999999999999",
        "\u{0}",
        "☃",
    ]
    .iter()
    .map(|s| s.as_bytes().to_vec())
    .collect();
    v.push(vec![b'A'; 1024]);
    v
}

fn random_bytes<R: Rng + ?Sized>(rng: &mut R) -> Vec<u8> {
    let len = rng.gen_range(1..=8);
    (0..len).map(|_| rng.gen()).collect()
}

impl Mutator<'_> {
    pub fn apply_sequence_mutator<R: Rng + ?Sized>(
        &self,
        kind: MutatorKind,
        seq: &RequestSequence,
        rng: &mut R,
    ) -> RequestSequence {
        let mut out = seq.clone();
        use MutatorKind::*;
        match kind {
            AddRequest => self.add_request(&mut out, rng),
            BreakLink => break_link(&mut out, rng),
            DifferentMethod => self.different_method(&mut out, rng),
            DifferentPath => self.different_path(&mut out, rng),
            DuplicateRequest => duplicate_request(&mut out, rng),
            EstablishLink => self.establish_link(&mut out, rng),
            RemoveRequest => self.remove_request(&mut out, rng),
            StringInteresting => self.string_interesting(&mut out, rng),
            SwapRequests => self.swap_requests(&mut out, rng),
            _ => {}
        }
        out
    }

    fn add_request<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        if seq.len() >= MAX_SEQUENCE_LEN || self.spec.operations.is_empty() {
            return;
        }
        let op = self.spec.operations.choose(rng).expect("non-empty");
        let mut single = RequestSequence::new(vec![build_request(op, &[], rng, &mut Vec::new())]);
        for slot in single.slots() {
            *single.value_mut(&slot) = ParameterValue::Literal(random_bytes(rng));
        }
        seq.requests.append(&mut single.requests);
    }

    fn different_method<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        let alternatives = |req: &TemplatedRequest| -> Vec<&OperationDescriptor> {
            self.spec
                .operations
                .iter()
                .filter(|op| op.path == req.path && op.method != req.method)
                .collect()
        };
        let candidates: Vec<usize> = (0..seq.len())
            .filter(|&i| !alternatives(&seq.requests[i]).is_empty())
            .collect();
        let Some(&i) = candidates.choose(rng) else {
            return;
        };
        let op = *alternatives(&seq.requests[i])
            .choose(rng)
            .expect("non-empty");
        let old = seq.requests[i].clone();
        let mut req = build_request(op, &[], rng, &mut Vec::new());
        for (name, value) in req.params.iter_mut() {
            if let Some(v) = old.params.get(name) {
                *value = v.clone();
            }
        }
        if req.body.is_some() && old.body.is_some() {
            req.body = old.body;
        }
        seq.requests[i] = req;
    }

    /// Replaces one request with a default-filled request for another
    /// operation, wiring parameters to the nearest earlier request that the
    /// dependency graph says can produce them.
    fn different_path<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        let i = rng.gen_range(0..seq.len());
        let current = (&seq.requests[i].path, seq.requests[i].method);
        let others: Vec<usize> = (0..self.spec.operations.len())
            .filter(|&k| {
                let op = &self.spec.operations[k];
                (&op.path, op.method) != current
            })
            .collect();
        let Some(&op_index) = others.choose(rng) else {
            return;
        };
        let op = &self.spec.operations[op_index];
        let mut links = Vec::new();
        for param in &op.parameters {
            let found = self
                .edges
                .candidates(self.spec, op_index, &param.name)
                .into_iter()
                .find_map(|edge| {
                    let producer = &self.spec.operations[edge.producer];
                    (0..i)
                        .rev()
                        .find(|&j| {
                            seq.requests[j].path == producer.path
                                && seq.requests[j].method == producer.method
                        })
                        .map(|j| (j, edge.field.clone()))
                });
            if let Some((position, field)) = found {
                let key = match &param.location {
                    ParamLocation::BodyField(f) => ParamKey::Body(f.clone()),
                    _ => ParamKey::Plain(param.name.clone()),
                };
                links.push(Link {
                    param: key,
                    position,
                    field,
                });
            }
        }
        seq.requests[i] = build_request(op, &links, rng, &mut Vec::new());
    }

    fn establish_link<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        let mut candidates = Vec::new();
        for slot in seq.slots() {
            if seq.value(&slot).is_reference() {
                continue;
            }
            let name = seq.slot_name(&slot);
            for i in 0..slot.request {
                let req = &seq.requests[i];
                let Some(op) = self.spec.operation(&req.path, req.method) else {
                    continue;
                };
                for field in op.response_fields() {
                    if names_related(&field, &op.path, &name) {
                        candidates.push((slot.clone(), i, field));
                    }
                }
            }
        }
        if let Some((slot, request, field)) = candidates.choose(rng).cloned() {
            *seq.value_mut(&slot) = ParameterValue::Reference { request, field };
        }
    }

    fn remove_request<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        if seq.len() <= 1 {
            return;
        }
        let i = rng.gen_range(0..seq.len());
        // Break references into `i` while the slot schemas still line up.
        for slot in seq.slots() {
            if matches!(seq.value(&slot), ParameterValue::Reference { request, .. } if *request == i)
            {
                let v = self.default_literal(seq, &slot, rng);
                *seq.value_mut(&slot) = v;
            }
        }
        seq.requests.remove(i);
        retarget(
            seq,
            |_, target| if target > i { target - 1 } else { target },
        );
    }

    fn string_interesting<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        let strings: Vec<Slot> = seq
            .slots()
            .into_iter()
            .filter(|s| {
                !seq.value(s).is_reference() && self.slot_schema(seq, s).kind == SchemaKind::String
            })
            .collect();
        if let Some(slot) = strings.choose(rng) {
            let values = interesting_strings();
            let v = values.choose(rng).expect("non-empty").clone();
            *seq.value_mut(slot) = ParameterValue::Literal(v);
        }
    }

    fn swap_requests<R: Rng + ?Sized>(&self, seq: &mut RequestSequence, rng: &mut R) {
        if seq.len() < 2 {
            return;
        }
        let a = rng.gen_range(0..seq.len());
        let mut b = rng.gen_range(0..seq.len() - 1);
        if b >= a {
            b += 1;
        }
        let (i, j) = (a.min(b), a.max(b));
        seq.requests.swap(i, j);
        let map = |t: usize| match t {
            t if t == i => j,
            t if t == j => i,
            t => t,
        };
        let mut broken = Vec::new();
        for slot in seq.slots() {
            if let ParameterValue::Reference { request, .. } = seq.value(&slot) {
                if map(*request) >= slot.request {
                    broken.push(slot);
                }
            }
        }
        for slot in &broken {
            let v = self.default_literal(seq, slot, rng);
            *seq.value_mut(slot) = v;
        }
        retarget(seq, |_, t| map(t));
    }
}

fn break_link<R: Rng + ?Sized>(seq: &mut RequestSequence, rng: &mut R) {
    let refs: Vec<Slot> = seq
        .slots()
        .into_iter()
        .filter(|s| seq.value(s).is_reference())
        .collect();
    if let Some(slot) = refs.choose(rng) {
        *seq.value_mut(slot) = ParameterValue::Literal(random_bytes(rng));
    }
}

fn duplicate_request<R: Rng + ?Sized>(seq: &mut RequestSequence, rng: &mut R) {
    if seq.len() >= MAX_SEQUENCE_LEN {
        return;
    }
    let i = rng.gen_range(0..seq.len());
    let copy = seq.requests[i].clone();
    seq.requests.insert(i + 1, copy);
    retarget(
        seq,
        |position, t| if position > i + 1 && t > i { t + 1 } else { t },
    );
}

/// Rewrites every reference target through `f(position, target)`.
fn retarget(seq: &mut RequestSequence, f: impl Fn(usize, usize) -> usize) {
    for req_index in 0..seq.requests.len() {
        let req = &mut seq.requests[req_index];
        for v in req.params.values_mut() {
            retarget_value(v, req_index, &f);
        }
        if let Some(body) = &mut req.body {
            retarget_body(body, req_index, &f);
        }
    }
}

fn retarget_body(node: &mut BodyNode, position: usize, f: &impl Fn(usize, usize) -> usize) {
    match node {
        BodyNode::Leaf(v) => retarget_value(v, position, f),
        BodyNode::Object(children) => children
            .iter_mut()
            .for_each(|(_, c)| retarget_body(c, position, f)),
        BodyNode::Array(items) => items.iter_mut().for_each(|c| retarget_body(c, position, f)),
    }
}

fn retarget_value(v: &mut ParameterValue, position: usize, f: &impl Fn(usize, usize) -> usize) {
    if let ParameterValue::Reference { request, .. } = v {
        *request = f(position, *request);
    }
}
