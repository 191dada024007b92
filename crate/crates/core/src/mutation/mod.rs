//! Byte-level and sequence-level mutators, and the stacked mutation step.

mod bytes;
mod structural;

use rand::Rng;

use crate::graph::DependencyGraph;
use crate::openapi::{example_value, ApiSpec, SchemaKind, SchemaNode};
use crate::seeds::ChainEdges;
use crate::sequence::{ParameterValue, RequestSequence, Slot, SlotLoc};

pub use bytes::{apply_byte_mutator, INTERESTING_16, INTERESTING_32, INTERESTING_8, MAX_VALUE_LEN};

/// Sequences are not grown past this many requests.
pub const MAX_SEQUENCE_LEN: usize = 32;
/// Most mutations stacked onto one child.
pub const MAX_STACK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MutatorKind {
    BitFlip,
    ByteAdd,
    ByteDec,
    ByteFlip,
    ByteInc,
    ByteInteresting,
    ByteNeg,
    ByteRand,
    BytesCopy,
    BytesDelete,
    BytesExpand,
    BytesInsertCopy,
    BytesInsert,
    BytesRandInsert,
    BytesRandSet,
    BytesSet,
    BytesSwap,
    DwordAdd,
    DwordInteresting,
    QwordAdd,
    WordAdd,
    WordInteresting,
    AddRequest,
    BreakLink,
    DifferentMethod,
    DifferentPath,
    DuplicateRequest,
    EstablishLink,
    RemoveRequest,
    StringInteresting,
    SwapRequests,
}

impl MutatorKind {
    pub const BYTE_LEVEL: [MutatorKind; 22] = [
        Self::BitFlip,
        Self::ByteAdd,
        Self::ByteDec,
        Self::ByteFlip,
        Self::ByteInc,
        Self::ByteInteresting,
        Self::ByteNeg,
        Self::ByteRand,
        Self::BytesCopy,
        Self::BytesDelete,
        Self::BytesExpand,
        Self::BytesInsertCopy,
        Self::BytesInsert,
        Self::BytesRandInsert,
        Self::BytesRandSet,
        Self::BytesSet,
        Self::BytesSwap,
        Self::DwordAdd,
        Self::DwordInteresting,
        Self::QwordAdd,
        Self::WordAdd,
        Self::WordInteresting,
    ];

    pub const SEQUENCE_LEVEL: [MutatorKind; 9] = [
        Self::AddRequest,
        Self::BreakLink,
        Self::DifferentMethod,
        Self::DifferentPath,
        Self::DuplicateRequest,
        Self::EstablishLink,
        Self::RemoveRequest,
        Self::StringInteresting,
        Self::SwapRequests,
    ];

    pub fn all() -> impl Iterator<Item = MutatorKind> {
        Self::BYTE_LEVEL.into_iter().chain(Self::SEQUENCE_LEVEL)
    }

    pub fn is_byte_level(self) -> bool {
        Self::BYTE_LEVEL.contains(&self)
    }

    pub fn name(self) -> &'static str {
        use MutatorKind::*;
        match self {
            BitFlip => "BitFlipMutator",
            ByteAdd => "ByteAddMutator",
            ByteDec => "ByteDecMutator",
            ByteFlip => "ByteFlipMutator",
            ByteInc => "ByteIncMutator",
            ByteInteresting => "ByteInterestingMutator",
            ByteNeg => "ByteNegMutator",
            ByteRand => "ByteRandMutator",
            BytesCopy => "BytesCopyMutator",
            BytesDelete => "BytesDeleteMutator",
            BytesExpand => "BytesExpandMutator",
            BytesInsertCopy => "BytesInsertCopyMutator",
            BytesInsert => "BytesInsertMutator",
            BytesRandInsert => "BytesRandInsertMutator",
            BytesRandSet => "BytesRandSetMutator",
            BytesSet => "BytesSetMutator",
            BytesSwap => "BytesSwapMutator",
            DwordAdd => "DwordAddMutator",
            DwordInteresting => "DwordInterestingMutator",
            QwordAdd => "QwordAddMutator",
            WordAdd => "WordAddMutator",
            WordInteresting => "WordInterestingMutator",
            AddRequest => "AddRequest",
            BreakLink => "BreakLink",
            DifferentMethod => "DifferentMethod",
            DifferentPath => "DifferentPath",
            DuplicateRequest => "DuplicateRequest",
            EstablishLink => "EstablishLink",
            RemoveRequest => "RemoveRequest",
            StringInteresting => "StringInteresting",
            SwapRequests => "SwapRequests",
        }
    }
}

/// Picks the next mutator. Uniform over all kinds.
pub fn choose_kind<R: Rng + ?Sized>(rng: &mut R) -> MutatorKind {
    let i = rng.gen_range(0..MutatorKind::BYTE_LEVEL.len() + MutatorKind::SEQUENCE_LEVEL.len());
    match MutatorKind::BYTE_LEVEL.get(i) {
        Some(k) => *k,
        None => MutatorKind::SEQUENCE_LEVEL[i - MutatorKind::BYTE_LEVEL.len()],
    }
}

/// Mutation context for one spec: owns the pruned chain edges so that
/// repeated mutations do not rebuild them.
pub struct Mutator<'a> {
    spec: &'a ApiSpec,
    edges: ChainEdges<'a>,
}

impl<'a> Mutator<'a> {
    pub fn new(spec: &'a ApiSpec, graph: &'a DependencyGraph) -> Self {
        let edges = ChainEdges::new(graph, &mut Vec::new());
        Self { spec, edges }
    }

    /// Applies a stack of one to four uniformly chosen mutations.
    pub fn mutate<R: Rng + ?Sized>(&self, seq: &RequestSequence, rng: &mut R) -> RequestSequence {
        let k = rng.gen_range(1..=MAX_STACK);
        let mut out = seq.clone();
        for _ in 0..k {
            let kind = choose_kind(rng);
            out = self.apply(kind, &out, rng);
        }
        debug_assert!(out.validate().is_ok());
        out
    }

    /// Applies one mutator of either level. Byte-level kinds act on a
    /// uniformly chosen literal slot and never on references.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        kind: MutatorKind,
        seq: &RequestSequence,
        rng: &mut R,
    ) -> RequestSequence {
        if !kind.is_byte_level() {
            return self.apply_sequence_mutator(kind, seq, rng);
        }
        let literals: Vec<Slot> = seq
            .slots()
            .into_iter()
            .filter(|s| !seq.value(s).is_reference())
            .collect();
        let mut out = seq.clone();
        if literals.is_empty() {
            return out;
        }
        let slot = &literals[rng.gen_range(0..literals.len())];
        if let ParameterValue::Literal(bytes) = out.value_mut(slot) {
            *bytes = apply_byte_mutator(kind, bytes, rng);
        }
        out
    }

    /// Schema describing a slot, or a plain string schema when the request
    /// is not in the spec.
    pub(crate) fn slot_schema(&self, seq: &RequestSequence, slot: &Slot) -> SchemaNode {
        let req = &seq.requests[slot.request];
        let found = self
            .spec
            .operation(&req.path, req.method)
            .and_then(|op| match &slot.loc {
                SlotLoc::Param(name) => op.parameter(name).map(|p| p.schema.clone()),
                SlotLoc::Body(_) => {
                    let body = op.request_body.as_ref()?;
                    let path = seq.slot_field_path(slot);
                    if path.is_empty() {
                        Some(body.clone())
                    } else {
                        body.at_path(&path).cloned()
                    }
                }
            });
        found.unwrap_or_else(|| SchemaNode::of_kind(SchemaKind::String))
    }

    pub(crate) fn default_literal<R: Rng + ?Sized>(
        &self,
        seq: &RequestSequence,
        slot: &Slot,
        rng: &mut R,
    ) -> ParameterValue {
        ParameterValue::Literal(example_value(
            &self.slot_schema(seq, slot),
            rng,
            &mut Vec::new(),
        ))
    }
}
