//! The five masking operations and their composition into one template.
//!
//! A template is built from a [`SegmentedSentence`] by applying operations
//! in order to an evolving draft. Each operation only targets material that
//! no earlier operation has slotted. The finished [`MaskedTemplate`] holds
//! literal linearized text interleaved with typed mask slots, plus the
//! entity-type sequence the filled sentence must carry.
//!
//! | op  | effect on the type sequence |
//! |-----|-----------------------------|
//! | Op1 | none (entity and nearby context regenerated) |
//! | Op2 | substitute one type |
//! | Op3 | insert one type after an anchor entity |
//! | Op4 | delete one type |
//! | Op5 | none (context sub-span regenerated) |

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSchema, TypeId};
use crate::flip::{choose_flip_type, FlipError, FlipScheme};
use crate::linearize::{escape_token, push_group, LinearizedText, SegmentedSentence, CLOSE, OPEN, SEP};

pub const DEFAULT_PLACEHOLDER: &str = "<MASK>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("{0} needs a sentence with at least one entity")]
    NoEntity(OpKind),
    #[error("{op}: new type equals the current type {type_id}")]
    SameType { op: OpKind, type_id: TypeId },
    #[error("sentence has no context tokens")]
    NoContext,
    #[error("{0}: every eligible target is already slotted")]
    OverlapExhausted(OpKind),
    #[error("type {0} is not in the schema")]
    UnknownType(TypeId),
    #[error(transparent)]
    Flip(#[from] FlipError),
}

impl MaskError {
    /// Short stable name, used as a counter key in reports.
    pub fn reason(&self) -> &'static str {
        match self {
            MaskError::NoEntity(_) => "no_entity",
            MaskError::SameType { .. } => "same_type",
            MaskError::NoContext => "no_context",
            MaskError::OverlapExhausted(_) => "overlap_exhausted",
            MaskError::UnknownType(_) => "unknown_type",
            MaskError::Flip(FlipError::SingletonSchema) => "singleton_schema",
            MaskError::Flip(FlipError::MissingEmbeddings) => "missing_embeddings",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Op1,
    Op2,
    Op3,
    Op4,
    Op5,
}

impl OpKind {
    pub fn is_label_flipping(self) -> bool {
        matches!(self, OpKind::Op2 | OpKind::Op3 | OpKind::Op4)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            OpKind::Op1 => 1,
            OpKind::Op2 => 2,
            OpKind::Op3 => 3,
            OpKind::Op4 => 4,
            OpKind::Op5 => 5,
        };
        write!(f, "Op{n}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseTarget {
    /// Any untouched entity.
    Random,
    /// The anchor of the most recent Op3, turning the pair into a replacement.
    Anchor,
}

/// One step of a composed template. `new_type: None` draws the type with
/// the flip scheme relative to the chosen entity's type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Operation {
    AugmentEntity,
    ChangeType { new_type: Option<TypeId> },
    AddEntity { new_type: Option<TypeId> },
    EraseEntity { target: EraseTarget },
    AugmentContext,
}

impl Operation {
    pub fn kind(&self) -> OpKind {
        match self {
            Operation::AugmentEntity => OpKind::Op1,
            Operation::ChangeType { .. } => OpKind::Op2,
            Operation::AddEntity { .. } => OpKind::Op3,
            Operation::EraseEntity { .. } => OpKind::Op4,
            Operation::AugmentContext => OpKind::Op5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpConfig {
    /// Per-side context tokens masked around an entity, drawn uniformly
    /// from `[context_mask_min, context_mask_max]` and clipped.
    pub context_mask_min: usize,
    pub context_mask_max: usize,
}

impl Default for OpConfig {
    fn default() -> Self {
        Self {
            context_mask_min: 0,
            context_mask_max: 2,
        }
    }
}

impl OpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.context_mask_min > self.context_mask_max {
            return Err(format!(
                "context_mask_min {} exceeds context_mask_max {}",
                self.context_mask_min, self.context_mask_max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    EntityWords,
    ContextWords,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSlot {
    pub slot_id: usize,
    pub kind: SlotKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<TypeId>,
    pub origin_op: OpKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Piece {
    /// Space-joined, already escaped linearized tokens.
    Literal(String),
    Slot(MaskSlot),
}

/// Record of one applied operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedOp {
    pub op: OpKind,
    /// Entity ordinal (in the type sequence at the time) that was targeted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_type: Option<TypeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_type: Option<TypeId>,
    /// Context tokens masked left / right of the entity, or the sub-span
    /// length for Op5.
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedTemplate {
    pub parent_id: String,
    pub pieces: Vec<Piece>,
    pub expected_types: Vec<TypeId>,
    pub original_types: Vec<TypeId>,
    /// Positions in `expected_types` introduced by Op2 or Op3.
    pub flipped_positions: Vec<usize>,
    pub provenance: Vec<AppliedOp>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SlotFillError {
    #[error("expected {expected} slot fills, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("entity slot {0} received an empty fill")]
    EmptyEntity(usize),
}

impl MaskedTemplate {
    pub fn slots(&self) -> impl Iterator<Item = &MaskSlot> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Slot(s) => Some(s),
            Piece::Literal(_) => None,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slots().count()
    }

    pub fn entity_slot_count(&self) -> usize {
        self.slots().filter(|s| s.kind == SlotKind::EntityWords).count()
    }

    pub fn context_slot_count(&self) -> usize {
        self.slots().filter(|s| s.kind == SlotKind::ContextWords).count()
    }

    pub fn is_label_flipping(&self) -> bool {
        self.provenance.iter().any(|a| a.op.is_label_flipping())
    }

    /// Text rendering with every slot replaced by `placeholder`.
    pub fn render(&self, placeholder: &str) -> String {
        let parts: Vec<&str> = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Literal(s) => s.as_str(),
                Piece::Slot(_) => placeholder,
            })
            .filter(|s| !s.is_empty())
            .collect();
        parts.join(" ")
    }

    /// Substitute generated tokens for the slots, in slot order. Fill tokens
    /// are linearized text and are inserted verbatim; whitespace inside a
    /// fill token splits it. Context fills may be empty.
    pub fn fill(&self, per_slot: &[Vec<String>]) -> Result<LinearizedText, SlotFillError> {
        let expected = self.slot_count();
        if per_slot.len() != expected {
            return Err(SlotFillError::CountMismatch {
                expected,
                got: per_slot.len(),
            });
        }
        let mut out = Vec::new();
        let mut fills = per_slot.iter();
        for piece in &self.pieces {
            match piece {
                Piece::Literal(s) => out.extend(s.split_whitespace().map(String::from)),
                Piece::Slot(slot) => {
                    let fill = fills.next().expect("counted above");
                    let before = out.len();
                    out.extend(fill.iter().flat_map(|t| t.split_whitespace().map(String::from)));
                    if slot.kind == SlotKind::EntityWords && out.len() == before {
                        return Err(SlotFillError::EmptyEntity(slot.slot_id));
                    }
                }
            }
        }
        Ok(LinearizedText::from_tokens(out))
    }
}

#[derive(Debug, Clone)]
enum EntityContent {
    Words(Vec<String>),
    Slot(OpKind),
}

#[derive(Debug, Clone)]
enum Elem {
    Word(String),
    ContextSlot(OpKind),
    Entity {
        type_id: TypeId,
        content: EntityContent,
        flipped: bool,
    },
}

impl Elem {
    fn is_word(&self) -> bool {
        matches!(self, Elem::Word(_))
    }

    fn is_untouched_entity(&self) -> bool {
        matches!(
            self,
            Elem::Entity {
                content: EntityContent::Words(_),
                ..
            }
        )
    }
}

/// Evolving template. Operations mutate it in place.
#[derive(Debug, Clone)]
pub struct TemplateDraft {
    parent_id: String,
    elems: Vec<Elem>,
    original_types: Vec<TypeId>,
    had_context: bool,
    last_anchor: Option<usize>,
    provenance: Vec<AppliedOp>,
}

impl TemplateDraft {
    pub fn new(sentence: &SegmentedSentence) -> Self {
        let mut elems = Vec::new();
        for (i, ctx) in sentence.contexts.iter().enumerate() {
            elems.extend(ctx.iter().cloned().map(Elem::Word));
            if let Some(e) = sentence.entities.get(i) {
                elems.push(Elem::Entity {
                    type_id: e.type_id,
                    content: EntityContent::Words(e.tokens.clone()),
                    flipped: false,
                });
            }
        }
        Self {
            parent_id: sentence.id.clone(),
            had_context: elems.iter().any(Elem::is_word),
            elems,
            original_types: sentence.type_sequence(),
            last_anchor: None,
            provenance: Vec::new(),
        }
    }

    fn entity_count(&self) -> usize {
        self.elems
            .iter()
            .filter(|e| matches!(e, Elem::Entity { .. }))
            .count()
    }

    fn entity_ordinal(&self, elem_index: usize) -> usize {
        self.elems[..elem_index]
            .iter()
            .filter(|e| matches!(e, Elem::Entity { .. }))
            .count()
    }

    fn type_at(&self, elem_index: usize) -> TypeId {
        match &self.elems[elem_index] {
            Elem::Entity { type_id, .. } => *type_id,
            _ => unreachable!("not an entity element"),
        }
    }

    /// Uniformly choose an untouched entity element.
    fn pick_entity<R: Rng + ?Sized>(&self, op: OpKind, rng: &mut R) -> Result<usize, MaskError> {
        if self.original_types.is_empty() {
            return Err(MaskError::NoEntity(op));
        }
        let eligible: Vec<usize> = self
            .elems
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_untouched_entity())
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(MaskError::OverlapExhausted(op));
        }
        Ok(eligible[rng.random_range(0..eligible.len())])
    }

    fn draw_extent<R: Rng + ?Sized>(cfg: &OpConfig, available: usize, rng: &mut R) -> usize {
        let want = rng.random_range(cfg.context_mask_min..=cfg.context_mask_max);
        want.min(available)
    }

    fn neighborhood<R: Rng + ?Sized>(&self, at: usize, cfg: &OpConfig, rng: &mut R) -> (usize, usize) {
        let avail_left = self.elems[..at].iter().rev().take_while(|e| e.is_word()).count();
        let avail_right = self.elems[at + 1..].iter().take_while(|e| e.is_word()).count();
        let left = Self::draw_extent(cfg, avail_left, rng);
        let right = Self::draw_extent(cfg, avail_right, rng);
        (left, right)
    }

    /// Slot the entity at `at` and `left`/`right` adjacent context words.
    /// Returns the entity's new element index.
    fn slot_entity(&mut self, at: usize, left: usize, right: usize, op: OpKind, new_type: TypeId, flipped: bool) -> usize {
        if right > 0 {
            self.elems.splice(at + 1..at + 1 + right, [Elem::ContextSlot(op)]);
        }
        if let Elem::Entity {
            type_id,
            content,
            flipped: f,
        } = &mut self.elems[at]
        {
            *type_id = new_type;
            *content = EntityContent::Slot(op);
            *f |= flipped;
        }
        if left > 0 {
            self.elems.splice(at - left..at, [Elem::ContextSlot(op)]);
            return at - left + 1;
        }
        at
    }

    fn check_type(schema: &LabelSchema, t: TypeId) -> Result<(), MaskError> {
        if schema.contains(t) {
            Ok(())
        } else {
            Err(MaskError::UnknownType(t))
        }
    }

    /// Op1: regenerate one entity (same type) and a little context around it.
    pub fn augment_entity<R: Rng + ?Sized>(&mut self, cfg: &OpConfig, rng: &mut R) -> Result<(), MaskError> {
        let at = self.pick_entity(OpKind::Op1, rng)?;
        let (left, right) = self.neighborhood(at, cfg, rng);
        let t = self.type_at(at);
        let ordinal = self.entity_ordinal(at);
        self.slot_entity(at, left, right, OpKind::Op1, t, false);
        self.provenance.push(AppliedOp {
            op: OpKind::Op1,
            entity: Some(ordinal),
            from_type: Some(t),
            new_type: None,
            left,
            right,
        });
        Ok(())
    }

    /// Op2: give one entity a new type and regenerate it with nearby context.
    pub fn change_entity_type<R: Rng + ?Sized>(
        &mut self,
        new_type: Option<TypeId>,
        schema: &LabelSchema,
        scheme: &FlipScheme,
        cfg: &OpConfig,
        rng: &mut R,
    ) -> Result<(), MaskError> {
        let at = self.pick_entity(OpKind::Op2, rng)?;
        let current = self.type_at(at);
        let target = match new_type {
            Some(t) => {
                Self::check_type(schema, t)?;
                if t == current {
                    return Err(MaskError::SameType {
                        op: OpKind::Op2,
                        type_id: t,
                    });
                }
                t
            }
            None => choose_flip_type(current, schema, scheme, rng)?,
        };
        let (left, right) = self.neighborhood(at, cfg, rng);
        let ordinal = self.entity_ordinal(at);
        self.slot_entity(at, left, right, OpKind::Op2, target, true);
        self.provenance.push(AppliedOp {
            op: OpKind::Op2,
            entity: Some(ordinal),
            from_type: Some(current),
            new_type: Some(target),
            left,
            right,
        });
        Ok(())
    }

    /// Op3: insert `<MASK> [ <MASK> | new ] <MASK>` after an entity.
    pub fn add_entity<R: Rng + ?Sized>(
        &mut self,
        new_type: Option<TypeId>,
        schema: &LabelSchema,
        scheme: &FlipScheme,
        rng: &mut R,
    ) -> Result<(), MaskError> {
        let at = self.pick_entity(OpKind::Op3, rng)?;
        let anchor_type = self.type_at(at);
        let target = match new_type {
            Some(t) => {
                Self::check_type(schema, t)?;
                t
            }
            None => choose_flip_type(anchor_type, schema, scheme, rng)?,
        };
        let ordinal = self.entity_ordinal(at);
        self.elems.splice(
            at + 1..at + 1,
            [
                Elem::ContextSlot(OpKind::Op3),
                Elem::Entity {
                    type_id: target,
                    content: EntityContent::Slot(OpKind::Op3),
                    flipped: true,
                },
                Elem::ContextSlot(OpKind::Op3),
            ],
        );
        self.last_anchor = Some(at);
        self.provenance.push(AppliedOp {
            op: OpKind::Op3,
            entity: Some(ordinal),
            from_type: Some(anchor_type),
            new_type: Some(target),
            left: 0,
            right: 0,
        });
        Ok(())
    }

    /// Op4: replace an entity and some surrounding context with one
    /// context slot.
    pub fn erase_entity<R: Rng + ?Sized>(
        &mut self,
        target: EraseTarget,
        cfg: &OpConfig,
        rng: &mut R,
    ) -> Result<(), MaskError> {
        let at = match target {
            EraseTarget::Random => self.pick_entity(OpKind::Op4, rng)?,
            EraseTarget::Anchor => match self.last_anchor.take() {
                Some(i) if self.elems[i].is_untouched_entity() => i,
                _ if self.original_types.is_empty() => return Err(MaskError::NoEntity(OpKind::Op4)),
                _ => return Err(MaskError::OverlapExhausted(OpKind::Op4)),
            },
        };
        let (left, right) = self.neighborhood(at, cfg, rng);
        let t = self.type_at(at);
        let ordinal = self.entity_ordinal(at);
        self.elems
            .splice(at - left..at + 1 + right, [Elem::ContextSlot(OpKind::Op4)]);
        self.last_anchor = None;
        self.provenance.push(AppliedOp {
            op: OpKind::Op4,
            entity: Some(ordinal),
            from_type: Some(t),
            new_type: None,
            left,
            right,
        });
        Ok(())
    }

    /// Op5: slot a contiguous sub-span of one untouched context run.
    pub fn augment_context<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<(), MaskError> {
        if !self.had_context {
            return Err(MaskError::NoContext);
        }
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < self.elems.len() {
            if self.elems[i].is_word() {
                let start = i;
                while i < self.elems.len() && self.elems[i].is_word() {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        if runs.is_empty() {
            return Err(MaskError::OverlapExhausted(OpKind::Op5));
        }
        let (start, len) = runs[rng.random_range(0..runs.len())];
        let span = rng.random_range(1..=len);
        let offset = rng.random_range(0..=len - span);
        let from = start + offset;
        self.elems
            .splice(from..from + span, [Elem::ContextSlot(OpKind::Op5)]);
        self.provenance.push(AppliedOp {
            op: OpKind::Op5,
            entity: None,
            from_type: None,
            new_type: None,
            left: offset,
            right: span,
        });
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(
        &mut self,
        op: &Operation,
        schema: &LabelSchema,
        scheme: &FlipScheme,
        cfg: &OpConfig,
        rng: &mut R,
    ) -> Result<(), MaskError> {
        match *op {
            Operation::AugmentEntity => self.augment_entity(cfg, rng),
            Operation::ChangeType { new_type } => self.change_entity_type(new_type, schema, scheme, cfg, rng),
            Operation::AddEntity { new_type } => self.add_entity(new_type, schema, scheme, rng),
            Operation::EraseEntity { target } => self.erase_entity(target, cfg, rng),
            Operation::AugmentContext => self.augment_context(rng),
        }
    }

    pub fn finish(self, schema: &LabelSchema) -> MaskedTemplate {
        let mut pieces = Vec::new();
        let mut literal: Vec<String> = Vec::new();
        let mut slot_id = 0;
        let mut expected_types = Vec::with_capacity(self.entity_count());
        let mut flipped_positions = Vec::new();

        fn flush(pieces: &mut Vec<Piece>, literal: &mut Vec<String>) {
            if !literal.is_empty() {
                pieces.push(Piece::Literal(literal.join(" ")));
                literal.clear();
            }
        }
        let mut slot = |pieces: &mut Vec<Piece>, literal: &mut Vec<String>, kind, constraint, origin_op| {
            flush(pieces, literal);
            pieces.push(Piece::Slot(MaskSlot {
                slot_id,
                kind,
                constraint,
                origin_op,
            }));
            slot_id += 1;
        };

        for elem in &self.elems {
            match elem {
                Elem::Word(w) => literal.push(escape_token(w)),
                Elem::ContextSlot(op) => slot(&mut pieces, &mut literal, SlotKind::ContextWords, None, *op),
                Elem::Entity {
                    type_id,
                    content,
                    flipped,
                } => {
                    if *flipped {
                        flipped_positions.push(expected_types.len());
                    }
                    expected_types.push(*type_id);
                    let name = schema.display_name(*type_id);
                    match content {
                        EntityContent::Words(words) => push_group(&mut literal, words, name),
                        EntityContent::Slot(op) => {
                            literal.push(OPEN.to_string());
                            slot(&mut pieces, &mut literal, SlotKind::EntityWords, Some(*type_id), *op);
                            literal.push(SEP.to_string());
                            literal.extend(name.split(' ').map(String::from));
                            literal.push(CLOSE.to_string());
                        }
                    }
                }
            }
        }
        flush(&mut pieces, &mut literal);
        MaskedTemplate {
            parent_id: self.parent_id,
            pieces,
            expected_types,
            original_types: self.original_types,
            flipped_positions,
            provenance: self.provenance,
        }
    }
}

/// Apply `ops` in order to one draft and finish it.
pub fn compose_template<R: Rng + ?Sized>(
    sentence: &SegmentedSentence,
    ops: &[Operation],
    schema: &LabelSchema,
    scheme: &FlipScheme,
    cfg: &OpConfig,
    rng: &mut R,
) -> Result<MaskedTemplate, MaskError> {
    let mut draft = TemplateDraft::new(sentence);
    for op in ops {
        draft.apply(op, schema, scheme, cfg, rng)?;
    }
    Ok(draft.finish(schema))
}

/// Levenshtein distance between two type sequences.
pub fn type_edit_distance(a: &[TypeId], b: &[TypeId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
