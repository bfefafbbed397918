//! Episodic and semantic fact stores.
//!
//! An episodic dataset is a set of `(t, s, p, o)` quadruples over a
//! [`Vocabulary`]; a semantic dataset is a set of `(s, p, o)` triples. Both
//! carry a Boolean value per fact. Everything here is immutable once built
//! and can be shared across threads.

mod filter;
mod io;
mod sampling;
mod spans;
mod split;
mod synth;
mod vocab;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::FilterIndex;
pub use io::{
    load_quadruples, load_quadruples_with_vocab, load_triples_with_vocab, parse_quadruples,
    parse_quadruples_with_vocab, parse_triples_with_vocab, write_quadruples, write_triples, DateParser, LoadOptions,
    OrdinalParser, TimestampParser,
};
pub use sampling::{sample_negatives, MAX_REJECTIONS};
pub use spans::{build_start_end, derive_semantic, filter_rare, spans_from_quadruples, EventSpan};
pub use split::{split_dataset, SplitConfig, Splits};
pub use synth::{synth_generate, synth_spans, SynthSpec};
pub use vocab::{Interner, Vocabulary};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: expected {expected} tab-separated fields, found {found}")]
    FieldCount { line: usize, expected: &'static str, found: usize },
    #[error("line {line}: invalid value field {value:?} (expected 0 or 1)")]
    BadValue { line: usize, value: String },
    #[error("line {line}: unparseable timestamp {value:?}")]
    BadTimestamp { line: usize, value: String },
    #[error("line {line}: fact contradicts the value given on line {first_line}")]
    Contradiction { line: usize, first_line: usize },
    #[error("line {line}: unknown {class} {name:?}")]
    UnknownName { line: usize, class: &'static str, name: String },
    #[error("duplicate {class} name {name:?}")]
    DuplicateName { class: &'static str, name: String },
    #[error("fact {0} is out of range for the vocabulary")]
    OutOfRange(String),
    #[error("contradictory values for fact {0}")]
    ConflictingFact(String),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    InvalidFractions((f64, f64, f64)),
    #[error("split would leave the {0} partition empty")]
    EmptyPartition(&'static str),
    #[error("the {0} domain has fewer than two members")]
    DomainTooSmall(Slot),
    #[error("every candidate for the {0} slot is a known-true fact")]
    DomainExhausted(Slot),
    #[error("slot {0} does not exist on semantic triples")]
    NoSuchSlot(Slot),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// One position of a fact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Timestamp,
    Subject,
    Predicate,
    Object,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::Timestamp, Slot::Subject, Slot::Predicate, Slot::Object];

    fn position(self) -> usize {
        match self {
            Slot::Timestamp => 0,
            Slot::Subject => 1,
            Slot::Predicate => 2,
            Slot::Object => 3,
        }
    }

    /// Number of candidates for this slot under `vocab`.
    pub fn domain(self, vocab: &Vocabulary) -> usize {
        match self {
            Slot::Timestamp => vocab.n_timestamps(),
            Slot::Subject | Slot::Object => vocab.n_entities(),
            Slot::Predicate => vocab.n_predicates(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Timestamp => "timestamp",
            Slot::Subject => "subject",
            Slot::Predicate => "predicate",
            Slot::Object => "object",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A `(t, s, p, o)` fact with its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruple {
    pub t: usize,
    pub s: usize,
    pub p: usize,
    pub o: usize,
    pub value: bool,
}

impl Quadruple {
    pub fn new(t: usize, s: usize, p: usize, o: usize) -> Self {
        Self { t, s, p, o, value: true }
    }

    pub fn triple(&self) -> Triple {
        Triple { s: self.s, p: self.p, o: self.o, value: self.value }
    }
}

/// An `(s, p, o)` fact with its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub s: usize,
    pub p: usize,
    pub o: usize,
    pub value: bool,
}

impl Triple {
    pub fn new(s: usize, p: usize, o: usize) -> Self {
        Self { s, p, o, value: true }
    }

    pub fn at(&self, t: usize) -> Quadruple {
        Quadruple { t, s: self.s, p: self.p, o: self.o, value: self.value }
    }
}

/// Common view of triples and quadruples used by sampling, filtering,
/// scoring and ranking.
pub trait Fact: Copy + Send + Sync + fmt::Debug + 'static {
    const EPISODIC: bool;

    /// `[t, s, p, o]`; triples report `t = 0`.
    fn key(&self) -> [usize; 4];

    fn value(&self) -> bool;

    fn with_key(&self, key: [usize; 4], value: bool) -> Self;

    fn time(&self) -> Option<usize> {
        Self::EPISODIC.then(|| self.key()[0])
    }

    fn get(&self, slot: Slot) -> usize {
        self.key()[slot.position()]
    }

    /// Copy of `self` with `slot` set to `index`.
    fn replace(&self, slot: Slot, index: usize) -> Self {
        let mut key = self.key();
        key[slot.position()] = index;
        self.with_key(key, self.value())
    }

    fn with_value(&self, value: bool) -> Self {
        self.with_key(self.key(), value)
    }

    /// Slots that exist on this kind of fact.
    fn slots() -> &'static [Slot] {
        if Self::EPISODIC {
            &Slot::ALL
        } else {
            &Slot::ALL[1..]
        }
    }

    fn in_range(&self, vocab: &Vocabulary) -> bool {
        Self::slots().iter().all(|&slot| self.get(slot) < slot.domain(vocab))
    }
}

impl Fact for Quadruple {
    const EPISODIC: bool = true;

    fn key(&self) -> [usize; 4] {
        [self.t, self.s, self.p, self.o]
    }

    fn value(&self) -> bool {
        self.value
    }

    fn with_key(&self, [t, s, p, o]: [usize; 4], value: bool) -> Self {
        Quadruple { t, s, p, o, value }
    }
}

impl Fact for Triple {
    const EPISODIC: bool = false;

    fn key(&self) -> [usize; 4] {
        [0, self.s, self.p, self.o]
    }

    fn value(&self) -> bool {
        self.value
    }

    fn with_key(&self, [_, s, p, o]: [usize; 4], value: bool) -> Self {
        Triple { s, p, o, value }
    }
}

/// A set of facts over a shared vocabulary.
pub trait Dataset {
    type Fact: Fact;

    fn vocab(&self) -> &Arc<Vocabulary>;

    fn facts(&self) -> &[Self::Fact];

    fn len(&self) -> usize {
        self.facts().len()
    }

    fn is_empty(&self) -> bool {
        self.facts().is_empty()
    }

    fn positives(&self) -> Vec<Self::Fact> {
        self.facts().iter().copied().filter(Fact::value).collect()
    }
}

/// Validates bounds and removes identical duplicates; contradictory
/// duplicates are an error. Input order is preserved.
fn normalize<F: Fact>(vocab: &Vocabulary, facts: Vec<F>) -> Result<Vec<F>, DataError> {
    let mut seen: HashMap<[usize; 4], bool> = HashMap::with_capacity(facts.len());
    let mut out = Vec::with_capacity(facts.len());
    for fact in facts {
        if !fact.in_range(vocab) {
            return Err(DataError::OutOfRange(format!("{fact:?}")));
        }
        match seen.insert(fact.key(), fact.value()) {
            None => out.push(fact),
            Some(v) if v == fact.value() => {}
            Some(_) => return Err(DataError::ConflictingFact(format!("{fact:?}"))),
        }
    }
    Ok(out)
}

/// Quadruples over a vocabulary (the episodic tensor).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicDataset {
    vocab: Arc<Vocabulary>,
    quadruples: Vec<Quadruple>,
}

impl EpisodicDataset {
    pub fn new(vocab: Arc<Vocabulary>, quadruples: Vec<Quadruple>) -> Result<Self, DataError> {
        let quadruples = normalize(&vocab, quadruples)?;
        Ok(Self { vocab, quadruples })
    }

    pub fn empty(vocab: Arc<Vocabulary>) -> Self {
        Self { vocab, quadruples: Vec::new() }
    }

    pub fn quadruples(&self) -> &[Quadruple] {
        &self.quadruples
    }

    /// Last timestamp index `T`.
    pub fn last_timestamp(&self) -> Option<usize> {
        self.vocab.last_timestamp()
    }
}

impl Dataset for EpisodicDataset {
    type Fact = Quadruple;

    fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn facts(&self) -> &[Quadruple] {
        &self.quadruples
    }
}

/// Triples over a vocabulary (the semantic tensor).
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDataset {
    vocab: Arc<Vocabulary>,
    triples: Vec<Triple>,
}

impl SemanticDataset {
    pub fn new(vocab: Arc<Vocabulary>, triples: Vec<Triple>) -> Result<Self, DataError> {
        let triples = normalize(&vocab, triples)?;
        Ok(Self { vocab, triples })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// `(genuine, false)`: the positive and the negative triples as two datasets.
    pub fn split_by_label(&self) -> (SemanticDataset, SemanticDataset) {
        let (pos, neg): (Vec<Triple>, Vec<Triple>) = self.triples.iter().copied().partition(|t| t.value);
        (
            SemanticDataset { vocab: self.vocab.clone(), triples: pos },
            SemanticDataset { vocab: self.vocab.clone(), triples: neg },
        )
    }
}

impl Dataset for SemanticDataset {
    type Fact = Triple;

    fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn facts(&self) -> &[Triple] {
        &self.triples
    }
}
