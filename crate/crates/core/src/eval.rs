//! Link-prediction ranking metrics and threshold-free classification scores.
//!
//! Ranks are 1-based. Ties between the true completion and other
//! candidates use the mid-rank rule `1 + #greater + ⌈#equal / 2⌉`, so the
//! order in which candidates are enumerated never helps or hurts.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{Dataset, Fact, FilterIndex, Slot};
use crate::models::{ModelError, ModelParams, TimeSide};

/// Hits@k cut-offs reported by [`Metrics`].
pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// Version of the metrics JSON layout written by [`MetricsReport`].
pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scorer takes {} facts", if *scorer_episodic { "episodic" } else { "semantic" })]
    Arity { scorer_episodic: bool },
    #[error("slot {0} does not exist on these facts")]
    NoSuchSlot(Slot),
    #[error("nothing to evaluate: the test set has no positive facts")]
    EmptyTestSet,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least one positive and one negative label")]
    OneClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

/// Anything that assigns a logit to a fact key `[t, s, p, o]`.
pub trait Scorer: Sync {
    /// Whether keys carry a timestamp.
    fn episodic(&self) -> bool;
    /// Number of candidates for `slot`.
    fn domain(&self, slot: Slot) -> usize;
    /// Score of an in-range key.
    fn score_key(&self, key: [usize; 4]) -> f64;
}

impl Scorer for ModelParams {
    fn episodic(&self) -> bool {
        self.kind().is_episodic()
    }

    fn domain(&self, slot: Slot) -> usize {
        let c = self.counts();
        match slot {
            Slot::Timestamp => c.timestamps,
            Slot::Subject | Slot::Object => c.entities,
            Slot::Predicate => c.predicates,
        }
    }

    fn score_key(&self, key: [usize; 4]) -> f64 {
        ModelParams::score_key(self, key, TimeSide::Start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Filtered,
    Raw,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Filtered => "filtered",
            Mode::Raw => "raw",
        })
    }
}

/// A reported column: one corrupted slot, or `Entity` for subject and object pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSlot {
    Entity,
    Subject,
    Object,
    Predicate,
    Timestamp,
}

impl MetricSlot {
    pub fn slots(self) -> &'static [Slot] {
        match self {
            MetricSlot::Entity => &[Slot::Subject, Slot::Object],
            MetricSlot::Subject => &[Slot::Subject],
            MetricSlot::Object => &[Slot::Object],
            MetricSlot::Predicate => &[Slot::Predicate],
            MetricSlot::Timestamp => &[Slot::Timestamp],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricSlot::Entity => "entity",
            MetricSlot::Subject => "subject",
            MetricSlot::Object => "object",
            MetricSlot::Predicate => "predicate",
            MetricSlot::Timestamp => "timestamp",
        }
    }
}

impl fmt::Display for MetricSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MetricSlot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [MetricSlot::Entity, MetricSlot::Subject, MetricSlot::Object, MetricSlot::Predicate, MetricSlot::Timestamp]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown slot {s:?}"))
    }
}

fn check_fact<F: Fact, S: Scorer + ?Sized>(scorer: &S, fact: &F, slot: Slot) -> Result<(), EvalError> {
    if F::EPISODIC != scorer.episodic() {
        return Err(EvalError::Arity { scorer_episodic: scorer.episodic() });
    }
    if !F::slots().contains(&slot) {
        return Err(EvalError::NoSuchSlot(slot));
    }
    let key = fact.key();
    if F::slots().iter().any(|&sl| fact.get(sl) >= scorer.domain(sl)) {
        return Err(ModelError::IndexOutOfRange(key).into());
    }
    Ok(())
}

/// Rank of the true `fact` among all corruptions of `slot`.
///
/// In filtered mode, candidates that form another known-true fact are
/// dropped before ranking.
pub fn rank_slot<F: Fact, S: Scorer + ?Sized>(
    scorer: &S,
    fact: &F,
    slot: Slot,
    filter: &FilterIndex,
    mode: Mode,
) -> Result<usize, EvalError> {
    check_fact(scorer, fact, slot)?;
    Ok(rank_unchecked(scorer, fact, slot, filter, mode))
}

fn rank_unchecked<F: Fact, S: Scorer + ?Sized>(
    scorer: &S,
    fact: &F,
    slot: Slot,
    filter: &FilterIndex,
    mode: Mode,
) -> usize {
    let truth = fact.get(slot);
    let target = scorer.score_key(fact.key());
    let known = match mode {
        Mode::Filtered => filter.completions(fact, slot),
        Mode::Raw => &[],
    };
    let (mut greater, mut equal) = (0usize, 0usize);
    for c in 0..scorer.domain(slot) {
        if c == truth || known.binary_search(&c).is_ok() {
            continue;
        }
        let score = scorer.score_key(fact.replace(slot, c).key());
        if score > target {
            greater += 1;
        } else if score == target {
            equal += 1;
        }
    }
    1 + greater + equal.div_ceil(2)
}

/// MRR and Hits@k over a set of ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub slot: MetricSlot,
    pub mode: Mode,
    /// Number of ranks averaged.
    pub count: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

impl Metrics {
    /// Summarizes `ranks`; an empty list gives zeros.
    pub fn from_ranks(slot: MetricSlot, mode: Mode, ranks: &[usize]) -> Self {
        let n = ranks.len().max(1) as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = HITS_AT.iter().map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n)).collect();
        Self { slot, mode, count: ranks.len(), mrr, hits }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }
}

/// Ranks every positive fact of `facts` in each of `slots`, in fact order.
pub fn ranks<F: Fact, S: Scorer + ?Sized>(
    scorer: &S,
    facts: &[F],
    slots: &[Slot],
    filter: &FilterIndex,
    mode: Mode,
) -> Result<Vec<usize>, EvalError> {
    let positives: Vec<&F> = facts.iter().filter(|f| f.value()).collect();
    for f in &positives {
        for &slot in slots {
            check_fact(scorer, *f, slot)?;
        }
    }
    Ok(slots
        .iter()
        .flat_map(|&slot| {
            positives.par_iter().map(|f| rank_unchecked(scorer, *f, slot, filter, mode)).collect::<Vec<_>>()
        })
        .collect())
}

/// Metrics per requested slot over the positive facts of `test`.
///
/// `Entity` pools subject and object ranks into one list.
pub fn evaluate<D: Dataset, S: Scorer + ?Sized>(
    scorer: &S,
    test: &D,
    slots: &[MetricSlot],
    filter: &FilterIndex,
    mode: Mode,
) -> Result<Vec<Metrics>, EvalError> {
    if !test.facts().iter().any(|f| f.value()) {
        return Err(EvalError::EmptyTestSet);
    }
    slots
        .iter()
        .map(|&ms| {
            let r = ranks(scorer, test.facts(), ms.slots(), filter, mode)?;
            Ok(Metrics::from_ranks(ms, mode, &r))
        })
        .collect()
}

/// Mean filtered MRR over `slots`; the early-stopping signal.
pub fn mean_mrr<D: Dataset, S: Scorer + ?Sized>(
    scorer: &S,
    data: &D,
    slots: &[MetricSlot],
    filter: &FilterIndex,
) -> Result<f64, EvalError> {
    let m = evaluate(scorer, data, slots, filter, Mode::Filtered)?;
    Ok(m.iter().map(|m| m.mrr).sum::<f64>() / m.len().max(1) as f64)
}

/// Versioned metrics document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub model: String,
    pub metrics: Vec<Metrics>,
}

impl MetricsReport {
    pub fn new(model: impl Into<String>, metrics: Vec<Metrics>) -> Self {
        Self { schema_version: METRICS_SCHEMA_VERSION, model: model.into(), metrics }
    }

    /// Aligned text table: one row per (slot, mode), columns MRR and Hits@k.
    pub fn to_table(&self) -> String {
        let mut header = vec!["slot".to_owned(), "mode".to_owned(), "MRR".to_owned()];
        header.extend(HITS_AT.iter().map(|k| format!("@{k}")));
        let rows: Vec<Vec<String>> = self
            .metrics
            .iter()
            .map(|m| {
                let mut r = vec![m.slot.to_string(), m.mode.to_string(), format!("{:.3}", m.mrr)];
                r.extend(HITS_AT.iter().map(|&k| format!("{:.1}", 100.0 * m.hits_at(k).unwrap_or(0.0))));
                r
            })
            .collect();
        let mut out = format!("model: {}\n", self.model);
        out.push_str(&aligned(&header, &rows));
        out
    }
}

/// Left-aligned first columns, right-aligned numbers.
pub(crate) fn aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let text_cols = header.iter().take_while(|h| h.chars().all(|ch| ch.is_ascii_lowercase())).count().max(1);
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, &w))| if i < text_cols { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Items scoring at or above this value are predicted positive.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision-recall sweep at every distinct score, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        out
    }
}

fn check_labeled(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(bad));
    }
    Ok(())
}

/// Sweeps thresholds from the highest score down. Tied scores form a single
/// step; area is `Σ ΔR · P` with precision taken at the step's right end.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve, EvalError> {
    check_labeled(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(EvalError::OneClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = Vec::new();
    let (mut area, mut prev_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint { threshold, precision, recall });
    }
    Ok(PrCurve { points, auprc: area })
}

pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    pr_curve(scores, labels).map(|c| c.auprc)
}

/// Fraction of positives scoring strictly above `tau`.
pub fn recall_at(scores: &[f64], labels: &[bool], tau: f64) -> Result<f64, EvalError> {
    check_labeled(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let hits = scores.iter().zip(labels).filter(|&(&s, &l)| l && s > tau).count();
    Ok(hits as f64 / positives as f64)
}
