//! Episodic-to-semantic projection by marginalizing the time representation.
//!
//! Every admissible episodic model is linear in its time factor,
//! `θ(t, s, p, o) = a_t · f(s, p, o)`, so summing the time rows (or, for
//! ConT, the per-timestamp cores) and scoring once equals summing the
//! per-timestamp scores. `StartEnd` subtracts the summed end-time
//! representations, which cancels spans that have terminated.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{aligned, auprc, rank_slot, recall_at, EvalError, Mode, Scorer};
use crate::kg::{Dataset, Fact, FilterIndex, SemanticDataset, Slot, Triple};
use crate::models::{Family, ModelError, ModelParams, Role, TimeSide};

/// Default threshold for [`ProjectionMetrics::recall`].
pub const DEFAULT_RECALL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("the {0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("datasets do not share the scorer's vocabulary sizes")]
    VocabularyMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMode {
    /// Sum of start-time representations.
    Start,
    /// Start sum minus end sum.
    StartEnd,
}

impl ProjectionMode {
    pub fn name(self) -> &'static str {
        match self {
            ProjectionMode::Start => "start",
            ProjectionMode::StartEnd => "startend",
        }
    }
}

/// Semantic scorer built from episodic parameters and a marginal time operand.
#[derive(Debug, Clone)]
pub struct ProjectedScorer<'a> {
    params: &'a ModelParams,
    mode: ProjectionMode,
    /// Summed time rows (real part for ComplEx, flattened cores for ConT).
    marginal: Vec<f64>,
    marginal_im: Option<Vec<f64>>,
}

fn column_sum(params: &ModelParams, role: Role) -> Result<Vec<f64>, ModelError> {
    let t = params.table(role).ok_or(ModelError::MissingTable(role))?;
    let mut sum = vec![0.0; t.row_len()];
    for r in 0..t.rows {
        for (acc, x) in sum.iter_mut().zip(t.row(r)) {
            *acc += x;
        }
    }
    Ok(sum)
}

fn time_roles(family: Family, side: TimeSide) -> (Role, Option<Role>) {
    match (family, side) {
        (Family::ConT, TimeSide::Start) => (Role::TimeCore, None),
        (Family::ConT, TimeSide::End) => (Role::EndTimeCore, None),
        (Family::ComplEx, TimeSide::Start) => (Role::Time, Some(Role::TimeIm)),
        (Family::ComplEx, TimeSide::End) => (Role::EndTime, Some(Role::EndTimeIm)),
        (_, TimeSide::Start) => (Role::Time, None),
        (_, TimeSide::End) => (Role::EndTime, None),
    }
}

/// Builds the projected scorer for `mode`.
///
/// Fails for kinds that are not linear in one time factor (Tree, semantic
/// models) and, in `StartEnd` mode, when end-time tables are missing.
pub fn marginalize(params: &ModelParams, mode: ProjectionMode) -> Result<ProjectedScorer<'_>, ProjectionError> {
    let kind = params.kind();
    if !kind.admits_projection() {
        return Err(ModelError::NotProjectable(kind).into());
    }
    let family = kind.family();
    let (re, im) = time_roles(family, TimeSide::Start);
    let mut marginal = column_sum(params, re)?;
    let mut marginal_im = im.map(|r| column_sum(params, r)).transpose()?;
    if mode == ProjectionMode::StartEnd {
        let (end_re, end_im) = time_roles(family, TimeSide::End);
        for (m, e) in marginal.iter_mut().zip(column_sum(params, end_re)?) {
            *m -= e;
        }
        if let (Some(mi), Some(role)) = (marginal_im.as_mut(), end_im) {
            for (m, e) in mi.iter_mut().zip(column_sum(params, role)?) {
                *m -= e;
            }
        }
    }
    Ok(ProjectedScorer { params, mode, marginal, marginal_im })
}

impl ProjectedScorer<'_> {
    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    pub fn marginal_im(&self) -> Option<&[f64]> {
        self.marginal_im.as_deref()
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Projected logit `θ_proj(s, p, o)`.
    pub fn project_score(&self, triple: &Triple) -> Result<f64, ProjectionError> {
        let c = self.params.counts();
        if triple.s >= c.entities || triple.o >= c.entities || triple.p >= c.predicates {
            return Err(ModelError::IndexOutOfRange(triple.key()).into());
        }
        Ok(Scorer::score_key(self, triple.key()))
    }

    fn operand(&self) -> crate::models::TimeOperand<'_> {
        use crate::models::TimeOperand;
        match (self.params.kind().family(), &self.marginal_im) {
            (Family::ConT, _) => TimeOperand::Core(&self.marginal),
            (_, Some(im)) => TimeOperand::Complex(&self.marginal, im),
            _ => TimeOperand::Vector(&self.marginal),
        }
    }
}

impl Scorer for ProjectedScorer<'_> {
    fn episodic(&self) -> bool {
        false
    }

    fn domain(&self, slot: Slot) -> usize {
        Scorer::domain(self.params, slot)
    }

    fn score_key(&self, [_, s, p, o]: [usize; 4]) -> f64 {
        self.params.score_with_time(s, p, o, self.operand())
    }
}

/// Object-corruption Hits@10 on the genuine and false sets, plus pooled
/// threshold-free classification of genuine (label 1) vs false (label 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMetrics {
    pub genuine_hits10_filtered: f64,
    pub genuine_hits10_raw: f64,
    pub false_hits10_filtered: f64,
    pub false_hits10_raw: f64,
    pub auprc: f64,
    pub recall: f64,
    pub recall_threshold: f64,
}

/// Known triples of both sets; false triples count as observed facts.
pub fn projection_filter(genuine: &SemanticDataset, false_set: &SemanticDataset) -> FilterIndex {
    let as_true: Vec<Triple> = genuine.facts().iter().chain(false_set.facts()).map(|t| t.with_value(true)).collect();
    FilterIndex::from_facts(as_true.iter())
}

fn hits10<S: Scorer + ?Sized>(
    scorer: &S,
    facts: &[Triple],
    filter: &FilterIndex,
    mode: Mode,
) -> Result<f64, EvalError> {
    let mut hit = 0usize;
    for t in facts {
        if rank_slot(scorer, &t.with_value(true), Slot::Object, filter, mode)? <= 10 {
            hit += 1;
        }
    }
    Ok(hit as f64 / facts.len() as f64)
}

/// Evaluates any semantic scorer (projected or a semantic baseline).
pub fn evaluate_projection<S: Scorer + ?Sized>(
    scorer: &S,
    genuine: &SemanticDataset,
    false_set: &SemanticDataset,
    filter: &FilterIndex,
    recall_threshold: f64,
) -> Result<ProjectionMetrics, ProjectionError> {
    if genuine.is_empty() {
        return Err(ProjectionError::EmptyDataset("genuine"));
    }
    if false_set.is_empty() {
        return Err(ProjectionError::EmptyDataset("false"));
    }
    if scorer.episodic() {
        return Err(EvalError::Arity { scorer_episodic: true }.into());
    }
    if genuine.vocab().n_entities() != scorer.domain(Slot::Subject)
        || genuine.vocab().n_predicates() != scorer.domain(Slot::Predicate)
        || genuine.vocab().hash() != false_set.vocab().hash()
    {
        return Err(ProjectionError::VocabularyMismatch);
    }
    let (g, f) = (genuine.triples(), false_set.triples());
    let scores: Vec<f64> = g.iter().chain(f).map(|t| scorer.score_key(t.key())).collect();
    let labels: Vec<bool> = std::iter::repeat_n(true, g.len()).chain(std::iter::repeat_n(false, f.len())).collect();
    Ok(ProjectionMetrics {
        genuine_hits10_filtered: hits10(scorer, g, filter, Mode::Filtered)?,
        genuine_hits10_raw: hits10(scorer, g, filter, Mode::Raw)?,
        false_hits10_filtered: hits10(scorer, f, filter, Mode::Filtered)?,
        false_hits10_raw: hits10(scorer, f, filter, Mode::Raw)?,
        auprc: auprc(&scores, &labels)?,
        recall: recall_at(&scores, &labels, recall_threshold)?,
        recall_threshold,
    })
}

/// Side-by-side projection results (Start, StartEnd, semantic baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTable {
    pub schema_version: u32,
    pub model: String,
    pub columns: Vec<(String, ProjectionMetrics)>,
}

impl ProjectionTable {
    pub fn new(model: impl Into<String>, columns: Vec<(String, ProjectionMetrics)>) -> Self {
        Self { schema_version: crate::eval::METRICS_SCHEMA_VERSION, model: model.into(), columns }
    }

    /// Rows: Hits@10 per set and mode, then AUPRC and recall; one column per entry.
    pub fn to_table(&self) -> String {
        let mut header = vec!["set".to_owned(), "mode".to_owned()];
        header.extend(self.columns.iter().map(|(name, _)| name.clone()));
        type Get = fn(&ProjectionMetrics) -> f64;
        let rows: [(&str, &str, Get); 6] = [
            ("genuine", "filtered", |m| m.genuine_hits10_filtered),
            ("genuine", "raw", |m| m.genuine_hits10_raw),
            ("false", "filtered", |m| m.false_hits10_filtered),
            ("false", "raw", |m| m.false_hits10_raw),
            ("pooled", "auprc", |m| m.auprc),
            ("pooled", "recall", |m| m.recall),
        ];
        let body: Vec<Vec<String>> = rows
            .iter()
            .map(|(set, mode, get)| {
                let mut r = vec![set.to_string(), mode.to_string()];
                r.extend(self.columns.iter().map(|(_, m)| format!("{:.3}", get(m))));
                r
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "model: {} (Hits@10 for genuine/false rows)", self.model);
        out.push_str(&aligned(&header, &body));
        out
    }
}
