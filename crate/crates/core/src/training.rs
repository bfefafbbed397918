//! Losses, sparse Adam and the epoch loop with early stopping on filtered MRR.
//!
//! Each positive is paired with negatives drawn by corrupting configured
//! slots (local closed world against the training positives). Batches are
//! scored in parallel; per-fact gradients are merged in batch order so runs
//! are bitwise reproducible for a fixed seed regardless of thread count.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{mean_mrr, EvalError, MetricSlot, Scorer};
use crate::kg::{sample_negatives, DataError, Dataset, EpisodicDataset, Fact, FilterIndex, Slot};
use crate::models::{Counts, ModelError, ModelKind, ModelParams, ParamGradient, Rank, Role, TimeSide};

/// Seed offsets so initialization and sampling streams never coincide.
const SAMPLING_STREAM: u64 = 0x5eed_0001;
const END_INIT_STREAM: u64 = 0x5eed_0002;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
    #[error("datasets do not share a vocabulary")]
    VocabularyMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `Σ log(1 + exp(−y θ))`.
    Logistic,
    /// `Σ max(0, γ + f(θ_neg) − f(θ_pos))` with `f = σ` or the identity.
    Margin,
}

/// Which facts the early-stopping MRR is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Valid,
    /// Training facts (memorization runs).
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    /// Margin γ.
    pub margin: f64,
    /// Apply σ to scores inside the margin loss.
    pub margin_sigmoid: bool,
    /// L2 weight λ.
    pub l2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Negatives per positive and per corrupted slot.
    pub negatives: usize,
    pub negative_slots: Vec<Slot>,
    pub monitor: Monitor,
    /// MRR is averaged over these columns.
    pub monitor_slots: Vec<MetricSlot>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Logistic,
            margin: 1.0,
            margin_sigmoid: true,
            l2: 0.0,
            learning_rate: 1e-3,
            batch_size: 512,
            max_epochs: 500,
            eval_every: 50,
            patience: 2,
            negatives: 1,
            negative_slots: vec![Slot::Subject, Slot::Object],
            monitor: Monitor::Valid,
            monitor_slots: vec![MetricSlot::Entity],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.margin >= 0.0) {
            return bad("margin must be >= 0");
        }
        if !(self.l2 >= 0.0) {
            return bad("l2 must be >= 0");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.negatives == 0 {
            return bad("batch_size, eval_every and negatives must be >= 1");
        }
        if self.negative_slots.is_empty() || self.monitor_slots.is_empty() {
            return bad("negative_slots and monitor_slots must be non-empty");
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ log(1 + exp(−y_i θ_i)) + λ‖P‖²` with labels `y ∈ {−1, +1}`.
pub fn logistic_loss(scores: &[f64], labels: &[f64], params: &ModelParams, l2: f64) -> f64 {
    debug_assert_eq!(scores.len(), labels.len());
    let data: f64 = scores.iter().zip(labels).map(|(&t, &y)| softplus(-y * t)).sum();
    data + l2 * params.squared_norm()
}

/// Hinge over every (positive, negative) pair.
pub fn margin_loss(pos: &[f64], neg: &[f64], margin: f64, apply_sigmoid: bool) -> f64 {
    let f = |x: f64| if apply_sigmoid { sigmoid(x) } else { x };
    pos.iter().map(|&p| neg.iter().map(|&n| (margin + f(n) - f(p)).max(0.0)).sum::<f64>()).sum()
}

/// Data loss and its gradient for positives paired with their own negatives.
///
/// The L2 term is not included. Scores use `side`'s time tables.
pub fn batch_objective<F: Fact>(
    params: &ModelParams,
    batch: &[(F, Vec<F>)],
    config: &TrainConfig,
    side: TimeSide,
) -> (f64, ParamGradient) {
    let parts: Vec<(f64, ParamGradient)> =
        batch.par_iter().map(|(pos, negs)| fact_objective(params, pos, negs, config, side)).collect();
    let mut total = 0.0;
    let mut grad = ParamGradient::new();
    for (loss, g) in &parts {
        total += loss;
        grad.merge(g);
    }
    (total, grad)
}

fn fact_objective<F: Fact>(
    params: &ModelParams,
    pos: &F,
    negs: &[F],
    config: &TrainConfig,
    side: TimeSide,
) -> (f64, ParamGradient) {
    let mut g = ParamGradient::new();
    let pk = pos.key();
    let theta_p = params.score_key(pk, side);
    let mut loss = 0.0;
    match config.loss {
        Loss::Logistic => {
            // d/dθ log(1 + e^{−yθ}) = −y σ(−yθ)
            loss += softplus(-theta_p);
            params.accumulate_gradient(pk, side, -sigmoid(-theta_p), &mut g);
            for n in negs {
                let nk = n.key();
                let theta_n = params.score_key(nk, side);
                loss += softplus(theta_n);
                params.accumulate_gradient(nk, side, sigmoid(theta_n), &mut g);
            }
        }
        Loss::Margin => {
            let (fp, dp) = squash(theta_p, config.margin_sigmoid);
            for n in negs {
                let nk = n.key();
                let (fnv, dn) = squash(params.score_key(nk, side), config.margin_sigmoid);
                let hinge = config.margin + fnv - fp;
                if hinge > 0.0 {
                    loss += hinge;
                    params.accumulate_gradient(nk, side, dn, &mut g);
                    params.accumulate_gradient(pk, side, -dp, &mut g);
                }
            }
        }
    }
    (loss, g)
}

/// `(f(θ), f'(θ))` for the margin loss.
fn squash(theta: f64, apply_sigmoid: bool) -> (f64, f64) {
    if apply_sigmoid {
        let s = sigmoid(theta);
        (s, s * (1.0 - s))
    } else {
        (theta, 1.0)
    }
}

/// Adam moments for every table, advanced lazily per touched row.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<Role, Vec<f64>>,
    second: BTreeMap<Role, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut s =
            Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: BTreeMap::new(), second: BTreeMap::new() };
        s.cover(params);
        s
    }

    /// Allocates zero moments for tables added since construction.
    fn cover(&mut self, params: &ModelParams) {
        for t in params.tables() {
            self.first.entry(t.role).or_insert_with(|| vec![0.0; t.data.len()]);
            self.second.entry(t.role).or_insert_with(|| vec![0.0; t.data.len()]);
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, role: Role) -> Option<&[f64]> {
        self.first.get(&role).map(Vec::as_slice)
    }

    pub fn second_moment(&self, role: Role) -> Option<&[f64]> {
        self.second.get(&role).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update of the rows present in `grad`.
    ///
    /// Rows absent from `grad` keep their moments untouched (lazy update);
    /// the step counter always advances.
    pub fn update(&mut self, params: &mut ModelParams, grad: &ParamGradient, lr: f64) -> Result<(), ModelError> {
        self.cover(params);
        for (role, row, g) in grad.iter() {
            let t = params.table(role).ok_or(ModelError::MissingTable(role))?;
            if row >= t.rows || g.len() != t.row_len() {
                return Err(ModelError::ShapeMismatch {
                    role,
                    expected: (t.rows, t.row_shape.clone()),
                    found: (row + 1, vec![g.len()]),
                });
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (role, row, g) in grad.iter() {
            let table = params.table_mut(role).expect("checked above");
            let n = table.row_len();
            let range = row * n..(row + 1) * n;
            let m = &mut self.first.get_mut(&role).expect("covered")[range.clone()];
            let v = &mut self.second.get_mut(&role).expect("covered")[range];
            let p = table.row_mut(row);
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    /// Mean data loss per positive over the epoch.
    pub loss: f64,
    pub valid_mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EvalRecord>,
    /// Last epoch run.
    pub stop_epoch: usize,
    /// Epoch of the returned parameters, when any evaluation ran.
    pub best_epoch: Option<usize>,
    pub best_mrr: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    /// `epoch,loss,valid_mrr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,valid_mrr\n");
        for r in &self.history {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, r.valid_mrr);
        }
        out
    }
}

/// Scores through one side's time tables.
struct SideScorer<'a> {
    params: &'a ModelParams,
    side: TimeSide,
}

impl Scorer for SideScorer<'_> {
    fn episodic(&self) -> bool {
        self.params.kind().is_episodic()
    }

    fn domain(&self, slot: Slot) -> usize {
        Scorer::domain(self.params, slot)
    }

    fn score_key(&self, key: [usize; 4]) -> f64 {
        self.params.score_key(key, self.side)
    }
}

struct Fit<'a, D: Dataset> {
    train: &'a D,
    valid: &'a D,
    filter: &'a FilterIndex,
    side: TimeSide,
    trainable: &'a (dyn Fn(Role) -> bool + Sync),
}

fn check_arity<F: Fact>(kind: ModelKind) -> Result<(), TrainError> {
    if F::EPISODIC != kind.is_episodic() {
        let expected = if kind.is_episodic() { "episodic" } else { "semantic" };
        return Err(ModelError::ArityMismatch { kind, expected }.into());
    }
    Ok(())
}

fn fit<D: Dataset>(
    mut params: ModelParams,
    data: Fit<'_, D>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    config.validate()?;
    check_arity::<D::Fact>(params.kind())?;
    if data.train.vocab().hash() != data.valid.vocab().hash() {
        return Err(TrainError::VocabularyMismatch);
    }
    if Counts::of(data.train.vocab()) != params.counts() {
        return Err(TrainError::VocabularyMismatch);
    }
    let positives = data.train.positives();
    if positives.is_empty() && config.max_epochs > 0 {
        return Err(DataError::EmptyPartition("train").into());
    }
    let known = FilterIndex::from_facts(positives.iter());
    let vocab = data.train.vocab().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(SAMPLING_STREAM));
    let mut adam = AdamState::new(&params);
    let mut report = TrainReport::default();
    let mut best: Option<ModelParams> = None;
    let mut best_mrr = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..positives.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut touched: HashSet<(Role, usize)> = HashSet::new();
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let pos = positives[i];
                let negs = sample_negatives(&pos, &vocab, &config.negative_slots, config.negatives, &known, &mut rng)?;
                batch.push((pos, negs));
            }
            let (loss, mut grad) = batch_objective(&params, &batch, config, data.side);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, what: format!("batch loss {loss}") });
            }
            epoch_loss += loss;
            grad.retain_roles(data.trainable);
            grad.add_l2(&params, config.l2);
            touched.extend(grad.iter().map(|(role, row, _)| (role, row)));
            adam.update(&mut params, &grad, config.learning_rate)?;
        }
        decay_untouched(&mut params, &touched, data.trainable, config);
        if !params.is_finite() {
            return Err(TrainError::Diverged { epoch, what: "non-finite parameters".into() });
        }
        report.stop_epoch = epoch;

        if epoch % config.eval_every == 0 || epoch == config.max_epochs {
            let scorer = SideScorer { params: &params, side: data.side };
            let mrr = match config.monitor {
                Monitor::Valid => mean_mrr(&scorer, data.valid, &config.monitor_slots, data.filter)?,
                Monitor::Train => mean_mrr(&scorer, data.train, &config.monitor_slots, data.filter)?,
            };
            report.history.push(EvalRecord { epoch, loss: epoch_loss / positives.len() as f64, valid_mrr: mrr });
            if mrr > best_mrr {
                best_mrr = mrr;
                best = Some(params.clone());
                report.best_epoch = Some(epoch);
                report.best_mrr = Some(mrr);
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok((best.unwrap_or(params), report))
}

/// Applies the L2 step to trainable rows no batch touched this epoch, as one
/// plain gradient step `P ← P − lr · 2λP`.
fn decay_untouched(
    params: &mut ModelParams,
    touched: &HashSet<(Role, usize)>,
    trainable: &(dyn Fn(Role) -> bool + Sync),
    config: &TrainConfig,
) {
    if config.l2 == 0.0 {
        return;
    }
    let factor = 1.0 - 2.0 * config.learning_rate * config.l2;
    let roles: Vec<Role> = params.tables().iter().map(|t| t.role).filter(|&r| trainable(r)).collect();
    for role in roles {
        let table = params.table_mut(role).expect("listed");
        for row in 0..table.rows {
            if !touched.contains(&(role, row)) {
                table.row_mut(row).iter_mut().for_each(|x| *x *= factor);
            }
        }
    }
}

/// Trains `params` in place of a fresh model, returning the best evaluated
/// checkpoint. `filter` holds every known-true fact used for filtered MRR.
pub fn train<D: Dataset>(
    params: ModelParams,
    train: &D,
    valid: &D,
    filter: &FilterIndex,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    let all = |role: Role| !role.is_end_time();
    fit(params, Fit { train, valid, filter, side: TimeSide::Start, trainable: &all }, config)
}

/// Initializes `kind` from `config.seed` and trains it; the filter covers
/// train ∪ valid.
pub fn train_model<D: Dataset>(
    kind: ModelKind,
    rank: Rank,
    train_set: &D,
    valid: &D,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    let params = ModelParams::init(kind, Counts::of(train_set.vocab()), rank, config.seed)?;
    let mut filter = FilterIndex::from_facts(train_set.facts().iter());
    filter.extend(valid.facts().iter());
    train(params, train_set, valid, &filter, config)
}

/// Settings for both projection stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionTrainConfig {
    pub start: TrainConfig,
    pub end: TrainConfig,
}

impl Default for ProjectionTrainConfig {
    fn default() -> Self {
        let stage = TrainConfig {
            loss: Loss::Margin,
            margin_sigmoid: false,
            negative_slots: vec![Slot::Timestamp, Slot::Subject, Slot::Object],
            monitor: Monitor::Train,
            monitor_slots: vec![MetricSlot::Timestamp],
            ..TrainConfig::default()
        };
        Self { start: stage.clone(), end: stage }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageReport {
    pub start: TrainReport,
    pub end: TrainReport,
}

/// Two-stage training: all base parameters on `start`, then only freshly
/// allocated end-time tables on `end` with everything else frozen.
pub fn train_projection(
    kind: ModelKind,
    rank: Rank,
    start: &EpisodicDataset,
    end: &EpisodicDataset,
    config: &ProjectionTrainConfig,
) -> Result<(ModelParams, TwoStageReport), TrainError> {
    if !kind.admits_projection() {
        return Err(ModelError::NotProjectable(kind).into());
    }
    if start.vocab().hash() != end.vocab().hash() {
        return Err(TrainError::VocabularyMismatch);
    }
    let params = ModelParams::init(kind, Counts::of(start.vocab()), rank, config.start.seed)?;
    let filter_start = FilterIndex::from_facts(start.facts().iter());
    let (mut params, start_report) = train(params, start, start, &filter_start, &config.start)?;

    params.add_end_tables(config.end.seed.wrapping_add(END_INIT_STREAM))?;
    let filter_end = FilterIndex::from_facts(end.facts().iter());
    let end_only = |role: Role| role.is_end_time();
    let (params, end_report) = if end.positives().is_empty() {
        (params, TrainReport::default())
    } else {
        fit(
            params,
            Fit { train: end, valid: end, filter: &filter_end, side: TimeSide::End, trainable: &end_only },
            &config.end,
        )?
    };
    Ok((params, TwoStageReport { start: start_report, end: end_report }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn logistic_values() {
        let p = ModelParams::zeros(
            ModelKind::semantic(Family::Rescal).unwrap(),
            Counts::new(1, 1, 0),
            Rank::uniform(1).unwrap(),
        )
        .unwrap();
        assert!((logistic_loss(&[0.0], &[1.0], &p, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((logistic_loss(&[700.0], &[-1.0], &p, 0.0) - 700.0).abs() < 1e-9);
        assert!(logistic_loss(&[-700.0], &[-1.0], &p, 0.0) >= 0.0);
    }

    #[test]
    fn margin_values() {
        assert_eq!(margin_loss(&[5.0], &[-5.0], 0.1, true), 0.0);
        assert_eq!(margin_loss(&[0.0], &[0.0], 1.0, false), 1.0);
        assert_eq!(margin_loss(&[0.3], &[0.3], 0.0, false), 0.0);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let kind = ModelKind::episodic(Family::DistMult).unwrap();
        let mut p = ModelParams::init(kind, Counts::new(2, 1, 1), Rank::uniform(2).unwrap(), 0).unwrap();
        let before = p.clone();
        let mut adam = AdamState::new(&p);
        let mut g = ParamGradient::new();
        adam.update(&mut p, &g, 0.1).unwrap();
        g.add(Role::Entity, 0, 1.0, &[0.0, 0.0]);
        adam.update(&mut p, &g, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step(), 2);
    }

    #[test]
    fn adam_rejects_bad_rows() {
        let kind = ModelKind::episodic(Family::DistMult).unwrap();
        let mut p = ModelParams::init(kind, Counts::new(2, 1, 1), Rank::uniform(2).unwrap(), 0).unwrap();
        let mut adam = AdamState::new(&p);
        let mut g = ParamGradient::new();
        g.add(Role::Entity, 5, 1.0, &[1.0, 1.0]);
        assert!(adam.update(&mut p, &g, 0.1).is_err());
        let mut g = ParamGradient::new();
        g.add(Role::TimeCore, 0, 1.0, &[1.0]);
        assert!(matches!(adam.update(&mut p, &g, 0.1), Err(ModelError::MissingTable(Role::TimeCore))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { margin: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
