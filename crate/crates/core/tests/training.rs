use std::sync::Arc;

use ekge_core::eval::{evaluate, MetricSlot, Mode};
use ekge_core::kg::{
    build_start_end, synth_generate, Dataset, EpisodicDataset, Fact, FilterIndex, Quadruple, SemanticDataset, Slot,
    SynthSpec, Triple, Vocabulary,
};
use ekge_core::models::{Counts, Family, ModelKind, ModelParams, ParamGradient, Rank, Role, TimeSide};
use ekge_core::training::{
    batch_objective, logistic_loss, margin_loss, train, train_model, train_projection, AdamState, Loss, Monitor,
    ProjectionTrainConfig, TrainConfig, TrainError,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kind(family: Family) -> ModelKind {
    ModelKind::episodic(family).unwrap()
}

fn random_batch(rng: &mut impl Rng, c: Counts, n: usize) -> Vec<(Quadruple, Vec<Quadruple>)> {
    let mut q = || {
        Quadruple::new(
            rng.random_range(0..c.timestamps),
            rng.random_range(0..c.entities),
            rng.random_range(0..c.predicates),
            rng.random_range(0..c.entities),
        )
    };
    (0..n).map(|_| (q(), vec![q().with_value(false), q().with_value(false)])).collect()
}

/// `Σ log(1 + e^{−yθ}) + λ‖P‖²` evaluated through the public pieces.
fn full_objective(p: &ModelParams, batch: &[(Quadruple, Vec<Quadruple>)], l2: f64) -> f64 {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (pos, negs) in batch {
        scores.push(p.score(pos).unwrap());
        labels.push(1.0);
        for n in negs {
            scores.push(p.score(n).unwrap());
            labels.push(-1.0);
        }
    }
    logistic_loss(&scores, &labels, p, l2)
}

#[test]
fn adam_first_and_second_steps_match_closed_form() {
    let mut p = ModelParams::init(kind(Family::DistMult), Counts::new(3, 1, 1), Rank::uniform(2).unwrap(), 4).unwrap();
    let before = p.table(Role::Entity).unwrap().row(1).to_vec();
    let mut adam = AdamState::new(&p);
    let lr = 0.01;
    let g1 = [0.5, -2.0];
    let mut grad = ParamGradient::new();
    grad.add(Role::Entity, 1, 1.0, &g1);
    adam.update(&mut p, &grad, lr).unwrap();
    // t=1: m̂ = g, v̂ = g², step = lr g / (|g| + eps)
    let after1 = p.table(Role::Entity).unwrap().row(1).to_vec();
    for i in 0..2 {
        let expected = before[i] - lr * g1[i] / (g1[i].abs() + 1e-8);
        assert!((after1[i] - expected).abs() < 1e-15);
    }
    let g2 = [1.0, 1.0];
    let mut grad = ParamGradient::new();
    grad.add(Role::Entity, 1, 1.0, &g2);
    adam.update(&mut p, &grad, lr).unwrap();
    let after2 = p.table(Role::Entity).unwrap().row(1);
    for i in 0..2 {
        let m = 0.9 * 0.1 * g1[i] + 0.1 * g2[i];
        let v = 0.999 * 0.001 * g1[i] * g1[i] + 0.001 * g2[i] * g2[i];
        let (mh, vh) = (m / (1.0 - 0.81), v / (1.0 - 0.999f64.powi(2)));
        let expected = after1[i] - lr * mh / (vh.sqrt() + 1e-8);
        assert!((after2[i] - expected).abs() < 1e-14, "{} vs {expected}", after2[i]);
    }
    // rows outside the gradient are untouched
    assert_eq!(
        p.table(Role::Entity).unwrap().row(0),
        ModelParams::init(kind(Family::DistMult), Counts::new(3, 1, 1), Rank::uniform(2).unwrap(), 4)
            .unwrap()
            .table(Role::Entity)
            .unwrap()
            .row(0)
    );
}

#[test]
fn composed_loss_gradient_matches_central_differences() {
    let counts = Counts::new(4, 2, 3);
    let l2 = 0.03;
    let config = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for family in [Family::DistMult, Family::HolE, Family::ComplEx, Family::Tucker, Family::ConT, Family::Tree] {
        let p = ModelParams::init(kind(family), counts, Rank::uniform(3).unwrap(), 11).unwrap();
        let batch = random_batch(&mut rng, counts, 3);
        let (data, mut grad) = batch_objective(&p, &batch, &config, TimeSide::Start);
        assert!((data - full_objective(&p, &batch, 0.0)).abs() < 1e-12);
        grad.add_l2(&p, l2);
        let mut probe = p.clone();
        let h = 1e-6;
        for table in p.tables() {
            let n = table.row_len();
            for idx in 0..table.data.len() {
                let x = table.data[idx];
                probe.table_mut(table.role).unwrap().data[idx] = x + h;
                let up = full_objective(&probe, &batch, l2);
                probe.table_mut(table.role).unwrap().data[idx] = x - h;
                let down = full_objective(&probe, &batch, l2);
                probe.table_mut(table.role).unwrap().data[idx] = x;
                let numeric = (up - down) / (2.0 * h);
                // rows outside the batch carry only the L2 term, applied lazily
                let analytic = grad.get(table.role, idx / n).map_or(2.0 * l2 * x, |r| r[idx % n]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                assert!(rel < 1e-5, "{family} {:?}[{idx}]: {analytic} vs {numeric}", table.role);
            }
        }
    }
}

#[test]
fn margin_gradient_matches_central_differences() {
    let counts = Counts::new(4, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for sigmoid in [false, true] {
        let config = TrainConfig { loss: Loss::Margin, margin: 0.7, margin_sigmoid: sigmoid, ..TrainConfig::default() };
        let p = ModelParams::init(kind(Family::ConT), counts, Rank::uniform(2).unwrap(), 3).unwrap();
        let batch = random_batch(&mut rng, counts, 4);
        let objective = |m: &ModelParams| -> f64 {
            batch
                .iter()
                .map(|(pos, negs)| {
                    let ns: Vec<f64> = negs.iter().map(|n| m.score(n).unwrap()).collect();
                    margin_loss(&[m.score(pos).unwrap()], &ns, 0.7, sigmoid)
                })
                .sum()
        };
        let (loss, grad) = batch_objective(&p, &batch, &config, TimeSide::Start);
        assert!((loss - objective(&p)).abs() < 1e-12);
        let mut probe = p.clone();
        let h = 1e-6;
        for table in p.tables() {
            let n = table.row_len();
            for idx in 0..table.data.len() {
                let x = table.data[idx];
                probe.table_mut(table.role).unwrap().data[idx] = x + h;
                let up = objective(&probe);
                probe.table_mut(table.role).unwrap().data[idx] = x - h;
                let down = objective(&probe);
                probe.table_mut(table.role).unwrap().data[idx] = x;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grad.get(table.role, idx / n).map_or(0.0, |r| r[idx % n]);
                assert!((analytic - numeric).abs() < 1e-5 * analytic.abs().max(1.0), "{analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn one_adam_step_lowers_the_loss() {
    let counts = Counts::new(8, 3, 5);
    let config = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut decreased = 0;
    let trials = 60;
    for trial in 0..trials {
        let family =
            [Family::DistMult, Family::HolE, Family::ComplEx, Family::Tucker, Family::ConT, Family::Tree][trial % 6];
        let mut p = ModelParams::init(kind(family), counts, Rank::uniform(3).unwrap(), trial as u64).unwrap();
        let batch = random_batch(&mut rng, counts, 6);
        let (before, grad) = batch_objective(&p, &batch, &config, TimeSide::Start);
        AdamState::new(&p).update(&mut p, &grad, 1e-3).unwrap();
        let (after, _) = batch_objective(&p, &batch, &config, TimeSide::Start);
        decreased += usize::from(after < before);
    }
    assert!(decreased * 100 >= 95 * trials, "{decreased}/{trials}");
}

fn memorization_data() -> EpisodicDataset {
    synth_generate(&SynthSpec::new(10, 2, 6, 20).lengths(1, 2).seed(4)).unwrap()
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.02,
        batch_size: 16,
        max_epochs: 30,
        eval_every: 10,
        patience: 5,
        monitor: Monitor::Train,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let ds = memorization_data();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            train_model(kind(Family::ComplEx), Rank::uniform(4).unwrap(), &ds, &ds, &quick_config(3)).unwrap()
        })
    };
    let (p1, r1) = run(1);
    let (p2, r2) = run(3);
    assert_eq!(p1, p2);
    assert_eq!(r1, r2);
    let (p3, _) = train_model(kind(Family::ComplEx), Rank::uniform(4).unwrap(), &ds, &ds, &quick_config(4)).unwrap();
    assert_ne!(p1, p3);
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let ds = memorization_data();
    let config = TrainConfig { max_epochs: 0, ..quick_config(1) };
    let init = ModelParams::init(kind(Family::Tucker), Counts::of(ds.vocab()), Rank::uniform(2).unwrap(), 1).unwrap();
    let (p, report) = train_model(kind(Family::Tucker), Rank::uniform(2).unwrap(), &ds, &ds, &config).unwrap();
    assert_eq!(p, init);
    assert!(report.history.is_empty());
    assert_eq!(report.best_epoch, None);
}

#[test]
fn cont_memorizes_a_two_entity_graph() {
    let vocab = Arc::new(Vocabulary::with_counts(2, 1, 4));
    let facts = vec![
        Quadruple::new(0, 0, 0, 1),
        Quadruple::new(1, 1, 0, 0),
        Quadruple::new(2, 0, 0, 0),
        Quadruple::new(3, 1, 0, 1),
    ];
    let ds = EpisodicDataset::new(vocab, facts).unwrap();
    let config = TrainConfig {
        learning_rate: 0.05,
        batch_size: 4,
        max_epochs: 300,
        eval_every: 25,
        patience: 20,
        negatives: 2,
        negative_slots: vec![Slot::Timestamp, Slot::Subject, Slot::Object],
        monitor: Monitor::Train,
        monitor_slots: vec![MetricSlot::Timestamp, MetricSlot::Entity],
        ..TrainConfig::default()
    };
    let (p, report) = train_model(kind(Family::ConT), Rank::uniform(2).unwrap(), &ds, &ds, &config).unwrap();
    let filter = FilterIndex::from_facts(ds.facts().iter());
    let m = evaluate(&p, &ds, &[MetricSlot::Timestamp, MetricSlot::Entity], &filter, Mode::Filtered).unwrap();
    assert!(m.iter().all(|m| m.mrr >= 0.99), "{m:?}");
    assert!(report.best_mrr.unwrap() >= 0.99);
}

#[test]
fn report_tracks_best_epoch_and_csv() {
    let ds = memorization_data();
    let (_, report) =
        train_model(kind(Family::DistMult), Rank::uniform(4).unwrap(), &ds, &ds, &quick_config(2)).unwrap();
    assert_eq!(report.history.len(), 3);
    let best = report.history.iter().map(|r| r.valid_mrr).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_mrr, Some(best));
    let csv = report.to_csv();
    assert_eq!(csv.lines().next(), Some("epoch,loss,valid_mrr"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn divergence_is_reported() {
    let ds = memorization_data();
    let config = TrainConfig { learning_rate: 1e300, ..quick_config(0) };
    let err = train_model(kind(Family::Tucker), Rank::uniform(3).unwrap(), &ds, &ds, &config).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { .. }), "{err}");
}

#[test]
fn mismatched_inputs_are_rejected() {
    let ds = memorization_data();
    let other = synth_generate(&SynthSpec::new(11, 2, 6, 20).seed(4)).unwrap();
    let p = ModelParams::init(kind(Family::DistMult), Counts::of(ds.vocab()), Rank::uniform(2).unwrap(), 0).unwrap();
    let f = FilterIndex::default();
    assert!(matches!(train(p.clone(), &ds, &other, &f, &quick_config(0)), Err(TrainError::VocabularyMismatch)));
    let sem = SemanticDataset::new(ds.vocab().clone(), vec![Triple::new(0, 0, 1)]).unwrap();
    assert!(matches!(train(p, &sem, &sem, &f, &quick_config(0)), Err(TrainError::Model(_))));
    let bad = TrainConfig { batch_size: 0, ..quick_config(0) };
    assert!(matches!(
        train_model(kind(Family::DistMult), Rank::uniform(2).unwrap(), &ds, &ds, &bad),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn second_stage_only_moves_end_tables() {
    let spec = SynthSpec::new(12, 2, 8, 30).lengths(1, 4).open_fraction(0.5).seed(2);
    let ds = synth_generate(&spec).unwrap();
    let (start, end) = build_start_end(&ds);
    let stage = TrainConfig {
        max_epochs: 20,
        eval_every: 10,
        batch_size: 16,
        learning_rate: 0.01,
        ..ProjectionTrainConfig::default().start
    };
    let config = ProjectionTrainConfig { start: stage.clone(), end: stage.clone() };
    for family in [Family::ConT, Family::Tucker, Family::ComplEx] {
        let rank = Rank::uniform(3).unwrap();
        let (p, report) = train_projection(kind(family), rank, &start, &end, &config).unwrap();
        assert!(p.has_end_tables());
        assert!(!report.end.history.is_empty());

        // stage one replayed on its own
        let init = ModelParams::init(kind(family), Counts::of(start.vocab()), rank, stage.seed).unwrap();
        let (stage1, _) = train(init, &start, &start, &FilterIndex::from_facts(start.facts().iter()), &stage).unwrap();
        for t in stage1.tables() {
            assert_eq!(p.table(t.role).unwrap(), t, "{family}: {:?} moved in stage two", t.role);
        }
        assert!(p.tables().iter().any(|t| t.role.is_end_time()));
    }
    assert!(train_projection(kind(Family::Tree), Rank::uniform(2).unwrap(), &start, &end, &config).is_err());
}
