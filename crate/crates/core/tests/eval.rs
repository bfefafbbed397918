use std::sync::Arc;

use ekge_core::eval::{auprc, evaluate, rank_slot, ranks, recall_at, MetricSlot, Mode, Scorer};
use ekge_core::kg::{
    synth_generate, Dataset, EpisodicDataset, Fact, FilterIndex, Quadruple, Slot, SynthSpec, Vocabulary,
};
use ekge_core::models::{Counts, Family, ModelKind, ModelParams, Rank};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sort-based rank: order every surviving candidate by descending score,
/// find the tie group holding the truth and take its upper-middle position.
fn enumerated_rank(scorer: &impl Scorer, q: &Quadruple, slot: Slot, filter: Option<&FilterIndex>) -> usize {
    let truth = q.get(slot);
    let mut scored: Vec<(usize, f64)> = (0..scorer.domain(slot))
        .filter(|&c| c == truth || !filter.is_some_and(|f| f.contains(&q.replace(slot, c))))
        .map(|c| (c, scorer.score_key(q.replace(slot, c).key())))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let target = scored.iter().find(|(c, _)| *c == truth).unwrap().1;
    let first = scored.iter().position(|(_, s)| *s == target).unwrap();
    let group = scored.iter().filter(|(_, s)| *s == target).count();
    first + 1 + (group - 1).div_ceil(2)
}

/// Fixed score table over a small key space.
struct TableScorer {
    counts: [usize; 4],
    scores: Vec<f64>,
}

impl TableScorer {
    fn random(counts: [usize; 4], levels: u32, rng: &mut impl Rng) -> Self {
        let n = counts.iter().product();
        let scores = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        Self { counts, scores }
    }
}

impl Scorer for TableScorer {
    fn episodic(&self) -> bool {
        true
    }
    fn domain(&self, slot: Slot) -> usize {
        let i = Slot::ALL.iter().position(|&x| x == slot).unwrap();
        self.counts[i]
    }
    fn score_key(&self, [t, s, p, o]: [usize; 4]) -> f64 {
        let [_, ns, np, no] = self.counts;
        self.scores[((t * ns + s) * np + p) * no + o]
    }
}

fn small_graph(seed: u64) -> EpisodicDataset {
    synth_generate(&SynthSpec::new(6, 2, 4, 12).lengths(1, 2).seed(seed)).unwrap()
}

#[test]
fn three_timestamps_true_best_is_rank_one() {
    let counts = [3, 1, 1, 1];
    let s = TableScorer { counts, scores: vec![5.0, 1.0, 2.0] };
    let f = FilterIndex::default();
    assert_eq!(rank_slot(&s, &Quadruple::new(0, 0, 0, 0), Slot::Timestamp, &f, Mode::Raw).unwrap(), 1);
    assert_eq!(rank_slot(&s, &Quadruple::new(1, 0, 0, 0), Slot::Timestamp, &f, Mode::Raw).unwrap(), 3);
}

#[test]
fn known_competitor_lowers_raw_rank_only() {
    let s = TableScorer { counts: [3, 1, 1, 1], scores: vec![5.0, 1.0, 2.0] };
    let known = [Quadruple::new(0, 0, 0, 0), Quadruple::new(2, 0, 0, 0)];
    let f = FilterIndex::from_facts(known.iter());
    let q = Quadruple::new(2, 0, 0, 0);
    assert_eq!(rank_slot(&s, &q, Slot::Timestamp, &f, Mode::Raw).unwrap(), 2);
    assert_eq!(rank_slot(&s, &q, Slot::Timestamp, &f, Mode::Filtered).unwrap(), 1);
}

#[test]
fn ties_take_the_upper_middle() {
    // truth ties with three others: 1 + 0 + ceil(3/2)
    let s = TableScorer { counts: [4, 1, 1, 1], scores: vec![1.0; 4] };
    let r = rank_slot(&s, &Quadruple::new(0, 0, 0, 0), Slot::Timestamp, &FilterIndex::default(), Mode::Raw).unwrap();
    assert_eq!(r, 3);
}

#[test]
fn ranks_match_enumeration_on_trained_free_models() {
    for seed in 0..4 {
        let ds = small_graph(seed);
        let filter = FilterIndex::from_facts(ds.facts().iter());
        let counts = Counts::of(ds.vocab());
        for family in [Family::DistMult, Family::ComplEx, Family::ConT] {
            let m = ModelParams::init(ModelKind::episodic(family).unwrap(), counts, Rank::uniform(3).unwrap(), seed)
                .unwrap();
            for q in ds.quadruples() {
                for slot in Slot::ALL {
                    for (mode, flt) in [(Mode::Raw, None), (Mode::Filtered, Some(&filter))] {
                        let got = rank_slot(&m, q, slot, &filter, mode).unwrap();
                        assert_eq!(got, enumerated_rank(&m, q, slot, flt), "{family} {q:?} {slot} {mode}");
                    }
                }
            }
        }
    }
}

#[test]
fn ranks_match_enumeration_with_heavy_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ds = small_graph(9);
    let filter = FilterIndex::from_facts(ds.facts().iter());
    for _ in 0..5 {
        let s = TableScorer::random([4, 6, 2, 6], 3, &mut rng);
        for q in ds.quadruples() {
            for slot in Slot::ALL {
                assert_eq!(rank_slot(&s, q, slot, &filter, Mode::Raw).unwrap(), enumerated_rank(&s, q, slot, None));
                assert_eq!(
                    rank_slot(&s, q, slot, &filter, Mode::Filtered).unwrap(),
                    enumerated_rank(&s, q, slot, Some(&filter))
                );
            }
        }
    }
}

#[test]
fn metric_arithmetic() {
    let perfect = TableScorer { counts: [1, 2, 1, 2], scores: vec![0.0, 9.0, 0.0, 0.0] };
    let ds =
        EpisodicDataset::new(Arc::new(Vocabulary::with_counts(2, 1, 1)), vec![Quadruple::new(0, 0, 0, 1)]).unwrap();
    let f = FilterIndex::from_facts(ds.facts().iter());
    let m = evaluate(&perfect, &ds, &[MetricSlot::Object], &f, Mode::Filtered).unwrap();
    assert_eq!(m[0].mrr, 1.0);
    assert!(m[0].hits.values().all(|&h| h == 1.0));

    let m = ekge_core::eval::Metrics::from_ranks(MetricSlot::Entity, Mode::Raw, &[1, 2]);
    assert_eq!(m.mrr, 0.75);
    assert_eq!(m.hits_at(1), Some(0.5));
}

#[test]
fn entity_pools_subject_and_object_ranks() {
    let ds = small_graph(2);
    let filter = FilterIndex::from_facts(ds.facts().iter());
    let m = ModelParams::init(
        ModelKind::episodic(Family::DistMult).unwrap(),
        Counts::of(ds.vocab()),
        Rank::uniform(3).unwrap(),
        1,
    )
    .unwrap();
    let pooled = &evaluate(&m, &ds, &[MetricSlot::Entity], &filter, Mode::Filtered).unwrap()[0];
    let mut all = ranks(&m, ds.facts(), &[Slot::Subject], &filter, Mode::Filtered).unwrap();
    all.extend(ranks(&m, ds.facts(), &[Slot::Object], &filter, Mode::Filtered).unwrap());
    let mrr = all.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / all.len() as f64;
    assert_eq!(pooled.count, all.len());
    assert!((pooled.mrr - mrr).abs() < 1e-15);
}

#[test]
fn singleton_evaluate_equals_rank_slot() {
    let ds = small_graph(5);
    let filter = FilterIndex::from_facts(ds.facts().iter());
    let m = ModelParams::init(
        ModelKind::episodic(Family::HolE).unwrap(),
        Counts::of(ds.vocab()),
        Rank::uniform(4).unwrap(),
        2,
    )
    .unwrap();
    let q = ds.quadruples()[0];
    let single = EpisodicDataset::new(ds.vocab().clone(), vec![q]).unwrap();
    let metrics = evaluate(&m, &single, &[MetricSlot::Timestamp], &filter, Mode::Filtered).unwrap();
    let r = rank_slot(&m, &q, Slot::Timestamp, &filter, Mode::Filtered).unwrap();
    assert_eq!(metrics[0].mrr, 1.0 / r as f64);
}

#[test]
fn hits_at_domain_size_is_one() {
    let ds = small_graph(3);
    let filter = FilterIndex::from_facts(ds.facts().iter());
    let m = ModelParams::init(
        ModelKind::episodic(Family::DistMult).unwrap(),
        Counts::of(ds.vocab()),
        Rank::uniform(2).unwrap(),
        0,
    )
    .unwrap();
    // entity domain is 6 here, below the largest cut-off
    let rs = ranks(&m, ds.facts(), &[Slot::Subject, Slot::Object], &filter, Mode::Filtered).unwrap();
    assert!(rs.iter().all(|&r| r <= 6));
    let met = &evaluate(&m, &ds, &[MetricSlot::Entity], &filter, Mode::Filtered).unwrap()[0];
    assert_eq!(met.hits_at(10), Some(1.0));
    assert!(met.hits_at(1) <= met.hits_at(3) && met.hits_at(3) <= met.hits_at(10));
}

/// Exhaustive sweep: each distinct score is a threshold predicting `>=`.
fn swept_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for tau in thresholds {
        let predicted: Vec<bool> = scores.iter().map(|&s| s >= tau).collect();
        let tp = predicted.iter().zip(labels).filter(|(p, l)| **p && **l).count() as f64;
        let pp = predicted.iter().filter(|&&p| p).count() as f64;
        let recall = tp / positives;
        area += (recall - prev_recall) * (tp / pp);
        prev_recall = recall;
    }
    area
}

#[test]
fn auprc_trivial_cases() {
    assert_eq!(auprc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
    assert_eq!(auprc(&[0.3; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
    assert!(auprc(&[1.0, 2.0], &[true, true]).is_err());
    assert!(auprc(&[1.0, 2.0], &[false, false]).is_err());
}

#[test]
fn auprc_matches_threshold_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..50 {
        let labels: Vec<bool> = (0..20).map(|i| i < 2 || (i > 3 && rng.random_bool(0.5))).collect();
        // coarse scores force ties
        let scores: Vec<f64> = (0..20).map(|_| rng.random_range(0..8) as f64 / 8.0).collect();
        let a = auprc(&scores, &labels).unwrap();
        assert!((a - swept_auprc(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn recall_threshold_counts() {
    assert_eq!(recall_at(&[0.9, 0.9, 0.1], &[true, true, false], 0.5).unwrap(), 1.0);
    assert_eq!(recall_at(&[0.9, 0.4, 0.1], &[true, true, false], 0.95).unwrap(), 0.0);
    let scores = [0.7, 0.2, 0.6, 0.5, 0.9];
    let labels = [true, true, false, true, true];
    let manual = 2.0 / 4.0; // 0.7 and 0.9 exceed 0.5; 0.5 does not
    assert_eq!(recall_at(&scores, &labels, 0.5).unwrap(), manual);
    assert!(recall_at(&[0.1], &[false], 0.5).is_err());
}

proptest! {
    #[test]
    fn filtered_never_worse_than_raw(seed in 0u64..500, family in 0usize..3) {
        let ds = small_graph(seed % 7);
        let filter = FilterIndex::from_facts(ds.facts().iter());
        let family = [Family::DistMult, Family::HolE, Family::Tucker][family];
        let m = ModelParams::init(ModelKind::episodic(family).unwrap(), Counts::of(ds.vocab()), Rank::uniform(2).unwrap(), seed).unwrap();
        for q in ds.quadruples() {
            for slot in Slot::ALL {
                let raw = rank_slot(&m, q, slot, &filter, Mode::Raw).unwrap();
                let filtered = rank_slot(&m, q, slot, &filter, Mode::Filtered).unwrap();
                prop_assert!(filtered <= raw);
            }
        }
    }

    #[test]
    fn auprc_bounded_and_flat_equals_rate(scores in prop::collection::vec(-5.0f64..5.0, 2..40), flip in 0usize..40) {
        let n = scores.len();
        let mut labels: Vec<bool> = (0..n).map(|i| (i * 7 + flip) % 3 == 0).collect();
        labels[0] = true;
        labels[n - 1] = false;
        let rate = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
        let a = auprc(&scores, &labels).unwrap();
        prop_assert!(a <= 1.0 + 1e-12);
        prop_assert!(a > 0.0);
        let flat = auprc(&vec![0.0; n], &labels).unwrap();
        prop_assert!((flat - rate).abs() < 1e-12);
    }
}
