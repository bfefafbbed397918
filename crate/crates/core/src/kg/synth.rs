//! Seeded synthetic episodic graphs built from event spans.

use std::collections::HashMap;
use std::sync::Arc;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, EpisodicDataset, EventSpan, Vocabulary};

const ATTEMPTS_PER_SPAN: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_predicates: usize,
    pub n_timestamps: usize,
    pub n_spans: usize,
    /// Span lengths are uniform on `min_len..=max_len`, clamped to the timeline.
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Probability that a span after the first two is open; `None` places
    /// spans uniformly, so few end at the last timestamp.
    #[serde(default)]
    pub open_fraction: Option<f64>,
}

impl SynthSpec {
    pub fn new(n_entities: usize, n_predicates: usize, n_timestamps: usize, n_spans: usize) -> Self {
        Self { n_entities, n_predicates, n_timestamps, n_spans, min_len: 1, max_len: 1, seed: 0, open_fraction: None }
    }

    pub fn lengths(mut self, min_len: usize, max_len: usize) -> Self {
        self.min_len = min_len;
        self.max_len = max_len;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn open_fraction(mut self, fraction: f64) -> Self {
        self.open_fraction = Some(fraction);
        self
    }

    /// Vocabulary `e0.., p0..` with daily ISO dates from 2000-01-01.
    pub fn vocabulary(&self) -> Vocabulary {
        let day0 = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let times =
            (0..self.n_timestamps).map(|i| (day0 + Days::new(i as u64)).format("%Y-%m-%d").to_string()).collect();
        let names = |prefix: &str, n: usize| (0..n).map(|i| format!("{prefix}{i}")).collect();
        Vocabulary::new(names("e", self.n_entities), names("p", self.n_predicates), times)
            .expect("generated names are unique")
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Want {
    Open,
    Closed,
    Any,
}

/// Draws `n_spans` non-overlapping, non-adjacent spans. When `n_spans >= 2`
/// the first is open and the second closed. Sorted by `(s, p, o, start)`.
pub fn synth_spans(spec: &SynthSpec) -> Result<Vec<EventSpan>, DataError> {
    let (ne, np, nt) = (spec.n_entities, spec.n_predicates, spec.n_timestamps);
    if ne == 0 || np == 0 || nt == 0 {
        return Err(DataError::Invalid("synthetic counts must be at least 1".into()));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(DataError::Invalid("span lengths need 1 <= min_len <= max_len".into()));
    }
    let capacity = ne.saturating_mul(ne).saturating_mul(np).saturating_mul(nt);
    if spec.n_spans > capacity {
        return Err(DataError::Infeasible(format!(
            "{} spans exceed the {capacity} distinct (s, p, o, t_start) cells",
            spec.n_spans
        )));
    }
    if spec.open_fraction.is_some_and(|f| !(0.0..=1.0).contains(&f)) {
        return Err(DataError::Invalid("open_fraction must lie in [0, 1]".into()));
    }
    if spec.n_spans >= 2 && nt < 2 {
        return Err(DataError::Infeasible("a closed span needs at least two timestamps".into()));
    }

    let last = nt - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_triple: HashMap<(usize, usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut spans = Vec::with_capacity(spec.n_spans);

    for i in 0..spec.n_spans {
        let want = match (spec.n_spans >= 2, i, spec.open_fraction) {
            (true, 0, _) => Want::Open,
            (true, 1, _) => Want::Closed,
            (_, _, Some(f)) if nt >= 2 => {
                if rng.random_bool(f) {
                    Want::Open
                } else {
                    Want::Closed
                }
            }
            _ => Want::Any,
        };
        let max_len = if want == Want::Closed { nt - 1 } else { nt };
        let span = (0..ATTEMPTS_PER_SPAN).find_map(|_| {
            let key = (rng.random_range(0..ne), rng.random_range(0..np), rng.random_range(0..ne));
            let len = rng.random_range(spec.min_len..=spec.max_len).min(max_len);
            let start = match want {
                Want::Open => nt - len,
                Want::Closed => rng.random_range(0..nt - len),
                Want::Any => rng.random_range(0..=nt - len),
            };
            let end = start + len - 1;
            let taken =
                by_triple.get(&key).is_some_and(|runs| runs.iter().any(|&(a, b)| start <= b + 1 && a <= end + 1));
            (!taken).then_some((key, start, end))
        });
        let Some((key, start, end)) = span else {
            return Err(DataError::Infeasible(format!("could not place span {i} without overlap")));
        };
        by_triple.entry(key).or_default().push((start, end));
        let (s, p, o) = key;
        spans.push(EventSpan { s, p, o, start, end: (end < last).then_some(end) });
    }
    spans.sort();
    Ok(spans)
}

/// Expands [`synth_spans`] into quadruples over [`SynthSpec::vocabulary`].
pub fn synth_generate(spec: &SynthSpec) -> Result<EpisodicDataset, DataError> {
    let spans = synth_spans(spec)?;
    let last = spec.n_timestamps - 1;
    let quads = spans.iter().flat_map(|sp| sp.expand(last)).collect();
    EpisodicDataset::new(Arc::new(spec.vocabulary()), quads)
}
