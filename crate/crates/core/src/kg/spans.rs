//! Event spans and the datasets derived from them: current semantic facts,
//! start/end episodic tensors and the rare-event subset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, EpisodicDataset, Quadruple, SemanticDataset, Triple};

/// A maximal run of consecutive timestamps over which `(s, p, o)` holds.
///
/// `end == None` means the run reaches the last timestamp (the event is open).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventSpan {
    pub s: usize,
    pub p: usize,
    pub o: usize,
    pub start: usize,
    pub end: Option<usize>,
}

impl EventSpan {
    pub fn is_open(&self) -> bool {
        self.end.is_none()
    }

    /// Last timestamp covered, resolving an open end to `last`.
    pub fn last(&self, last: usize) -> usize {
        self.end.unwrap_or(last)
    }

    /// Quadruples for every covered timestamp.
    pub fn expand(&self, last: usize) -> impl Iterator<Item = Quadruple> + '_ {
        (self.start..=self.last(last)).map(move |t| Quadruple::new(t, self.s, self.p, self.o))
    }
}

/// Positive timestamps per `(s, p, o)`, sorted and unique.
fn timelines(ds: &EpisodicDataset) -> BTreeMap<(usize, usize, usize), Vec<usize>> {
    let mut lines: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for q in ds.quadruples().iter().filter(|q| q.value) {
        lines.entry((q.s, q.p, q.o)).or_default().push(q.t);
    }
    for ts in lines.values_mut() {
        ts.sort_unstable();
        ts.dedup();
    }
    lines
}

/// Splits each triple's timeline into maximal runs of consecutive timestamps.
/// Output is sorted by `(s, p, o, start)`.
pub fn spans_from_quadruples(ds: &EpisodicDataset) -> Vec<EventSpan> {
    let Some(last) = ds.last_timestamp() else {
        return Vec::new();
    };
    let mut spans = Vec::new();
    for ((s, p, o), ts) in timelines(ds) {
        let mut start = ts[0];
        for w in 0..ts.len() {
            let run_ends = w + 1 == ts.len() || ts[w + 1] != ts[w] + 1;
            if run_ends {
                let end = (ts[w] != last).then_some(ts[w]);
                spans.push(EventSpan { s, p, o, start, end });
                if w + 1 < ts.len() {
                    start = ts[w + 1];
                }
            }
        }
    }
    spans
}

/// Current semantic facts: triples with an open span are positive; triples
/// whose every span terminated before the last timestamp are negative.
pub fn derive_semantic(ds: &EpisodicDataset) -> SemanticDataset {
    let mut open: BTreeMap<(usize, usize, usize), bool> = BTreeMap::new();
    for span in spans_from_quadruples(ds) {
        *open.entry((span.s, span.p, span.o)).or_default() |= span.is_open();
    }
    let triples = open.into_iter().map(|((s, p, o), value)| Triple { s, p, o, value }).collect();
    SemanticDataset::new(ds.vocab().clone(), triples).expect("derived triples are valid")
}

/// `(ε_start, ε_end)`: span starts, and the ends of spans closed before the
/// last timestamp. Both share `ds`'s vocabulary.
pub fn build_start_end(ds: &EpisodicDataset) -> (EpisodicDataset, EpisodicDataset) {
    let spans = spans_from_quadruples(ds);
    let starts = spans.iter().map(|sp| Quadruple::new(sp.start, sp.s, sp.p, sp.o)).collect();
    let ends = spans.iter().filter_map(|sp| sp.end.map(|t| Quadruple::new(t, sp.s, sp.p, sp.o))).collect();
    let vocab = ds.vocab().clone();
    (
        EpisodicDataset::new(vocab.clone(), starts).expect("span starts are valid"),
        EpisodicDataset::new(vocab, ends).expect("span ends are valid"),
    )
}

/// Keeps the facts of triples that are true at fewer than `max_occurrences`
/// timestamps. `max_occurrences = usize::MAX` keeps everything.
pub fn filter_rare(ds: &EpisodicDataset, max_occurrences: usize) -> EpisodicDataset {
    let lines = timelines(ds);
    let kept = ds
        .quadruples()
        .iter()
        .copied()
        .filter(|q| lines.get(&(q.s, q.p, q.o)).is_some_and(|ts| ts.len() < max_occurrences))
        .collect();
    EpisodicDataset::new(ds.vocab().clone(), kept).expect("subset of a valid dataset")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::kg::Vocabulary;

    fn dataset(nt: usize, facts: &[(usize, usize, usize, usize)]) -> EpisodicDataset {
        let vocab = Arc::new(Vocabulary::with_counts(4, 2, nt));
        let quads = facts.iter().map(|&(t, s, p, o)| Quadruple::new(t, s, p, o)).collect();
        EpisodicDataset::new(vocab, quads).unwrap()
    }

    fn span(start: usize, end: Option<usize>) -> EventSpan {
        EventSpan { s: 0, p: 0, o: 1, start, end }
    }

    #[test]
    fn closed_run() {
        let ds = dataset(10, &[(2, 0, 0, 1), (3, 0, 0, 1), (4, 0, 0, 1)]);
        assert_eq!(spans_from_quadruples(&ds), vec![span(2, Some(4))]);
    }

    #[test]
    fn two_runs_one_open() {
        let ds = dataset(10, &[(0, 0, 0, 1), (1, 0, 0, 1), (8, 0, 0, 1), (9, 0, 0, 1)]);
        assert_eq!(spans_from_quadruples(&ds), vec![span(0, Some(1)), span(8, None)]);
    }

    #[test]
    fn empty_dataset_has_no_spans() {
        assert!(spans_from_quadruples(&dataset(0, &[])).is_empty());
        assert!(spans_from_quadruples(&dataset(5, &[])).is_empty());
    }

    #[test]
    fn negatives_do_not_form_spans() {
        let vocab = Arc::new(Vocabulary::with_counts(2, 1, 3));
        let q = Quadruple { value: false, ..Quadruple::new(1, 0, 0, 1) };
        let ds = EpisodicDataset::new(vocab, vec![q]).unwrap();
        assert!(spans_from_quadruples(&ds).is_empty());
    }

    #[test]
    fn semantic_labels_follow_open_spans() {
        let ds = dataset(10, &[(8, 0, 0, 1), (9, 0, 0, 1), (2, 1, 0, 2), (3, 1, 0, 2)]);
        let sem = derive_semantic(&ds);
        assert_eq!(sem.triples(), &[Triple::new(0, 0, 1), Triple { s: 1, p: 0, o: 2, value: false }]);
    }

    #[test]
    fn open_span_wins_over_closed_one() {
        let ds = dataset(10, &[(1, 0, 0, 1), (9, 0, 0, 1)]);
        assert_eq!(derive_semantic(&ds).triples(), &[Triple::new(0, 0, 1)]);
    }

    #[test]
    fn start_end_tensors() {
        let ds = dataset(10, &[(2, 0, 0, 1), (3, 0, 0, 1), (4, 0, 0, 1), (8, 1, 1, 2), (9, 1, 1, 2)]);
        let (start, end) = build_start_end(&ds);
        assert_eq!(start.quadruples(), &[Quadruple::new(2, 0, 0, 1), Quadruple::new(8, 1, 1, 2)]);
        assert_eq!(end.quadruples(), &[Quadruple::new(4, 0, 0, 1)]);
        assert!(Arc::ptr_eq(start.vocab(), ds.vocab()));
    }

    #[test]
    fn rare_filter_threshold() {
        let mut facts: Vec<_> = (0..5).map(|t| (t, 0, 0, 1)).collect();
        facts.extend([(0, 1, 0, 2), (6, 1, 0, 2)]);
        let ds = dataset(10, &facts);
        let rare = filter_rare(&ds, 3);
        assert_eq!(rare.len(), 2);
        assert!(rare.quadruples().iter().all(|q| q.s == 1));
        assert_eq!(filter_rare(&ds, usize::MAX), ds);
        assert!(filter_rare(&ds, 1).is_empty());
    }
}
