use std::collections::HashMap;

use super::{Fact, Slot};

/// Known-true facts indexed by every partial key.
///
/// For each slot, maps the other three indices to the sorted set of indices
/// that complete a true fact in that slot (`(s,p,o,·)`, `(s,p,·,t)`, ...).
/// Triples use only the subject, predicate and object maps.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    by_slot: [HashMap<[usize; 3], Vec<usize>>; 4],
    len: usize,
}

fn split_key(key: [usize; 4], pos: usize) -> ([usize; 3], usize) {
    let mut rest = [0; 3];
    let mut j = 0;
    for (i, &k) in key.iter().enumerate() {
        if i != pos {
            rest[j] = k;
            j += 1;
        }
    }
    (rest, key[pos])
}

impl FilterIndex {
    /// Indexes the positive facts of `facts`; negatives are ignored.
    pub fn from_facts<'a, F: Fact>(facts: impl IntoIterator<Item = &'a F>) -> Self {
        let mut index = Self::default();
        index.extend(facts);
        index
    }

    pub fn extend<'a, F: Fact>(&mut self, facts: impl IntoIterator<Item = &'a F>) {
        for fact in facts.into_iter().filter(|f| f.value()) {
            self.insert(fact.key(), F::EPISODIC);
        }
    }

    fn insert(&mut self, key: [usize; 4], episodic: bool) {
        let first = if episodic { 0 } else { 1 };
        for pos in first..4 {
            let (rest, k) = split_key(key, pos);
            let set = self.by_slot[pos].entry(rest).or_default();
            if let Err(at) = set.binary_search(&k) {
                set.insert(at, k);
                if pos == 3 {
                    self.len += 1;
                }
            }
        }
    }

    /// Indices that complete `fact` in `slot` to a known-true fact.
    pub fn completions<F: Fact>(&self, fact: &F, slot: Slot) -> &[usize] {
        let (rest, _) = split_key(fact.key(), slot.position());
        self.by_slot[slot.position()].get(&rest).map_or(&[], Vec::as_slice)
    }

    pub fn contains<F: Fact>(&self, fact: &F) -> bool {
        let (rest, k) = split_key(fact.key(), 3);
        self.by_slot[3].get(&rest).is_some_and(|set| set.binary_search(&k).is_ok())
    }

    /// Number of distinct known-true facts.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
