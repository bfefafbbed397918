use rand::Rng;

use super::{DataError, Fact, FilterIndex, Slot, Vocabulary};

/// Uniform draws tried per negative before falling back to enumeration.
pub const MAX_REJECTIONS: usize = 64;

/// Corrupts `fact` in each of `slots`, `k` times per slot.
///
/// Every negative differs from `fact` in exactly one slot, carries
/// `value = false` and is absent from `filter` (local closed world). Draws are
/// uniform over the non-true candidates of each slot.
pub fn sample_negatives<F: Fact, R: Rng + ?Sized>(
    fact: &F,
    vocab: &Vocabulary,
    slots: &[Slot],
    k: usize,
    filter: &FilterIndex,
    rng: &mut R,
) -> Result<Vec<F>, DataError> {
    if k == 0 {
        return Err(DataError::Invalid("negatives per slot must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(slots.len() * k);
    for &slot in slots {
        if !F::slots().contains(&slot) {
            return Err(DataError::NoSuchSlot(slot));
        }
        let domain = slot.domain(vocab);
        if domain < 2 {
            return Err(DataError::DomainTooSmall(slot));
        }
        let current = fact.get(slot);
        for _ in 0..k {
            out.push(draw(fact, slot, current, domain, filter, rng)?.with_value(false));
        }
    }
    Ok(out)
}

fn draw<F: Fact, R: Rng + ?Sized>(
    fact: &F,
    slot: Slot,
    current: usize,
    domain: usize,
    filter: &FilterIndex,
    rng: &mut R,
) -> Result<F, DataError> {
    for _ in 0..MAX_REJECTIONS {
        // uniform over the domain minus the current index
        let mut c = rng.random_range(0..domain - 1);
        if c >= current {
            c += 1;
        }
        let candidate = fact.replace(slot, c);
        if !filter.contains(&candidate.with_value(true)) {
            return Ok(candidate);
        }
    }
    let known = filter.completions(fact, slot);
    let free: Vec<usize> = (0..domain).filter(|&c| c != current && known.binary_search(&c).is_err()).collect();
    if free.is_empty() {
        return Err(DataError::DomainExhausted(slot));
    }
    Ok(fact.replace(slot, free[rng.random_range(0..free.len())]))
}
