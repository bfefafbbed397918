use std::collections::BTreeMap;

use super::{ModelParams, Role};

/// Sparse gradient: one dense vector per touched `(table, row)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamGradient {
    rows: BTreeMap<(Role, usize), Vec<f64>>,
}

impl ParamGradient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `scale * values` into row `row` of `role`.
    pub fn add(&mut self, role: Role, row: usize, scale: f64, values: &[f64]) {
        let entry = self.rows.entry((role, row)).or_insert_with(|| vec![0.0; values.len()]);
        debug_assert_eq!(entry.len(), values.len());
        for (e, v) in entry.iter_mut().zip(values) {
            *e += scale * v;
        }
    }

    pub fn get(&self, role: Role, row: usize) -> Option<&[f64]> {
        self.rows.get(&(role, row)).map(Vec::as_slice)
    }

    /// Touched rows in `(role, row)` order.
    pub fn iter(&self) -> impl Iterator<Item = (Role, usize, &[f64])> {
        self.rows.iter().map(|(&(role, row), v)| (role, row, v.as_slice()))
    }

    pub fn merge(&mut self, other: &ParamGradient) {
        for (role, row, values) in other.iter() {
            self.add(role, row, 1.0, values);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.rows.values_mut().flatten().for_each(|x| *x *= factor);
    }

    /// Drops every row whose role fails `keep`.
    pub fn retain_roles(&mut self, keep: impl Fn(Role) -> bool) {
        self.rows.retain(|&(role, _), _| keep(role));
    }

    /// Adds `2λ·P` for every touched row (the L2 term's gradient restricted to those rows).
    pub fn add_l2(&mut self, params: &ModelParams, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for (&(role, row), g) in self.rows.iter_mut() {
            let p = params.row(role, row);
            for (gi, pi) in g.iter_mut().zip(p) {
                *gi += 2.0 * lambda * pi;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn touched_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.rows.values().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }
}
