//! Per-family scores and their closed-form partial derivatives.

use num_complex::Complex64;

use super::{convolve, correlate, Family, ModelError, ModelParams, ParamGradient, Role, TimeSide};
use crate::kg::Fact;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The time factor of an episodic score, `θ = time · f(s, p, o)`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TimeOperand<'a> {
    Vector(&'a [f64]),
    Complex(&'a [f64], &'a [f64]),
    Core(&'a [f64]),
}

impl TimeSide {
    fn roles(self) -> (Role, Role, Role) {
        match self {
            TimeSide::Start => (Role::Time, Role::TimeIm, Role::TimeCore),
            TimeSide::End => (Role::EndTime, Role::EndTimeIm, Role::EndTimeCore),
        }
    }
}

/// `Σ core[r1, r2, r3] s[r1] p[r2] o[r3]` over a cubic core.
pub(crate) fn trilinear(core: &[f64], s: &[f64], p: &[f64], o: &[f64]) -> f64 {
    let d = s.len();
    let mut total = 0.0;
    for (r1, &sv) in s.iter().enumerate() {
        for (r2, &pv) in p.iter().enumerate() {
            let base = (r1 * d + r2) * d;
            total += sv * pv * dot(&core[base..base + d], o);
        }
    }
    total
}

struct TrilinearGrad {
    core: Vec<f64>,
    s: Vec<f64>,
    p: Vec<f64>,
    o: Vec<f64>,
}

fn trilinear_grad(core: &[f64], s: &[f64], p: &[f64], o: &[f64]) -> TrilinearGrad {
    let d = s.len();
    let mut g = TrilinearGrad { core: vec![0.0; core.len()], s: vec![0.0; d], p: vec![0.0; d], o: vec![0.0; d] };
    for r1 in 0..d {
        for r2 in 0..d {
            let base = (r1 * d + r2) * d;
            let slice = &core[base..base + d];
            let sp = s[r1] * p[r2];
            let acc = dot(slice, o);
            for r3 in 0..d {
                g.core[base + r3] = sp * o[r3];
                g.o[r3] += sp * slice[r3];
            }
            g.s[r1] += acc * p[r2];
            g.p[r2] += acc * s[r1];
        }
    }
    g
}

/// Tucker time features `f[r1] = Σ core[r1, r2, r3, r4] s[r2] p[r3] o[r4]`.
pub(crate) fn tucker_features(core: &[f64], s: &[f64], p: &[f64], o: &[f64]) -> Vec<f64> {
    let block = s.len().pow(3);
    core.chunks_exact(block).map(|c| trilinear(c, s, p, o)).collect()
}

/// ComplEx product `s ⊙ p ⊙ conj(o)`.
fn complex_product(s: (&[f64], &[f64]), p: (&[f64], &[f64]), o: (&[f64], &[f64])) -> Vec<Complex64> {
    (0..s.0.len())
        .map(|i| Complex64::new(s.0[i], s.1[i]) * Complex64::new(p.0[i], p.1[i]) * Complex64::new(o.0[i], -o.1[i]))
        .collect()
}

/// DistMult features `λ ⊙ s ⊙ p ⊙ o`.
fn distmult_features(lambda: &[f64], s: &[f64], p: &[f64], o: &[f64]) -> Vec<f64> {
    (0..s.len()).map(|i| lambda[i] * s[i] * p[i] * o[i]).collect()
}

/// Tree intermediates: `x[r3] = Σ t s G1`, `y[r4] = Σ G2 o t`.
fn tree_halves(g1: &[f64], g2: &[f64], t: &[f64], s: &[f64], o: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (d, dt) = (s.len(), t.len());
    let mut x = vec![0.0; d];
    for r1 in 0..dt {
        for r2 in 0..d {
            let w = t[r1] * s[r2];
            let base = (r1 * d + r2) * d;
            for r3 in 0..d {
                x[r3] += w * g1[base + r3];
            }
        }
    }
    let mut y = vec![0.0; d];
    for (r4, yv) in y.iter_mut().enumerate() {
        for r5 in 0..d {
            let base = (r4 * d + r5) * dt;
            *yv += o[r5] * dot(&g2[base..base + dt], t);
        }
    }
    (x, y)
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks_exact(v.len()).map(|row| dot(row, v)).collect()
}

fn mat_t_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let mut out = vec![0.0; m.len() / d];
    for (r, &vr) in v.iter().enumerate() {
        for (c, oc) in out.iter_mut().enumerate() {
            *oc += m[r * d + c] * vr;
        }
    }
    out
}

fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

impl ModelParams {
    fn check_key<F: Fact>(&self, fact: &F) -> Result<[usize; 4], ModelError> {
        if F::EPISODIC != self.kind.is_episodic() {
            let expected = if self.kind.is_episodic() { "episodic" } else { "semantic" };
            return Err(ModelError::ArityMismatch { kind: self.kind, expected });
        }
        let key = fact.key();
        let [t, s, p, o] = key;
        let c = self.counts;
        if s >= c.entities || o >= c.entities || p >= c.predicates || (F::EPISODIC && t >= c.timestamps) {
            return Err(ModelError::IndexOutOfRange(key));
        }
        Ok(key)
    }

    fn check_side(&self, side: TimeSide) -> Result<(), ModelError> {
        if side == TimeSide::End && self.kind.is_episodic() && !self.has_end_tables() {
            let (role, _, core) = side.roles();
            let missing = if self.kind.family == Family::ConT { core } else { role };
            return Err(ModelError::MissingTable(missing));
        }
        Ok(())
    }

    /// Logit `θ` of `fact` using the start-time tables.
    pub fn score<F: Fact>(&self, fact: &F) -> Result<f64, ModelError> {
        self.score_on(fact, TimeSide::Start)
    }

    /// Logit of `fact` using the start- or end-time tables.
    pub fn score_on<F: Fact>(&self, fact: &F, side: TimeSide) -> Result<f64, ModelError> {
        let key = self.check_key(fact)?;
        self.check_side(side)?;
        Ok(self.score_key(key, side))
    }

    pub(crate) fn time_operand(&self, side: TimeSide, t: usize) -> TimeOperand<'_> {
        let (vec, im, core) = side.roles();
        match self.kind.family {
            Family::ComplEx => TimeOperand::Complex(self.row(vec, t), self.row(im, t)),
            Family::ConT => TimeOperand::Core(self.row(core, t)),
            _ => TimeOperand::Vector(self.row(vec, t)),
        }
    }

    /// Unchecked score; `key` must be in range for this model.
    pub(crate) fn score_key(&self, [t, s, p, o]: [usize; 4], side: TimeSide) -> f64 {
        match (self.kind.family, self.kind.is_episodic()) {
            (Family::Tree, _) => {
                let tv = self.row(Role::Time, t);
                let (x, y) = tree_halves(
                    self.row(Role::TreeCore1, 0),
                    self.row(Role::TreeCore2, 0),
                    tv,
                    self.row(Role::Entity, s),
                    self.row(Role::Entity, o),
                );
                dot(&x, &mat_vec(self.row(Role::PredicateCore, p), &y))
            }
            (_, true) => self.score_with_time(s, p, o, self.time_operand(side, t)),
            (Family::DistMult, false) => self
                .row(Role::Diagonal, 0)
                .iter()
                .zip(self.row(Role::Entity, s))
                .zip(self.row(Role::Predicate, p).iter().zip(self.row(Role::Entity, o)))
                .map(|((l, a), (b, c))| l * a * b * c)
                .sum(),
            (Family::HolE, false) => {
                dot(self.row(Role::Predicate, p), &correlate(self.row(Role::Entity, s), self.row(Role::Entity, o)))
            }
            (Family::ComplEx, false) => {
                let (s, p, o) = self.complex_rows(s, p, o);
                complex_product(s, p, o).iter().map(|w| w.re).sum()
            }
            (Family::Tucker, false) => trilinear(
                self.row(Role::Core, 0),
                self.row(Role::Entity, s),
                self.row(Role::Predicate, p),
                self.row(Role::Entity, o),
            ),
            (Family::Rescal, false) => {
                let so = outer(self.row(Role::Entity, s), self.row(Role::Entity, o));
                dot(self.row(Role::PredicateCore, p), &so)
            }
            (Family::ConT, false) => unreachable!("ConT is episodic-only"),
        }
    }

    #[allow(clippy::type_complexity)]
    fn complex_rows(&self, s: usize, p: usize, o: usize) -> ((&[f64], &[f64]), (&[f64], &[f64]), (&[f64], &[f64])) {
        (
            (self.row(Role::Entity, s), self.row(Role::EntityIm, s)),
            (self.row(Role::Predicate, p), self.row(Role::PredicateIm, p)),
            (self.row(Role::Entity, o), self.row(Role::EntityIm, o)),
        )
    }

    /// Episodic score with an arbitrary time factor (a table row or a marginal).
    pub(crate) fn score_with_time(&self, s: usize, p: usize, o: usize, time: TimeOperand<'_>) -> f64 {
        let (es, ep) = (self.row(Role::Entity, s), self.row(Role::Entity, o));
        match (self.kind.family, time) {
            (Family::DistMult, TimeOperand::Vector(t)) => {
                dot(t, &distmult_features(self.row(Role::Diagonal, 0), es, self.row(Role::Predicate, p), ep))
            }
            (Family::HolE, TimeOperand::Vector(t)) => {
                let c = correlate(es, ep);
                dot(t, &correlate(self.row(Role::Predicate, p), &c))
            }
            (Family::ComplEx, TimeOperand::Complex(tr, ti)) => {
                let (s, p, o) = self.complex_rows(s, p, o);
                complex_product(s, p, o).iter().enumerate().map(|(i, w)| tr[i] * w.re - ti[i] * w.im).sum()
            }
            (Family::Tucker, TimeOperand::Vector(t)) => {
                dot(t, &tucker_features(self.row(Role::Core, 0), es, self.row(Role::Predicate, p), ep))
            }
            (Family::ConT, TimeOperand::Core(core)) => trilinear(core, es, self.row(Role::Predicate, p), ep),
            (family, op) => unreachable!("{family} cannot take time operand {op:?}"),
        }
    }

    /// `upstream · ∂θ/∂x` for every parameter `x` the fact touches.
    pub fn gradient<F: Fact>(&self, fact: &F, upstream: f64) -> Result<ParamGradient, ModelError> {
        self.gradient_on(fact, TimeSide::Start, upstream)
    }

    pub fn gradient_on<F: Fact>(&self, fact: &F, side: TimeSide, upstream: f64) -> Result<ParamGradient, ModelError> {
        let key = self.check_key(fact)?;
        self.check_side(side)?;
        let mut g = ParamGradient::new();
        self.accumulate_gradient(key, side, upstream, &mut g);
        Ok(g)
    }

    /// Unchecked gradient accumulation into `g`.
    pub(crate) fn accumulate_gradient(&self, [t, s, p, o]: [usize; 4], side: TimeSide, up: f64, g: &mut ParamGradient) {
        let epi = self.kind.is_episodic();
        let (time_role, time_im_role, time_core_role) = side.roles();
        match self.kind.family {
            Family::DistMult => {
                let lambda = self.row(Role::Diagonal, 0);
                let (es, ep, eo) = (self.row(Role::Entity, s), self.row(Role::Predicate, p), self.row(Role::Entity, o));
                let ones;
                let tv = if epi {
                    self.row(time_role, t)
                } else {
                    ones = vec![1.0; lambda.len()];
                    &ones
                };
                let n = lambda.len();
                let prod = |skip: usize| -> Vec<f64> {
                    (0..n)
                        .map(|i| {
                            let f = [lambda[i], tv[i], es[i], ep[i], eo[i]];
                            f.iter().enumerate().filter(|&(j, _)| j != skip).map(|(_, v)| v).product()
                        })
                        .collect()
                };
                g.add(Role::Diagonal, 0, up, &prod(0));
                if epi {
                    g.add(time_role, t, up, &prod(1));
                }
                g.add(Role::Entity, s, up, &prod(2));
                g.add(Role::Predicate, p, up, &prod(3));
                g.add(Role::Entity, o, up, &prod(4));
            }
            Family::HolE => {
                let (es, ep, eo) = (self.row(Role::Entity, s), self.row(Role::Predicate, p), self.row(Role::Entity, o));
                let c = correlate(es, eo);
                let gc = if epi {
                    let tv = self.row(time_role, t);
                    g.add(time_role, t, up, &correlate(ep, &c));
                    g.add(Role::Predicate, p, up, &correlate(tv, &c));
                    convolve(tv, ep)
                } else {
                    g.add(Role::Predicate, p, up, &c);
                    ep.to_vec()
                };
                g.add(Role::Entity, s, up, &correlate(&gc, eo));
                g.add(Role::Entity, o, up, &convolve(es, &gc));
            }
            Family::ComplEx => {
                let ((sr, si), (pr, pi), (or, oi)) = self.complex_rows(s, p, o);
                let n = sr.len();
                let cs: Vec<Complex64> = (0..n).map(|i| Complex64::new(sr[i], si[i])).collect();
                let cp: Vec<Complex64> = (0..n).map(|i| Complex64::new(pr[i], pi[i])).collect();
                let co: Vec<Complex64> = (0..n).map(|i| Complex64::new(or[i], -oi[i])).collect();
                let ct: Vec<Complex64> = if epi {
                    let (tr, ti) = (self.row(time_role, t), self.row(time_im_role, t));
                    (0..n).map(|i| Complex64::new(tr[i], ti[i])).collect()
                } else {
                    vec![Complex64::new(1.0, 0.0); n]
                };
                // factor x contributes Re(x · rest): ∂/∂Re x = Re(rest), ∂/∂Im x = −Im(rest)
                let emit = |g: &mut ParamGradient, re: Role, im: Role, row: usize, rest: &[Complex64]| {
                    let dre: Vec<f64> = rest.iter().map(|r| r.re).collect();
                    let dim: Vec<f64> = rest.iter().map(|r| -r.im).collect();
                    g.add(re, row, up, &dre);
                    g.add(im, row, up, &dim);
                };
                let rest_t: Vec<_> = (0..n).map(|i| cs[i] * cp[i] * co[i]).collect();
                let rest_s: Vec<_> = (0..n).map(|i| ct[i] * cp[i] * co[i]).collect();
                let rest_p: Vec<_> = (0..n).map(|i| ct[i] * cs[i] * co[i]).collect();
                if epi {
                    emit(g, time_role, time_im_role, t, &rest_t);
                }
                emit(g, Role::Entity, Role::EntityIm, s, &rest_s);
                emit(g, Role::Predicate, Role::PredicateIm, p, &rest_p);
                // object enters conjugated: Re(q · conj(o)) = q_re o_re + q_im o_im
                let q: Vec<_> = (0..n).map(|i| ct[i] * cs[i] * cp[i]).collect();
                let dre: Vec<f64> = q.iter().map(|r| r.re).collect();
                let dim: Vec<f64> = q.iter().map(|r| r.im).collect();
                g.add(Role::Entity, o, up, &dre);
                g.add(Role::EntityIm, o, up, &dim);
            }
            Family::Tucker if epi => {
                let core = self.row(Role::Core, 0);
                let (tv, es, ep, eo) = (
                    self.row(time_role, t),
                    self.row(Role::Entity, s),
                    self.row(Role::Predicate, p),
                    self.row(Role::Entity, o),
                );
                let (d, dt) = (es.len(), tv.len());
                let mut gcore = vec![0.0; core.len()];
                let (mut gt, mut gs, mut gp, mut go) = (vec![0.0; dt], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                for r1 in 0..dt {
                    for r2 in 0..d {
                        for r3 in 0..d {
                            let base = ((r1 * d + r2) * d + r3) * d;
                            let slice = &core[base..base + d];
                            let tsp = tv[r1] * es[r2] * ep[r3];
                            let acc = dot(slice, eo);
                            for r4 in 0..d {
                                gcore[base + r4] = tsp * eo[r4];
                                go[r4] += tsp * slice[r4];
                            }
                            gt[r1] += acc * es[r2] * ep[r3];
                            gs[r2] += acc * tv[r1] * ep[r3];
                            gp[r3] += acc * tv[r1] * es[r2];
                        }
                    }
                }
                g.add(Role::Core, 0, up, &gcore);
                g.add(time_role, t, up, &gt);
                g.add(Role::Entity, s, up, &gs);
                g.add(Role::Predicate, p, up, &gp);
                g.add(Role::Entity, o, up, &go);
            }
            Family::Tucker | Family::ConT => {
                let (core_role, row) = if epi { (time_core_role, t) } else { (Role::Core, 0) };
                let tg = trilinear_grad(
                    self.row(core_role, row),
                    self.row(Role::Entity, s),
                    self.row(Role::Predicate, p),
                    self.row(Role::Entity, o),
                );
                g.add(core_role, row, up, &tg.core);
                g.add(Role::Entity, s, up, &tg.s);
                g.add(Role::Predicate, p, up, &tg.p);
                g.add(Role::Entity, o, up, &tg.o);
            }
            Family::Tree => {
                let (g1, g2) = (self.row(Role::TreeCore1, 0), self.row(Role::TreeCore2, 0));
                let gp_m = self.row(Role::PredicateCore, p);
                let (tv, es, eo) = (self.row(Role::Time, t), self.row(Role::Entity, s), self.row(Role::Entity, o));
                let (d, dt) = (es.len(), tv.len());
                let (x, y) = tree_halves(g1, g2, tv, es, eo);
                let gx = mat_vec(gp_m, &y);
                let gy = mat_t_vec(gp_m, &x);
                g.add(Role::PredicateCore, p, up, &outer(&x, &y));

                let mut gg1 = vec![0.0; g1.len()];
                let mut gt = vec![0.0; dt];
                let mut gs = vec![0.0; d];
                for r1 in 0..dt {
                    for r2 in 0..d {
                        let base = (r1 * d + r2) * d;
                        let acc = dot(&g1[base..base + d], &gx);
                        for r3 in 0..d {
                            gg1[base + r3] = tv[r1] * es[r2] * gx[r3];
                        }
                        gt[r1] += acc * es[r2];
                        gs[r2] += acc * tv[r1];
                    }
                }
                let mut gg2 = vec![0.0; g2.len()];
                let mut go = vec![0.0; d];
                for r4 in 0..d {
                    for r5 in 0..d {
                        let base = (r4 * d + r5) * dt;
                        for r6 in 0..dt {
                            let w = g2[base + r6];
                            gg2[base + r6] = gy[r4] * eo[r5] * tv[r6];
                            go[r5] += gy[r4] * w * tv[r6];
                            gt[r6] += gy[r4] * w * eo[r5];
                        }
                    }
                }
                g.add(Role::TreeCore1, 0, up, &gg1);
                g.add(Role::TreeCore2, 0, up, &gg2);
                g.add(Role::Time, t, up, &gt);
                g.add(Role::Entity, s, up, &gs);
                g.add(Role::Entity, o, up, &go);
            }
            Family::Rescal => {
                let m = self.row(Role::PredicateCore, p);
                let (es, eo) = (self.row(Role::Entity, s), self.row(Role::Entity, o));
                g.add(Role::PredicateCore, p, up, &outer(es, eo));
                g.add(Role::Entity, s, up, &mat_vec(m, eo));
                g.add(Role::Entity, o, up, &mat_t_vec(m, es));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Quadruple, Triple};
    use crate::models::{Counts, ModelKind, Rank};

    fn filled(kind: ModelKind, rank: usize, value: f64) -> ModelParams {
        let mut p = ModelParams::zeros(kind, Counts::new(3, 2, 2), Rank::uniform(rank).unwrap()).unwrap();
        p.tables_mut().iter_mut().for_each(|t| t.data.fill(value));
        p
    }

    #[test]
    fn distmult_all_ones() {
        let p = filled(ModelKind::episodic(Family::DistMult).unwrap(), 3, 1.0);
        assert_eq!(p.score(&Quadruple::new(1, 0, 1, 2)).unwrap(), 3.0);
        let g = p.gradient(&Quadruple::new(1, 0, 1, 2), 1.0).unwrap();
        assert_eq!(g.get(Role::Time, 1).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn distmult_time_partial_is_the_other_factors() {
        let kind = ModelKind::episodic(Family::DistMult).unwrap();
        let p = ModelParams::init(kind, Counts::new(3, 2, 2), Rank::uniform(4).unwrap(), 5).unwrap();
        let q = Quadruple::new(1, 0, 1, 2);
        let g = p.gradient(&q, 1.0).unwrap();
        let expected: Vec<f64> = (0..4)
            .map(|i| {
                p.row(Role::Diagonal, 0)[i]
                    * p.row(Role::Entity, 0)[i]
                    * p.row(Role::Predicate, 1)[i]
                    * p.row(Role::Entity, 2)[i]
            })
            .collect();
        assert_eq!(g.get(Role::Time, 1).unwrap(), expected.as_slice());
    }

    #[test]
    fn zero_core_tucker() {
        let kind = ModelKind::episodic(Family::Tucker).unwrap();
        let mut p = ModelParams::init(kind, Counts::new(3, 2, 2), Rank::uniform(3).unwrap(), 1).unwrap();
        p.table_mut(Role::Core).unwrap().data.fill(0.0);
        let q = Quadruple::new(0, 1, 0, 2);
        assert_eq!(p.score(&q).unwrap(), 0.0);
        let g = p.gradient(&q, 1.0).unwrap();
        for role in [Role::Entity, Role::Predicate, Role::Time] {
            assert!(g.iter().filter(|(r, _, _)| *r == role).all(|(_, _, v)| v.iter().all(|&x| x == 0.0)));
        }
    }

    #[test]
    fn arity_and_range_errors() {
        let p = filled(ModelKind::episodic(Family::ConT).unwrap(), 2, 0.5);
        assert!(matches!(p.score(&Triple::new(0, 0, 0)), Err(ModelError::ArityMismatch { .. })));
        assert!(matches!(p.score(&Quadruple::new(2, 0, 0, 0)), Err(ModelError::IndexOutOfRange(_))));
        assert!(matches!(
            p.score_on(&Quadruple::new(0, 0, 0, 0), TimeSide::End),
            Err(ModelError::MissingTable(Role::EndTimeCore))
        ));
        let r = filled(ModelKind::semantic(Family::Rescal).unwrap(), 2, 0.5);
        assert!(matches!(r.score(&Quadruple::new(0, 0, 0, 0)), Err(ModelError::ArityMismatch { .. })));
        assert_eq!(r.score(&Triple::new(0, 0, 1)).unwrap(), 4.0 * 0.125);
    }

    #[test]
    fn self_loop_gradients_accumulate() {
        let kind = ModelKind::semantic(Family::Rescal).unwrap();
        let p = ModelParams::init(kind, Counts::new(2, 1, 0), Rank::uniform(3).unwrap(), 2).unwrap();
        let g = p.gradient(&Triple::new(1, 0, 1), 1.0).unwrap();
        let m = p.row(Role::PredicateCore, 0);
        let e = p.row(Role::Entity, 1);
        let expected: Vec<f64> =
            (0..3).map(|i| (0..3).map(|j| m[i * 3 + j] * e[j] + m[j * 3 + i] * e[j]).sum()).collect();
        for (a, b) in g.get(Role::Entity, 1).unwrap().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
