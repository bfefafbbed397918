//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ekge_core::kg::{Quadruple, Triple};
use ekge_core::models::{Family, ModelKind, ModelParams, Role};

/// Naive loop-nest evaluation of each model's score, written from the
/// formulas with explicit index arithmetic and no shared kernels.
pub fn naive_score(m: &ModelParams, [t, s, p, o]: [usize; 4]) -> f64 {
    let row = |role: Role, i: usize| m.table(role).unwrap().row(i).to_vec();
    let d = m.rank().entity;
    let dt = m.rank().time;
    let epi = m.kind().is_episodic();
    match m.kind().family() {
        Family::DistMult => {
            let (l, es, ep, eo) =
                (row(Role::Diagonal, 0), row(Role::Entity, s), row(Role::Predicate, p), row(Role::Entity, o));
            let et = if epi { row(Role::Time, t) } else { vec![1.0; d] };
            let mut sum = 0.0;
            for i in 0..d {
                sum += l[i] * et[i] * es[i] * ep[i] * eo[i];
            }
            sum
        }
        Family::HolE => {
            let (es, ep, eo) = (row(Role::Entity, s), row(Role::Predicate, p), row(Role::Entity, o));
            let corr = |a: &[f64], b: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; d];
                for k in 0..d {
                    for i in 0..d {
                        out[k] += a[i] * b[(k + i) % d];
                    }
                }
                out
            };
            let c = corr(&es, &eo);
            if epi {
                let u = corr(&ep, &c);
                let et = row(Role::Time, t);
                (0..d).map(|k| et[k] * u[k]).sum()
            } else {
                (0..d).map(|k| ep[k] * c[k]).sum()
            }
        }
        Family::ComplEx => {
            let pair = |re: Role, im: Role, i: usize| (row(re, i), row(im, i));
            let (sr, si) = pair(Role::Entity, Role::EntityIm, s);
            let (pr, pi) = pair(Role::Predicate, Role::PredicateIm, p);
            let (or, oi) = pair(Role::Entity, Role::EntityIm, o);
            let (tr, ti) = if epi { pair(Role::Time, Role::TimeIm, t) } else { (vec![1.0; d], vec![0.0; d]) };
            let mul = |(a, b): (f64, f64), (c, e): (f64, f64)| (a * c - b * e, a * e + b * c);
            let mut sum = 0.0;
            for i in 0..d {
                let z = mul(mul(mul((tr[i], ti[i]), (sr[i], si[i])), (pr[i], pi[i])), (or[i], -oi[i]));
                sum += z.0;
            }
            sum
        }
        Family::Tucker if epi => {
            let (g, et, es, ep, eo) = (
                row(Role::Core, 0),
                row(Role::Time, t),
                row(Role::Entity, s),
                row(Role::Predicate, p),
                row(Role::Entity, o),
            );
            let mut sum = 0.0;
            for r1 in 0..dt {
                for r2 in 0..d {
                    for r3 in 0..d {
                        for r4 in 0..d {
                            sum += et[r1] * es[r2] * ep[r3] * eo[r4] * g[((r1 * d + r2) * d + r3) * d + r4];
                        }
                    }
                }
            }
            sum
        }
        Family::Tucker | Family::ConT => {
            let g = if epi { row(Role::TimeCore, t) } else { row(Role::Core, 0) };
            let (es, ep, eo) = (row(Role::Entity, s), row(Role::Predicate, p), row(Role::Entity, o));
            let mut sum = 0.0;
            for r1 in 0..d {
                for r2 in 0..d {
                    for r3 in 0..d {
                        sum += es[r1] * ep[r2] * eo[r3] * g[(r1 * d + r2) * d + r3];
                    }
                }
            }
            sum
        }
        Family::Tree => {
            let (g1, g2, gp) = (row(Role::TreeCore1, 0), row(Role::TreeCore2, 0), row(Role::PredicateCore, p));
            let (et, es, eo) = (row(Role::Time, t), row(Role::Entity, s), row(Role::Entity, o));
            let mut sum = 0.0;
            for r1 in 0..dt {
                for r2 in 0..d {
                    for r3 in 0..d {
                        for r4 in 0..d {
                            for r5 in 0..d {
                                for r6 in 0..dt {
                                    sum += et[r1]
                                        * es[r2]
                                        * g1[(r1 * d + r2) * d + r3]
                                        * gp[r3 * d + r4]
                                        * g2[(r4 * d + r5) * dt + r6]
                                        * eo[r5]
                                        * et[r6];
                                }
                            }
                        }
                    }
                }
            }
            sum
        }
        Family::Rescal => {
            let (gp, es, eo) = (row(Role::PredicateCore, p), row(Role::Entity, s), row(Role::Entity, o));
            let mut sum = 0.0;
            for r1 in 0..d {
                for r2 in 0..d {
                    sum += es[r1] * gp[r1 * d + r2] * eo[r2];
                }
            }
            sum
        }
    }
}

pub fn score_key(m: &ModelParams, [t, s, p, o]: [usize; 4]) -> f64 {
    if m.kind().is_episodic() {
        m.score(&Quadruple::new(t, s, p, o)).unwrap()
    } else {
        m.score(&Triple::new(s, p, o)).unwrap()
    }
}

/// Largest relative error between the analytic gradient and central
/// differences over every stored parameter. Relative errors use a floor
/// of 1e-3 on the denominator so exact zeros compare absolutely.
pub fn finite_difference_error(m: &ModelParams, key: [usize; 4], step: f64) -> f64 {
    let [t, s, p, o] = key;
    let grad = if m.kind().is_episodic() {
        m.gradient(&Quadruple::new(t, s, p, o), 1.0).unwrap()
    } else {
        m.gradient(&Triple::new(s, p, o), 1.0).unwrap()
    };
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for table in m.tables() {
        let role = table.role;
        let row_len = table.row_len();
        for idx in 0..table.data.len() {
            let orig = table.data[idx];
            probe.table_mut(role).unwrap().data[idx] = orig + step;
            let up = score_key(&probe, key);
            probe.table_mut(role).unwrap().data[idx] = orig - step;
            let down = score_key(&probe, key);
            probe.table_mut(role).unwrap().data[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grad.get(role, idx / row_len).map_or(0.0, |r| r[idx % row_len]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Naive DFT `X_k = Σ_n x_n e^{-2πi kn/d}` as (re, im) pairs.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let d = x.len();
    (0..d)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &v)| {
                let a = -2.0 * std::f64::consts::PI * (k * n) as f64 / d as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect()
}

pub fn all_kinds() -> impl Iterator<Item = ModelKind> {
    ModelKind::ALL.into_iter()
}
