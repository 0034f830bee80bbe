//! Weighted tobit maximization for one arm.
//!
//! Works in Olsen's parameterization `δ = β/ζ`, `θ = 1/ζ`, where the
//! censored-normal log-likelihood is concave, and climbs it with damped
//! Newton steps that are only accepted when the objective does not decrease.

use nalgebra::{DMatrix, DVector};

use crate::normal;

/// Posterior-weighted sufficient statistics of one design row.
#[derive(Debug, Clone)]
pub(crate) struct TobitTerm {
    pub design: Vec<f64>,
    pub weight_zero: f64,
    pub weight_pos: f64,
    pub sum_y: f64,
    pub sum_y2: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct TobitSolution {
    pub coef: Vec<f64>,
    pub scale: f64,
    pub floor_active: bool,
}

const MAX_NEWTON: usize = 200;
const MAX_HALVINGS: usize = 60;

fn linear(design: &[f64], delta: &[f64]) -> f64 {
    design.iter().zip(delta).map(|(x, d)| x * d).sum()
}

/// Objective up to the constant `-½ ln 2π Σ w_pos`.
pub(crate) fn objective(terms: &[TobitTerm], delta: &[f64], theta: f64) -> f64 {
    terms
        .iter()
        .map(|t| {
            let eta = linear(&t.design, delta);
            let mut v = 0.0;
            if t.weight_zero > 0.0 {
                v += t.weight_zero * normal::ln_cdf(-eta);
            }
            if t.weight_pos > 0.0 {
                v += t.weight_pos * theta.ln()
                    - 0.5 * (theta * theta * t.sum_y2 - 2.0 * theta * eta * t.sum_y + eta * eta * t.weight_pos);
            }
            v
        })
        .sum()
}

/// Gradient and Hessian in `(δ, θ)`; θ is the last coordinate.
fn derivatives(terms: &[TobitTerm], delta: &[f64], theta: f64) -> (DVector<f64>, DMatrix<f64>) {
    let q = delta.len();
    let mut g = DVector::zeros(q + 1);
    let mut h = DMatrix::zeros(q + 1, q + 1);
    for t in terms {
        let eta = linear(&t.design, delta);
        let x = &t.design;
        // Zero part: W0 ln Φ(u), u = -η.
        let (mut gd, mut hdd) = (0.0, 0.0);
        if t.weight_zero > 0.0 {
            let u = -eta;
            let lambda = normal::inverse_mills(u);
            gd -= t.weight_zero * lambda;
            hdd -= t.weight_zero * lambda * (u + lambda);
        }
        if t.weight_pos > 0.0 {
            gd += theta * t.sum_y - eta * t.weight_pos;
            hdd -= t.weight_pos;
            g[q] += t.weight_pos / theta - theta * t.sum_y2 + eta * t.sum_y;
            h[(q, q)] -= t.weight_pos / (theta * theta) + t.sum_y2;
            for a in 0..q {
                h[(a, q)] += t.sum_y * x[a];
                h[(q, a)] += t.sum_y * x[a];
            }
        }
        for a in 0..q {
            g[a] += gd * x[a];
            for b in 0..q {
                h[(a, b)] += hdd * x[a] * x[b];
            }
        }
    }
    (g, h)
}

/// Solve `(-H) d = g`, ridging the diagonal until the system is positive definite.
fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
    let neg = -h;
    let scale = neg.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let mut m = neg.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(chol) = m.cholesky() {
            return Some(chol.solve(g));
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 10.0 };
    }
    None
}

/// Maximize the weighted tobit objective starting from `(start_coef, start_scale)`
/// subject to `scale >= min_scale`.
pub(crate) fn maximize(terms: &[TobitTerm], start_coef: &[f64], start_scale: f64, min_scale: f64) -> TobitSolution {
    let q = start_coef.len();
    let theta_max = if min_scale > 0.0 { 1.0 / min_scale } else { f64::INFINITY };
    let mut theta = (1.0 / start_scale).min(theta_max);
    let mut delta: Vec<f64> = start_coef.iter().map(|b| b * theta).collect();
    let mut value = objective(terms, &delta, theta);

    for _ in 0..MAX_NEWTON {
        let (g, h) = derivatives(terms, &delta, theta);
        let at_bound = theta >= theta_max;
        let direction = if at_bound && g[q] > 0.0 {
            // θ pinned at the scale floor: Newton over δ only.
            let sub_h = h.view((0, 0), (q, q)).into_owned();
            let sub_g = g.rows(0, q).into_owned();
            newton_direction(&sub_g, &sub_h).map(|d| {
                let mut full = DVector::zeros(q + 1);
                full.rows_mut(0, q).copy_from(&d);
                full
            })
        } else {
            newton_direction(&g, &h)
        };
        let Some(direction) = direction else { break };

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand_theta = (theta + step * direction[q]).min(theta_max);
            if cand_theta > 0.0 {
                let cand_delta: Vec<f64> = delta.iter().enumerate().map(|(a, d)| d + step * direction[a]).collect();
                let cand_value = objective(terms, &cand_delta, cand_theta);
                if cand_value >= value {
                    accepted = Some((cand_delta, cand_theta, cand_value));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((new_delta, new_theta, new_value)) = accepted else { break };
        let gain = new_value - value;
        delta = new_delta;
        theta = new_theta;
        value = new_value;
        if gain <= 1e-14 * (1.0 + value.abs()) {
            break;
        }
    }
    TobitSolution {
        coef: delta.iter().map(|d| d / theta).collect(),
        scale: 1.0 / theta,
        floor_active: theta >= theta_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(ys: &[(f64, f64)]) -> Vec<TobitTerm> {
        let mut t = TobitTerm {
            design: vec![1.0],
            weight_zero: 0.0,
            weight_pos: 0.0,
            sum_y: 0.0,
            sum_y2: 0.0,
        };
        for &(y, w) in ys {
            if y == 0.0 {
                t.weight_zero += w;
            } else {
                t.weight_pos += w;
                t.sum_y += w * y;
                t.sum_y2 += w * y * y;
            }
        }
        vec![t]
    }

    fn direct_loglik(ys: &[(f64, f64)], eta: f64, zeta: f64) -> f64 {
        ys.iter()
            .map(|&(y, w)| {
                w * if y == 0.0 {
                    normal::ln_cdf(-eta / zeta)
                } else {
                    normal::ln_pdf((y - eta) / zeta) - zeta.ln()
                }
            })
            .sum()
    }

    fn sample() -> Vec<(f64, f64)> {
        // Deterministic censored sample with uneven weights.
        (0..400)
            .map(|i| {
                let u = (i as f64 + 0.5) / 400.0;
                let latent = 1.0 + 2.0 * (2.0 * u - 1.0) * (1.0 + 0.3 * (i as f64 * 0.7).sin());
                (latent.max(0.0), 0.5 + (i % 7) as f64 * 0.25)
            })
            .collect()
    }

    #[test]
    fn newton_matches_grid_search() {
        let ys = sample();
        let terms = single(&ys);
        let sol = maximize(&terms, &[0.0], 5.0, 1e-6);
        // Coarse-to-fine grid search on the direct log-likelihood.
        let (mut eta, mut zeta) = (0.0, 2.0);
        let mut span = 4.0;
        for _ in 0..40 {
            let mut best = (f64::NEG_INFINITY, eta, zeta);
            for a in -20..=20 {
                for b in -20..=20 {
                    let e = eta + span * a as f64 / 20.0;
                    let z = zeta + span * b as f64 / 20.0;
                    if z <= 0.0 {
                        continue;
                    }
                    let v = direct_loglik(&ys, e, z);
                    if v > best.0 {
                        best = (v, e, z);
                    }
                }
            }
            eta = best.1;
            zeta = best.2;
            span *= 0.5;
        }
        assert!((sol.coef[0] - eta).abs() < 1e-4, "{} vs {eta}", sol.coef[0]);
        assert!((sol.scale - zeta).abs() < 1e-4, "{} vs {zeta}", sol.scale);
        assert!(!sol.floor_active);
    }

    #[test]
    fn objective_matches_direct_loglik_up_to_constant() {
        let ys = sample();
        let terms = single(&ys);
        let w_pos: f64 = ys.iter().filter(|(y, _)| *y > 0.0).map(|(_, w)| w).sum();
        for (eta, zeta) in [(0.5, 1.0), (-1.0, 3.0), (2.0, 0.7)] {
            let v = objective(&terms, &[eta / zeta], 1.0 / zeta) - w_pos * 0.918_938_533_204_672_8;
            assert!((v - direct_loglik(&ys, eta, zeta)).abs() < 1e-9);
        }
    }

    #[test]
    fn never_decreases_from_start() {
        let ys = sample();
        let terms = single(&ys);
        for (eta, zeta) in [(10.0, 0.1), (-5.0, 20.0), (1.0, 2.0)] {
            let before = objective(&terms, &[eta / zeta], 1.0 / zeta);
            let sol = maximize(&terms, &[eta], zeta, 1e-6);
            let after = objective(&terms, &[sol.coef[0] / sol.scale], 1.0 / sol.scale);
            assert!(after >= before);
        }
    }

    #[test]
    fn scale_floor_binds() {
        let ys: Vec<(f64, f64)> = (0..50).map(|i| (3.0 + 1e-4 * (i % 3) as f64, 1.0)).collect();
        let sol = maximize(&single(&ys), &[3.0], 1.0, 0.05);
        assert!(sol.floor_active);
        assert!((sol.scale - 0.05).abs() < 1e-12);
        assert!((sol.coef[0] - 3.0001).abs() < 1e-3);
    }
}
