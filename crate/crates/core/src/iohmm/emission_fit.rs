//! Weighted elastic-net regression for the linear-Gaussian emission model.
//!
//! With the state covariance `Σ` held fixed, the mean parameters minimise
//!
//! ```text
//! ½ Σ_t w_t (o_t − B z_t)ᵀ Σ⁻¹ (o_t − B z_t) + λ₁ ‖V‖₁ + (λ₂/2) ‖V‖²,   z_t = [1, x_t]
//! ```
//!
//! by exact cyclic coordinate descent (soft-thresholding for the penalised
//! coefficients, plain Newton for the intercepts). The covariance is then replaced by
//! the weighted residual covariance, eigenvalue-floored.

use super::{floor_eigenvalues_2x2, EmissionParams, INPUT_DIM, OBS_DIM};

const Z_DIM: usize = 1 + INPUT_DIM;
const MAX_SWEEPS: usize = 5000;
const STEP_TOL: f64 = 1e-12;

/// Weighted sufficient statistics of one state's emission regression.
pub(crate) struct EmissionStats {
    szz: [[f64; Z_DIM]; Z_DIM],
    soz: [[f64; Z_DIM]; OBS_DIM],
    weight: f64,
}

impl EmissionStats {
    pub fn new() -> Self {
        EmissionStats { szz: [[0.0; Z_DIM]; Z_DIM], soz: [[0.0; Z_DIM]; OBS_DIM], weight: 0.0 }
    }

    pub fn add(&mut self, x: &[f64; INPUT_DIM], o: &[f64; OBS_DIM], w: f64) {
        let z = lift(x);
        for a in 0..Z_DIM {
            for b in 0..Z_DIM {
                self.szz[a][b] += w * z[a] * z[b];
            }
            for r in 0..OBS_DIM {
                self.soz[r][a] += w * o[r] * z[a];
            }
        }
        self.weight += w;
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

fn lift(x: &[f64; INPUT_DIM]) -> [f64; Z_DIM] {
    let mut z = [0.0; Z_DIM];
    z[0] = 1.0;
    z[1..].copy_from_slice(x);
    z
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Elastic-net penalty weights in objective units.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Penalty {
    pub l1: f64,
    pub l2: f64,
}

impl Penalty {
    pub fn value(&self, e: &EmissionParams) -> f64 {
        let abs: f64 = e.coef.iter().flatten().map(|v| v.abs()).sum();
        let sq: f64 = e.coef.iter().flatten().map(|v| v * v).sum();
        self.l1 * abs + 0.5 * self.l2 * sq
    }
}

/// Coordinate-descent update of `e.coef` / `e.intercept` with `e.cov` fixed.
pub(crate) fn fit_mean(e: &mut EmissionParams, stats: &EmissionStats, pen: Penalty) {
    let [[a, b], [c, d]] = e.cov;
    let det = a * d - b * c;
    let prec = [[d / det, -b / det], [-c / det, a / det]];

    let mut coef = [[0.0; Z_DIM]; OBS_DIM];
    for r in 0..OBS_DIM {
        coef[r][0] = e.intercept[r];
        coef[r][1..].copy_from_slice(&e.coef[r]);
    }
    // m = Soz − B Szz
    let mut m = stats.soz;
    for r in 0..OBS_DIM {
        for f in 0..Z_DIM {
            m[r][f] -= (0..Z_DIM).map(|g| coef[r][g] * stats.szz[g][f]).sum::<f64>();
        }
    }

    for _ in 0..MAX_SWEEPS {
        let mut max_step = 0.0f64;
        let mut max_coef = 0.0f64;
        for r in 0..OBS_DIM {
            for f in 0..Z_DIM {
                let curv = prec[r][r] * stats.szz[f][f];
                if curv <= 0.0 {
                    continue;
                }
                // directional derivative of the smooth part is −(P m)_{r f}
                let pm = prec[r][0] * m[0][f] + prec[r][1] * m[1][f];
                let old = coef[r][f];
                let u = curv * old + pm;
                let new = if f == 0 { u / curv } else { soft_threshold(u, pen.l1) / (curv + pen.l2) };
                let delta = new - old;
                if delta != 0.0 {
                    coef[r][f] = new;
                    for g in 0..Z_DIM {
                        m[r][g] -= delta * stats.szz[f][g];
                    }
                }
                max_step = max_step.max(delta.abs());
                max_coef = max_coef.max(new.abs());
            }
        }
        if max_step <= STEP_TOL * (1.0 + max_coef) {
            break;
        }
    }

    for r in 0..OBS_DIM {
        e.intercept[r] = coef[r][0];
        e.coef[r].copy_from_slice(&coef[r][1..]);
    }
}

/// Weighted residual covariance around the current mean, with an eigenvalue floor.
pub(crate) fn fit_cov<'a>(
    e: &mut EmissionParams,
    data: impl Iterator<Item = (&'a [f64; INPUT_DIM], [f64; OBS_DIM], f64)>,
    floor: f64,
) {
    let mut s = [[0.0; 2]; 2];
    let mut wsum = 0.0;
    for (x, o, w) in data {
        let mu = e.mean(x);
        let r = [o[0] - mu[0], o[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                s[i][j] += w * r[i] * r[j];
            }
        }
        wsum += w;
    }
    if wsum <= 0.0 {
        return;
    }
    for row in s.iter_mut() {
        for v in row.iter_mut() {
            *v /= wsum;
        }
    }
    e.cov = floor_eigenvalues_2x2(s, floor);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::Observation;

    fn quad_objective(e: &EmissionParams, data: &[([f64; INPUT_DIM], [f64; 2], f64)], pen: Penalty) -> f64 {
        let [[a, b], [c, d]] = e.cov;
        let det = a * d - b * c;
        let p = [[d / det, -b / det], [-c / det, a / det]];
        let mut f = 0.0;
        for (x, o, w) in data {
            let mu = e.mean(x);
            let r = [o[0] - mu[0], o[1] - mu[1]];
            f += 0.5 * w * (r[0] * (p[0][0] * r[0] + p[0][1] * r[1]) + r[1] * (p[1][0] * r[0] + p[1][1] * r[1]));
        }
        f + pen.value(e)
    }

    fn dataset() -> Vec<([f64; INPUT_DIM], [f64; 2], f64)> {
        (0..120)
            .map(|k| {
                let mut x = [0.0; INPUT_DIM];
                x[0] = ((k * 37) % 11) as f64 * 0.3 - 1.5;
                x[1 + (k % 6)] = 1.0;
                let noise = ((k * 7919) % 101) as f64 / 101.0 - 0.5;
                let o = [0.4 + 0.2 * x[0] + 0.3 * x[2] + 0.1 * noise, 0.2 - 0.1 * x[0] + 0.05 * noise];
                let w = 0.2 + ((k * 13) % 7) as f64 / 7.0;
                (x, o, w)
            })
            .collect()
    }

    #[test]
    fn coordinate_descent_is_a_local_minimum() {
        let data = dataset();
        let mut stats = EmissionStats::new();
        for (x, o, w) in &data {
            stats.add(x, o, *w);
        }
        let pen = Penalty { l1: 0.05, l2: 0.02 };
        let mut e = EmissionParams::constant([0.0, 0.0], [[0.02, 0.004], [0.004, 0.01]]);
        let before = quad_objective(&e, &data, pen);
        fit_mean(&mut e, &stats, pen);
        let after = quad_objective(&e, &data, pen);
        assert!(after < before);
        for r in 0..2 {
            for f in 0..INPUT_DIM {
                for d in [1e-5, -1e-5] {
                    let mut q = e.clone();
                    q.coef[r][f] += d;
                    assert!(quad_objective(&q, &data, pen) >= after - 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_is_weighted_residual_covariance() {
        let data = dataset();
        let mut e = EmissionParams::constant([0.4, 0.2], [[1.0, 0.0], [0.0, 1.0]]);
        fit_cov(&mut e, data.iter().map(|(x, o, w)| (x, *o, *w)), 1e-8);
        let wsum: f64 = data.iter().map(|d| d.2).sum();
        let s00: f64 = data.iter().map(|(x, o, w)| w * (o[0] - e.mean(x)[0]).powi(2)).sum::<f64>() / wsum;
        assert!((e.cov[0][0] - s00).abs() < 1e-12);
        let _ = Observation::new(0.0, 0.0);
    }

    #[test]
    fn single_support_point_is_floored() {
        let x = [0.0; INPUT_DIM];
        let mut e = EmissionParams::constant([0.5, 0.5], [[1.0, 0.0], [0.0, 1.0]]);
        fit_cov(&mut e, std::iter::once((&x, [0.5, 0.5], 1.0)), 1e-8);
        assert!(super::super::min_eigenvalue_2x2(&e.cov) >= 1e-8 * (1.0 - 1e-9));
    }
}
