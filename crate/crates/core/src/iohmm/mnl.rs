//! Soft-count multinomial logistic regression with an L2 (ridge) penalty on weights.
//!
//! Maximises `Σ_t Σ_j y_tj log p_j(x_t) − (λ/2) Σ_j ‖w_j‖²` by damped Newton steps with
//! Armijo backtracking, updating every class except one reference class whose
//! parameters stay fixed. Intercepts are unpenalised.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{MnlParams, INPUT_DIM};
use crate::numeric::softmax_in_place;

const MAX_NEWTON_STEPS: usize = 200;
const GRAD_TOL: f64 = 1e-8;

/// Soft-count regression data: each row is an encoded input and its per-class counts.
pub(crate) struct SoftCounts {
    rows: BTreeMap<[u64; INPUT_DIM], (usize, Vec<f64>)>,
    inputs: Vec<[f64; INPUT_DIM]>,
    n_classes: usize,
}

impl SoftCounts {
    pub fn new(n_classes: usize) -> Self {
        SoftCounts { rows: BTreeMap::new(), inputs: Vec::new(), n_classes }
    }

    /// Adds counts for one input; identical inputs are pooled.
    pub fn add(&mut self, x: &[f64; INPUT_DIM], counts: impl IntoIterator<Item = f64>) {
        let key = x.map(f64::to_bits);
        let n = self.n_classes;
        let next = self.inputs.len();
        let entry = self.rows.entry(key).or_insert_with(|| (next, vec![0.0; n]));
        if entry.0 == next {
            self.inputs.push(*x);
        }
        for (acc, c) in entry.1.iter_mut().zip(counts) {
            *acc += c;
        }
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64; INPUT_DIM], &[f64])> {
        self.rows.values().map(|(i, c)| (&self.inputs[*i], c.as_slice()))
    }

    pub fn total(&self) -> f64 {
        self.rows.values().flat_map(|(_, c)| c.iter()).sum()
    }
}

pub(crate) fn ridge_penalty(params: &MnlParams, l2: f64) -> f64 {
    0.5 * l2 * params.weights.iter().flatten().map(|w| w * w).sum::<f64>()
}

/// Penalised objective (to maximise).
pub(crate) fn objective(params: &MnlParams, data: &SoftCounts, l2: f64) -> f64 {
    let mut ll = 0.0;
    for (x, y) in data.rows() {
        let lp = params.log_probs(x);
        for (yj, lpj) in y.iter().zip(&lp) {
            if *yj != 0.0 {
                ll += yj * lpj;
            }
        }
    }
    ll - ridge_penalty(params, l2)
}

/// Improves `params` in place. When `use_weights` is false only intercepts move
/// (weights of free classes are held at their current values).
pub(crate) fn fit(params: &mut MnlParams, data: &SoftCounts, l2: f64, use_weights: bool, reference: usize) -> f64 {
    let n = params.n_classes();
    let free: Vec<usize> = (0..n).filter(|&j| j != reference).collect();
    let block = if use_weights { 1 + INPUT_DIM } else { 1 };
    let dim = free.len() * block;
    let mut current = objective(params, data, l2);
    if dim == 0 {
        return current;
    }
    let scale = data.total().max(1.0);

    for _ in 0..MAX_NEWTON_STEPS {
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        for (x, y) in data.rows() {
            let total: f64 = y.iter().sum();
            let mut p = params.logits(x);
            softmax_in_place(&mut p);
            let mut z = [0.0; 1 + INPUT_DIM];
            z[0] = 1.0;
            z[1..].copy_from_slice(x);
            let z = &z[..block];
            for (a, &ja) in free.iter().enumerate() {
                let r = y[ja] - total * p[ja];
                for (u, zu) in z.iter().enumerate() {
                    grad[a * block + u] += r * zu;
                }
                for (b, &jb) in free.iter().enumerate().skip(a) {
                    let w = total * (if ja == jb { p[ja] } else { 0.0 } - p[ja] * p[jb]);
                    if w == 0.0 {
                        continue;
                    }
                    for (u, zu) in z.iter().enumerate() {
                        for (v, zv) in z.iter().enumerate() {
                            hess[(a * block + u, b * block + v)] += w * zu * zv;
                        }
                    }
                }
            }
        }
        for a in 0..free.len() {
            for b in (a + 1)..free.len() {
                for u in 0..block {
                    for v in 0..block {
                        let val = hess[(a * block + u, b * block + v)];
                        hess[(b * block + v, a * block + u)] = val;
                    }
                }
            }
        }
        if use_weights {
            for (a, &ja) in free.iter().enumerate() {
                for f in 0..INPUT_DIM {
                    grad[a * block + 1 + f] -= l2 * params.weights[ja][f];
                    hess[(a * block + 1 + f, a * block + 1 + f)] += l2;
                }
            }
        }
        if grad.amax() < GRAD_TOL * scale {
            break;
        }

        let mut damping = 0.0;
        let step = loop {
            let mut h = hess.clone();
            for k in 0..dim {
                h[(k, k)] += damping;
            }
            if let Some(ch) = h.cholesky() {
                break ch.solve(&grad);
            }
            damping = if damping == 0.0 { 1e-10 * (1.0 + hess.diagonal().amax()) } else { damping * 10.0 };
        };
        let slope = grad.dot(&step);
        if !(slope > 0.0) {
            break;
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = params.clone();
            apply(&mut trial, &free, block, &step, t);
            let val = objective(&trial, data, l2);
            if val >= current + 1e-4 * t * slope {
                *params = trial;
                accepted = val > current;
                current = val;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    current
}

fn apply(params: &mut MnlParams, free: &[usize], block: usize, step: &DVector<f64>, t: f64) {
    for (a, &j) in free.iter().enumerate() {
        params.intercepts[j] += t * step[a * block];
        if block > 1 {
            for f in 0..INPUT_DIM {
                params.weights[j][f] += t * step[a * block + 1 + f];
            }
        }
    }
}
