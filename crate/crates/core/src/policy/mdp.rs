//! Finite MDPs, soft value iteration and the soft-max (QMDP) action policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyError, Result, DEFAULT_ALPHA};
use crate::numeric::{log_sum_exp, sample_index, softmax_with_temperature};

const ROW_SUM_TOL: f64 = 1e-9;

/// Discounted finite MDP with dense `P(s' | s, a)` and `R(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    /// Row-major `[s][a]`.
    reward: Vec<f64>,
    gamma: f64,
}

impl Mdp {
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        let bad = |m: String| Err(PolicyError::InvalidMdp(m));
        if n_states == 0 || n_actions == 0 {
            return bad("empty state or action set".into());
        }
        if transition.len() != n_states * n_actions * n_states || reward.len() != n_states * n_actions {
            return bad("table sizes do not match dimensions".into());
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return bad(format!("discount {gamma} outside (0, 1)"));
        }
        if let Some(r) = reward.iter().position(|r| !r.is_finite()) {
            return bad(format!("reward entry {r} is not finite"));
        }
        for (k, row) in transition.chunks(n_states).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > ROW_SUM_TOL {
                return bad(format!("transition slice (s={}, a={}) sums to {s}", k / n_actions, k % n_actions));
            }
        }
        Ok(Mdp { n_states, n_actions, transition, reward, gamma })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_actions + a) * self.n_states;
        &self.transition[k..k + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// `R(s, a) + γ Σ_s' P(s' | s, a) V(s')` for every `(s, a)`.
    pub fn backup(&self, v: &[f64]) -> Vec<f64> {
        let mut q = self.reward.clone();
        for (k, qk) in q.iter_mut().enumerate() {
            let row = &self.transition[k * self.n_states..(k + 1) * self.n_states];
            *qk += self.gamma * row.iter().zip(v).map(|(p, v)| p * v).sum::<f64>();
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub alpha: f64,
    /// Stop once the sup-norm change of `V` is below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { alpha: DEFAULT_ALPHA, tolerance: 1e-8, max_iterations: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    /// Sup-norm change of `V` at every iteration.
    pub residuals: Vec<f64>,
}

/// Soft action values with the temperature they were solved at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QFunction {
    pub n_states: usize,
    pub n_actions: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// Row-major `[s][a]`.
    pub q: Vec<f64>,
}

impl QFunction {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Soft state value `α log Σ_a exp(Q(s, a) / α)`.
    pub fn value(&self, s: usize) -> f64 {
        soft_max(self.row(s), self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.n_states * self.n_actions || self.n_actions == 0 {
            return Err(PolicyError::InvalidMdp("Q table size does not match dimensions".into()));
        }
        if !(self.alpha > 0.0) || self.q.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::InvalidMdp("Q table has a non-finite entry or non-positive alpha".into()));
        }
        Ok(())
    }
}

fn soft_max(row: &[f64], alpha: f64) -> f64 {
    let scaled: Vec<f64> = row.iter().map(|q| q / alpha).collect();
    alpha * log_sum_exp(&scaled)
}

/// Iterates `Q = R + γ P V`, `V = α LSE(Q / α)` from `V = 0`.
pub fn soft_value_iteration(mdp: &Mdp, cfg: &SolveConfig) -> Result<(QFunction, SolveReport)> {
    if !(cfg.alpha > 0.0) {
        return Err(PolicyError::InvalidMdp(format!("alpha {} must be positive", cfg.alpha)));
    }
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; ns];
    let mut residuals = Vec::new();
    let mut residual = f64::INFINITY;
    while residuals.len() < cfg.max_iterations {
        let q = mdp.backup(&v);
        let next: Vec<f64> = q.chunks(na).map(|row| soft_max(row, cfg.alpha)).collect();
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        residuals.push(residual);
        v = next;
        if residual < cfg.tolerance {
            let q = mdp.backup(&v);
            let qf = QFunction { n_states: ns, n_actions: na, alpha: cfg.alpha, gamma: mdp.gamma, q };
            return Ok((qf, SolveReport { iterations: residuals.len(), residual, residuals }));
        }
    }
    Err(PolicyError::NotConverged { iterations: residuals.len(), residual })
}

/// `softmax(Q(s, ·) / α)`.
pub fn qmdp_distribution(q: &QFunction, s: usize) -> Vec<f64> {
    softmax_with_temperature(q.row(s), q.alpha)
}

/// Samples an action at state `s`; returns it with the action distribution.
pub fn qmdp_act<R: Rng + ?Sized>(q: &QFunction, s: usize, rng: &mut R) -> (usize, Vec<f64>) {
    let p = qmdp_distribution(q, s);
    (sample_index(&p, rng.random()), p)
}
