//! Input-output hidden Markov model of skill acquisition.
//!
//! Latent skill `h_k ∈ {0..N}` evolves trial to trial under the input
//! `x_k = (slope_k, nudge_k)`:
//!
//! - `P(h_0 | x_0)` and `P(h_{k+1} = j | h_k = i, x_k)` are multinomial-logit (softmax)
//!   models with per-class weights and intercepts.
//! - `o_k = [RE_k, SoT_k] | h_k = i, x_k ~ N(V_i x_k + c_i, Σ_i)`.
//!
//! Inputs are encoded as `[slope, one_hot(nudge; 6)]`, so `INPUT_DIM = 7`.

mod emission_fit;
mod inference;
mod interpret;
mod mnl;
mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{log_sum_exp, sample_index, softmax_in_place};

pub use inference::{forward_backward, log_likelihood, Posteriors};
pub use interpret::{default_input_grid, directed_slopes, extract_stm, order_states, state_scores};
pub use train::{
    cross_validate, fold_assignment, gem_fit, mc_train, penalty, CvReport, FitConfig, FitResult,
    McCandidate, McResult,
};

/// Number of nudge categories: 0 = none, 1..=5 = thumb..pinky.
pub const NUM_NUDGES: usize = 6;
pub const INPUT_DIM: usize = 1 + NUM_NUDGES;
pub const OBS_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum IohmmError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("no training sequences")]
    NoSequences,
    #[error("numerical failure in forward pass at step {step}")]
    NumericalFailure { step: usize },
    #[error("objective decreased at iteration {iteration}: {previous} -> {current}")]
    MonotonicityViolation {
        iteration: usize,
        previous: f64,
        current: f64,
        trace: Vec<f64>,
        model: Box<IohmmModel>,
    },
    #[error("all {0} training runs failed: {1}")]
    AllRunsFailed(usize, String),
    #[error("need at least {need} sequences, got {got}")]
    TooFewSequences { need: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, IohmmError>;

/// Nudged finger: 0 = no nudge, 1..=5 = thumb..pinky.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Nudge(u8);

impl Nudge {
    pub const NONE: Nudge = Nudge(0);

    pub fn new(index: u8) -> Option<Nudge> {
        ((index as usize) < NUM_NUDGES).then_some(Nudge(index))
    }

    pub fn finger(finger: usize) -> Nudge {
        assert!((1..NUM_NUDGES).contains(&finger), "finger index {finger} out of range");
        Nudge(finger as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Nudge> {
        (0..NUM_NUDGES as u8).map(Nudge)
    }
}

impl TryFrom<u8> for Nudge {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Nudge::new(v).ok_or_else(|| format!("nudge index {v} out of range 0..=5"))
    }
}

impl From<Nudge> for u8 {
    fn from(n: Nudge) -> u8 {
        n.0
    }
}

impl std::fmt::Display for Nudge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputVector {
    /// Directed slope of the target pair, radians.
    pub slope: f64,
    pub nudge: Nudge,
}

impl InputVector {
    pub fn new(slope: f64, nudge: Nudge) -> Self {
        InputVector { slope, nudge }
    }

    pub fn encode(&self) -> [f64; INPUT_DIM] {
        let mut x = [0.0; INPUT_DIM];
        x[0] = self.slope;
        x[1 + self.nudge.index()] = 1.0;
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub re: f64,
    pub sot: f64,
}

impl Observation {
    pub fn new(re: f64, sot: f64) -> Self {
        Observation { re, sot }
    }

    pub fn as_array(&self) -> [f64; OBS_DIM] {
        [self.re, self.sot]
    }

    /// Both components clipped at zero from below.
    pub fn clipped(&self) -> Self {
        Observation { re: self.re.max(0.0), sot: self.sot.max(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub input: InputVector,
    pub obs: Observation,
}

/// Input/output pairs of one participant run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    steps: Vec<Step>,
}

impl Sequence {
    pub fn new(steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(IohmmError::EmptySequence);
        }
        Ok(Sequence { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Softmax regression over `n` classes: one weight vector and intercept per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlParams {
    pub weights: Vec<[f64; INPUT_DIM]>,
    pub intercepts: Vec<f64>,
}

impl MnlParams {
    pub fn zeros(n: usize) -> Self {
        MnlParams { weights: vec![[0.0; INPUT_DIM]; n], intercepts: vec![0.0; n] }
    }

    pub fn n_classes(&self) -> usize {
        self.intercepts.len()
    }

    pub fn logits(&self, x: &[f64; INPUT_DIM]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect()
    }

    pub fn probs(&self, x: &[f64; INPUT_DIM]) -> Vec<f64> {
        let mut l = self.logits(x);
        softmax_in_place(&mut l);
        l
    }

    pub fn log_probs(&self, x: &[f64; INPUT_DIM]) -> Vec<f64> {
        let l = self.logits(x);
        let z = log_sum_exp(&l);
        l.into_iter().map(|v| v - z).collect()
    }

    fn permuted(&self, ordering: &[usize]) -> Self {
        MnlParams {
            weights: ordering.iter().map(|&o| self.weights[o]).collect(),
            intercepts: ordering.iter().map(|&o| self.intercepts[o]).collect(),
        }
    }

    fn check(&self, n: usize, what: &str) -> Result<()> {
        if self.weights.len() != n || self.intercepts.len() != n {
            return Err(IohmmError::InvalidModel(format!("{what}: expected {n} classes")));
        }
        let finite = self.intercepts.iter().all(|v| v.is_finite())
            && self.weights.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(IohmmError::InvalidModel(format!("{what}: non-finite parameter")));
        }
        Ok(())
    }
}

/// Linear-Gaussian output model of one latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    /// Row r holds the coefficients of output r (0 = RE, 1 = SoT).
    pub coef: [[f64; INPUT_DIM]; OBS_DIM],
    pub intercept: [f64; OBS_DIM],
    pub cov: [[f64; OBS_DIM]; OBS_DIM],
}

impl EmissionParams {
    pub fn constant(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        EmissionParams { coef: [[0.0; INPUT_DIM]; OBS_DIM], intercept: mean, cov }
    }

    pub fn mean(&self, x: &[f64; INPUT_DIM]) -> [f64; OBS_DIM] {
        let mut m = self.intercept;
        for (r, mr) in m.iter_mut().enumerate() {
            *mr += self.coef[r].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        m
    }

    /// `(det, inverse)` of a positive-definite covariance, or an error.
    fn precision(&self) -> Result<(f64, [[f64; 2]; 2])> {
        let [[a, b], [c, d]] = self.cov;
        let det = a * d - b * c;
        if !(a > 0.0 && d > 0.0 && det > 0.0) || (b - c).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(IohmmError::InvalidModel(format!("covariance {:?} is not positive definite", self.cov)));
        }
        Ok((det, [[d / det, -b / det], [-c / det, a / det]]))
    }

    pub fn log_density(&self, x: &[f64; INPUT_DIM], o: &Observation) -> Result<f64> {
        let (det, p) = self.precision()?;
        let m = self.mean(x);
        let r = [o.re - m[0], o.sot - m[1]];
        let q = r[0] * (p[0][0] * r[0] + p[0][1] * r[1]) + r[1] * (p[1][0] * r[0] + p[1][1] * r[1]);
        Ok(-(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64; INPUT_DIM], rng: &mut R) -> Observation {
        let m = self.mean(x);
        let [[a, b], [_, d]] = self.cov;
        let l00 = a.sqrt();
        let l10 = b / l00;
        let l11 = (d - l10 * l10).max(0.0).sqrt();
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        Observation { re: m[0] + l00 * z0, sot: m[1] + l10 * z0 + l11 * z1 }
    }
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
#[cfg(test)]
pub(crate) fn min_eigenvalue_2x2(m: &[[f64; 2]; 2]) -> f64 {
    let tr = m[0][0] + m[1][1];
    let diff = m[0][0] - m[1][1];
    0.5 * tr - (0.25 * diff * diff + m[0][1] * m[0][1]).sqrt()
}

/// Clamps the eigenvalues of a symmetric 2×2 matrix from below.
pub(crate) fn floor_eigenvalues_2x2(m: [[f64; 2]; 2], floor: f64) -> [[f64; 2]; 2] {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let tr = a + d;
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (0.5 * tr + disc, 0.5 * tr - disc);
    if l2 >= floor {
        return [[a, b], [b, d]];
    }
    // eigenvector of l1
    let (vx, vy) = if b.abs() > 1e-300 {
        (l1 - d, b)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let n = (vx * vx + vy * vy).sqrt();
    let (ux, uy) = (vx / n, vy / n);
    let (e1, e2) = (l1.max(floor), l2.max(floor));
    // e1 u uᵀ + e2 u⊥ u⊥ᵀ
    let off = (e1 - e2) * ux * uy;
    [[e1 * ux * ux + e2 * uy * uy, off], [off, e1 * uy * uy + e2 * ux * ux]]
}

/// N-state input-output HMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IohmmModel {
    pub init: MnlParams,
    /// `transitions[i]` gives `P(h' | h = i, x)`.
    pub transitions: Vec<MnlParams>,
    pub emissions: Vec<EmissionParams>,
}

impl IohmmModel {
    pub fn new(init: MnlParams, transitions: Vec<MnlParams>, emissions: Vec<EmissionParams>) -> Result<Self> {
        let m = IohmmModel { init, transitions, emissions };
        m.validate()?;
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.emissions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if n == 0 {
            return Err(IohmmError::InvalidModel("model has no states".into()));
        }
        self.init.check(n, "initial model")?;
        if self.transitions.len() != n {
            return Err(IohmmError::InvalidModel(format!("expected {n} transition rows")));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            t.check(n, &format!("transition row {i}"))?;
        }
        for e in &self.emissions {
            e.precision()?;
            let finite = e.intercept.iter().chain(e.coef.iter().flatten()).all(|v| v.is_finite());
            if !finite {
                return Err(IohmmError::InvalidModel("non-finite emission parameter".into()));
            }
        }
        Ok(())
    }

    pub fn initial_probs(&self, x: &InputVector) -> Vec<f64> {
        self.init.probs(&x.encode())
    }

    pub fn transition_probs(&self, state: usize, x: &InputVector) -> Vec<f64> {
        self.transitions[state].probs(&x.encode())
    }

    pub fn emission_mean(&self, state: usize, x: &InputVector) -> [f64; OBS_DIM] {
        self.emissions[state].mean(&x.encode())
    }

    pub fn emission_log_density(&self, state: usize, x: &InputVector, o: &Observation) -> Result<f64> {
        self.emissions[state].log_density(&x.encode(), o)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, x: &InputVector, rng: &mut R) -> usize {
        sample_index(&self.initial_probs(x), rng.random())
    }

    /// Emits an observation from `state` under `x`, then draws the next state.
    pub fn sample_step<R: Rng + ?Sized>(&self, state: usize, x: &InputVector, rng: &mut R) -> (usize, Observation) {
        let enc = x.encode();
        let obs = self.emissions[state].sample(&enc, rng);
        let next = sample_index(&self.transitions[state].probs(&enc), rng.random());
        (next, obs)
    }

    /// Relabels states so that new state `r` is old state `ordering[r]`.
    pub fn permuted(&self, ordering: &[usize]) -> Self {
        assert_eq!(ordering.len(), self.n_states(), "ordering length mismatch");
        IohmmModel {
            init: self.init.permuted(ordering),
            transitions: ordering.iter().map(|&o| self.transitions[o].permuted(ordering)).collect(),
            emissions: ordering.iter().map(|&o| self.emissions[o].clone()).collect(),
        }
    }
}
