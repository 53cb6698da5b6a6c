//! Recursive belief over ranked skill states and QMDP nudge selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdp::{qmdp_act, QFunction};
use super::pomdp::PomdpSpec;
use super::{PolicyError, Result};
use crate::bomi::{TargetId, TARGETS};
use crate::iohmm::{InputVector, IohmmModel, Nudge, Observation};
use crate::numeric::{log_sum_exp, sample_index};

/// `ln(1e-300)`: total observation likelihood below this is treated as degenerate.
pub const DEGENERATE_LOG_LIKELIHOOD: f64 = -690.775_527_898_213_7;

const SUM_TOL: f64 = 1e-9;

/// Observed targets plus a distribution over skill ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    /// `None` on the first trial of a block.
    pub prev: Option<TargetId>,
    pub cur: TargetId,
    pub skill: Vec<f64>,
}

impl BeliefState {
    pub fn new(prev: Option<TargetId>, cur: TargetId, skill: Vec<f64>) -> Result<Self> {
        let b = BeliefState { prev, cur, skill };
        b.validate()?;
        Ok(b)
    }

    /// Prior `P(h_0 | x_0)` of a ranked model.
    pub fn initial(model: &IohmmModel, x0: &InputVector, prev: Option<TargetId>, cur: TargetId) -> Self {
        BeliefState { prev, cur, skill: model.initial_probs(x0) }
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.skill.iter().sum();
        if self.skill.is_empty() || self.skill.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > SUM_TOL {
            return Err(PolicyError::InvalidBelief(format!("skill belief {:?} is not a distribution", self.skill)));
        }
        Ok(())
    }
}

/// Where the observation likelihood enters the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeliefOrdering {
    /// `b'(h') ∝ Σ_h P(h' | h, x) · b(h) · P(o | h, x)`.
    #[default]
    CorrectThenPredict,
    /// `b'(h') ∝ P(o | h', x) · Σ_h P(h' | h, x) · b(h)`.
    PredictThenCorrect,
}

fn propagate(model: &IohmmModel, weights: &[f64], x: &InputVector) -> Vec<f64> {
    let n = model.n_states();
    let mut out = vec![0.0; n];
    for (h, w) in weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(model.transition_probs(h, x)) {
            *o += w * p;
        }
    }
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Log-space Bayes correction; fails when the total likelihood is negligible.
fn correct(model: &IohmmModel, prior: &[f64], x: &InputVector, o: &Observation) -> Result<Vec<f64>> {
    let mut logw = Vec::with_capacity(prior.len());
    for (h, p) in prior.iter().enumerate() {
        let ll = model.emission_log_density(h, x, o)?;
        logw.push(if *p > 0.0 { p.ln() + ll } else { f64::NEG_INFINITY });
    }
    let total = log_sum_exp(&logw);
    if !(total >= DEGENERATE_LOG_LIKELIHOOD) {
        return Err(PolicyError::DegenerateObservation { log_total: total });
    }
    Ok(logw.into_iter().map(|l| (l - total).exp()).collect())
}

/// One filter step using the trial's input `x` and raw observation `o`. `model` must
/// be ranked consistently with the belief.
pub fn belief_update(
    model: &IohmmModel,
    belief: &BeliefState,
    x: &InputVector,
    o: &Observation,
    next: (Option<TargetId>, TargetId),
    ordering: BeliefOrdering,
) -> Result<BeliefState> {
    let skill = match ordering {
        BeliefOrdering::CorrectThenPredict => propagate(model, &correct(model, &belief.skill, x, o)?, x),
        BeliefOrdering::PredictThenCorrect => correct(model, &propagate(model, &belief.skill, x), x, o)?,
    };
    Ok(BeliefState { prev: next.0, cur: next.1, skill })
}

/// Transition-only update used when the observation is degenerate.
pub fn predict_only(model: &IohmmModel, belief: &BeliefState, x: &InputVector, next: (Option<TargetId>, TargetId)) -> BeliefState {
    BeliefState { prev: next.0, cur: next.1, skill: propagate(model, &belief.skill, x) }
}

/// QMDP nudge: sample a rank from the belief, then an action from the soft-max policy
/// at `(rank, prev, cur)`. Without a previous target, one is drawn uniformly from the
/// other three. Returns the nudge and the planning state used.
pub fn select_nudge<R: Rng + ?Sized>(belief: &BeliefState, q: &QFunction, spec: &PomdpSpec, rng: &mut R) -> (Nudge, usize) {
    let prev = belief.prev.unwrap_or_else(|| {
        let others: Vec<TargetId> = TARGETS.iter().map(|t| t.id).filter(|&id| id != belief.cur).collect();
        others[rng.random_range(0..others.len())]
    });
    let h = sample_index(&belief.skill, rng.random());
    let s = spec.state_index(h, prev, belief.cur).expect("belief targets form a valid pair");
    let (a, _) = qmdp_act(q, s, rng);
    (Nudge::new(a as u8).expect("action index is a nudge"), s)
}

/// `Σ_i i · b(i)` over ranks.
pub fn expected_latent_state(skill: &[f64]) -> f64 {
    skill.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
}
