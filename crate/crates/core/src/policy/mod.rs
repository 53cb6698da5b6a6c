//! Nudge policies: the posture-distance heuristic and the POMDP pipeline.
//!
//! The planning state is `s = (h, t_prev, t_cur)` with `h` a ranked skill state.
//! [`build_pomdp`] composes the IOHMM skill dynamics with uniform target dynamics,
//! [`soft_value_iteration`] solves the fully observable problem, and at run time a
//! belief over `h` is filtered with [`belief_update`] and turned into a nudge by
//! [`select_nudge`] (QMDP).

mod belief;
mod heuristic;
mod mdp;
mod pomdp;

use thiserror::Error;

use crate::bomi::BomiError;
use crate::iohmm::IohmmError;

pub use belief::{
    belief_update, expected_latent_state, predict_only, select_nudge, BeliefOrdering, BeliefState,
    DEGENERATE_LOG_LIKELIHOOD,
};
pub use heuristic::{heuristic_distribution, heuristic_nudge, finger_distances, HeuristicConfig};
pub use mdp::{qmdp_act, qmdp_distribution, soft_value_iteration, Mdp, QFunction, SolveConfig, SolveReport};
pub use pomdp::{build_pomdp, immediate_cost, PomdpSpec, RewardWeights, TargetPair, TARGET_PAIRS};

/// Default soft-max temperature of value iteration and the action policy.
pub const DEFAULT_ALPHA: f64 = 0.2;
pub const DEFAULT_GAMMA: f64 = 0.98;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid decision problem: {0}")]
    InvalidMdp(String),
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("observation has negligible likelihood under every state (log total {log_total})")]
    DegenerateObservation { log_total: f64 },
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error(transparent)]
    Iohmm(#[from] IohmmError),
    #[error(transparent)]
    Bomi(#[from] BomiError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;
