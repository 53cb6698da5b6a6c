//! Skill-state modelling and nudge planning for body-machine-interface training.
//!
//! The crate is organised bottom-up:
//!
//! - [`bomi`]: calibration of the 20-joint → 2-D cursor map and task-space geometry.
//! - [`metrics`]: trial metrics (reaching error, straightness), trial-end detection and
//!   synergy analysis.
//! - [`iohmm`]: the input-output hidden Markov model of skill acquisition, its
//!   generalized-EM trainer and interpretation utilities.
//! - [`policy`]: heuristic nudging, POMDP assembly, soft value iteration, QMDP action
//!   selection and belief filtering.
//! - [`simulator`]: the full block/trial protocol against simulated learners and policy
//!   benchmarking.

pub mod bomi;
pub mod iohmm;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod simulator;

mod numeric;
mod pca;

pub use bomi::{BomiMap, CalibrationSet, HandPose, Target, TargetId};
pub use iohmm::{InputVector, IohmmModel, Nudge, Observation};
