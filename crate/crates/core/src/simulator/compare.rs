//! Multi-episode arm comparison, mastery analysis and `(α, γ)` tuning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_episode, EpisodeSummary, ExperimentConfig, Planner, PolicyKind, RolloutResult, Setup};
use crate::iohmm::IohmmModel;
use crate::metrics::{first_window_crossing, Crossing};
use crate::policy::{PolicyError, SolveConfig};

pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];
pub const DEFAULT_GAMMA_GRID: [f64; 4] = [0.9, 0.95, 0.98, 0.99];

/// 1-based trial at which the trailing mean of the expected latent state first drops
/// below `threshold`.
pub fn mastery_trial(expected_states: &[f64], threshold: f64, window: usize) -> Option<usize> {
    first_window_crossing(expected_states, threshold, window, Crossing::Below)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub policy: PolicyKind,
    pub n_episodes: usize,
    pub mean_re: Vec<f64>,
    /// Half-width of the normal-approximation 95% interval per trial.
    pub ci_re: Vec<f64>,
    pub mean_sot: Vec<f64>,
    pub ci_sot: Vec<f64>,
    pub mean_expected_state: Vec<f64>,
    pub mean_cumulative_cost: f64,
    pub ci_cumulative_cost: f64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub arms: Vec<ArmSummary>,
}

fn mean_ci(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Runs episodes `0..n_episodes` of one arm in parallel.
pub fn run_arm(base: &ExperimentConfig, setup: &Setup, policy: PolicyKind, n_episodes: usize) -> Vec<RolloutResult> {
    let cfg = ExperimentConfig { policy, ..base.clone() };
    (0..n_episodes as u64).into_par_iter().map(|e| run_episode(&cfg, setup, e)).collect()
}

pub fn summarise_arm(policy: PolicyKind, rollouts: &[RolloutResult]) -> ArmSummary {
    let n_trials = rollouts.iter().map(|r| r.records.len()).min().unwrap_or(0);
    let per_trial = |f: &dyn Fn(&RolloutResult, usize) -> f64| -> (Vec<f64>, Vec<f64>) {
        (0..n_trials).map(|t| mean_ci(rollouts.iter().map(move |r| f(r, t)))).unzip()
    };
    let (mean_re, ci_re) = per_trial(&|r, t| r.records[t].obs.re);
    let (mean_sot, ci_sot) = per_trial(&|r, t| r.records[t].obs.sot);
    let (mean_expected_state, _) = per_trial(&|r, t| r.records[t].expected_state);
    let (mean_cumulative_cost, ci_cumulative_cost) = mean_ci(rollouts.iter().map(|r| r.summary.cumulative_cost));
    ArmSummary {
        policy,
        n_episodes: rollouts.len(),
        mean_re,
        ci_re,
        mean_sot,
        ci_sot,
        mean_expected_state,
        mean_cumulative_cost,
        ci_cumulative_cost,
        episodes: rollouts.iter().map(|r| r.summary.clone()).collect(),
    }
}

/// Runs every arm on episodes `0..n_episodes`. Episode `e` of every arm sees the same
/// target sequence and learner noise stream.
pub fn compare_policies(base: &ExperimentConfig, setup: &Setup, arms: &[PolicyKind], n_episodes: usize) -> ComparisonReport {
    assert!(n_episodes >= 1, "need at least one episode per arm");
    let arms = arms.iter().map(|&k| summarise_arm(k, &run_arm(base, setup, k, n_episodes))).collect();
    ComparisonReport { arms }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub alpha: f64,
    pub gamma: f64,
    pub mean_cumulative_cost: f64,
}

/// Grid search over `(α, γ)` for the QMDP arm; lower mean cumulative cost is better.
/// Returns all points in grid order and the index of the best one.
pub fn tune_alpha_gamma(
    setup: &Setup,
    planner_model: &IohmmModel,
    base: &ExperimentConfig,
    alphas: &[f64],
    gammas: &[f64],
    n_episodes: usize,
) -> Result<(Vec<TuningPoint>, usize), PolicyError> {
    let weights = setup.planner.spec.weights;
    let mut points = Vec::with_capacity(alphas.len() * gammas.len());
    for &alpha in alphas {
        for &gamma in gammas {
            let planner = Planner::new(planner_model, weights, gamma, &SolveConfig { alpha, ..SolveConfig::default() })?;
            let s = Setup { planner, ..setup.clone() };
            let rollouts = run_arm(base, &s, PolicyKind::Qmdp, n_episodes);
            let cost = rollouts.iter().map(|r| r.summary.cumulative_cost).sum::<f64>() / n_episodes.max(1) as f64;
            points.push(TuningPoint { alpha, gamma, mean_cumulative_cost: cost });
        }
    }
    let best = (0..points.len())
        .min_by(|&a, &b| points[a].mean_cumulative_cost.total_cmp(&points[b].mean_cumulative_cost))
        .ok_or_else(|| PolicyError::InvalidMdp("empty tuning grid".into()))?;
    Ok((points, best))
}
