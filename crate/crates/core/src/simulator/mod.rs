//! The block/trial training protocol run against simulated learners.
//!
//! A learner is a ranked IOHMM used generatively: each trial its latent skill emits
//! `[RE, SoT]` under the trial input and then transitions. A planner (possibly a
//! different model) supplies the belief filter and, for the QMDP arm, the solved
//! soft Q-function.

mod compare;
mod demo;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bomi::{trial_slope, BomiMap, HandPose, Target, TargetId, NUM_JOINTS, TARGETS};
use crate::iohmm::{order_states, default_input_grid, InputVector, IohmmModel, Nudge, Observation, Sequence, Step, NUM_NUDGES};
use crate::metrics::{first_window_crossing, trials_to_threshold, Crossing, DEFAULT_CONVERGENCE_WINDOW};
use crate::policy::{
    belief_update, build_pomdp, expected_latent_state, heuristic_nudge, immediate_cost, predict_only,
    select_nudge, soft_value_iteration, BeliefOrdering, BeliefState, HeuristicConfig, PolicyError, PomdpSpec,
    QFunction, RewardWeights, SolveConfig, SolveReport, DEFAULT_GAMMA,
};
use crate::rng::{stream, StreamRng};

pub use compare::{
    compare_policies, mastery_trial, run_arm, summarise_arm, tune_alpha_gamma, ArmSummary, ComparisonReport,
    TuningPoint, DEFAULT_ALPHA_GRID, DEFAULT_GAMMA_GRID,
};
pub use demo::{demo_model, synthetic_calibration, synthetic_map};

const STREAM_TARGETS: u64 = 0x7a26;
const STREAM_LEARNER: u64 = 0x1ea2;
const STREAM_POLICY: u64 = 0x9013;

/// Default mastery threshold on the expected latent state.
pub const MASTERY_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Control,
    Heuristic,
    Qmdp,
    UniformRandom,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [PolicyKind::Control, PolicyKind::Heuristic, PolicyKind::Qmdp, PolicyKind::UniformRandom];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Control => "control",
            PolicyKind::Heuristic => "heuristic",
            PolicyKind::Qmdp => "qmdp",
            PolicyKind::UniformRandom => "uniform-random",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected control, heuristic, qmdp or uniform-random)"))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub blocks: usize,
    pub trials_per_block: usize,
    pub targets: Vec<TargetId>,
    pub policy: PolicyKind,
    pub seed: u64,
    pub belief_ordering: BeliefOrdering,
    pub heuristic: HeuristicConfig,
    /// Per-joint SD (radians) of the synthetic onset pose at the best skill rank;
    /// grows linearly with rank.
    pub onset_noise: f64,
    /// RE threshold for trials-to-threshold.
    pub re_threshold: f64,
    pub sot_threshold: f64,
    pub convergence_window: usize,
    pub mastery_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            blocks: 8,
            trials_per_block: 60,
            targets: TARGETS.iter().map(|t| t.id).collect(),
            policy: PolicyKind::Control,
            seed: 0,
            belief_ordering: BeliefOrdering::default(),
            heuristic: HeuristicConfig::default(),
            onset_noise: 0.05,
            re_threshold: 0.3,
            sot_threshold: 0.2,
            convergence_window: DEFAULT_CONVERGENCE_WINDOW,
            mastery_threshold: MASTERY_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn n_trials(&self) -> usize {
        self.blocks * self.trials_per_block
    }
}

/// A model prepared for planning: ranked states, the assembled problem and its solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planner {
    /// The model with states relabelled by rank.
    pub model: IohmmModel,
    pub spec: PomdpSpec,
    pub q: QFunction,
    pub report: SolveReport,
}

impl Planner {
    pub fn new(model: &IohmmModel, weights: RewardWeights, gamma: f64, solve: &SolveConfig) -> Result<Self, PolicyError> {
        let ordering = order_states(model, &default_input_grid());
        let spec = build_pomdp(model, &ordering, weights, gamma)?;
        let (q, report) = soft_value_iteration(&spec.mdp, solve)?;
        Ok(Planner { model: model.permuted(&ordering), spec, q, report })
    }

    pub fn with_defaults(model: &IohmmModel) -> Result<Self, PolicyError> {
        Self::new(model, RewardWeights::default(), DEFAULT_GAMMA, &SolveConfig::default())
    }

    /// Reassembles a planner from a model and an already solved Q-function.
    pub fn from_parts(model: &IohmmModel, q: QFunction, weights: RewardWeights) -> Result<Self, PolicyError> {
        let ordering = order_states(model, &default_input_grid());
        let spec = build_pomdp(model, &ordering, weights, q.gamma)?;
        if q.n_states != spec.mdp.n_states() || q.n_actions != spec.mdp.n_actions() {
            return Err(PolicyError::InvalidMdp("Q-function does not match the model's state space".into()));
        }
        q.validate()?;
        let report = SolveReport { iterations: 0, residual: 0.0, residuals: Vec::new() };
        Ok(Planner { model: model.permuted(&ordering), spec, q, report })
    }
}

/// The simulated learner and the planner used by every arm.
#[derive(Debug, Clone)]
pub struct Setup {
    /// Learner model with states relabelled by rank.
    pub learner: IohmmModel,
    pub planner: Planner,
    pub map: BomiMap,
}

impl Setup {
    pub fn new(learner: &IohmmModel, planner: Planner, map: BomiMap) -> Self {
        let ordering = order_states(learner, &default_input_grid());
        Setup { learner: learner.permuted(&ordering), planner, map }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub block: usize,
    pub prev: Option<TargetId>,
    pub cur: TargetId,
    pub slope: f64,
    pub nudge: Nudge,
    /// Learner's rank at the trial.
    pub true_state: usize,
    /// Observation clipped at zero.
    pub obs: Observation,
    /// Planner belief at trial onset.
    pub belief: Vec<f64>,
    pub expected_state: f64,
    /// `μ_RE + w_SoT μ_SoT` of the learner's true state under the trial input.
    pub immediate_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub cumulative_cost: f64,
    pub mean_re: f64,
    pub mean_sot: f64,
    pub trials_to_re_threshold: Option<usize>,
    pub trials_to_sot_threshold: Option<usize>,
    pub mastery_trial: Option<usize>,
    /// Trials where the observation was degenerate and only the prediction was applied.
    pub belief_fallbacks: usize,
    /// Fraction of trials where the belief's mode equals the learner's rank.
    pub belief_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub policy: PolicyKind,
    pub episode: u64,
    pub records: Vec<TrialOutcome>,
    pub summary: EpisodeSummary,
}

impl RolloutResult {
    /// Training sequence of `(input, observation)` pairs, one per block.
    pub fn to_sequences(&self) -> Vec<Sequence> {
        let mut out = Vec::new();
        let mut cur: Vec<Step> = Vec::new();
        let mut block = usize::MAX;
        for r in &self.records {
            if r.block != block && !cur.is_empty() {
                out.push(Sequence::new(std::mem::take(&mut cur)).expect("non-empty"));
            }
            block = r.block;
            cur.push(Step { input: InputVector::new(r.slope, r.nudge), obs: r.obs });
        }
        if !cur.is_empty() {
            out.push(Sequence::new(cur).expect("non-empty"));
        }
        out
    }
}

/// Targets for one block: first uniform over `targets`, then uniform excluding the previous.
pub fn sample_target_sequence<R: Rng + ?Sized>(targets: &[TargetId], n: usize, rng: &mut R) -> Vec<TargetId> {
    assert!(targets.len() >= 2, "need at least two targets");
    let mut out: Vec<TargetId> = Vec::with_capacity(n);
    for _ in 0..n {
        let next = match out.last() {
            None => targets[rng.random_range(0..targets.len())],
            Some(&prev) => {
                let k = rng.random_range(0..targets.len() - 1);
                let i = targets.iter().position(|&t| t == prev).expect("previous target is listed");
                targets[if k >= i { k + 1 } else { k }]
            }
        };
        out.push(next);
    }
    out
}

fn mode(p: &[f64]) -> usize {
    (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap_or(0)
}

/// Synthetic onset posture: the posture that reaches the previous target (or the centre
/// pose) perturbed with noise growing with the learner's rank.
fn onset_pose(map: &BomiMap, prev: Option<TargetId>, rank: usize, noise: f64, rng: &mut StreamRng) -> HandPose {
    let base = match prev {
        Some(id) => map.optimal_posture(&Target::by_id(id).expect("known target")),
        None => map.center,
    };
    let sd = noise * (1 + rank) as f64;
    let mut q = base.0;
    for v in q.iter_mut().take(NUM_JOINTS) {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        *v += sd * z;
    }
    HandPose(q)
}

/// Runs one episode. Target draws and learner noise depend only on `(cfg.seed,
/// episode)`, so arms that differ only in `cfg.policy` share them.
pub fn run_episode(cfg: &ExperimentConfig, setup: &Setup, episode: u64) -> RolloutResult {
    let mut target_rng = stream(cfg.seed, &[STREAM_TARGETS, episode]);
    let mut learner_rng = stream(cfg.seed, &[STREAM_LEARNER, episode]);
    let mut policy_rng = stream(cfg.seed, &[STREAM_POLICY, episode]);
    let targets: Vec<Vec<TargetId>> =
        (0..cfg.blocks).map(|_| sample_target_sequence(&cfg.targets, cfg.trials_per_block, &mut target_rng)).collect();
    let planner = &setup.planner;
    let w_sot = planner.spec.weights.w_sot;

    let slope_of = |prev: Option<TargetId>, cur: TargetId| {
        let c = Target::by_id(cur).expect("known target");
        let p = prev.map(|id| Target::by_id(id).expect("known target"));
        trial_slope(p.as_ref(), &c).expect("consecutive targets differ")
    };

    let first = targets.first().and_then(|b| b.first()).copied();
    let Some(first) = first else {
        return summarise(cfg, Vec::new(), 0, episode);
    };
    let x0 = InputVector::new(slope_of(None, first), Nudge::NONE);
    let mut h = setup.learner.sample_initial(&x0, &mut learner_rng);
    let mut belief = BeliefState::initial(&planner.model, &x0, None, first);
    let mut records = Vec::with_capacity(cfg.n_trials());
    let mut fallbacks = 0;

    let flat: Vec<(usize, Option<TargetId>, TargetId)> = targets
        .iter()
        .enumerate()
        .flat_map(|(b, seq)| (0..seq.len()).map(move |k| (b, if k == 0 { None } else { Some(seq[k - 1]) }, seq[k])))
        .collect();
    for (trial, &(block, prev, cur)) in flat.iter().enumerate() {
        let slope = slope_of(prev, cur);
        let nudge = match cfg.policy {
            PolicyKind::Control => Nudge::NONE,
            PolicyKind::UniformRandom => Nudge::new(policy_rng.random_range(0..NUM_NUDGES as u8)).expect("in range"),
            PolicyKind::Heuristic => {
                let onset = onset_pose(&setup.map, prev, h, cfg.onset_noise, &mut policy_rng);
                let opt = setup.map.optimal_posture(&Target::by_id(cur).expect("known target"));
                heuristic_nudge(&onset, &opt, &cfg.heuristic, &mut policy_rng).0
            }
            PolicyKind::Qmdp => select_nudge(&belief, &planner.q, &planner.spec, &mut policy_rng).0,
        };
        let x = InputVector::new(slope, nudge);
        let cost = immediate_cost(&setup.learner, h, &x, w_sot);
        let (next_h, raw) = setup.learner.sample_step(h, &x, &mut learner_rng);
        records.push(TrialOutcome {
            trial,
            block,
            prev,
            cur,
            slope,
            nudge,
            true_state: h,
            obs: raw.clipped(),
            belief: belief.skill.clone(),
            expected_state: expected_latent_state(&belief.skill),
            immediate_cost: cost,
        });
        let next_targets = match flat.get(trial + 1) {
            Some(&(_, p, c)) => (p, c),
            None => (None, cur),
        };
        belief = match belief_update(&planner.model, &belief, &x, &raw, next_targets, cfg.belief_ordering) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("trial {trial}: {e}; applying prediction only");
                fallbacks += 1;
                predict_only(&planner.model, &belief, &x, next_targets)
            }
        };
        h = next_h;
    }
    let mut result = summarise(cfg, records, fallbacks, episode);
    result.policy = cfg.policy;
    result
}

fn summarise(cfg: &ExperimentConfig, records: Vec<TrialOutcome>, fallbacks: usize, episode: u64) -> RolloutResult {
    let n = records.len().max(1) as f64;
    let re: Vec<f64> = records.iter().map(|r| r.obs.re).collect();
    let sot: Vec<f64> = records.iter().map(|r| r.obs.sot).collect();
    let es: Vec<f64> = records.iter().map(|r| r.expected_state).collect();
    let summary = EpisodeSummary {
        cumulative_cost: records.iter().map(|r| r.immediate_cost).sum(),
        mean_re: re.iter().sum::<f64>() / n,
        mean_sot: sot.iter().sum::<f64>() / n,
        trials_to_re_threshold: trials_to_threshold(&re, cfg.re_threshold, cfg.convergence_window),
        trials_to_sot_threshold: trials_to_threshold(&sot, cfg.sot_threshold, cfg.convergence_window),
        mastery_trial: first_window_crossing(&es, cfg.mastery_threshold, cfg.convergence_window, Crossing::Below),
        belief_fallbacks: fallbacks,
        belief_accuracy: records.iter().filter(|r| mode(&r.belief) == r.true_state).count() as f64 / n,
    };
    RolloutResult { policy: cfg.policy, episode, records, summary }
}
