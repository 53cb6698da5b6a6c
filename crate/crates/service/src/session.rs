//! Per-participant live-session state machine.
//!
//! [`Session::handle`] consumes one client message and returns the server messages to
//! send, the trial records to append and whether the state should be checkpointed. It
//! performs no I/O; see [`crate::store`] for persistence.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skillnudge_core::bomi::{calibrate, trial_slope, BomiMap, CalibrationSet, HandPose, Target, TargetId, TARGETS};
use skillnudge_core::iohmm::{InputVector, Nudge, Observation, NUM_NUDGES};
use skillnudge_core::metrics::{
    compute_re, compute_sot, detect_capture, detect_movement_start, detect_trial_end, first_window_crossing,
    CursorTrajectory, Crossing, EndCause, TrajectorySample, DEFAULT_CONVERGENCE_WINDOW,
};
use skillnudge_core::policy::{belief_update, expected_latent_state, heuristic_nudge, predict_only, select_nudge, BeliefState};
use skillnudge_core::rng::{stream, StreamRng};
use skillnudge_core::simulator::{sample_target_sequence, Planner, PolicyKind, MASTERY_THRESHOLD};

use crate::config::SessionConfig;
use crate::protocol::{ClientEnvelope, ClientMessage, CueSchedule, MapSource, Phase, ServerEnvelope, ServerMessage, TrialEndCause};
use crate::trial_log::TrialLogRecord;

const STREAM_TARGETS: u64 = 0x5e55_7a26;
const STREAM_POLICY: u64 = 0x5e55_9013;

/// Immutable artifacts shared by all sessions.
#[derive(Debug, Clone)]
pub struct Artifacts {
    /// Used when a session's own calibration is too short.
    pub map: Option<BomiMap>,
    pub planner: Planner,
}

/// Stable 64-bit key of a session id.
pub fn session_key(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Target, policy RNG stream for a session.
pub fn session_rngs(seed: u64, session_id: &str) -> (StreamRng, StreamRng) {
    let k = session_key(session_id);
    (stream(seed, &[STREAM_TARGETS, k]), stream(seed, &[STREAM_POLICY, k]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ActiveTrial {
    index: usize,
    block: usize,
    prev: Option<TargetId>,
    cur: TargetId,
    nudge: Nudge,
    onset_pose: Option<HandPose>,
    belief: Vec<f64>,
    onset_unix_ms: u64,
    /// Samples are not checkpointed; a resumed trial restarts its trajectory.
    #[serde(skip)]
    samples: Vec<TrajectorySample>,
    #[serde(skip)]
    first_t_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub phase: Phase,
    next_seq: u64,
    #[serde(skip)]
    last_client_seq: Option<u64>,
    calibration: Vec<HandPose>,
    map: Option<BomiMap>,
    map_source: Option<MapSource>,
    familiarization_start_ms: Option<f64>,
    last_pose: Option<HandPose>,
    targets_block: Option<usize>,
    block_targets: Vec<TargetId>,
    belief: Option<BeliefState>,
    active: Option<ActiveTrial>,
    pub completed: usize,
    target_rng: StreamRng,
    policy_rng: StreamRng,
    re_sum: f64,
    sot_sum: f64,
    sot_count: usize,
    expected_states: Vec<f64>,
    pub belief_fallbacks: usize,
    pub drift_warnings: usize,
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outcome {
    pub messages: Vec<ServerEnvelope>,
    pub records: Vec<TrialLogRecord>,
    pub checkpoint: bool,
}

pub struct Session {
    state: SessionState,
    artifacts: Arc<Artifacts>,
    cfg: Arc<SessionConfig>,
}

fn slope(prev: Option<TargetId>, cur: TargetId) -> f64 {
    let c = Target::by_id(cur).expect("known target");
    let p = prev.map(|id| Target::by_id(id).expect("known target"));
    trial_slope(p.as_ref(), &c).expect("consecutive targets differ")
}

impl Session {
    pub fn new(session_id: &str, artifacts: Arc<Artifacts>, cfg: Arc<SessionConfig>) -> Self {
        let (target_rng, policy_rng) = session_rngs(cfg.seed, session_id);
        let state = SessionState {
            session_id: session_id.to_string(),
            phase: Phase::Calibration,
            next_seq: 0,
            last_client_seq: None,
            calibration: Vec::new(),
            map: None,
            map_source: None,
            familiarization_start_ms: None,
            last_pose: None,
            targets_block: None,
            block_targets: Vec::new(),
            belief: None,
            active: None,
            completed: 0,
            target_rng,
            policy_rng,
            re_sum: 0.0,
            sot_sum: 0.0,
            sot_count: 0,
            expected_states: Vec::new(),
            belief_fallbacks: 0,
            drift_warnings: 0,
        };
        Session { state, artifacts, cfg }
    }

    pub fn restore(checkpoint: &str, artifacts: Arc<Artifacts>, cfg: Arc<SessionConfig>) -> Result<Self, serde_json::Error> {
        let state: SessionState = serde_json::from_str(checkpoint)?;
        Ok(Session { state, artifacts, cfg })
    }

    pub fn checkpoint(&self) -> String {
        serde_json::to_string(&self.state).expect("session state serialises")
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn session_id(&self) -> &str {
        &self.state.session_id
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    /// Message that does not belong to this session's sequence (e.g. a bad envelope).
    pub fn error(&mut self, message: String) -> ServerEnvelope {
        self.envelope(ServerMessage::Error { message })
    }

    fn envelope(&mut self, body: ServerMessage) -> ServerEnvelope {
        let seq = self.state.next_seq;
        self.state.next_seq += 1;
        ServerEnvelope { session_id: self.state.session_id.clone(), seq, body }
    }

    fn send(&mut self, out: &mut Outcome, body: ServerMessage) {
        let env = self.envelope(body);
        out.messages.push(env);
    }

    fn fail(&mut self, out: &mut Outcome, message: impl Into<String>) {
        let message = message.into();
        log::warn!("session {}: {message}", self.state.session_id);
        self.send(out, ServerMessage::Error { message });
    }

    pub fn handle(&mut self, msg: ClientEnvelope, now_unix_ms: u64) -> Outcome {
        let mut out = Outcome::default();
        if msg.session_id != self.state.session_id {
            self.fail(&mut out, format!("message for session {} sent to session {}", msg.session_id, self.state.session_id));
            return out;
        }
        if self.state.last_client_seq.is_some_and(|s| msg.seq <= s) {
            let last = self.state.last_client_seq.unwrap_or_default();
            self.fail(&mut out, format!("sequence number {} does not follow {last}", msg.seq));
            return out;
        }
        self.state.last_client_seq = Some(msg.seq);
        match msg.body {
            ClientMessage::Hello { .. } => self.on_hello(&mut out),
            ClientMessage::CalibrationSample { pose } => match self.state.phase {
                Phase::Calibration => self.state.calibration.push(pose),
                _ => self.fail(&mut out, "calibration is over"),
            },
            ClientMessage::CalibrationDone {} => self.on_calibration_done(&mut out),
            ClientMessage::PoseSample { t_ms, pose } => self.on_pose(&mut out, t_ms, pose, now_unix_ms),
        }
        out
    }

    fn on_hello(&mut self, out: &mut Outcome) {
        let hello = ServerMessage::Hello {
            phase: self.state.phase,
            trial: self.state.completed,
            total_trials: self.cfg.n_trials(),
            policy: self.cfg.policy,
            sample_rate_hz: self.cfg.sample_rate_hz,
            familiarization_ms: self.cfg.familiarization_ms,
            resumed: self.state.next_seq > 0,
        };
        self.send(out, hello);
        if let Some(active) = self.state.active.as_mut() {
            active.samples.clear();
            active.first_t_ms = None;
            let active = active.clone();
            self.announce(out, &active);
        }
    }

    fn on_calibration_done(&mut self, out: &mut Outcome) {
        if self.state.phase != Phase::Calibration {
            return self.fail(out, "calibration is over");
        }
        let samples = self.state.calibration.len();
        let own = if samples >= self.cfg.min_calibration_samples {
            CalibrationSet::new(std::mem::take(&mut self.state.calibration)).and_then(|c| calibrate(&c))
        } else {
            Err(skillnudge_core::bomi::BomiError::CalibrationFailed(format!("{samples} samples")))
        };
        let (map, source) = match (own, &self.artifacts.map) {
            (Ok(m), _) => (m, MapSource::Session),
            (Err(e), Some(m)) => {
                log::info!("session {}: using loaded map ({e})", self.state.session_id);
                (m.clone(), MapSource::Loaded)
            }
            (Err(e), None) => return self.fail(out, format!("calibration failed and no map is loaded: {e}")),
        };
        self.state.calibration.clear();
        self.state.map = Some(map);
        self.state.map_source = Some(source);
        self.state.phase = Phase::Familiarization;
        let familiarization_ms = self.cfg.familiarization_ms;
        self.send(out, ServerMessage::CalibrationDone { samples, source, familiarization_ms });
        out.checkpoint = true;
    }

    fn on_pose(&mut self, out: &mut Outcome, t_ms: f64, pose: HandPose, now_unix_ms: u64) {
        let phase = self.state.phase;
        let Some(map) = self.state.map.as_ref().filter(|_| matches!(phase, Phase::Familiarization | Phase::Training)) else {
            return self.fail(out, format!("pose samples are not accepted during {phase:?}"));
        };
        if !t_ms.is_finite() {
            return self.fail(out, "sample time is not finite");
        }
        let cursor = map.cursor_position(&pose);
        self.send(out, ServerMessage::Cursor { t_ms, cursor, phase });
        self.state.last_pose = Some(pose);
        match phase {
            Phase::Familiarization => {
                let start = *self.state.familiarization_start_ms.get_or_insert(t_ms);
                if t_ms - start >= self.cfg.familiarization_ms {
                    self.state.phase = Phase::Training;
                    self.begin_trial(out, now_unix_ms);
                    out.checkpoint = true;
                }
            }
            Phase::Training => {
                let Some(active) = self.state.active.as_mut() else { return };
                let first = *active.first_t_ms.get_or_insert(t_ms);
                let t = (t_ms - first) / 1000.0;
                if active.samples.last().is_some_and(|s| t <= s.t) {
                    return self.fail(out, format!("sample time {t_ms} ms does not increase"));
                }
                active.samples.push(TrajectorySample { t, pos: cursor });
                if let Some((end, cause)) = self.trial_end() {
                    self.finish_trial(out, end, cause, now_unix_ms);
                }
            }
            Phase::Calibration | Phase::Complete => unreachable!(),
        }
    }

    fn ensure_block(&mut self, block: usize) {
        if self.state.targets_block != Some(block) {
            let targets: Vec<TargetId> = TARGETS.iter().map(|t| t.id).collect();
            self.state.block_targets = sample_target_sequence(&targets, self.cfg.trials_per_block, &mut self.state.target_rng);
            self.state.targets_block = Some(block);
        }
    }

    fn targets_of(&mut self, index: usize) -> (usize, Option<TargetId>, TargetId) {
        let block = index / self.cfg.trials_per_block;
        let k = index % self.cfg.trials_per_block;
        self.ensure_block(block);
        let b = &self.state.block_targets;
        (block, if k == 0 { None } else { Some(b[k - 1]) }, b[k])
    }

    fn begin_trial(&mut self, out: &mut Outcome, now_unix_ms: u64) {
        let index = self.state.completed;
        let (block, prev, cur) = self.targets_of(index);
        let planner = &self.artifacts.planner;
        let belief = self
            .state
            .belief
            .get_or_insert_with(|| BeliefState::initial(&planner.model, &InputVector::new(slope(prev, cur), Nudge::NONE), prev, cur))
            .clone();
        debug_assert_eq!((belief.prev, belief.cur), (prev, cur));
        let map = self.state.map.as_ref().expect("map is set before training");
        let onset_pose = self.state.last_pose;
        let rng = &mut self.state.policy_rng;
        let nudge = match self.cfg.policy {
            PolicyKind::Control => Nudge::NONE,
            PolicyKind::UniformRandom => Nudge::new(rng.random_range(0..NUM_NUDGES as u8)).expect("in range"),
            PolicyKind::Heuristic => {
                let onset = onset_pose.unwrap_or(map.center);
                let opt = map.optimal_posture(&Target::by_id(cur).expect("known target"));
                heuristic_nudge(&onset, &opt, &self.cfg.heuristic, rng).0
            }
            PolicyKind::Qmdp => select_nudge(&belief, &planner.q, &planner.spec, rng).0,
        };
        let active = ActiveTrial {
            index,
            block,
            prev,
            cur,
            nudge,
            onset_pose,
            belief: belief.skill,
            onset_unix_ms: now_unix_ms,
            samples: Vec::new(),
            first_t_ms: None,
        };
        self.announce(out, &active);
        self.state.active = Some(active);
    }

    fn announce(&mut self, out: &mut Outcome, a: &ActiveTrial) {
        let position = Target::by_id(a.cur).expect("known target").position;
        let assigned = ServerMessage::TargetAssigned {
            trial: a.index,
            block: a.block,
            prev_target: a.prev,
            target: a.cur,
            position,
            nudge: a.nudge,
        };
        self.send(out, assigned);
        if a.nudge != Nudge::NONE {
            let cue = ServerMessage::NudgeCue {
                trial: a.index,
                finger: a.nudge.index(),
                delay_ms: self.cfg.nudge_delay_ms,
                schedule: CueSchedule::default(),
            };
            self.send(out, cue);
        }
    }

    fn trial_end(&self) -> Option<(usize, TrialEndCause)> {
        let a = self.state.active.as_ref()?;
        if a.samples.len() < 2 {
            return None;
        }
        let traj = CursorTrajectory::new(a.samples.clone()).ok()?;
        let rule = &self.cfg.trial_end;
        let target = Target::by_id(a.cur).expect("known target");
        if let Some(i) = detect_capture(&traj, 0, &target, rule) {
            return Some((i, TrialEndCause::Capture));
        }
        if let Some(m) = detect_movement_start(&traj, 0, rule) {
            if let Ok(end) = detect_trial_end(&traj, a.samples[m].t, rule) {
                match end.cause {
                    EndCause::Stable => return Some((end.index, TrialEndCause::Stable)),
                    EndCause::TimeCap => return Some((end.index, TrialEndCause::TimeCap)),
                    EndCause::Truncated => {}
                }
            }
        }
        let last = a.samples.len() - 1;
        (a.samples[last].t * 1000.0 >= self.cfg.max_trial_ms).then_some((last, TrialEndCause::Timeout))
    }

    fn finish_trial(&mut self, out: &mut Outcome, end: usize, cause: TrialEndCause, now_unix_ms: u64) {
        let a = self.state.active.take().expect("active trial");
        let n_samples = a.samples.len();
        let mut samples = a.samples;
        samples.truncate(end + 1);
        let traj = CursorTrajectory::new(samples).expect("validated samples");
        let target = Target::by_id(a.cur).expect("known target");
        let re = compute_re(&traj, &target, end).expect("end within trajectory");
        let sot = compute_sot(&traj, end).ok();
        let s = traj.samples();
        let duration_ms = s[end].t * 1000.0;

        if n_samples >= 10 && end > 0 {
            let rate = end as f64 / (s[end].t - s[0].t);
            let expected = self.cfg.sample_rate_hz;
            if ((rate - expected) / expected).abs() > self.cfg.drift_tolerance {
                self.state.drift_warnings += 1;
                log::warn!("session {} trial {}: sample rate {rate:.1} Hz deviates from {expected} Hz", self.state.session_id, a.index);
            }
        }

        let total = self.cfg.n_trials();
        let next = if a.index + 1 < total {
            let (_, p, c) = self.targets_of(a.index + 1);
            (p, c)
        } else {
            (None, a.cur)
        };
        let model = &self.artifacts.planner.model;
        let belief = self.state.belief.take().expect("belief is set during training");
        let x = InputVector::new(slope(a.prev, a.cur), a.nudge);
        let updated = match sot {
            Some(sot) => belief_update(model, &belief, &x, &Observation::new(re, sot), next, self.cfg.belief_ordering).map_err(|e| e.to_string()),
            None => Err("SoT undefined".to_string()),
        };
        let updated = updated.unwrap_or_else(|e| {
            log::warn!("session {} trial {}: {e}; applying prediction only", self.state.session_id, a.index);
            self.state.belief_fallbacks += 1;
            predict_only(model, &belief, &x, next)
        });
        self.state.belief = Some(updated.clone());

        let expected_state = expected_latent_state(&a.belief);
        self.state.expected_states.push(expected_state);
        self.state.re_sum += re;
        if let Some(v) = sot {
            self.state.sot_sum += v;
            self.state.sot_count += 1;
        }
        self.state.completed += 1;
        out.records.push(TrialLogRecord {
            session_id: self.state.session_id.clone(),
            trial: a.index,
            block: a.block,
            policy: self.cfg.policy,
            prev_target: a.prev,
            cur_target: a.cur,
            nudge: a.nudge,
            onset_pose: a.onset_pose,
            trajectory: traj.samples().to_vec(),
            re,
            sot,
            end_cause: Some(cause.name().to_string()),
            belief: a.belief.clone(),
            expected_state,
            true_state: None,
            onset_unix_ms: Some(a.onset_unix_ms),
            end_unix_ms: Some(now_unix_ms),
        });
        self.send(
            out,
            ServerMessage::TrialResult {
                trial: a.index,
                re,
                sot,
                end_cause: cause,
                duration_ms,
                samples: end + 1,
                expected_state: expected_latent_state(&updated.skill),
                belief: updated.skill,
            },
        );
        out.checkpoint = true;
        if self.state.completed == total {
            self.state.phase = Phase::Complete;
            let summary = self.summary();
            self.send(out, summary);
        } else {
            self.begin_trial(out, now_unix_ms);
        }
    }

    fn summary(&self) -> ServerMessage {
        let st = &self.state;
        ServerMessage::SessionSummary {
            trials: st.completed,
            mean_re: if st.completed > 0 { st.re_sum / st.completed as f64 } else { 0.0 },
            mean_sot: (st.sot_count > 0).then(|| st.sot_sum / st.sot_count as f64),
            mastery_trial: first_window_crossing(&st.expected_states, MASTERY_THRESHOLD, DEFAULT_CONVERGENCE_WINDOW, Crossing::Below),
            belief_fallbacks: st.belief_fallbacks,
            drift_warnings: st.drift_warnings,
        }
    }
}
