//! Live-session message protocol. Every message is a JSON object with a `type` tag, the
//! `session_id` and a per-sender monotonic `seq`:
//!
//! ```json
//! {"type":"pose-sample","session_id":"p01","seq":812,"t_ms":8120.0,"pose":[0.1, ...]}
//! ```

use serde::{Deserialize, Serialize};
use skillnudge_core::bomi::{HandPose, TargetId};
use skillnudge_core::iohmm::Nudge;
use skillnudge_core::simulator::PolicyKind;

pub const BURST_MS: f64 = 150.0;
pub const BURST_GAP_MS: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Calibration,
    Familiarization,
    Training,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        resume: bool,
    },
    CalibrationSample {
        pose: HandPose,
    },
    CalibrationDone {},
    PoseSample {
        /// Client clock in milliseconds.
        t_ms: f64,
        pose: HandPose,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: ServerMessage,
}

/// Nudge cue timing relative to cue delivery: burst, gap, burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueSchedule {
    pub first_burst_ms: f64,
    pub gap_ms: f64,
    pub second_burst_ms: f64,
}

impl Default for CueSchedule {
    fn default() -> Self {
        CueSchedule { first_burst_ms: BURST_MS, gap_ms: BURST_GAP_MS, second_burst_ms: BURST_MS }
    }
}

impl CueSchedule {
    pub fn total_ms(&self) -> f64 {
        self.first_burst_ms + self.gap_ms + self.second_burst_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapSource {
    Session,
    Loaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrialEndCause {
    /// The cursor settled inside the target square.
    Capture,
    /// The cursor settled outside the target after moving.
    Stable,
    TimeCap,
    /// No movement and no capture within the maximum trial time.
    Timeout,
}

impl TrialEndCause {
    pub fn name(self) -> &'static str {
        match self {
            TrialEndCause::Capture => "capture",
            TrialEndCause::Stable => "stable",
            TrialEndCause::TimeCap => "time-cap",
            TrialEndCause::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ServerMessage {
    Hello {
        phase: Phase,
        trial: usize,
        total_trials: usize,
        policy: PolicyKind,
        sample_rate_hz: f64,
        familiarization_ms: f64,
        resumed: bool,
    },
    CalibrationDone {
        samples: usize,
        source: MapSource,
        familiarization_ms: f64,
    },
    /// Server-side mapping output for a pose sample.
    Cursor {
        t_ms: f64,
        cursor: [f64; 2],
        phase: Phase,
    },
    TargetAssigned {
        trial: usize,
        block: usize,
        prev_target: Option<TargetId>,
        target: TargetId,
        position: [f64; 2],
        nudge: Nudge,
    },
    NudgeCue {
        trial: usize,
        /// 1 = thumb … 5 = pinky.
        finger: usize,
        delay_ms: f64,
        schedule: CueSchedule,
    },
    TrialResult {
        trial: usize,
        re: f64,
        sot: Option<f64>,
        end_cause: TrialEndCause,
        duration_ms: f64,
        samples: usize,
        expected_state: f64,
        belief: Vec<f64>,
    },
    SessionSummary {
        trials: usize,
        mean_re: f64,
        mean_sot: Option<f64>,
        mastery_trial: Option<usize>,
        belief_fallbacks: usize,
        drift_warnings: usize,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::Hello { .. } => "hello",
            ServerMessage::CalibrationDone { .. } => "calibration-done",
            ServerMessage::Cursor { .. } => "cursor",
            ServerMessage::TargetAssigned { .. } => "target-assigned",
            ServerMessage::NudgeCue { .. } => "nudge-cue",
            ServerMessage::TrialResult { .. } => "trial-result",
            ServerMessage::SessionSummary { .. } => "session-summary",
            ServerMessage::Error { .. } => "error",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn client_messages_use_flat_tagged_objects() {
        let m: ClientEnvelope = serde_json::from_value(json!({
            "type": "pose-sample", "session_id": "p1", "seq": 4, "t_ms": 10.0, "pose": vec![0.0; 20]
        }))
        .unwrap();
        assert_eq!(m.session_id, "p1");
        assert_eq!(m.seq, 4);
        assert!(matches!(m.body, ClientMessage::PoseSample { t_ms, .. } if t_ms == 10.0));
        let h: ClientEnvelope = serde_json::from_str(r#"{"type":"hello","session_id":"p1","seq":0}"#).unwrap();
        assert_eq!(h.body, ClientMessage::Hello { resume: false });
        let d: ClientEnvelope = serde_json::from_str(r#"{"type":"calibration-done","session_id":"p1","seq":9}"#).unwrap();
        assert_eq!(d.body, ClientMessage::CalibrationDone {});
    }

    #[test]
    fn rejects_short_poses_and_unknown_types() {
        let short = json!({"type": "calibration-sample", "session_id": "p", "seq": 1, "pose": [0.0, 1.0]});
        assert!(serde_json::from_value::<ClientEnvelope>(short).is_err());
        let unknown = json!({"type": "teleport", "session_id": "p", "seq": 1});
        assert!(serde_json::from_value::<ClientEnvelope>(unknown).is_err());
    }

    #[test]
    fn server_messages_round_trip_with_kind_tag() {
        let msgs = vec![
            ServerMessage::NudgeCue { trial: 3, finger: 2, delay_ms: 0.0, schedule: CueSchedule::default() },
            ServerMessage::Error { message: "x".into() },
            ServerMessage::TargetAssigned {
                trial: 0,
                block: 0,
                prev_target: None,
                target: TargetId(2),
                position: [2.5, 2.5],
                nudge: Nudge::NONE,
            },
        ];
        for body in msgs {
            let env = ServerEnvelope { session_id: "s".into(), seq: 7, body };
            let v = serde_json::to_value(&env).unwrap();
            assert_eq!(v["type"], env.body.kind());
            assert_eq!(v["seq"], 7);
            assert_eq!(serde_json::from_value::<ServerEnvelope>(v).unwrap(), env);
        }
    }

    #[test]
    fn cue_schedule_is_burst_gap_burst() {
        let c = CueSchedule::default();
        assert_eq!((c.first_burst_ms, c.gap_ms, c.second_burst_ms), (150.0, 2000.0, 150.0));
        assert_eq!(c.total_ms(), 2300.0);
    }
}
