//! Line-delimited JSON trial logs: one complete [`TrialLogRecord`] per line.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skillnudge_core::bomi::{trial_slope, HandPose, Target, TargetId};
use skillnudge_core::iohmm::{InputVector, Nudge, Observation, Sequence, Step};
use skillnudge_core::metrics::TrajectorySample;
use skillnudge_core::simulator::{PolicyKind, RolloutResult};

const BELIEF_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLogRecord {
    pub session_id: String,
    pub trial: usize,
    pub block: usize,
    pub policy: PolicyKind,
    pub prev_target: Option<TargetId>,
    pub cur_target: TargetId,
    pub nudge: Nudge,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_pose: Option<HandPose>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectorySample>,
    pub re: f64,
    /// `None` when the trajectory's start and end coincide.
    pub sot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_cause: Option<String>,
    /// Planner belief over ranked skill states at trial onset.
    pub belief: Vec<f64>,
    pub expected_state: f64,
    /// Simulated learner's rank (simulated logs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_state: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_unix_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_unix_ms: Option<u64>,
}

impl TrialLogRecord {
    pub fn validate(&self) -> Result<(), String> {
        Target::by_id(self.cur_target).map_err(|e| e.to_string())?;
        if let Some(p) = self.prev_target {
            Target::by_id(p).map_err(|e| e.to_string())?;
            if p == self.cur_target {
                return Err("previous and current target coincide".into());
            }
        }
        if !self.re.is_finite() || self.re < 0.0 || self.sot.is_some_and(|s| !s.is_finite() || s < 0.0) {
            return Err("RE/SoT must be finite and non-negative".into());
        }
        let total: f64 = self.belief.iter().sum();
        if self.belief.is_empty() || self.belief.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > BELIEF_TOLERANCE {
            return Err(format!("belief is not a distribution (sum {total})"));
        }
        Ok(())
    }

    pub fn input(&self) -> InputVector {
        let cur = Target::by_id(self.cur_target).expect("validated target");
        let prev = self.prev_target.map(|p| Target::by_id(p).expect("validated target"));
        InputVector::new(trial_slope(prev.as_ref(), &cur).expect("validated targets"), self.nudge)
    }
}

/// Converts simulated rollouts to log records; the session id is `<policy>-<episode>`.
pub fn records_from_rollout(r: &RolloutResult) -> Vec<TrialLogRecord> {
    r.records
        .iter()
        .map(|t| TrialLogRecord {
            session_id: format!("{}-{}", r.policy, r.episode),
            trial: t.trial,
            block: t.block,
            policy: r.policy,
            prev_target: t.prev,
            cur_target: t.cur,
            nudge: t.nudge,
            onset_pose: None,
            trajectory: Vec::new(),
            re: t.obs.re,
            sot: Some(t.obs.sot),
            end_cause: None,
            belief: t.belief.clone(),
            expected_state: t.expected_state,
            true_state: Some(t.true_state),
            onset_unix_ms: None,
            end_unix_ms: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogReadReport {
    pub records: Vec<TrialLogRecord>,
    pub skipped: Vec<SkippedLine>,
    /// A final line without a terminating newline was ignored.
    pub partial_tail: bool,
}

impl LogReadReport {
    pub fn merge(&mut self, other: LogReadReport) {
        self.records.extend(other.records);
        self.skipped.extend(other.skipped);
        self.partial_tail |= other.partial_tail;
    }
}

/// Parses a log. Blank lines are ignored, malformed or out-of-order records are
/// skipped and reported, and an unterminated final line is treated as an interrupted
/// append.
pub fn parse_log(text: &str) -> LogReadReport {
    let mut report = LogReadReport::default();
    let mut last_trial: HashMap<String, usize> = HashMap::new();
    let mut segments: Vec<&str> = text.split('\n').collect();
    let tail = segments.pop().unwrap_or_default();
    report.partial_tail = !tail.trim().is_empty();
    for (i, raw) in segments.into_iter().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let rec: TrialLogRecord = match serde_json::from_str(raw) {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push(SkippedLine { line, reason: e.to_string() });
                continue;
            }
        };
        if let Err(reason) = rec.validate() {
            report.skipped.push(SkippedLine { line, reason });
            continue;
        }
        if let Some(&prev) = last_trial.get(&rec.session_id) {
            if rec.trial <= prev {
                let reason = format!("trial {} of session {} does not follow trial {prev}", rec.trial, rec.session_id);
                report.skipped.push(SkippedLine { line, reason });
                continue;
            }
        }
        last_trial.insert(rec.session_id.clone(), rec.trial);
        report.records.push(rec);
    }
    report
}

pub fn read_log(path: &Path) -> std::io::Result<LogReadReport> {
    Ok(parse_log(&std::fs::read_to_string(path)?))
}

/// Append-only writer. Each record is written with a single `write` of the full line
/// and synced before returning.
pub struct LogWriter {
    file: File,
    path: PathBuf,
}

impl LogWriter {
    /// Opens `path` for appending. If a previous writer was interrupted mid-line, a
    /// newline is added first so the fragment stays an isolated malformed line.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let len = file.metadata()?.len();
        if len > 0 {
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(LogWriter { file, path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, rec: &TrialLogRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_string(rec).map_err(std::io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

/// Writes `records` as a fresh log (used for simulated output).
pub fn write_log(path: &Path, records: &[TrialLogRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Groups records into training sequences, one per `(session, block)` in order of
/// first appearance. Records without a SoT are dropped; the count is returned.
pub fn sequences_from_records(records: &[TrialLogRecord]) -> (Vec<Sequence>, usize) {
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut groups: HashMap<(String, usize), Vec<Step>> = HashMap::new();
    let mut dropped = 0;
    for r in records {
        let Some(sot) = r.sot else {
            dropped += 1;
            continue;
        };
        let key = (r.session_id.clone(), r.block);
        let steps = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        steps.push(Step { input: r.input(), obs: Observation::new(r.re, sot) });
    }
    let seqs = order
        .into_iter()
        .map(|k| Sequence::new(groups.remove(&k).expect("grouped")).expect("non-empty group"))
        .collect();
    (seqs, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(session: &str, trial: usize) -> TrialLogRecord {
        TrialLogRecord {
            session_id: session.into(),
            trial,
            block: trial / 60,
            policy: PolicyKind::Control,
            prev_target: if trial.is_multiple_of(60) { None } else { Some(TargetId(1 + (trial % 2) as u8)) },
            cur_target: TargetId(1 + ((trial + 1) % 2) as u8),
            nudge: Nudge::NONE,
            onset_pose: None,
            trajectory: Vec::new(),
            re: 0.5,
            sot: Some(0.25),
            end_cause: None,
            belief: vec![0.25, 0.75],
            expected_state: 0.75,
            true_state: None,
            onset_unix_ms: None,
            end_unix_ms: None,
        }
    }

    fn text(recs: &[TrialLogRecord]) -> String {
        recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
    }

    #[test]
    fn malformed_middle_line_is_skipped_with_line_number() {
        let recs: Vec<_> = (0..3).map(|i| record("s", i)).collect();
        let mut lines: Vec<String> = text(&recs).lines().map(String::from).collect();
        lines[1] = "{\"session_id\": \"s\", broken".into();
        let report = parse_log(&(lines.join("\n") + "\n"));
        assert_eq!(report.records, vec![recs[0].clone(), recs[2].clone()]);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].line, 2);
        assert!(!report.partial_tail);
    }

    #[test]
    fn partial_tail_is_ignored() {
        let recs: Vec<_> = (0..2).map(|i| record("s", i)).collect();
        let full = text(&recs);
        let cut = &full[..full.len() - 10];
        let report = parse_log(cut);
        assert_eq!(report.records, vec![recs[0].clone()]);
        assert!(report.skipped.is_empty());
        assert!(report.partial_tail);
    }

    #[test]
    fn out_of_order_trial_is_skipped() {
        let recs = vec![record("s", 0), record("s", 5), record("s", 3), record("t", 1)];
        let report = parse_log(&text(&recs));
        assert_eq!(report.records.len(), 3);
        assert_eq!(report.skipped[0].line, 3);
    }

    #[test]
    fn invalid_belief_and_nudge_are_rejected() {
        let mut r = record("s", 0);
        r.belief = vec![0.5, 0.6];
        assert_eq!(parse_log(&text(&[r])).skipped.len(), 1);
        let bad_nudge = serde_json::to_string(&record("s", 0)).unwrap().replace("\"nudge\":0", "\"nudge\":9");
        assert_eq!(parse_log(&(bad_nudge + "\n")).skipped.len(), 1);
    }

    #[test]
    fn empty_log_is_empty() {
        assert_eq!(parse_log(""), LogReadReport::default());
        assert_eq!(parse_log("\n\n").records.len(), 0);
    }

    #[test]
    fn writer_appends_and_isolates_interrupted_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/s.jsonl");
        let mut w = LogWriter::open(&path).unwrap();
        w.append(&record("s", 0)).unwrap();
        drop(w);
        // simulate a crash mid-append
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"session_id\":\"s\",\"tri").unwrap();
        drop(f);
        assert!(read_log(&path).unwrap().partial_tail);
        let mut w = LogWriter::open(&path).unwrap();
        w.append(&record("s", 1)).unwrap();
        let report = read_log(&path).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].line, 2);
        assert!(!report.partial_tail);
    }

    #[test]
    fn sequences_split_by_session_and_block() {
        let mut recs: Vec<_> = (0..130).map(|i| record("a", i)).collect();
        recs.extend((0..10).map(|i| record("b", i)));
        recs[5].sot = None;
        let (seqs, dropped) = sequences_from_records(&recs);
        assert_eq!(dropped, 1);
        assert_eq!(seqs.iter().map(Sequence::len).collect::<Vec<_>>(), vec![59, 60, 10, 10]);
    }

    proptest! {
        #[test]
        fn record_round_trips(re in 0.0f64..10.0, sot in 0.0f64..5.0, p in 0.0f64..1.0, trial in 0usize..1000) {
            let mut r = record("x", trial);
            r.re = re;
            r.sot = Some(sot);
            r.belief = vec![p, 1.0 - p];
            let report = parse_log(&text(std::slice::from_ref(&r)));
            prop_assert_eq!(report.records, vec![r]);
        }
    }
}
