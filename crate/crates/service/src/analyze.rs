//! Delimited-text reports from trial logs: metric curves per policy group, per-session
//! trials-to-threshold and mastery, synergy (VAF) tables and, given a model, ranked
//! state-transition matrices.
//!
//! Rows are ordered by key and numbers use the shortest round-trip formatting, so the
//! same input always yields byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use skillnudge_core::bomi::HandPose;
use skillnudge_core::iohmm::{default_input_grid, directed_slopes, extract_stm, order_states, IohmmModel, Nudge};
use skillnudge_core::metrics::{first_window_crossing, pcs_for_variance, trials_to_threshold, vaf_curve, Crossing};

use crate::config::Thresholds;
use crate::trial_log::TrialLogRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    /// File name → contents.
    pub files: BTreeMap<String, String>,
}

impl Report {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            crate::store::write_atomic(&dir.join(name), body.as_bytes())?;
        }
        Ok(())
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub struct LogSummary {
    pub skipped_lines: usize,
    pub partial_tail: bool,
}

pub fn analyze(records: &[TrialLogRecord], summary: &LogSummary, model: Option<&IohmmModel>, th: &Thresholds) -> Report {
    let mut files = BTreeMap::new();
    let mut by_session: BTreeMap<&str, Vec<&TrialLogRecord>> = BTreeMap::new();
    for r in records {
        by_session.entry(&r.session_id).or_default().push(r);
    }

    let mut curves: BTreeMap<(&str, usize), Vec<&TrialLogRecord>> = BTreeMap::new();
    for r in records {
        curves.entry((r.policy.name(), r.trial)).or_default().push(r);
    }
    let mut s = String::from("policy,trial,sessions,mean_re,mean_sot,mean_expected_state\n");
    for ((policy, trial), rs) in &curves {
        let re = mean(rs.iter().map(|r| r.re));
        let sot = mean(rs.iter().filter_map(|r| r.sot));
        let es = mean(rs.iter().map(|r| r.expected_state));
        writeln!(s, "{policy},{trial},{},{},{},{}", rs.len(), opt(re), opt(sot), opt(es)).unwrap();
    }
    files.insert("curves.csv".to_string(), s);

    let mut s = String::from(
        "session_id,policy,trials,mean_re,mean_sot,trials_to_re_threshold,trials_to_sot_threshold,mastery_trial\n",
    );
    for (id, rs) in &by_session {
        let re: Vec<f64> = rs.iter().map(|r| r.re).collect();
        let sot: Vec<f64> = rs.iter().filter_map(|r| r.sot).collect();
        let es: Vec<f64> = rs.iter().map(|r| r.expected_state).collect();
        writeln!(
            s,
            "{id},{},{},{},{},{},{},{}",
            rs[0].policy,
            rs.len(),
            opt(mean(re.iter().copied())),
            opt(mean(sot.iter().copied())),
            opt(trials_to_threshold(&re, th.re, th.window)),
            opt(trials_to_threshold(&sot, th.sot, th.window)),
            opt(first_window_crossing(&es, th.mastery, th.window, Crossing::Below)),
        )
        .unwrap();
    }
    files.insert("sessions.csv".to_string(), s);

    let mut vaf = String::from("session_id,block,poses,components,vaf\n");
    let mut syn = String::from("session_id,block,poses,components_for_threshold\n");
    for (id, rs) in &by_session {
        let mut blocks: BTreeMap<usize, Vec<HandPose>> = BTreeMap::new();
        for r in rs {
            if let Some(p) = r.onset_pose {
                blocks.entry(r.block).or_default().push(p);
            }
        }
        for (block, poses) in &blocks {
            let Ok(curve) = vaf_curve(poses) else { continue };
            for (k, v) in curve.iter().enumerate() {
                writeln!(vaf, "{id},{block},{},{},{v}", poses.len(), k + 1).unwrap();
            }
            if let Ok(k) = pcs_for_variance(poses, th.vaf) {
                writeln!(syn, "{id},{block},{},{k}", poses.len()).unwrap();
            }
        }
    }
    files.insert("vaf.csv".to_string(), vaf);
    files.insert("synergies.csv".to_string(), syn);

    if let Some(m) = model {
        let ordering = order_states(m, &default_input_grid());
        let mut s = String::from("slope_index,slope,nudge,from,to,probability\n");
        for (i, &slope) in directed_slopes().iter().enumerate() {
            for nudge in Nudge::all() {
                let stm = extract_stm(m, slope, nudge, &ordering);
                for (from, row) in stm.iter().enumerate() {
                    for (to, p) in row.iter().enumerate() {
                        writeln!(s, "{i},{slope},{nudge},{from},{to},{p}").unwrap();
                    }
                }
            }
        }
        files.insert("stm.csv".to_string(), s);
    }

    let s = format!(
        "key,value\nrecords,{}\nsessions,{}\nskipped_lines,{}\npartial_tail,{}\n",
        records.len(),
        by_session.len(),
        summary.skipped_lines,
        summary.partial_tail
    );
    files.insert("summary.csv".to_string(), s);
    Report { files }
}
