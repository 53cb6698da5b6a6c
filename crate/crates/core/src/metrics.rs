//! Trial performance metrics and synergy analysis.
//!
//! - Reaching error (RE): distance from the cursor to the target centre at trial end.
//! - Straightness of trajectory (SoT): largest deviation of the path from the start–end
//!   chord divided by the chord length.
//! - Trial end: first point where the cursor has been stable for a run of samples, or a
//!   fixed time after movement start, whichever comes first.
//! - VAF: cumulative fraction of joint-space variance captured by the top principal
//!   components of a set of hand postures.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bomi::{HandPose, Target, TargetId};
use crate::iohmm::Nudge;
use crate::pca::Pca;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trajectory needs at least 2 samples")]
    TooShort,
    #[error("trajectory timestamps must be strictly increasing (sample {0})")]
    NonMonotonicTime(usize),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("movement start {0} s lies outside the trajectory")]
    StartOutOfRange(f64),
    #[error("end index {index} out of range for {len} samples")]
    EndOutOfRange { index: usize, len: usize },
    #[error("straightness undefined: start and end points coincide")]
    UndefinedSot,
    #[error("need at least {min} postures, got {got}")]
    TooFewPoses { min: usize, got: usize },
    #[error("component count {0} out of range 1..={1}")]
    ComponentCount(usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Seconds.
    pub t: f64,
    /// Task units.
    pub pos: [f64; 2],
}

/// Cursor samples of one trial, nominally at 100 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TrajectorySample>", into = "Vec<TrajectorySample>")]
pub struct CursorTrajectory {
    samples: Vec<TrajectorySample>,
}

impl TryFrom<Vec<TrajectorySample>> for CursorTrajectory {
    type Error = MetricsError;
    fn try_from(v: Vec<TrajectorySample>) -> Result<Self> {
        CursorTrajectory::new(v)
    }
}

impl From<CursorTrajectory> for Vec<TrajectorySample> {
    fn from(t: CursorTrajectory) -> Self {
        t.samples
    }
}

impl CursorTrajectory {
    pub fn new(samples: Vec<TrajectorySample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(MetricsError::TooShort);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.pos[0].is_finite() && s.pos[1].is_finite()) {
                return Err(MetricsError::NonFinite(i));
            }
            if i > 0 && s.t <= samples[i - 1].t {
                return Err(MetricsError::NonMonotonicTime(i));
            }
        }
        Ok(CursorTrajectory { samples })
    }

    /// Builds a trajectory from positions sampled at a fixed rate, starting at t = 0.
    pub fn from_positions(positions: &[[f64; 2]], rate_hz: f64) -> Result<Self> {
        Self::new(
            positions
                .iter()
                .enumerate()
                .map(|(i, &pos)| TrajectorySample { t: i as f64 / rate_hz, pos })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index of the first sample at or after time `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        self.samples.iter().position(|s| s.t >= t - TIME_EPS)
    }
}

const TIME_EPS: f64 = 1e-9;

/// Trial-end and capture thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEndRule {
    /// Consecutive-sample displacement below which the cursor counts as stable.
    pub stability_threshold: f64,
    /// Length of the stable run, in samples.
    pub stable_samples: usize,
    /// Time after movement start at which the trial ends regardless.
    pub time_cap_s: f64,
    /// Per-sample displacement that marks movement start.
    pub movement_threshold: f64,
}

impl Default for TrialEndRule {
    fn default() -> Self {
        TrialEndRule {
            stability_threshold: 0.0025,
            stable_samples: 15,
            time_cap_s: 2.0,
            movement_threshold: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndCause {
    Stable,
    TimeCap,
    /// Neither criterion was reached before the trajectory ran out.
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEnd {
    pub index: usize,
    pub cause: EndCause,
}

impl TrialEnd {
    pub fn truncated(&self) -> bool {
        self.cause == EndCause::Truncated
    }
}

fn displacement(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

/// First index `i ≥ from + run - 1` such that samples `i-run+1..=i` are pairwise
/// consecutive-stable and satisfy `accept`, scanning no further than `until`.
fn first_stable_run(
    s: &[TrajectorySample],
    from: usize,
    until: usize,
    rule: &TrialEndRule,
    accept: impl Fn(&TrajectorySample) -> bool,
) -> Option<usize> {
    let run = rule.stable_samples.max(1);
    let mut len = 0usize;
    for i in from..=until.min(s.len() - 1) {
        let ok = accept(&s[i]);
        len = if !ok {
            0
        } else if len == 0 || displacement(s[i - 1].pos, s[i].pos) >= rule.stability_threshold {
            1
        } else {
            len + 1
        };
        if len >= run {
            return Some(i);
        }
    }
    None
}

/// End of a trial: the last sample of the first stable run starting at or after
/// `movement_start`, or the sample at `movement_start + time_cap_s`, whichever is
/// earlier. If neither occurs, the last sample is returned with
/// [`EndCause::Truncated`].
pub fn detect_trial_end(traj: &CursorTrajectory, movement_start: f64, rule: &TrialEndRule) -> Result<TrialEnd> {
    let s = traj.samples();
    let last = s.len() - 1;
    if movement_start < s[0].t - TIME_EPS || movement_start > s[last].t + TIME_EPS {
        return Err(MetricsError::StartOutOfRange(movement_start));
    }
    let m = traj.index_at(movement_start).unwrap_or(last);
    let cap = traj.index_at(movement_start + rule.time_cap_s);
    if let Some(i) = first_stable_run(s, m, cap.unwrap_or(last), rule, |_| true) {
        return Ok(TrialEnd { index: i, cause: EndCause::Stable });
    }
    Ok(match cap {
        Some(c) => TrialEnd { index: c, cause: EndCause::TimeCap },
        None => TrialEnd { index: last, cause: EndCause::Truncated },
    })
}

/// First sample index at or after `onset` where the per-sample displacement exceeds
/// the movement threshold.
pub fn detect_movement_start(traj: &CursorTrajectory, onset: usize, rule: &TrialEndRule) -> Option<usize> {
    let s = traj.samples();
    (onset.max(1)..s.len()).find(|&i| displacement(s[i - 1].pos, s[i].pos) > rule.movement_threshold)
}

/// Capture: the cursor is stable (same run rule as trial end) with every sample of
/// the run inside the target's grid square. Returns the last index of the first such
/// run at or after `from`.
pub fn detect_capture(traj: &CursorTrajectory, from: usize, target: &Target, rule: &TrialEndRule) -> Option<usize> {
    let s = traj.samples();
    first_stable_run(s, from, s.len() - 1, rule, |p| target.cell_contains(p.pos))
}

pub fn compute_re(traj: &CursorTrajectory, target: &Target, end_index: usize) -> Result<f64> {
    let s = traj.samples();
    let p = s.get(end_index).ok_or(MetricsError::EndOutOfRange { index: end_index, len: s.len() })?;
    Ok(displacement(p.pos, target.position))
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    displacement(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

pub fn compute_sot(traj: &CursorTrajectory, end_index: usize) -> Result<f64> {
    let s = traj.samples();
    if end_index >= s.len() {
        return Err(MetricsError::EndOutOfRange { index: end_index, len: s.len() });
    }
    let (a, b) = (s[0].pos, s[end_index].pos);
    let chord = displacement(a, b);
    if chord < 1e-9 {
        return Err(MetricsError::UndefinedSot);
    }
    let dev = s[..=end_index]
        .iter()
        .map(|p| point_segment_distance(p.pos, a, b))
        .fold(0.0, f64::max);
    Ok(dev / chord)
}

fn principal_variances(poses: &[HandPose]) -> Result<Vec<f64>> {
    if poses.len() < crate::bomi::NUM_JOINTS + 1 {
        return Err(MetricsError::TooFewPoses { min: crate::bomi::NUM_JOINTS + 1, got: poses.len() });
    }
    let rows: Vec<Vec<f64>> = poses.iter().map(|p| p.0.to_vec()).collect();
    Ok(Pca::fit(&rows).variances)
}

fn vaf_from_variances(v: &[f64], k: usize) -> f64 {
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    (v[..k].iter().sum::<f64>() / total).min(1.0)
}

/// Fraction of total joint variance explained by the top `k` principal components.
/// A pose set with zero variance is fully explained (VAF = 1).
pub fn compute_vaf(poses: &[HandPose], k: usize) -> Result<f64> {
    let v = principal_variances(poses)?;
    if k == 0 || k > v.len() {
        return Err(MetricsError::ComponentCount(k, v.len()));
    }
    Ok(vaf_from_variances(&v, k))
}

/// VAF for every k = 1..=20.
pub fn vaf_curve(poses: &[HandPose]) -> Result<Vec<f64>> {
    let v = principal_variances(poses)?;
    Ok((1..=v.len()).map(|k| vaf_from_variances(&v, k)).collect())
}

/// Tolerance applied to the strict `VAF > threshold` comparison so that ratios equal
/// to the threshold in exact arithmetic do not pass on rounding noise.
pub const VAF_COMPARE_EPS: f64 = 1e-9;

/// Smallest k with VAF(k) strictly greater than `threshold`.
pub fn pcs_for_variance(poses: &[HandPose], threshold: f64) -> Result<usize> {
    let curve = vaf_curve(poses)?;
    Ok(curve
        .iter()
        .position(|&v| v > threshold + VAF_COMPARE_EPS)
        .map(|i| i + 1)
        .unwrap_or(curve.len()))
}

/// How the trailing average is compared to the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    AtOrBelow,
    Below,
}

/// 1-based trial count at which the trailing `window`-trial moving average first
/// crosses `threshold`. Only full windows are considered.
pub fn first_window_crossing(series: &[f64], threshold: f64, window: usize, crossing: Crossing) -> Option<usize> {
    let w = window.max(1);
    if series.len() < w {
        return None;
    }
    let mut sum: f64 = series[..w - 1].iter().sum();
    for end in (w - 1)..series.len() {
        sum += series[end];
        if end >= w {
            sum -= series[end - w];
        }
        let avg = sum / w as f64;
        let hit = match crossing {
            Crossing::AtOrBelow => avg <= threshold,
            Crossing::Below => avg < threshold,
        };
        if hit {
            return Some(end + 1);
        }
    }
    None
}

/// Default trailing window for convergence analyses.
pub const DEFAULT_CONVERGENCE_WINDOW: usize = 10;

/// Trials needed for the trailing moving average of `series` to fall to or below
/// `threshold`; `None` if it never does.
pub fn trials_to_threshold(series: &[f64], threshold: f64, window: usize) -> Option<usize> {
    first_window_crossing(series, threshold, window, Crossing::AtOrBelow)
}

/// One reaching trial as recorded by a live session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub prev_target: Option<TargetId>,
    pub cur_target: TargetId,
    pub nudge: Nudge,
    pub trajectory: CursorTrajectory,
    pub onset_pose: HandPose,
    pub re: f64,
    /// `None` when the start and end points coincide.
    pub sot: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bomi::{TargetId, NUM_JOINTS};

    fn traj(points: &[[f64; 2]]) -> CursorTrajectory {
        CursorTrajectory::from_positions(points, 100.0).unwrap()
    }

    #[test]
    fn rejects_bad_trajectories() {
        assert_eq!(CursorTrajectory::from_positions(&[[0.0, 0.0]], 100.0), Err(MetricsError::TooShort));
        let s = vec![
            TrajectorySample { t: 0.0, pos: [0.0, 0.0] },
            TrajectorySample { t: 0.0, pos: [0.0, 0.0] },
        ];
        assert_eq!(CursorTrajectory::new(s), Err(MetricsError::NonMonotonicTime(1)));
    }

    #[test]
    fn stationary_cursor_ends_at_fifteenth_sample() {
        let t = traj(&vec![[1.0, 1.0]; 50]);
        let end = detect_trial_end(&t, 0.0, &TrialEndRule::default()).unwrap();
        assert_eq!(end, TrialEnd { index: 14, cause: EndCause::Stable });
    }

    #[test]
    fn constant_motion_hits_two_second_cap() {
        let pts: Vec<[f64; 2]> = (0..400).map(|i| [0.01 * i as f64, 0.0]).collect();
        let t = traj(&pts);
        let end = detect_trial_end(&t, 0.5, &TrialEndRule::default()).unwrap();
        assert_eq!(end, TrialEnd { index: 250, cause: EndCause::TimeCap });
    }

    #[test]
    fn short_moving_trajectory_is_truncated() {
        let pts: Vec<[f64; 2]> = (0..100).map(|i| [0.01 * i as f64, 0.0]).collect();
        let end = detect_trial_end(&traj(&pts), 0.0, &TrialEndRule::default()).unwrap();
        assert_eq!(end, TrialEnd { index: 99, cause: EndCause::Truncated });
        assert!(end.truncated());
    }

    #[test]
    fn ramp_then_hold() {
        // 30 moving samples then a hold; the stable run starts at the last ramp sample
        let mut pts: Vec<[f64; 2]> = (0..30).map(|i| [0.02 * i as f64, 0.0]).collect();
        pts.extend(std::iter::repeat_n([0.58, 0.0], 40));
        let end = detect_trial_end(&traj(&pts), 0.0, &TrialEndRule::default()).unwrap();
        assert_eq!(end.index, 29 + 14);
    }

    #[test]
    fn start_outside_range_is_error() {
        let t = traj(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(detect_trial_end(&t, 5.0, &TrialEndRule::default()).is_err());
    }

    #[test]
    fn movement_start_and_capture() {
        let target = Target::by_id(TargetId(2)).unwrap();
        let mut pts = vec![[0.5, 0.5]; 10];
        pts.extend((1..=20).map(|i| [0.5 + 0.1 * i as f64, 0.5 + 0.1 * i as f64]));
        pts.extend(std::iter::repeat_n([2.5, 2.5], 20));
        let t = traj(&pts);
        let rule = TrialEndRule::default();
        assert_eq!(detect_movement_start(&t, 0, &rule), Some(10));
        assert_eq!(detect_capture(&t, 0, &target, &rule), Some(29 + 14));
        // stable but outside the square is not a capture
        let other = Target::by_id(TargetId(1)).unwrap();
        assert_eq!(detect_capture(&t, 0, &other, &rule), None);
    }

    #[test]
    fn re_values() {
        let target = Target::by_id(TargetId(2)).unwrap();
        let t = traj(&[[0.0, 0.0], [2.5, 2.5], [3.0, 3.0]]);
        assert_eq!(compute_re(&t, &target, 1).unwrap(), 0.0);
        assert!((compute_re(&t, &target, 2).unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(compute_re(&t, &target, 3).is_err());
    }

    #[test]
    fn sot_straight_and_semicircle() {
        let line: Vec<[f64; 2]> = (0..50).map(|i| [0.1 * i as f64, 0.05 * i as f64]).collect();
        assert!(compute_sot(&traj(&line), 49).unwrap().abs() < 1e-12);

        let n = 1001;
        let arc: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let a = std::f64::consts::PI * (1.0 - i as f64 / (n - 1) as f64);
                [a.cos(), a.sin()]
            })
            .collect();
        assert!((compute_sot(&traj(&arc), n - 1).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn sot_undefined_for_closed_path() {
        let t = traj(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]);
        assert_eq!(compute_sot(&t, 2), Err(MetricsError::UndefinedSot));
    }

    #[test]
    fn trials_to_threshold_cases() {
        assert_eq!(trials_to_threshold(&[0.1; 30], 0.3, 10), Some(10));
        assert_eq!(trials_to_threshold(&[0.5; 30], 0.3, 10), None);
        let dec: Vec<f64> = (0..100).map(|i| 1.0 - 0.01 * i as f64).collect();
        // mean of window ending at e (1-based) is 1 - 0.01 (e - 5.5)
        assert_eq!(trials_to_threshold(&dec, 0.5, 10), Some(56));
        assert_eq!(first_window_crossing(&[0.25; 10], 0.25, 10, Crossing::Below), None);
        assert_eq!(first_window_crossing(&[0.25; 10], 0.25, 10, Crossing::AtOrBelow), Some(10));
    }

    fn rank2_poses() -> Vec<HandPose> {
        (0..40)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.91).cos();
                let mut q = [0.2; NUM_JOINTS];
                for j in 0..NUM_JOINTS {
                    q[j] += a * (j as f64 + 1.0) * 0.1 + b * ((j % 3) as f64 - 1.0);
                }
                HandPose(q)
            })
            .collect()
    }

    #[test]
    fn vaf_rank_two() {
        let poses = rank2_poses();
        assert!((compute_vaf(&poses, 2).unwrap() - 1.0).abs() < 1e-9);
        assert!((compute_vaf(&poses, NUM_JOINTS).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pcs_for_variance(&poses, 0.9).unwrap(), 2);
        assert!(compute_vaf(&poses, 0).is_err());
        assert!(compute_vaf(&poses[..10], 2).is_err());
    }
}
