//! Built-in generative models and synthetic calibration data.

use rand_distr::{Distribution, Normal};

use crate::bomi::{calibrate, BomiMap, CalibrationSet, HandPose, NUM_JOINTS};
use crate::iohmm::{EmissionParams, IohmmModel, MnlParams};
use crate::rng::stream;

const STREAM_CALIBRATION: u64 = 0xca1b;

/// Seven ranked skill states where the thumb nudge (action 1) strongly favours moving
/// one rank up and the other actions leave a symmetric random walk. Learners start
/// near the worst rank.
pub fn demo_model() -> IohmmModel {
    let n = 7;
    let thumb = 2; // encoded column of nudge 1
    let mut init = MnlParams::zeros(n);
    init.intercepts[n - 1] = 8.0;
    let transitions = (0..n)
        .map(|h| {
            let mut t = MnlParams::zeros(n);
            for j in 0..n {
                t.intercepts[j] = match j as isize - h as isize {
                    0 => 2.0,
                    -1 | 1 => 0.0,
                    _ => -8.0,
                };
            }
            if h > 0 {
                t.weights[h - 1][thumb] = 3.5;
            }
            if h + 1 < n {
                t.weights[h + 1][thumb] = -3.0;
            }
            t
        })
        .collect();
    let emissions = (0..n)
        .map(|h| {
            let mut e = EmissionParams::constant(
                [0.1 + 0.15 * h as f64, 0.05 + 0.1 * h as f64],
                [[0.05f64.powi(2), 0.0], [0.0, 0.04f64.powi(2)]],
            );
            e.coef[0][0] = 0.02;
            e
        })
        .collect();
    IohmmModel::new(init, transitions, emissions).expect("demo model is valid")
}

/// Calibration postures with independent joints of decreasing spread.
pub fn synthetic_calibration(seed: u64) -> CalibrationSet {
    let mut rng = stream(seed, &[STREAM_CALIBRATION]);
    let poses = (0..60)
        .map(|_| {
            let mut q = [0.0; NUM_JOINTS];
            for (j, v) in q.iter_mut().enumerate() {
                let sd = 0.6 * 0.85f64.powi(j as i32);
                *v = 0.3 + Normal::new(0.0, sd).expect("positive sd").sample(&mut rng);
            }
            HandPose(q)
        })
        .collect();
    CalibrationSet::new(poses).expect("enough postures")
}

pub fn synthetic_map(seed: u64) -> BomiMap {
    calibrate(&synthetic_calibration(seed)).expect("synthetic calibration has full rank")
}
