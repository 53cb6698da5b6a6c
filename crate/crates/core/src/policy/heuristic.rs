//! Posture-distance heuristic: favour the finger whose joints are already closest to
//! the posture that reaches the target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bomi::{HandPose, FINGERS, JOINTS_PER_FINGER};
use crate::iohmm::Nudge;
use crate::numeric::sample_index;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub tau: f64,
    /// Distances below this are raised to it before inversion.
    pub distance_floor: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig { tau: 1.0, distance_floor: 1e-9 }
    }
}

/// Per-finger sum of squared joint differences.
pub fn finger_distances(onset: &HandPose, optimal: &HandPose) -> [f64; FINGERS] {
    let mut d = [0.0; FINGERS];
    for (f, df) in d.iter_mut().enumerate() {
        *df = (0..JOINTS_PER_FINGER).map(|j| (onset.joint(f, j) - optimal.joint(f, j)).powi(2)).sum();
    }
    d
}

/// Softmax of inverse distances at temperature `tau`, over fingers thumb → pinky.
pub fn heuristic_distribution(distances: &[f64; FINGERS], cfg: &HeuristicConfig) -> [f64; FINGERS] {
    assert!(cfg.tau > 0.0, "heuristic temperature must be positive");
    let score = distances.map(|d| 1.0 / d.max(cfg.distance_floor) / cfg.tau);
    let m = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = score.map(|s| (s - m).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

/// Samples a finger nudge (never [`Nudge::NONE`]) and returns it with its distribution.
pub fn heuristic_nudge<R: Rng + ?Sized>(
    onset: &HandPose,
    optimal: &HandPose,
    cfg: &HeuristicConfig,
    rng: &mut R,
) -> (Nudge, [f64; FINGERS]) {
    let p = heuristic_distribution(&finger_distances(onset, optimal), cfg);
    let finger = 1 + sample_index(&p, rng.random());
    (Nudge::finger(finger), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bomi::NUM_JOINTS;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_built_distances_match_direct_exponentiation() {
        let d = [1.0, 2.0, 4.0, 8.0, 16.0];
        let p = heuristic_distribution(&d, &HeuristicConfig { tau: 1.0, distance_floor: 1e-9 });
        let e: Vec<f64> = d.iter().map(|v: &f64| (1.0 / v).exp()).collect();
        let z: f64 = e.iter().sum();
        for (a, b) in p.iter().zip(&e) {
            assert!((a - b / z).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_distances_are_uniform() {
        let p = heuristic_distribution(&[0.3; 5], &HeuristicConfig::default());
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_temperature_selects_closest_finger() {
        let cfg = HeuristicConfig { tau: 1e-4, ..Default::default() };
        let p = heuristic_distribution(&[0.5, 0.2, 0.3, 0.9, 1.0], &cfg);
        assert!(p[1] > 1.0 - 1e-12);
    }

    #[test]
    fn zero_distance_is_floored() {
        let p = heuristic_distribution(&[0.0, 0.0, 1.0, 1.0, 1.0], &HeuristicConfig::default());
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distances_sum_per_finger() {
        let mut q = [0.0; NUM_JOINTS];
        q[4..8].copy_from_slice(&[1.0, 1.0, 0.0, 2.0]);
        let d = finger_distances(&HandPose(q), &HandPose::zeros());
        assert_eq!(d, [0.0, 6.0, 0.0, 0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn never_returns_no_nudge(joints in prop::array::uniform20(-2.0f64..2.0), seed in any::<u64>(), tau in 0.01f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = HeuristicConfig { tau, ..Default::default() };
            let (n, p) = heuristic_nudge(&HandPose(joints), &HandPose::zeros(), &cfg, &mut rng);
            prop_assert!(n.index() >= 1 && n.index() <= 5);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
