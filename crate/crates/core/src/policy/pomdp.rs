//! Planning problem over `(skill rank, previous target, current target)`.

use serde::{Deserialize, Serialize};

use super::mdp::Mdp;
use super::{PolicyError, Result};
use crate::bomi::{slope_angle, Target, TargetId};
use crate::iohmm::{InputVector, IohmmModel, Nudge, NUM_NUDGES};

/// Ordered `(previous, current)` target pair.
pub type TargetPair = (TargetId, TargetId);

/// All 12 ordered pairs of distinct targets, row-major by previous target.
pub const TARGET_PAIRS: [TargetPair; 12] = {
    let mut out = [(TargetId(0), TargetId(0)); 12];
    let mut k = 0;
    let mut a = 1;
    while a <= 4 {
        let mut b = 1;
        while b <= 4 {
            if a != b {
                out[k] = (TargetId(a), TargetId(b));
                k += 1;
            }
            b += 1;
        }
        a += 1;
    }
    out
};

const N_PAIRS: usize = TARGET_PAIRS.len();

pub fn pair_index(prev: TargetId, cur: TargetId) -> Option<usize> {
    TARGET_PAIRS.iter().position(|&p| p == (prev, cur))
}

fn pair_slope(k: usize) -> f64 {
    let (a, b) = TARGET_PAIRS[k];
    let ta = Target::by_id(a).expect("known target");
    let tb = Target::by_id(b).expect("known target");
    slope_angle(&ta, &tb).expect("distinct targets")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w_sot: f64,
    pub w_g: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { w_sot: 2.0, w_g: 1.0 }
    }
}

/// `μ_RE + w_SoT · μ_SoT` of state `h` under input `x`.
pub fn immediate_cost(model: &IohmmModel, h: usize, x: &InputVector, w_sot: f64) -> f64 {
    let m = model.emission_mean(h, x);
    m[0] + w_sot * m[1]
}

/// The assembled decision problem. Skill indices are ranks (0 = best).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpSpec {
    pub mdp: Mdp,
    pub n_skill: usize,
    pub weights: RewardWeights,
    /// Rank → original state index of the model the problem was built from.
    pub ordering: Vec<usize>,
}

impl PomdpSpec {
    pub fn n_pairs(&self) -> usize {
        N_PAIRS
    }

    pub fn index(&self, h: usize, pair: usize) -> usize {
        h * N_PAIRS + pair
    }

    pub fn state_index(&self, h: usize, prev: TargetId, cur: TargetId) -> Option<usize> {
        (h < self.n_skill).then_some(())?;
        pair_index(prev, cur).map(|p| self.index(h, p))
    }

    /// `(rank, pair index)` of state `s`.
    pub fn decode(&self, s: usize) -> (usize, usize) {
        (s / N_PAIRS, s % N_PAIRS)
    }
}

/// Builds the planning problem from a trained model and its state ordering.
///
/// Skill transitions come from the model under `(slope(prev → cur), a)`; the next
/// target is uniform over the three targets other than the current one. The reward
/// is `−(C_imm + w_g · C_gen)` where `C_gen` is the expected generalisation cost
/// `Σ_h' P(h' | h, x) · Σ_{pairs, a'} C_imm(h', pair, a')`.
pub fn build_pomdp(model: &IohmmModel, ordering: &[usize], weights: RewardWeights, gamma: f64) -> Result<PomdpSpec> {
    let n = model.n_states();
    let mut seen = vec![false; n];
    if ordering.len() != n || !ordering.iter().all(|&o| o < n && !std::mem::replace(&mut seen[o], true)) {
        return Err(PolicyError::InvalidMdp("ordering is not a permutation of the model states".into()));
    }
    let ranked = model.permuted(ordering);
    let na = NUM_NUDGES;
    let ns = n * N_PAIRS;

    let inputs: Vec<Vec<InputVector>> = (0..N_PAIRS)
        .map(|k| Nudge::all().map(|a| InputVector::new(pair_slope(k), a)).collect())
        .collect();
    let c_g: Vec<f64> = (0..n)
        .map(|h| inputs.iter().flatten().map(|x| immediate_cost(&ranked, h, x, weights.w_sot)).sum())
        .collect();
    // successor pairs of pair k: (cur, next) for next ≠ cur
    let successors: Vec<Vec<usize>> = TARGET_PAIRS
        .iter()
        .map(|&(_, cur)| TARGET_PAIRS.iter().enumerate().filter(|(_, p)| p.0 == cur).map(|(j, _)| j).collect())
        .collect();

    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for h in 0..n {
        for k in 0..N_PAIRS {
            let s = h * N_PAIRS + k;
            for (a, x) in inputs[k].iter().enumerate() {
                let ph = ranked.transition_probs(h, x);
                let c_imm = immediate_cost(&ranked, h, x, weights.w_sot);
                let c_gen: f64 = ph.iter().zip(&c_g).map(|(p, c)| p * c).sum();
                reward[s * na + a] = -(c_imm + weights.w_g * c_gen);
                let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
                let p_target = 1.0 / successors[k].len() as f64;
                for (h2, p) in ph.iter().enumerate() {
                    for &k2 in &successors[k] {
                        row[h2 * N_PAIRS + k2] += p * p_target;
                    }
                }
            }
        }
    }
    let mdp = Mdp::new(ns, na, transition, reward, gamma)?;
    Ok(PomdpSpec { mdp, n_skill: n, weights, ordering: ordering.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::{EmissionParams, MnlParams};

    fn toy() -> IohmmModel {
        let mut t0 = MnlParams::zeros(2);
        t0.intercepts[0] = 0.7;
        t0.weights[0][3] = 1.1;
        let mut t1 = MnlParams::zeros(2);
        t1.weights[1][0] = -0.4;
        let mut e0 = EmissionParams::constant([0.2, 0.1], [[0.01, 0.0], [0.0, 0.01]]);
        e0.coef[0][0] = 0.05;
        let mut e1 = EmissionParams::constant([0.9, 0.6], [[0.02, 0.0], [0.0, 0.02]]);
        e1.coef[1][2] = -0.2;
        IohmmModel::new(MnlParams::zeros(2), vec![t0, t1], vec![e0, e1]).unwrap()
    }

    #[test]
    fn pairs_are_distinct_and_complete() {
        assert_eq!(TARGET_PAIRS.len(), 12);
        for (i, a) in TARGET_PAIRS.iter().enumerate() {
            assert_ne!(a.0, a.1);
            assert!(TARGET_PAIRS[i + 1..].iter().all(|b| b != a));
        }
        assert_eq!(pair_index(TargetId(1), TargetId(2)), Some(0));
        assert_eq!(pair_index(TargetId(4), TargetId(3)), Some(11));
        assert_eq!(pair_index(TargetId(2), TargetId(2)), None);
    }

    #[test]
    fn seven_states_give_84() {
        let n = 7;
        let m = IohmmModel::new(
            MnlParams::zeros(n),
            vec![MnlParams::zeros(n); n],
            vec![EmissionParams::constant([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]); n],
        )
        .unwrap();
        let spec = build_pomdp(&m, &(0..n).collect::<Vec<_>>(), RewardWeights::default(), 0.98).unwrap();
        assert_eq!(spec.mdp.n_states(), 84);
        assert_eq!(spec.mdp.n_actions(), 6);
        // zero emissions: constant reward
        for s in 0..84 {
            for a in 0..6 {
                assert_eq!(spec.mdp.reward(s, a), 0.0);
            }
        }
    }

    #[test]
    fn slices_sum_to_one_and_respect_target_dynamics() {
        let spec = build_pomdp(&toy(), &[1, 0], RewardWeights::default(), 0.98).unwrap();
        for s in 0..spec.mdp.n_states() {
            let (_, k) = spec.decode(s);
            let cur = TARGET_PAIRS[k].1;
            for a in 0..6 {
                let row = spec.mdp.transition(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (s2, p) in row.iter().enumerate() {
                    let (_, k2) = spec.decode(s2);
                    if TARGET_PAIRS[k2].0 != cur {
                        assert_eq!(*p, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn toy_reward_matches_hand_evaluation() {
        let m = toy();
        let w = RewardWeights::default();
        let spec = build_pomdp(&m, &[0, 1], w, 0.98).unwrap();
        // state (h=1, T3 → T1), action 2
        let k = pair_index(TargetId(3), TargetId(1)).unwrap();
        let slope = (4.5f64 - 0.5).atan2(0.5 - 2.5);
        let mut x = [0.0; 7];
        x[0] = slope;
        x[3] = 1.0;
        let mean = |h: usize, x: &[f64; 7]| -> [f64; 2] {
            let e = &m.emissions[h];
            let dot = |r: usize| e.intercept[r] + e.coef[r].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            [dot(0), dot(1)]
        };
        let c_imm = |h: usize, x: &[f64; 7]| {
            let mu = mean(h, x);
            mu[0] + 2.0 * mu[1]
        };
        let mut c_g = [0.0; 2];
        for (hh, cg) in c_g.iter_mut().enumerate() {
            for a in &crate::bomi::TARGETS {
                for b in &crate::bomi::TARGETS {
                    if a.id == b.id {
                        continue;
                    }
                    for nudge in 0..6 {
                        let mut y = [0.0; 7];
                        y[0] = (b.position[1] - a.position[1]).atan2(b.position[0] - a.position[0]);
                        y[1 + nudge] = 1.0;
                        *cg += c_imm(hh, &y);
                    }
                }
            }
        }
        // row h=1 of the transition: logits [0, w·x] with w = weights[1]
        let l1 = -0.4 * slope;
        let p1 = l1.exp() / (1.0 + l1.exp());
        let expected = -(c_imm(1, &x) + (1.0 - p1) * c_g[0] + p1 * c_g[1]);
        let got = spec.mdp.reward(spec.index(1, k), 2);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn bad_ordering_rejected() {
        assert!(build_pomdp(&toy(), &[0, 0], RewardWeights::default(), 0.98).is_err());
        assert!(build_pomdp(&toy(), &[0], RewardWeights::default(), 0.98).is_err());
    }
}
