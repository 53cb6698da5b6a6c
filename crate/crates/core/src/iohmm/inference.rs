//! Scaled forward-backward recursions for the E-step.

use super::{IohmmError, IohmmModel, Result, Sequence, INPUT_DIM};

/// Posterior state marginals of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    n_states: usize,
    len: usize,
    gamma: Vec<f64>,
    xi: Vec<f64>,
    pub log_lik: f64,
}

impl Posteriors {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `P(h_t = · | o_{0..T})`.
    pub fn gamma(&self, t: usize) -> &[f64] {
        &self.gamma[t * self.n_states..(t + 1) * self.n_states]
    }

    /// `P(h_t = i, h_{t+1} = j | o_{0..T})`, for `t < T - 1`.
    pub fn xi(&self, t: usize, i: usize, j: usize) -> f64 {
        let n = self.n_states;
        self.xi[(t * n + i) * n + j]
    }
}

struct Tables {
    /// `enc[t]`
    enc: Vec<[f64; INPUT_DIM]>,
    /// per-step scaled emission likelihoods `exp(log e - max)` and the max
    emit: Vec<f64>,
    emit_shift: Vec<f64>,
    /// `trans[t][i][j] = P(h_{t+1}=j | h_t=i, x_t)`
    trans: Vec<f64>,
}

fn tables(model: &IohmmModel, seq: &Sequence) -> Result<Tables> {
    let n = model.n_states();
    let steps = seq.steps();
    let enc: Vec<[f64; INPUT_DIM]> = steps.iter().map(|s| s.input.encode()).collect();
    let mut emit = vec![0.0; steps.len() * n];
    let mut emit_shift = vec![0.0; steps.len()];
    for (t, s) in steps.iter().enumerate() {
        let row = &mut emit[t * n..(t + 1) * n];
        for (j, e) in row.iter_mut().enumerate() {
            *e = model.emissions[j].log_density(&enc[t], &s.obs)?;
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(IohmmError::NumericalFailure { step: t });
        }
        emit_shift[t] = m;
        row.iter_mut().for_each(|e| *e = (*e - m).exp());
    }
    let mut trans = vec![0.0; steps.len().saturating_sub(1) * n * n];
    for t in 0..steps.len().saturating_sub(1) {
        for i in 0..n {
            let p = model.transitions[i].probs(&enc[t]);
            trans[(t * n + i) * n..(t * n + i + 1) * n].copy_from_slice(&p);
        }
    }
    Ok(Tables { enc, emit, emit_shift, trans })
}

/// Normalises `v` and returns the log of its sum; fails on zero or non-finite mass.
fn normalise(v: &mut [f64], step: usize) -> Result<f64> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(IohmmError::NumericalFailure { step });
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(s.ln())
}

/// Forward pass only; returns normalised filtered marginals and the log-likelihood.
fn forward(model: &IohmmModel, seq: &Sequence, tb: &Tables) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let n = model.n_states();
    let len = seq.len();
    let mut alpha = vec![0.0; len * n];
    let mut log_scale = vec![0.0; len];
    let pi = model.init.probs(&tb.enc[0]);
    for j in 0..n {
        alpha[j] = pi[j] * tb.emit[j];
    }
    log_scale[0] = normalise(&mut alpha[..n], 0)? + tb.emit_shift[0];
    for t in 1..len {
        let (prev, cur) = alpha.split_at_mut(t * n);
        let prev = &prev[(t - 1) * n..];
        let cur = &mut cur[..n];
        for (j, c) in cur.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, a) in prev.iter().enumerate() {
                acc += a * tb.trans[((t - 1) * n + i) * n + j];
            }
            *c = acc * tb.emit[t * n + j];
        }
        log_scale[t] = normalise(cur, t)? + tb.emit_shift[t];
    }
    let ll = log_scale.iter().sum();
    Ok((alpha, log_scale, ll))
}

/// Log-likelihood of a sequence under the model.
pub fn log_likelihood(model: &IohmmModel, seq: &Sequence) -> Result<f64> {
    let tb = tables(model, seq)?;
    Ok(forward(model, seq, &tb)?.2)
}

/// Scaled forward-backward. `gamma` rows sum to one; `xi` slices sum to one.
pub fn forward_backward(model: &IohmmModel, seq: &Sequence) -> Result<Posteriors> {
    let n = model.n_states();
    let len = seq.len();
    let tb = tables(model, seq)?;
    let (alpha, log_scale, log_lik) = forward(model, seq, &tb)?;
    // scale factors without the emission shift, i.e. the normalisers of the scaled recursion
    let c: Vec<f64> = log_scale.iter().zip(&tb.emit_shift).map(|(l, s)| (l - s).exp()).collect();

    let mut beta = vec![1.0; len * n];
    for t in (0..len.saturating_sub(1)).rev() {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += tb.trans[(t * n + i) * n + j] * tb.emit[(t + 1) * n + j] * beta[(t + 1) * n + j];
            }
            beta[t * n + i] = acc / c[t + 1];
        }
        if !beta[t * n..(t + 1) * n].iter().all(|b| b.is_finite()) {
            return Err(IohmmError::NumericalFailure { step: t });
        }
    }

    let mut gamma = vec![0.0; len * n];
    for t in 0..len {
        for i in 0..n {
            gamma[t * n + i] = alpha[t * n + i] * beta[t * n + i];
        }
        normalise(&mut gamma[t * n..(t + 1) * n], t)?;
    }

    let mut xi = vec![0.0; len.saturating_sub(1) * n * n];
    for t in 0..len.saturating_sub(1) {
        let block = &mut xi[t * n * n..(t + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                block[i * n + j] = alpha[t * n + i]
                    * tb.trans[(t * n + i) * n + j]
                    * tb.emit[(t + 1) * n + j]
                    * beta[(t + 1) * n + j];
            }
        }
        normalise(block, t)?;
    }

    Ok(Posteriors { n_states: n, len, gamma, xi, log_lik })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::{EmissionParams, InputVector, MnlParams, Nudge, Observation, Step};

    fn seq(obs: &[(f64, f64)]) -> Sequence {
        Sequence::new(
            obs.iter()
                .enumerate()
                .map(|(k, &(re, sot))| Step {
                    input: InputVector::new(0.3 * k as f64 - 1.0, Nudge::new((k % 6) as u8).unwrap()),
                    obs: Observation::new(re, sot),
                })
                .collect(),
        )
        .unwrap()
    }

    fn model() -> IohmmModel {
        let mut init = MnlParams::zeros(2);
        init.intercepts[0] = 0.4;
        let mut t0 = MnlParams::zeros(2);
        t0.weights[0] = [0.5, 0.1, -0.2, 0.3, 0.0, 0.0, 0.1];
        t0.intercepts[0] = 1.0;
        let mut t1 = MnlParams::zeros(2);
        t1.weights[1] = [-0.3, 0.0, 0.4, 0.0, 0.2, 0.0, 0.0];
        IohmmModel::new(
            init,
            vec![t0, t1],
            vec![
                EmissionParams::constant([0.2, 0.1], [[0.05, 0.01], [0.01, 0.04]]),
                EmissionParams::constant([0.7, 0.5], [[0.08, 0.0], [0.0, 0.06]]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_state_reduces_to_emission_sum() {
        let m = IohmmModel::new(
            MnlParams::zeros(1),
            vec![MnlParams::zeros(1)],
            vec![EmissionParams::constant([0.3, 0.2], [[0.1, 0.0], [0.0, 0.1]])],
        )
        .unwrap();
        let s = seq(&[(0.1, 0.2), (0.5, 0.1), (0.3, 0.3)]);
        let post = forward_backward(&m, &s).unwrap();
        let direct: f64 = s
            .steps()
            .iter()
            .map(|st| m.emission_log_density(0, &st.input, &st.obs).unwrap())
            .sum();
        assert!((post.log_lik - direct).abs() < 1e-12);
        for t in 0..3 {
            assert_eq!(post.gamma(t), &[1.0]);
        }
    }

    #[test]
    fn length_two_matches_path_enumeration() {
        let m = model();
        let s = seq(&[(0.25, 0.15), (0.6, 0.45)]);
        let st = s.steps();
        let mut joint = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                let p0 = m.initial_probs(&st[0].input)[a];
                let e0 = m.emission_log_density(a, &st[0].input, &st[0].obs).unwrap().exp();
                let tr = m.transition_probs(a, &st[0].input)[b];
                let e1 = m.emission_log_density(b, &st[1].input, &st[1].obs).unwrap().exp();
                joint[a][b] = p0 * e0 * tr * e1;
            }
        }
        let z: f64 = joint.iter().flatten().sum();
        let post = forward_backward(&m, &s).unwrap();
        assert!((post.log_lik - z.ln()).abs() < 1e-10);
        for a in 0..2 {
            assert!((post.gamma(0)[a] - (joint[a][0] + joint[a][1]) / z).abs() < 1e-10);
            assert!((post.gamma(1)[a] - (joint[0][a] + joint[1][a]) / z).abs() < 1e-10);
            for b in 0..2 {
                assert!((post.xi(0, a, b) - joint[a][b] / z).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn label_permutation_preserves_likelihood() {
        let m = model();
        let s = seq(&[(0.25, 0.15), (0.6, 0.45), (0.1, 0.1), (0.9, 0.7), (0.3, 0.2)]);
        let a = log_likelihood(&m, &s).unwrap();
        let b = log_likelihood(&m.permuted(&[1, 0]), &s).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn far_outlier_does_not_underflow() {
        let m = model();
        let s = seq(&[(50.0, -40.0), (0.2, 0.1)]);
        let post = forward_backward(&m, &s).unwrap();
        assert!(post.log_lik.is_finite());
        assert!((post.gamma(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
