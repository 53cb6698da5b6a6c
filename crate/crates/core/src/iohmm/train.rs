//! Generalised EM with ridge / elastic-net regularisation, permutation restarts and
//! K-fold model selection.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::emission_fit::{fit_cov, fit_mean, EmissionStats, Penalty};
use super::inference::{forward_backward, log_likelihood, Posteriors};
use super::mnl::{self, SoftCounts};
use super::{floor_eigenvalues_2x2, EmissionParams, IohmmError, IohmmModel, MnlParams, Result, Sequence, INPUT_DIM};
use crate::rng::{derive_seed, stream, StreamRng};

/// Allowed decrease of the training objective between iterations.
pub const MONOTONICITY_SLACK: f64 = 1e-6;
const MIN_STATE_WEIGHT: f64 = 1e-10;
const KMEANS_ITERS: usize = 100;

const STREAM_INIT: u64 = 0x1417;
const STREAM_ORDER: u64 = 0x0bde;
const STREAM_FOLDS: u64 = 0xf01d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_states: usize,
    /// Ridge weight on initial and transition MNL weights.
    pub l2_transition: f64,
    pub elastic_net_alpha: f64,
    pub l1_ratio: f64,
    pub max_iterations: usize,
    /// Stop once the objective improves by less than this.
    pub log_lik_tolerance: f64,
    pub n_permutations: usize,
    pub seed: u64,
    /// Fit input weights for `P(h_0 | x_0)`; when false the initial model is intercept-only.
    pub input_conditioned_init: bool,
    pub cov_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_states: 7,
            l2_transition: 1.0,
            elastic_net_alpha: 1e-4,
            l1_ratio: 0.725,
            max_iterations: 200,
            log_lik_tolerance: 1e-6,
            n_permutations: 5,
            seed: 0,
            input_conditioned_init: true,
            cov_floor: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IohmmError::InvalidConfig(m.to_string()));
        if self.n_states == 0 {
            return bad("n_states must be at least 1");
        }
        if !(self.l2_transition >= 0.0 && self.elastic_net_alpha >= 0.0) {
            return bad("regularisation weights must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return bad("l1_ratio must lie in [0, 1]");
        }
        if !(self.log_lik_tolerance >= 0.0) {
            return bad("log_lik_tolerance must be non-negative");
        }
        if self.n_permutations == 0 {
            return bad("n_permutations must be at least 1");
        }
        if !(self.cov_floor > 0.0) {
            return bad("cov_floor must be positive");
        }
        Ok(())
    }

    fn emission_penalty(&self, n_total: usize) -> Penalty {
        let scale = n_total as f64 * self.elastic_net_alpha;
        Penalty { l1: scale * self.l1_ratio, l2: scale * (1.0 - self.l1_ratio) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: IohmmModel,
    /// Penalised objective `logLik − penalty` after each completed M-step (entry 0 is
    /// the initial model).
    pub objective_trace: Vec<f64>,
    pub log_lik_trace: Vec<f64>,
    pub log_lik: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Regularisation penalty of `model` under `cfg`, for `n_total` training steps.
pub fn penalty(model: &IohmmModel, cfg: &FitConfig, n_total: usize) -> f64 {
    let ridge = mnl::ridge_penalty(&model.init, cfg.l2_transition)
        + model.transitions.iter().map(|t| mnl::ridge_penalty(t, cfg.l2_transition)).sum::<f64>();
    let pen = cfg.emission_penalty(n_total);
    ridge + model.emissions.iter().map(|e| pen.value(e)).sum::<f64>()
}

fn total_steps(seqs: &[Sequence]) -> usize {
    seqs.iter().map(Sequence::len).sum()
}

fn e_step(model: &IohmmModel, seqs: &[Sequence]) -> Result<(Vec<Posteriors>, f64)> {
    let posts = seqs.par_iter().map(|s| forward_backward(model, s)).collect::<Result<Vec<_>>>()?;
    let ll = posts.iter().map(|p| p.log_lik).sum();
    Ok((posts, ll))
}

fn m_step(model: &IohmmModel, seqs: &[Sequence], posts: &[Posteriors], cfg: &FitConfig) -> IohmmModel {
    let n = model.n_states();
    let reference = n - 1;
    let mut next = model.clone();

    let mut init_counts = SoftCounts::new(n);
    for (s, p) in seqs.iter().zip(posts) {
        init_counts.add(&s.steps()[0].input.encode(), p.gamma(0).iter().copied());
    }
    mnl::fit(&mut next.init, &init_counts, cfg.l2_transition, cfg.input_conditioned_init, reference);

    for i in 0..n {
        let mut counts = SoftCounts::new(n);
        for (s, p) in seqs.iter().zip(posts) {
            for t in 0..s.len() - 1 {
                counts.add(&s.steps()[t].input.encode(), (0..n).map(|j| p.xi(t, i, j)));
            }
        }
        if counts.total() > MIN_STATE_WEIGHT {
            mnl::fit(&mut next.transitions[i], &counts, cfg.l2_transition, true, reference);
        }
    }

    let pen = cfg.emission_penalty(total_steps(seqs));
    let data: Vec<([f64; INPUT_DIM], [f64; 2])> = seqs
        .iter()
        .flat_map(|s| s.steps().iter().map(|st| (st.input.encode(), st.obs.as_array())))
        .collect();
    let gammas: Vec<&[f64]> = posts.iter().flat_map(|p| (0..p.len()).map(move |t| p.gamma(t))).collect();
    for j in 0..n {
        let mut stats = EmissionStats::new();
        for ((x, o), g) in data.iter().zip(&gammas) {
            stats.add(x, o, g[j]);
        }
        if stats.weight() < MIN_STATE_WEIGHT {
            continue;
        }
        let e = &mut next.emissions[j];
        fit_mean(e, &stats, pen);
        fit_cov(e, data.iter().zip(&gammas).map(|((x, o), g)| (x, *o, g[j])), cfg.cov_floor);
    }
    next
}

fn covariance(points: &[[f64; 2]], floor: f64) -> [[f64; 2]; 2] {
    let n = points.len().max(1) as f64;
    let mean = points.iter().fold([0.0; 2], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let mut s = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for a in 0..2 {
            for b in 0..2 {
                s[a][b] += d[a] * d[b] / n;
            }
        }
    }
    floor_eigenvalues_2x2(s, floor)
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// k-means++ seeding followed by Lloyd iterations; returns centres and assignments.
fn kmeans(points: &[[f64; 2]], k: usize, rng: &mut StreamRng) -> (Vec<[f64; 2]>, Vec<usize>) {
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            crate::numeric::sample_index(&d2.iter().map(|v| v / total).collect::<Vec<_>>(), rng.random())
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centres.push(c);
    }
    let mut assign = vec![0usize; points.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(p, &centres[i]).total_cmp(&dist2(p, &centres[j])))
                .unwrap_or(0);
            if best != *a {
                *a = best;
                changed = true;
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = points.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                let m = members.len() as f64;
                *centre = members.iter().fold([0.0; 2], |s, p| [s[0] + p[0] / m, s[1] + p[1] / m]);
            }
        }
        if !changed {
            break;
        }
    }
    (centres, assign)
}

fn initial_model(seqs: &[Sequence], cfg: &FitConfig, rng: &mut StreamRng) -> Result<IohmmModel> {
    let n = cfg.n_states;
    let points: Vec<[f64; 2]> = seqs.iter().flat_map(|s| s.steps().iter().map(|st| st.obs.as_array())).collect();
    let global = covariance(&points, cfg.cov_floor);
    let (centres, assign) = kmeans(&points, n, rng);
    let emissions = (0..n)
        .map(|c| {
            let members: Vec<[f64; 2]> =
                points.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(p, _)| *p).collect();
            let cov = if members.len() >= 3 { covariance(&members, cfg.cov_floor) } else { global };
            EmissionParams::constant(centres[c], cov)
        })
        .collect();

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let small = Normal::new(0.0, 0.1).expect("valid normal");
    let mut init = MnlParams::zeros(n);
    for b in init.intercepts.iter_mut().take(n - 1) {
        *b = std_normal.sample(rng);
    }
    let transitions = (0..n)
        .map(|_| {
            let mut t = MnlParams::zeros(n);
            for b in t.intercepts.iter_mut().take(n - 1) {
                *b = small.sample(rng);
            }
            t
        })
        .collect();
    IohmmModel::new(init, transitions, emissions)
}

/// Single GEM run from a seeded initialisation.
pub fn gem_fit(seqs: &[Sequence], cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(IohmmError::NoSequences);
    }
    let mut rng = stream(cfg.seed, &[STREAM_INIT]);
    let model = initial_model(seqs, cfg, &mut rng)?;
    gem_from(model, seqs, cfg)
}

/// GEM iterations from a given starting model.
pub(crate) fn gem_from(mut model: IohmmModel, seqs: &[Sequence], cfg: &FitConfig) -> Result<FitResult> {
    let n_total = total_steps(seqs);
    let mut objective_trace = Vec::new();
    let mut log_lik_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let (posts, ll) = e_step(&model, seqs)?;
        let j = ll - penalty(&model, cfg, n_total);
        if let Some(&prev) = objective_trace.last() {
            if j < prev - MONOTONICITY_SLACK {
                objective_trace.push(j);
                return Err(IohmmError::MonotonicityViolation {
                    iteration: iterations,
                    previous: prev,
                    current: j,
                    trace: objective_trace,
                    model: Box::new(model),
                });
            }
            if j - prev < cfg.log_lik_tolerance {
                converged = true;
            }
        }
        objective_trace.push(j);
        log_lik_trace.push(ll);
        if converged || iterations == cfg.max_iterations {
            break;
        }
        model = m_step(&model, seqs, &posts, cfg);
        iterations += 1;
    }
    Ok(FitResult {
        model,
        log_lik: *log_lik_trace.last().expect("at least one E-step"),
        objective: *objective_trace.last().expect("at least one E-step"),
        objective_trace,
        log_lik_trace,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCandidate {
    pub run: usize,
    pub seed: u64,
    pub ordering: Vec<usize>,
    pub objective: Option<f64>,
    pub log_lik: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub best: FitResult,
    pub best_run: usize,
    pub candidates: Vec<McCandidate>,
}

/// Runs GEM on `n_permutations` orderings of the sequence list and keeps the run with
/// the highest training objective. Run 0 uses the given order and `cfg.seed`.
pub fn mc_train(seqs: &[Sequence], cfg: &FitConfig) -> Result<McResult> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(IohmmError::NoSequences);
    }
    let runs: Vec<(usize, u64, Vec<usize>)> = (0..cfg.n_permutations)
        .map(|r| {
            let mut ordering: Vec<usize> = (0..seqs.len()).collect();
            if r == 0 {
                (r, cfg.seed, ordering)
            } else {
                ordering.shuffle(&mut stream(cfg.seed, &[STREAM_ORDER, r as u64]));
                (r, derive_seed(cfg.seed, r as u64), ordering)
            }
        })
        .collect();
    let outcomes: Vec<Result<FitResult>> = runs
        .par_iter()
        .map(|(_, seed, ordering)| {
            let permuted: Vec<Sequence> = ordering.iter().map(|&i| seqs[i].clone()).collect();
            gem_fit(&permuted, &FitConfig { seed: *seed, ..cfg.clone() })
        })
        .collect();

    let mut candidates = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, FitResult)> = None;
    for ((run, seed, ordering), outcome) in runs.into_iter().zip(outcomes) {
        let mut cand = McCandidate { run, seed, ordering, objective: None, log_lik: None, error: None };
        match outcome {
            Ok(fit) => {
                cand.objective = Some(fit.objective);
                cand.log_lik = Some(fit.log_lik);
                if best.as_ref().is_none_or(|(_, b)| fit.objective > b.objective) {
                    best = Some((run, fit));
                }
            }
            Err(e) => {
                log::warn!("training run {run} failed: {e}");
                cand.error = Some(e.to_string());
            }
        }
        candidates.push(cand);
    }
    match best {
        Some((best_run, best)) => Ok(McResult { best, best_run, candidates }),
        None => {
            let last = candidates.last().and_then(|c| c.error.clone()).unwrap_or_default();
            Err(IohmmError::AllRunsFailed(candidates.len(), last))
        }
    }
}

/// Fold index of every sequence; folds differ in size by at most one.
pub fn fold_assignment(n_sequences: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_sequences).collect();
    idx.shuffle(&mut stream(seed, &[STREAM_FOLDS]));
    let mut fold = vec![0; n_sequences];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub selected: usize,
    pub config: FitConfig,
    /// `fold_scores[c][f]`: held-out log-likelihood of candidate `c` on fold `f`
    /// (`-inf` when training failed).
    pub fold_scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
}

/// K-fold selection over `grid`: the candidate with the highest mean held-out
/// log-likelihood wins, ties going to the earlier candidate.
pub fn cross_validate(seqs: &[Sequence], grid: &[FitConfig], k: usize, seed: u64) -> Result<CvReport> {
    if grid.is_empty() {
        return Err(IohmmError::InvalidConfig("empty configuration grid".into()));
    }
    if k < 2 {
        return Err(IohmmError::InvalidConfig("need at least 2 folds".into()));
    }
    if seqs.len() < k {
        return Err(IohmmError::TooFewSequences { need: k, got: seqs.len() });
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let folds = fold_assignment(seqs.len(), k, seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let train: Vec<Sequence> =
                seqs.iter().zip(&folds).filter(|(_, &g)| g != f).map(|(s, _)| s.clone()).collect();
            let fit = match mc_train(&train, &grid[c]) {
                Ok(r) => r.best.model,
                Err(_) => return f64::NEG_INFINITY,
            };
            seqs.iter()
                .zip(&folds)
                .filter(|(_, &g)| g == f)
                .map(|(s, _)| log_likelihood(&fit, s).unwrap_or(f64::NEG_INFINITY))
                .sum()
        })
        .collect();
    let fold_scores: Vec<Vec<f64>> = scores.chunks(k).map(<[f64]>::to_vec).collect();
    let mean_scores: Vec<f64> = fold_scores.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let mut selected = 0;
    for (c, m) in mean_scores.iter().enumerate() {
        if *m > mean_scores[selected] {
            selected = c;
        }
    }
    Ok(CvReport { selected, config: grid[selected].clone(), fold_scores, mean_scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iohmm::{InputVector, Nudge, Step};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;

    fn random_inputs(rng: &mut StreamRng, len: usize) -> Vec<InputVector> {
        (0..len)
            .map(|_| InputVector::new(rng.random_range(-3.0..3.0), Nudge::new(rng.random_range(0..6)).unwrap()))
            .collect()
    }

    fn sample(model: &IohmmModel, n_seq: usize, len: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = StreamRng::seed_from_u64(seed);
        (0..n_seq)
            .map(|_| {
                let xs = random_inputs(&mut rng, len);
                let mut h = model.sample_initial(&xs[0], &mut rng);
                let steps = xs
                    .iter()
                    .map(|x| {
                        let (next, obs) = model.sample_step(h, x, &mut rng);
                        h = next;
                        Step { input: *x, obs }
                    })
                    .collect();
                Sequence::new(steps).unwrap()
            })
            .collect()
    }

    fn two_state() -> IohmmModel {
        let mut t0 = MnlParams::zeros(2);
        t0.intercepts[0] = 1.5;
        let mut t1 = MnlParams::zeros(2);
        t1.intercepts[0] = -1.0;
        IohmmModel::new(
            MnlParams::zeros(2),
            vec![t0, t1],
            vec![
                EmissionParams::constant([0.2, 0.1], [[0.01, 0.0], [0.0, 0.01]]),
                EmissionParams::constant([1.0, 0.8], [[0.01, 0.0], [0.0, 0.01]]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        assert!(FitConfig { l1_ratio: 1.5, ..Default::default() }.validate().is_err());
        assert!(FitConfig { n_states: 0, ..Default::default() }.validate().is_err());
        assert!(FitConfig { elastic_net_alpha: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn objective_trace_is_monotone() {
        let seqs = sample(&two_state(), 4, 60, 3);
        let cfg = FitConfig { n_states: 3, max_iterations: 60, seed: 9, ..Default::default() };
        let fit = gem_fit(&seqs, &cfg).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - MONOTONICITY_SLACK, "{w:?}");
        }
        assert_eq!(fit.objective_trace.len(), fit.iterations + 1);
        for e in &fit.model.emissions {
            assert!(super::super::min_eigenvalue_2x2(&e.cov) >= 1e-8 * (1.0 - 1e-9));
        }
    }

    #[test]
    fn unpenalised_log_likelihood_is_monotone() {
        let seqs = sample(&two_state(), 3, 80, 4);
        let cfg = FitConfig {
            n_states: 2,
            l2_transition: 0.0,
            elastic_net_alpha: 0.0,
            max_iterations: 50,
            seed: 1,
            ..Default::default()
        };
        let fit = gem_fit(&seqs, &cfg).unwrap();
        for w in fit.log_lik_trace.windows(2) {
            assert!(w[1] >= w[0] - MONOTONICITY_SLACK, "{w:?}");
        }
    }

    #[test]
    fn single_state_matches_least_squares_predictions() {
        let seqs = sample(&two_state(), 2, 120, 5);
        let cfg = FitConfig { n_states: 1, elastic_net_alpha: 0.0, seed: 2, log_lik_tolerance: 1e-12, ..Default::default() };
        let fit = gem_fit(&seqs, &cfg).unwrap();
        // oracle: ordinary least squares on [1, slope, nudge one-hot minus the last category]
        let steps: Vec<&Step> = seqs.iter().flat_map(|s| s.steps()).collect();
        let design = |x: &InputVector| {
            let e = x.encode();
            let mut z = vec![1.0];
            z.extend_from_slice(&e[..INPUT_DIM - 1]);
            z
        };
        let rows: Vec<Vec<f64>> = steps.iter().map(|s| design(&s.input)).collect();
        let p = rows[0].len();
        let a = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        for r in 0..2 {
            let y = DVector::from_iterator(steps.len(), steps.iter().map(|s| s.obs.as_array()[r]));
            let beta = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * y));
            for s in &steps {
                let oracle: f64 = design(&s.input).iter().zip(beta.iter()).map(|(z, b)| z * b).sum();
                let fitted = fit.model.emission_mean(0, &s.input)[r];
                assert!((oracle - fitted).abs() < 1e-6, "{oracle} vs {fitted}");
            }
        }
    }

    #[test]
    fn single_state_ridge_matches_closed_form() {
        let seqs = sample(&two_state(), 2, 100, 6);
        let cfg = FitConfig {
            n_states: 1,
            elastic_net_alpha: 0.01,
            l1_ratio: 0.0,
            seed: 2,
            log_lik_tolerance: 1e-13,
            max_iterations: 500,
            ..Default::default()
        };
        let fit = gem_fit(&seqs, &cfg).unwrap();
        let em = &fit.model.emissions[0];
        let steps: Vec<&Step> = seqs.iter().flat_map(|s| s.steps()).collect();
        let lam = steps.len() as f64 * 0.01;
        // joint GLS ridge system over vec(B) with B = [c | V] (2 × 8)
        let [[a, b], [c, d]] = em.cov;
        let det = a * d - b * c;
        let prec = [[d / det, -b / det], [-c / det, a / det]];
        let mut lhs = DMatrix::<f64>::zeros(16, 16);
        let mut rhs = DVector::<f64>::zeros(16);
        for s in &steps {
            let e = s.input.encode();
            let mut z = [0.0; 8];
            z[0] = 1.0;
            z[1..].copy_from_slice(&e);
            let o = s.obs.as_array();
            for r in 0..2 {
                for f in 0..8 {
                    for q in 0..2 {
                        for g in 0..8 {
                            lhs[(r * 8 + f, q * 8 + g)] += prec[r][q] * z[f] * z[g];
                        }
                        rhs[r * 8 + f] += prec[r][q] * o[q] * z[f];
                    }
                }
            }
        }
        for r in 0..2 {
            for f in 1..8 {
                lhs[(r * 8 + f, r * 8 + f)] += lam;
            }
        }
        let sol = lhs.lu().solve(&rhs).unwrap();
        for r in 0..2 {
            assert!((sol[r * 8] - em.intercept[r]).abs() < 1e-5);
            for f in 0..INPUT_DIM {
                assert!((sol[r * 8 + 1 + f] - em.coef[r][f]).abs() < 1e-5, "{} vs {}", sol[r * 8 + 1 + f], em.coef[r][f]);
            }
        }
    }

    #[test]
    fn single_permutation_equals_gem_fit() {
        let seqs = sample(&two_state(), 3, 40, 7);
        let cfg = FitConfig { n_states: 2, n_permutations: 1, seed: 77, max_iterations: 30, ..Default::default() };
        let mc = mc_train(&seqs, &cfg).unwrap();
        let direct = gem_fit(&seqs, &cfg).unwrap();
        assert_eq!(mc.best, direct);
    }

    #[test]
    fn mc_train_returns_argmax_and_is_reproducible() {
        let seqs = sample(&two_state(), 4, 40, 8);
        let cfg = FitConfig { n_states: 3, n_permutations: 4, seed: 5, max_iterations: 40, ..Default::default() };
        let a = mc_train(&seqs, &cfg).unwrap();
        for c in &a.candidates {
            assert!(a.best.objective >= c.objective.unwrap());
        }
        let b = mc_train(&seqs, &cfg).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.candidates, b.candidates);
        let seeds: std::collections::BTreeSet<u64> = a.candidates.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 4);
    }

    #[test]
    fn folds_partition_sequences() {
        let f = fold_assignment(23, 5, 3);
        assert_eq!(f.len(), 23);
        let mut sizes = [0usize; 5];
        for &g in &f {
            sizes[g] += 1;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().all(|&s| s == 4 || s == 5));
    }

    #[test]
    fn cv_single_candidate_is_returned_unchanged() {
        let seqs = sample(&two_state(), 5, 20, 9);
        let cfg = FitConfig { n_states: 2, n_permutations: 1, max_iterations: 10, seed: 4, ..Default::default() };
        let rep = cross_validate(&seqs, std::slice::from_ref(&cfg), 5, 1).unwrap();
        assert_eq!(rep.selected, 0);
        assert_eq!(rep.config, cfg);
        assert_eq!(rep.fold_scores[0].len(), 5);
    }

    #[test]
    fn cv_needs_k_sequences() {
        let seqs = sample(&two_state(), 3, 10, 9);
        let err = cross_validate(&seqs, &[FitConfig::default()], 5, 1).unwrap_err();
        assert!(matches!(err, IohmmError::TooFewSequences { need: 5, got: 3 }));
    }

    #[test]
    fn cv_prefers_correct_state_count() {
        let seqs = sample(&two_state(), 10, 60, 10);
        let base = FitConfig { n_permutations: 1, max_iterations: 40, seed: 3, ..Default::default() };
        let grid = [FitConfig { n_states: 1, ..base.clone() }, FitConfig { n_states: 2, ..base }];
        let rep = cross_validate(&seqs, &grid, 5, 2).unwrap();
        assert_eq!(rep.selected, 1, "{:?}", rep.mean_scores);
    }
}
