use proptest::prelude::*;
use rand::SeedableRng;
use skillnudge_core::bomi::{calibrate, CalibrationSet, HandPose, NUM_JOINTS};
use skillnudge_core::iohmm::{
    directed_slopes, forward_backward, log_likelihood, EmissionParams, InputVector, IohmmModel, MnlParams, Nudge, Observation,
    Sequence, Step, INPUT_DIM,
};
use skillnudge_core::metrics::{compute_re, compute_sot, detect_trial_end, CursorTrajectory, TrialEndRule};
use skillnudge_core::policy::{belief_update, predict_only, qmdp_distribution, BeliefOrdering, BeliefState};
use skillnudge_core::rng::StreamRng;
use skillnudge_core::simulator::{demo_model, run_episode, synthetic_map, ExperimentConfig, Planner, PolicyKind, Setup};
use skillnudge_core::TargetId;

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-1.0..6.0f64), 2..max)
}

fn model(n: usize) -> impl Strategy<Value = IohmmModel> {
    let mnl = move || {
        (prop::collection::vec(prop::array::uniform7(-1.0..1.0f64), n), prop::collection::vec(-1.0..1.0f64, n))
            .prop_map(|(weights, intercepts)| MnlParams { weights, intercepts })
    };
    let emission = (prop::array::uniform2(0.0..1.5f64), 0.05..0.5f64, 0.05..0.5f64, -0.7..0.7f64)
        .prop_map(|(m, a, b, rho)| EmissionParams::constant(m, [[a, rho * (a * b).sqrt()], [rho * (a * b).sqrt(), b]]));
    (mnl(), prop::collection::vec(mnl(), n), prop::collection::vec(emission, n))
        .prop_map(|(init, trans, em)| IohmmModel::new(init, trans, em).unwrap())
}

fn steps(len: usize) -> impl Strategy<Value = Vec<Step>> {
    prop::collection::vec((0..12usize, 0..6u8, 0.0..1.5f64, 0.0..1.0f64), 1..len).prop_map(|v| {
        let slopes = directed_slopes();
        v.into_iter()
            .map(|(s, k, re, sot)| Step { input: InputVector::new(slopes[s], Nudge::new(k).unwrap()), obs: Observation::new(re, sot) })
            .collect()
    })
}

fn rotate(p: [f64; 2], th: f64, scale: f64, shift: [f64; 2]) -> [f64; 2] {
    let (s, c) = th.sin_cos();
    [scale * (c * p[0] - s * p[1]) + shift[0], scale * (s * p[0] + c * p[1]) + shift[1]]
}

proptest! {
    #[test]
    fn sot_is_nonnegative_and_similarity_invariant(pts in points(40), th in -3.0..3.0f64, scale in 0.2..5.0f64, shift in prop::array::uniform2(-3.0..3.0f64)) {
        let end = pts.len() - 1;
        prop_assume!((pts[0][0] - pts[end][0]).hypot(pts[0][1] - pts[end][1]) > 1e-3);
        let a = compute_sot(&CursorTrajectory::from_positions(&pts, 100.0).unwrap(), end).unwrap();
        let moved: Vec<[f64; 2]> = pts.iter().map(|&p| rotate(p, th, scale, shift)).collect();
        let b = compute_sot(&CursorTrajectory::from_positions(&moved, 100.0).unwrap(), end).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-7 * a.max(1.0));
    }

    #[test]
    fn re_is_a_distance(pts in points(10), k in 0..4usize) {
        let t = skillnudge_core::bomi::TARGETS[k];
        let tr = CursorTrajectory::from_positions(&pts, 100.0).unwrap();
        let re = compute_re(&tr, &t, pts.len() - 1).unwrap();
        prop_assert!(re >= 0.0);
        prop_assert_eq!(re == 0.0, pts[pts.len() - 1] == t.position);
    }

    #[test]
    fn trial_end_lies_within_the_trajectory(pts in points(300), start in 0..300usize) {
        let tr = CursorTrajectory::from_positions(&pts, 100.0).unwrap();
        let start = (start % pts.len()) as f64 / 100.0;
        let end = detect_trial_end(&tr, start, &TrialEndRule::default()).unwrap();
        prop_assert!(end.index < pts.len());
        prop_assert!(tr.samples()[end.index].t + 1e-9 >= start);
        prop_assert!(tr.samples()[end.index].t <= start + 2.0 + 1e-9);
    }

    #[test]
    fn transition_rows_are_distributions(m in model(4), s in -3.2..3.2f64, k in 0..6u8) {
        let x = InputVector::new(s, Nudge::new(k).unwrap());
        for i in 0..4 {
            let p = m.transition_probs(i, &x);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(x.encode().len(), INPUT_DIM);
    }

    #[test]
    fn posteriors_are_consistent(m in model(3), st in steps(30)) {
        let seq = Sequence::new(st).unwrap();
        let post = forward_backward(&m, &seq).unwrap();
        for t in 0..seq.len() {
            prop_assert!((post.gamma(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if t + 1 < seq.len() {
                for i in 0..3 {
                    let row: f64 = (0..3).map(|j| post.xi(t, i, j)).sum();
                    let col: f64 = (0..3).map(|j| post.xi(t, j, i)).sum();
                    prop_assert!((row - post.gamma(t)[i]).abs() < 1e-9);
                    prop_assert!((col - post.gamma(t + 1)[i]).abs() < 1e-9);
                }
            }
        }
        prop_assert!((post.log_lik - log_likelihood(&m, &seq).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn relabelling_states_preserves_likelihood(m in model(3), st in steps(20), perm in Just([0usize, 1, 2]).prop_shuffle()) {
        let seq = Sequence::new(st).unwrap();
        let a = log_likelihood(&m, &seq).unwrap();
        let b = log_likelihood(&m.permuted(&perm), &seq).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn model_survives_json_round_trip(m in model(2)) {
        let back: IohmmModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn belief_stays_on_the_simplex(m in model(3), st in steps(20), ordering in prop::bool::ANY) {
        let ordering = if ordering { BeliefOrdering::CorrectThenPredict } else { BeliefOrdering::PredictThenCorrect };
        let mut b = BeliefState::new(None, TargetId(2), vec![1.0 / 3.0; 3]).unwrap();
        for (t, s) in st.iter().enumerate() {
            let next = (Some(TargetId(1 + (t % 4) as u8)), TargetId(1 + ((t + 1) % 4) as u8));
            b = belief_update(&m, &b, &s.input, &s.obs, next, ordering).unwrap();
            prop_assert!(b.validate().is_ok());
            let p = predict_only(&m, &b, &s.input, next);
            prop_assert!(p.validate().is_ok());
        }
    }
}

#[test]
fn qmdp_distributions_sum_to_one() {
    let m = demo_model();
    let planner = Planner::with_defaults(&m).unwrap();
    for s in 0..planner.q.n_states {
        let p = qmdp_distribution(&planner.q, s);
        assert_eq!(p.len(), 6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn calibrated_map_centres_the_mean_pose() {
    let mut rng = StreamRng::seed_from_u64(4);
    let poses: Vec<HandPose> = (0..60)
        .map(|_| {
            let mut j = [0.0; NUM_JOINTS];
            for (i, v) in j.iter_mut().enumerate() {
                *v = rand::Rng::random_range(&mut rng, -0.5..0.5) * (1.0 + i as f64 / 4.0);
            }
            HandPose::new(j).unwrap()
        })
        .collect();
    let map = calibrate(&CalibrationSet::new(poses.clone()).unwrap()).unwrap();
    let c = map.cursor_position(&map.center);
    assert!((c[0] - 2.5).abs() < 1e-9 && (c[1] - 2.5).abs() < 1e-9);
    let cursors: Vec<[f64; 2]> = poses.iter().map(|p| map.cursor_position(p)).collect();
    for axis in 0..2 {
        let mean = cursors.iter().map(|c| c[axis]).sum::<f64>() / 60.0;
        let var = cursors.iter().map(|c| (c[axis] - mean).powi(2)).sum::<f64>() / 59.0;
        assert!((mean - 2.5).abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "axis {axis} sd {}", var.sqrt());
    }
}

#[test]
fn episodes_are_reproducible_and_share_targets_across_policies() {
    let m = demo_model();
    let setup = Setup::new(&m, Planner::with_defaults(&m).unwrap(), synthetic_map(2));
    let cfg = |policy| ExperimentConfig { blocks: 2, trials_per_block: 30, policy, seed: 11, ..Default::default() };
    let a = run_episode(&cfg(PolicyKind::Qmdp), &setup, 3);
    let b = run_episode(&cfg(PolicyKind::Qmdp), &setup, 3);
    assert_eq!(a, b);
    let c = run_episode(&cfg(PolicyKind::Control), &setup, 3);
    assert_eq!(a.records.iter().map(|r| r.cur).collect::<Vec<_>>(), c.records.iter().map(|r| r.cur).collect::<Vec<_>>());
    assert!(c.records.iter().all(|r| r.nudge.index() == 0));
    assert_eq!(a.to_sequences().len(), 2);
}
