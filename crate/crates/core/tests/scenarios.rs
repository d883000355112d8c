use siegmund::markov::{tv_profile_of_matrix, StochasticMatrix};
use siegmund::processes::{
    example1_p, simulate_example1_path, simulate_rs_special_path, verify_growth_condition, NoiseModel, RSSpecialSpec,
    Sequence,
};
use siegmund::rl::{baird, linear_q_step, mdp_to_sa, run_linear_q, FeatureMap, PolicyConfig, Transition};
use siegmund::rng::Stream;
use siegmund::sa::run_sa;
use siegmund::schedules::{build_skeleton, select_regime, Schedule};

#[test]
fn deterministic_recursion_matches_a_hand_loop() {
    let t_seq = Sequence::power(1.0, 0.75, 1.0);
    let spec = RSSpecialSpec::new(0.8, 0.5, t_seq).unwrap();
    let path = simulate_rs_special_path(&spec, &NoiseModel::Deterministic, 3.0, 5000, 1, 0).unwrap();
    let mut z = 3.0f64;
    for n in 0..5000u64 {
        let t = 1.0 / (n as f64 + 1.0).powf(0.75);
        assert!((path.values[n as usize] - z).abs() <= 1e-12 * (1.0 + z), "n = {n}");
        z = (1.0 - 0.8 * t) * z + 0.5 * t;
    }
    assert!((path.values[5000] - 0.625).abs() < 0.01);
}

#[test]
fn bounded_noise_one_step_mean_matches_the_drift() {
    let spec = RSSpecialSpec::new(1.0, 1.0, Sequence::power(0.5, 1.0, 1.0))
        .unwrap()
        .with_growth_b(1.5)
        .unwrap();
    let noise = NoiseModel::BoundedMultiplicative { sigma: 0.5 };
    let (z0, n) = (4.0, 20_000u32);
    let t0 = 0.5;
    let mean_target = (1.0 - t0) * z0 + t0;
    // U uniform on [-1, 1] scaled by sigma T (z + 1)
    let sd = 0.5 * t0 * (z0 + 1.0) / 3f64.sqrt();
    let sum: f64 = (0..n)
        .map(|i| simulate_rs_special_path(&spec, &noise, z0, 1, 77, i).unwrap().values[1])
        .sum();
    let mean = sum / n as f64;
    assert!(
        (mean - mean_target).abs() < 4.0 * sd / (n as f64).sqrt(),
        "{mean} vs {mean_target}"
    );
}

#[test]
fn bounded_noise_paths_satisfy_the_growth_bound() {
    let t_seq = Sequence::power(1.0, 0.75, 1.0);
    let spec = RSSpecialSpec::new(1.0, 1.0, t_seq.clone())
        .unwrap()
        .with_growth_b(1.5)
        .unwrap();
    let noise = NoiseModel::BoundedMultiplicative { sigma: 0.5 };
    for i in 0..5 {
        let p = simulate_rs_special_path(&spec, &noise, 0.0, 20_000, 3, i).unwrap();
        assert!(p.values.iter().all(|&z| z >= 0.0));
        assert!(verify_growth_condition(&p.values, &t_seq, 1.5).unwrap().ok);
    }
}

#[test]
fn noisy_start_from_a_positive_state_needs_a_small_first_step() {
    let spec = RSSpecialSpec::new(1.0, 1.0, Sequence::power(1.0, 0.75, 1.0))
        .unwrap()
        .with_growth_b(1.5)
        .unwrap();
    let noise = NoiseModel::BoundedMultiplicative { sigma: 0.5 };
    assert!(simulate_rs_special_path(&spec, &noise, 2.0, 10, 3, 0).is_err());
    assert!(simulate_rs_special_path(&spec, &noise, 0.0, 10, 3, 0).is_ok());
}

#[test]
fn example1_spike_count_has_the_harmonic_mean() {
    let (horizon, paths) = (2000u64, 2000u32);
    let expected: f64 = (0..horizon).map(example1_p).sum();
    let var: f64 = (0..horizon).map(|n| example1_p(n) * (1.0 - example1_p(n))).sum();
    let total: usize = (0..paths)
        .map(|i| simulate_example1_path(horizon, 5, i).unwrap().spikes.len())
        .sum();
    let mean = total as f64 / paths as f64;
    assert!(
        (mean - expected).abs() < 4.0 * (var / paths as f64).sqrt(),
        "{mean} vs {expected}"
    );
}

#[test]
fn two_state_profile_matches_the_eigenvalue_form() {
    let (a, b) = (0.3, 0.15);
    let p = StochasticMatrix::from_rows(&[vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap();
    let s = tv_profile_of_matrix(&p, 40).unwrap();
    for (n, v) in s.iter().enumerate() {
        let closed = 2.0 * a.max(b) / (a + b) * (1.0 - a - b).abs().powi(n as i32);
        assert!((v - closed).abs() < 1e-10, "n = {n}: {v} vs {closed}");
    }
}

#[test]
fn linear_q_step_on_tabular_features() {
    let f = FeatureMap::tabular(2, 2);
    let w = vec![1.0, 2.0, 3.0, 4.0];
    let tr = Transition {
        s: 0,
        a: 1,
        r: 0.5,
        s_next: 1,
    };
    // delta = 0.5 + 0.9 * max(3, 4) - 2 = 2.1
    let next = linear_q_step(&w, &tr, 0.1, &f, 0.9);
    assert!((next[1] - (2.0 + 0.1 * 2.1)).abs() < 1e-15);
    assert_eq!([next[0], next[2], next[3]], [1.0, 3.0, 4.0]);
}

#[test]
fn baird_q_learning_equals_its_sa_embedding() {
    let (mdp, features) = baird(0.99).unwrap();
    let cfg = PolicyConfig::new(0.2, 1.0).unwrap();
    let schedule = Schedule::lr1(1.0, 0.8).unwrap();
    let emb = mdp_to_sa(&mdp, &features, &cfg).unwrap();
    for path in 0..3 {
        let q = run_linear_q(&mdp, &features, &cfg, &schedule, 5000, 21, path).unwrap();
        let y0 = emb.initial_y(&Stream::new(21, path)).unwrap();
        let sa = run_sa(&emb, &emb, &schedule, &vec![0.0; features.dim], y0, 5000, 21, path).unwrap();
        assert_eq!(q.w_trajectory, sa.ws);
    }
}

#[test]
fn lr1_skeleton_settles_early() {
    let schedule = Schedule::lr1(1.0, 0.8).unwrap();
    let regime = select_regime(schedule.kind(), 0.8, None, None).unwrap();
    let sk = build_skeleton(&schedule, regime, 1_000_000).unwrap();
    assert!(sk.check_brackets(&schedule).unwrap().ok);
    let m0 = sk.ratio_m0(50).expect("m0 exists");
    assert!(m0 <= 100);
    for m in m0..sk.segments() {
        assert!(sk.realized[m] <= 2.0 * sk.targets[m]);
    }
}
