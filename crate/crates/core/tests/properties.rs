use proptest::prelude::*;

use siegmund::analysis::{dist_to_ball, dist_to_interval, order_quantile, quantile_sorted, recording_grid};
use siegmund::formats::{parse_path_csv, path_csv};
use siegmund::markov::{
    stationary_distribution, tau_alpha, MixingProfile, ParamKernel, StochasticMatrix, TiltedKernel,
};
use siegmund::numeric::norm;
use siegmund::rl::{behavior_policy, random_mdp, PolicyConfig};
use siegmund::rng::{inverse_cdf, Stream};
use siegmund::schedules::{build_skeleton, select_regime, Schedule};

fn stochastic_rows(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn interval_distance_is_one_lipschitz(a in 0.0f64..1e6, b in 0.0f64..1e6, hi in 0.0f64..100.0) {
        let gap = (dist_to_interval(a, hi) - dist_to_interval(b, hi)).abs();
        prop_assert!(gap <= (a - b).abs() * (1.0 + 1e-15) + 1e-12);
        prop_assert!(dist_to_interval(a, hi) >= 0.0);
    }

    #[test]
    fn ball_distance_vanishes_exactly_inside(w in prop::collection::vec(-10.0f64..10.0, 1..6), r in 0.0f64..20.0) {
        let d = dist_to_ball(&w, r);
        prop_assert_eq!(d == 0.0, norm(&w) <= r);
        if d > 0.0 {
            prop_assert!((d - (norm(&w) - r)).abs() <= 1e-12 * (1.0 + norm(&w)));
        }
    }

    #[test]
    fn ball_distance_is_one_lipschitz(
        pair in (1usize..5).prop_flat_map(|d| (prop::collection::vec(-5.0f64..5.0, d), prop::collection::vec(-5.0f64..5.0, d))),
        r in 0.0f64..5.0,
    ) {
        let (u, v) = pair;
        let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        prop_assert!((dist_to_ball(&u, r) - dist_to_ball(&v, r)).abs() <= norm(&diff) + 1e-12);
    }

    #[test]
    fn quantiles_are_monotone_and_bracketed(mut xs in prop::collection::vec(-1e3f64..1e3, 1..60), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let a = quantile_sorted(&xs, lo);
        let b = quantile_sorted(&xs, hi);
        prop_assert!(a <= b);
        prop_assert!(xs[0] <= a && b <= xs[xs.len() - 1]);
    }

    #[test]
    fn order_quantile_covers_the_requested_fraction(xs in prop::collection::vec(0.0f64..1e3, 1..200), q in 0.01f64..1.0) {
        let t = order_quantile(&xs, q);
        let covered = xs.iter().filter(|&&x| x <= t).count() as f64 / xs.len() as f64;
        prop_assert!(covered >= q - 1e-12);
        // no smaller sample value would do
        let below = xs.iter().filter(|&&x| x < t).count() as f64 / xs.len() as f64;
        prop_assert!(below < q);
    }

    #[test]
    fn segment_sums_are_additive(c in 0.1f64..5.0, nu in 0.7f64..1.0, lo in 0u64..2000, a in 0u64..2000, b in 0u64..2000) {
        let s = Schedule::lr1(c, nu).unwrap();
        let (mid, hi) = (lo + a, lo + a + b);
        let whole = s.segment_sum(lo, hi).unwrap();
        let parts = s.segment_sum(lo, mid).unwrap() + s.segment_sum(mid, hi).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1.0));
    }

    #[test]
    fn skeleton_segments_bracket_their_targets(c in 0.2f64..5.0, nu in 0.7f64..1.0, lr2 in any::<bool>(), nu_log in 0.1f64..0.9) {
        let schedule = if lr2 { Schedule::lr2(c, nu_log).unwrap() } else { Schedule::lr1(c, nu).unwrap() };
        let regime = select_regime(schedule.kind(), schedule.nu().unwrap(), None, None).unwrap();
        let sk = build_skeleton(&schedule, regime, 200_000).unwrap();
        prop_assert!(sk.anchors.windows(2).all(|w| w[0] < w[1]));
        for m in 0..sk.segments() {
            let r = sk.segment(m);
            let mass = schedule.segment_sum(r.start, r.end).unwrap();
            let last = schedule.alpha_at(r.end - 1).unwrap();
            let t = sk.targets[m];
            prop_assert!(mass >= t * (1.0 - 1e-12));
            prop_assert!(mass <= (t + last) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn behavior_policy_respects_the_exploration_floor(
        w in prop::collection::vec(-50.0f64..50.0, 3),
        eps in 0.01f64..0.99,
        k0 in 0.1f64..10.0,
        s in 0usize..5,
        seed in 0u64..1000,
    ) {
        let (_, features) = random_mdp(5, 2, 3, 0.9, 1.0, seed).unwrap();
        let cfg = PolicyConfig::new(eps, k0).unwrap();
        let mu = behavior_policy(&w, s, &cfg, &features);
        let total: f64 = mu.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(mu.iter().all(|&p| p >= eps / 2.0 - 1e-15));
    }

    #[test]
    fn stationary_distribution_is_invariant(rows in stochastic_rows(6)) {
        let p = StochasticMatrix::from_rows(&rows).unwrap();
        let d = stationary_distribution(&p).unwrap();
        prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..6 {
            let back: f64 = (0..6).map(|i| d[i] * rows[i][j]).sum();
            prop_assert!((back - d[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_alpha_is_the_first_time_below_alpha(c in 0.01f64..100.0, tau in 0.0f64..0.999, alpha in 1e-8f64..2.0) {
        let n = tau_alpha(&MixingProfile { c_mix: c, tau_rate: tau }, alpha).unwrap();
        let level = |k: u64| c * tau.powi(k as i32);
        prop_assert!(level(n) <= alpha);
        if n > 0 {
            prop_assert!(level(n - 1) > alpha);
        }
    }

    #[test]
    fn inverse_cdf_lands_on_positive_weight(mut ws in prop::collection::vec(0.0f64..1.0, 1..12), u in 0.0f64..1.0, zero_at in 0usize..12) {
        if zero_at < ws.len() {
            ws[zero_at] = 0.0;
        }
        prop_assume!(ws.iter().any(|&w| w > 0.0));
        let s: f64 = ws.iter().sum();
        let ws: Vec<f64> = ws.iter().map(|w| w / s).collect();
        let k = inverse_cdf(&ws, u);
        prop_assert!(ws[k] > 0.0);
        let before: f64 = ws[..k].iter().sum();
        prop_assert!(before <= u + 1e-12);
    }

    #[test]
    fn path_csv_round_trips_bit_for_bit(xs in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 0..50)) {
        prop_assert_eq!(parse_path_csv(&path_csv(&xs)).unwrap(), xs);
    }

    #[test]
    fn uniforms_stay_in_the_unit_interval(seed in any::<u64>(), path in any::<u32>(), step in any::<u64>()) {
        let u = Stream::new(seed, path).uniform(step);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_eq!(u, Stream::new(seed, path).uniform(step));
    }

    #[test]
    fn recording_grid_is_sorted_and_spans_the_horizon(horizon in 1u64..10_000_000, points in 2usize..500) {
        let g = recording_grid(horizon, points);
        prop_assert_eq!(g[0], 0);
        prop_assert_eq!(*g.last().unwrap(), horizon);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tilted_kernel_rows_are_distributions(w in prop::collection::vec(-1e3f64..1e3, 2), y in 0usize..3) {
        let base = StochasticMatrix::from_rows(&[
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.3, 0.3, 0.4],
        ]).unwrap();
        let tilts = vec![
            vec![0.1, -0.05, -0.05, -0.1, 0.05, 0.05, 0.0, 0.1, -0.1],
            vec![-0.05, 0.0, 0.05, 0.05, -0.1, 0.05, 0.1, 0.0, -0.1],
        ];
        let k = TiltedKernel::new(base, tilts, 2).unwrap();
        let mut row = vec![0.0; 3];
        k.row(&w, y, &mut row);
        prop_assert!(row.iter().all(|&p| p >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
