//! The acceptance suite: ten end-to-end experiments with fixed tolerances.
//!
//! Each check returns a [`CheckOutcome`]; a check passes only if its numeric
//! verdicts pass and it finished inside its wall-clock budget.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use siegmund::analysis::{
    calibrate_from_trackers, coverage_from_scales, dist_to_interval, fit_rate_points, noise_decomposition,
    rate_certificate, recording_grid, EnsembleStats, Envelope, ScaleTracker, SegmentNoise,
};
use siegmund::ensemble::{map_paths, with_threads};
use siegmund::markov::{
    fit_mixing_profile, stationary_distribution, tau_alpha, total_variation_profile, tv_profile_of_matrix,
    AffineUpdate, MixingProfile, ParamKernel, StochasticMatrix, TableKernel,
};
use siegmund::numeric::norm;
use siegmund::processes::{
    example1_mean_audit, stream_example1, stream_rs_special, GrowthMonitor, NoiseModel, Observer, RSSpecialSpec,
    Sequence,
};
use siegmund::rl::{mdp_to_sa, run_linear_q, stream_linear_q, PolicyConfig};
use siegmund::rng::{lane, Stream};
use siegmund::sa::run_sa;
use siegmund::schedules::{build_skeleton, select_regime, Regime, Schedule, ScheduleKind, SkeletonTimescale};
use siegmund::{Error, Result};

use crate::corpus::builtin;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub criterion: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub metrics: BTreeMap<String, f64>,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {}: {} [{:.2} s / {:.0} s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            self.detail,
            self.seconds,
            self.budget_seconds
        )
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 1, threads: None }
    }
}

type Metrics = BTreeMap<String, f64>;

fn timed(
    criterion: u32,
    name: &'static str,
    budget_seconds: f64,
    f: impl FnOnce(&mut Metrics) -> Result<(bool, String)>,
) -> CheckOutcome {
    let start = Instant::now();
    let mut metrics = Metrics::new();
    let (ok, mut detail) = match f(&mut metrics) {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    let seconds = start.elapsed().as_secs_f64();
    if seconds > budget_seconds {
        detail.push_str("; over the time budget");
    }
    CheckOutcome {
        criterion,
        name,
        pass: ok && seconds <= budget_seconds,
        detail,
        metrics,
        seconds,
        budget_seconds,
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}

pub const CRITERIA: &[u32] = &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

pub fn run_criterion(criterion: u32, opts: &SuiteOptions) -> Result<CheckOutcome> {
    Ok(match criterion {
        1 => deterministic_convergence(opts),
        2 => example1_divergence(opts),
        3 => bounded_noise_convergence(opts),
        4 => rate_certificate_check(opts),
        5 => envelope_coverage_check(opts),
        6 => skeleton_lemmas(opts),
        7 => linear_q_stability(opts),
        8 => embedding_equivalence(opts),
        9 => markov_oracles(opts),
        10 => noise_decomposition_check(opts),
        other => return Err(Error::Argument(format!("no acceptance criterion {other}"))),
    })
}

pub fn run_suite(only: &[u32], opts: &SuiteOptions) -> Result<Vec<CheckOutcome>> {
    let list = if only.is_empty() { CRITERIA } else { only };
    list.iter().map(|&c| run_criterion(c, opts)).collect()
}

fn bounded_noise_spec(t_seq: Sequence) -> Result<(RSSpecialSpec, NoiseModel)> {
    let sigma = 0.5;
    let spec = RSSpecialSpec::new(1.0, 1.0, t_seq)?.with_growth_b(1.0 + sigma)?;
    let noise = NoiseModel::BoundedMultiplicative { sigma };
    noise.check(&spec)?;
    Ok((spec, noise))
}

/// Criterion 1: deterministic iteration reaches `[0, xi/alpha]`.
pub fn deterministic_convergence(_opts: &SuiteOptions) -> CheckOutcome {
    timed(1, "deterministic RS-Special convergence", 1.0, |metrics| {
        let horizon = 100_000u64;
        let spec = RSSpecialSpec::new(1.0, 1.0, Sequence::power(1.0, 0.75, 1.0))?;
        let hi = spec.bound();
        let mut ok = true;
        let mut parts = Vec::new();
        for z0 in [0.0, 10.0] {
            let mut last = f64::INFINITY;
            let mut monotone = true;
            let mut d_end = 0.0;
            stream_rs_special(
                &spec,
                &NoiseModel::Deterministic,
                z0,
                horizon,
                Stream::new(0, 0),
                &mut |n: u64, z: f64| {
                    let d = dist_to_interval(z, hi);
                    if n >= horizon / 2 {
                        monotone &= d <= last;
                        last = d;
                    }
                    d_end = d;
                },
            )?;
            let pass = d_end <= 1e-3 && monotone;
            ok &= pass;
            metrics.insert(format!("d_final_z0_{z0}"), d_end);
            parts.push(format!(
                "z0 = {z0}: d_N = {d_end:.3e} (<= 1e-3), tail monotone {}",
                verdict(monotone)
            ));
        }
        Ok((ok, parts.join("; ")))
    })
}

/// Criterion 2: Example 1 escapes despite step sizes satisfying the usual conditions.
pub fn example1_divergence(opts: &SuiteOptions) -> CheckOutcome {
    timed(2, "Example-1 divergence", 30.0, |metrics| {
        let (paths, horizon) = (1000u32, 100_000u64);
        let seed = opts.seed.wrapping_add(2);
        let maxima = with_threads(opts.threads, || {
            map_paths(0, paths, |i| {
                let mut running = 0.0f64;
                stream_example1(horizon, Stream::new(seed, i), &mut |_, z: f64| running = running.max(z))?;
                Ok(running)
            })
        })?;
        let fraction = maxima.iter().filter(|&&m| m > 5.0).count() as f64 / paths as f64;
        let audit = example1_mean_audit(horizon);
        metrics.insert("fraction_max_above_5".into(), fraction);
        metrics.insert("mean_identity_relative_gap".into(), audit);
        let ok = fraction >= 0.90 && audit <= 1e-14;
        Ok((
            ok,
            format!(
                "fraction with running max > 5 = {fraction:.3} (>= 0.90); conditional-mean audit gap {audit:.1e} (<= 1e-14)"
            ),
        ))
    })
}

/// Criterion 3: bounded multiplicative noise converges to `[0, 1]`.
pub fn bounded_noise_convergence(opts: &SuiteOptions) -> CheckOutcome {
    timed(3, "bounded-noise RS-Special convergence", 60.0, |metrics| {
        let (paths, horizon) = (200u32, 100_000u64);
        let (spec, noise) = bounded_noise_spec(Sequence::power(1.0, 0.75, 1.0))?;
        let hi = spec.bound();
        let tail = horizon - horizon / 10;
        let seed = opts.seed.wrapping_add(3);
        let results = with_threads(opts.threads, || {
            map_paths(0, paths, |i| {
                let mut mon = GrowthMonitor::new(&spec.t_seq, spec.growth_b);
                let mut tail_max = 0.0f64;
                stream_rs_special(
                    &spec,
                    &noise,
                    0.0,
                    horizon,
                    Stream::new(seed, i),
                    &mut |n: u64, z: f64| {
                        mon.observe(n, z);
                        if n >= tail {
                            tail_max = tail_max.max(dist_to_interval(z, hi));
                        }
                    },
                )?;
                Ok((tail_max, mon.finish()?))
            })
        })?;
        let tail_max = results.iter().map(|r| r.0).fold(0.0, f64::max);
        let growth_ok = results.iter().filter(|r| r.1.ok).count();
        let worst_ratio = results.iter().map(|r| r.1.worst_ratio).fold(0.0, f64::max);
        metrics.insert("tail_max_distance".into(), tail_max);
        metrics.insert("worst_growth_ratio".into(), worst_ratio);
        let ok = tail_max <= 0.05 && growth_ok == paths as usize;
        Ok((
            ok,
            format!(
                "max d over final 10% = {tail_max:.4} (<= 0.05); growth condition with B = {} holds on {growth_ok}/{paths} paths (worst ratio {worst_ratio:.3})",
                spec.growth_b
            ),
        ))
    })
}

/// Criterion 4: rate exponent and a per-path rate certificate.
pub fn rate_certificate_check(opts: &SuiteOptions) -> CheckOutcome {
    timed(4, "rate certificate", 120.0, |metrics| {
        let (train, holdout, horizon) = (500u32, 500u32, 100_000u64);
        let eta = 0.5;
        let tail_start = 1000usize;
        let (spec, noise) = bounded_noise_spec(Sequence::power(1.0, 1.0, 3.0))?;
        let hi = spec.bound();
        let grid = recording_grid(horizon, 400);
        let seed = opts.seed.wrapping_add(4);
        // per path: distances on the grid and the uncapped certificate statistic
        let results = with_threads(opts.threads, || {
            map_paths(0, train + holdout, |i| {
                let mut d = Vec::with_capacity(horizon as usize + 1);
                stream_rs_special(&spec, &noise, 0.0, horizon, Stream::new(seed, i), &mut |_, z: f64| {
                    d.push(dist_to_interval(z, hi))
                })?;
                let sup = rate_certificate(&d, eta, tail_start, f64::INFINITY)?.sup_tail;
                let on_grid: Vec<f64> = grid.iter().map(|&n| d[n as usize]).collect();
                Ok((on_grid, sup))
            })
        })?;
        let values: Vec<Vec<f64>> = results.iter().map(|r| r.0.clone()).collect();
        let stats = EnsembleStats::from_grid(grid.clone(), &values, &[0.5], &[], seed, 0)?;
        let fit = fit_rate_points(&grid, &stats.means, 0.5)?;
        let tol = results[..train as usize].iter().map(|r| r.1).fold(0.0, f64::max);
        let passed = results[train as usize..].iter().filter(|r| r.1 <= tol).count();
        let rate = passed as f64 / holdout as f64;
        metrics.insert("fitted_exponent".into(), fit.exponent);
        metrics.insert("fit_r_squared".into(), fit.r_squared);
        metrics.insert("certificate_tol".into(), tol);
        metrics.insert("holdout_pass_rate".into(), rate);
        let ok = fit.exponent >= eta / 2.0 - 0.05 && rate >= 0.95;
        Ok((
            ok,
            format!(
                "fitted exponent {:.3} (>= {:.2}, R^2 {:.3}); certificate tol {tol:.3} from {train} training paths passes on {:.1}% of {holdout} holdout paths (>= 95%)",
                fit.exponent,
                eta / 2.0 - 0.05,
                fit.r_squared,
                100.0 * rate
            ),
        ))
    })
}

/// Criterion 5: calibrated concentration envelope covers fresh paths.
pub fn envelope_coverage_check(opts: &SuiteOptions) -> CheckOutcome {
    timed(5, "envelope coverage", 180.0, |metrics| {
        let (train, holdout, horizon) = (1000u32, 1000u32, 100_000u64);
        let delta = 0.1;
        let (c, n0) = (2.0, 4.0);
        let (spec, noise) = bounded_noise_spec(Sequence::power(c, 1.0, n0))?;
        let hi = spec.bound();
        let template = Envelope::Rs {
            b_cap: 1.0,
            b_prime: 1.0,
            n0,
            k: 1,
        };
        let seed = opts.seed.wrapping_add(5);
        let trackers = with_threads(opts.threads, || {
            map_paths(0, train + holdout, |i| {
                let mut tr = ScaleTracker::new(template, &[delta], horizon)?;
                stream_rs_special(
                    &spec,
                    &noise,
                    0.0,
                    horizon,
                    Stream::new(seed, i),
                    &mut |n: u64, z: f64| tr.push(n, dist_to_interval(z, hi)),
                )?;
                Ok(tr)
            })
        })?;
        let (fit_set, test_set) = trackers.split_at(train as usize);
        let env = calibrate_from_trackers(template, &[delta], fit_set)?;
        let required: Vec<f64> = test_set.iter().map(|t| t.full_scale[0]).collect();
        let report = coverage_from_scales(&required, &env, delta);
        metrics.insert("calibrated_scale".into(), env.scale());
        metrics.insert("holdout_coverage".into(), report.coverage);
        let ok = report.coverage >= 0.9 - 0.03;
        Ok((
            ok,
            format!(
                "scale {:.4} calibrated on {train} paths at delta = {delta}; simultaneous coverage on {holdout} holdout paths = {:.3} (>= 0.87)",
                env.scale(),
                report.coverage
            ),
        ))
    })
}

/// Skeleton lemma diagnostics shared by criterion 6 and the skeleton experiment.
#[derive(Clone, Debug)]
pub struct SkeletonSummary {
    pub skeleton: SkeletonTimescale,
    pub brackets_ok: bool,
    pub m0: Option<usize>,
    /// `alpha_t <= C T_m^2` constant over `[m0, M)`.
    pub c_full: f64,
    /// The same constant over `[m0, M/2]`.
    pub c_half: f64,
}

impl SkeletonSummary {
    pub fn m0_ok(&self) -> bool {
        self.m0.is_some_and(|m| m <= 100)
    }

    pub fn stable(&self) -> bool {
        self.c_full.is_finite() && self.c_full <= 1.1 * self.c_half
    }
}

pub fn skeleton_summary(schedule: &Schedule, regime: Regime, horizon: u64) -> Result<SkeletonSummary> {
    let sk = build_skeleton(schedule, regime, horizon)?;
    let brackets = sk.check_brackets(schedule)?;
    let m0 = sk.ratio_m0(50);
    let (c_full, c_half) = match m0 {
        Some(m0) => (
            sk.lr_bound_constant(schedule, m0, sk.segments())?,
            sk.lr_bound_constant(schedule, m0, m0.max(sk.segments() / 2) + 1)?,
        ),
        None => (f64::NAN, f64::NAN),
    };
    Ok(SkeletonSummary {
        skeleton: sk,
        brackets_ok: brackets.ok,
        m0,
        c_full,
        c_half,
    })
}

fn skeleton_report(schedule: &Schedule, horizon: u64, metrics: &mut Metrics, tag: &str) -> Result<(bool, String)> {
    let regime = select_regime(schedule.kind(), schedule.nu().unwrap_or(f64::NAN), None, None)?;
    let s = skeleton_summary(schedule, regime, horizon)?;
    metrics.insert(format!("{tag}_segments"), s.skeleton.segments() as f64);
    metrics.insert(format!("{tag}_m0"), s.m0.map_or(f64::NAN, |m| m as f64));
    metrics.insert(format!("{tag}_lr_constant"), s.c_full);
    let ok = s.brackets_ok && s.m0_ok() && s.stable();
    Ok((
        ok,
        format!(
            "{tag}: {} segments, brackets {}, m0 = {} (<= 100), C = {:.4} (half-range {:.4}, stable {})",
            s.skeleton.segments(),
            verdict(s.brackets_ok),
            s.m0.map_or("none".into(), |m| m.to_string()),
            s.c_full,
            s.c_half,
            verdict(s.stable())
        ),
    ))
}

/// Criterion 6: skeleton bracketing, `alpha_bar_m <= 2 T_m`, and `alpha_t <= C T_m^2`.
pub fn skeleton_lemmas(_opts: &SuiteOptions) -> CheckOutcome {
    timed(6, "skeleton construction", 10.0, |metrics| {
        let horizon = 1_000_000u64;
        let (a, da) = skeleton_report(&Schedule::lr1(1.0, 0.8)?, horizon, metrics, "LR1(0.8)")?;
        let (b, db) = skeleton_report(&Schedule::lr2(1.0, 0.5)?, horizon, metrics, "LR2(0.5)")?;
        Ok((a && b, format!("{da}; {db}")))
    })
}

/// Step-size coefficient used for the Q-learning checks.
pub const Q_C_ALPHA: f64 = 5.0;

struct SeedSummary {
    max_norm: f64,
    half_running_max: f64,
    diverged: bool,
    worst_increment: f64,
}

/// Criterion 7: linear Q-learning under the adaptive policy stays bounded.
pub fn linear_q_stability(opts: &SuiteOptions) -> CheckOutcome {
    timed(7, "linear Q-learning stability", 600.0, |metrics| {
        let (seeds, horizon) = (100u32, 1_000_000u64);
        let (mdp, features) = builtin("random5")?;
        let cfg = PolicyConfig::new(0.1, 1.0)?;
        let schedule = Schedule::lr1(Q_C_ALPHA, 0.8)?;
        let regime = select_regime(ScheduleKind::Lr1, 0.8, None, None)?;
        let sk = build_skeleton(&schedule, regime, horizon)?;
        let m0 = sk
            .ratio_m0(50)
            .ok_or_else(|| Error::InsufficientData("skeleton too short to report m0".into()))?;
        let seed = opts.seed.wrapping_add(7);
        let w0 = vec![0.0; features.dim];
        let summaries = with_threads(opts.threads, || {
            map_paths(0, seeds, |i| {
                let mut running = 0.0f64;
                let mut half = 0.0;
                let mut z_prev: Option<f64> = None;
                let mut next_m = 0usize;
                let mut worst = 0.0f64;
                let diverged = stream_linear_q(
                    &mdp,
                    &features,
                    &cfg,
                    &schedule,
                    &w0,
                    horizon,
                    &Stream::new(seed, i),
                    |t, w, _| {
                        let nrm = norm(w);
                        running = running.max(nrm);
                        if t == horizon / 2 {
                            half = running;
                        }
                        if next_m < sk.anchors.len() && t == sk.anchors[next_m] {
                            let z = nrm * nrm;
                            if let Some(zp) = z_prev {
                                let m = next_m - 1;
                                if m >= m0 {
                                    let tm = sk.targets[m];
                                    worst = worst.max((z - zp).abs() / (tm * (zp + 1.0)));
                                }
                            }
                            z_prev = Some(z);
                            next_m += 1;
                        }
                    },
                )?;
                Ok(SeedSummary {
                    max_norm: running,
                    half_running_max: half,
                    diverged,
                    worst_increment: worst,
                })
            })
        })?;
        let max_norm = summaries.iter().map(|s| s.max_norm).fold(0.0, f64::max);
        let diverged = summaries.iter().filter(|s| s.diverged).count();
        let worst_growth = summaries
            .iter()
            .map(|s| (s.max_norm - s.half_running_max) / s.half_running_max)
            .fold(0.0, f64::max);
        let worst_increment = summaries.iter().map(|s| s.worst_increment).fold(0.0, f64::max);
        metrics.insert("max_norm".into(), max_norm);
        metrics.insert("worst_running_max_growth".into(), worst_growth);
        metrics.insert("worst_skeleton_increment_ratio".into(), worst_increment);
        metrics.insert("m0".into(), m0 as f64);
        let bounded = max_norm < 1e6 && diverged == 0;
        let plateau = worst_growth < 0.01;
        let increments = worst_increment <= 16.0;
        Ok((
            bounded && plateau && increments,
            format!(
                "max ||w|| = {max_norm:.3} over {seeds} seeds, {diverged} diverged; running-max growth over final half {:.3}% (< 1%); max |z_(m+1) - z_m| / (T_m (z_m + 1)) = {worst_increment:.3} (<= 16) for m >= m0 = {m0}",
                100.0 * worst_growth
            ),
        ))
    })
}

/// Criterion 8: closed-loop Q-learning equals generic SA on the embedded chain.
pub fn embedding_equivalence(opts: &SuiteOptions) -> CheckOutcome {
    timed(8, "SA-embedding equivalence", 10.0, |metrics| {
        let horizon = 100_000u64;
        let cfg = PolicyConfig::new(0.1, 1.0)?;
        let schedule = Schedule::lr1(Q_C_ALPHA, 0.8)?;
        let seed = opts.seed.wrapping_add(8);
        let mut ok = true;
        let mut parts = Vec::new();
        for name in ["random5", "random3"] {
            let (mdp, features) = builtin(name)?;
            let emb = mdp_to_sa(&mdp, &features, &cfg)?;
            let mut mismatched = 0usize;
            for path in 0..2u32 {
                let q = run_linear_q(&mdp, &features, &cfg, &schedule, horizon, seed, path)?;
                let y0 = emb.initial_y(&Stream::new(seed, path))?;
                let sa = run_sa(&emb, &emb, &schedule, &vec![0.0; features.dim], y0, horizon, seed, path)?;
                if q.w_trajectory != sa.ws || q.diverged != sa.diverged {
                    mismatched += 1;
                }
            }
            metrics.insert(format!("{name}_mismatched_paths"), mismatched as f64);
            ok &= mismatched == 0;
            parts.push(format!(
                "{name}: {}/2 paths identical over {horizon} steps",
                2 - mismatched
            ));
        }
        Ok((ok, parts.join("; ")))
    })
}

fn random_chain(stream: Stream, n: usize) -> Result<StochasticMatrix> {
    let mut cur = stream.cursor();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..n)
            .map(|_| {
                let u = cur.next_f64();
                if u < 0.3 {
                    0.0
                } else {
                    u
                }
            })
            .collect();
        // a cycle plus a self-loop at 0 keeps every chain irreducible and aperiodic
        row[(i + 1) % n] += 0.5;
        if i == 0 {
            row[0] += 0.5;
        }
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= z);
        rows.push(row);
    }
    StochasticMatrix::from_rows(&rows)
}

fn power_iteration(p: &StochasticMatrix) -> Vec<f64> {
    let n = p.size();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..100_000 {
        let next = p.left_mul(&pi);
        let change: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if change < 1e-15 {
            break;
        }
    }
    pi
}

fn brute_force_tau(c: f64, tau: f64, alpha: f64) -> u64 {
    let mut n = 0u64;
    while c * tau.powi(n as i32) > alpha {
        n += 1;
    }
    n
}

/// Criterion 9: stationary law, `tau_alpha` and TV profile against independent oracles.
pub fn markov_oracles(opts: &SuiteOptions) -> CheckOutcome {
    timed(9, "Markov toolbox oracles", 10.0, |metrics| {
        let seed = opts.seed.wrapping_add(9);
        let mut worst_tv = 0.0f64;
        for i in 0..100u32 {
            let p = random_chain(Stream::new(seed, i).with_lane(lane::GENERATE), 10)?;
            let pi = stationary_distribution(&p)?;
            let oracle = power_iteration(&p);
            let tv = 0.5 * pi.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>();
            worst_tv = worst_tv.max(tv);
        }
        let mut cur = Stream::new(seed, 1000).with_lane(lane::GENERATE).cursor();
        let mut tau_mismatch = 0usize;
        for _ in 0..1000 {
            let c = 1.0 + 9.0 * cur.next_f64();
            let tau = 0.01 + 0.98 * cur.next_f64();
            let alpha = 10f64.powf(-6.0 * cur.next_f64());
            let profile = MixingProfile {
                c_mix: c,
                tau_rate: tau,
            };
            if tau_alpha(&profile, alpha)? != brute_force_tau(c, tau, alpha) {
                tau_mismatch += 1;
            }
        }
        let mut worst_profile = 0.0f64;
        for _ in 0..20 {
            let (a, b) = (0.05 + 0.9 * cur.next_f64(), 0.05 + 0.9 * cur.next_f64());
            let p = StochasticMatrix::from_rows(&[vec![1.0 - a, a], vec![b, 1.0 - b]])?;
            let profile = tv_profile_of_matrix(&p, 60)?;
            let lambda = (1.0 - a - b).abs();
            for (n, s) in profile.iter().enumerate() {
                let exact = 2.0 * a.max(b) / (a + b) * lambda.powi(n as i32);
                worst_profile = worst_profile.max((s - exact).abs());
            }
        }
        metrics.insert("worst_stationary_tv".into(), worst_tv);
        metrics.insert("tau_mismatches".into(), tau_mismatch as f64);
        metrics.insert("worst_two_state_profile_error".into(), worst_profile);
        let ok = worst_tv <= 1e-8 && tau_mismatch == 0 && worst_profile <= 1e-10;
        Ok((
            ok,
            format!(
                "stationary vs power iteration worst TV {worst_tv:.1e} (<= 1e-8) on 100 chains; tau_alpha mismatches {tau_mismatch}/1000; two-state profile error {worst_profile:.1e} (<= 1e-10)"
            ),
        ))
    })
}

/// Worst mixing profile over a few iterates of the trajectory.
pub fn conservative_profile(kernel: &dyn ParamKernel, ws: &[Vec<f64>]) -> Result<MixingProfile> {
    let picks = [0, ws.len() / 4, ws.len() / 2, ws.len() - 1];
    let mut worst = MixingProfile {
        c_mix: 0.0,
        tau_rate: 0.0,
    };
    for &i in &picks {
        let p = fit_mixing_profile(&total_variation_profile(kernel, &ws[i], 60)?)?;
        worst.c_mix = worst.c_mix.max(p.c_mix);
        worst.tau_rate = worst.tau_rate.max(p.tau_rate);
    }
    Ok(worst)
}

/// `(head, tail)` suprema of a ratio over the two halves of the segments from `m0`.
pub fn halves(rows: &[SegmentNoise], m0: usize, f: impl Fn(&SegmentNoise) -> f64) -> (f64, f64) {
    let rows = &rows[m0.min(rows.len())..];
    let mid = rows.len() / 2;
    let sup = |r: &[SegmentNoise]| r.iter().map(&f).fold(0.0, f64::max);
    (sup(&rows[..mid]), sup(&rows[mid..]))
}

/// Criterion 10: the four-term noise decomposition telescopes and scales.
pub fn noise_decomposition_check(opts: &SuiteOptions) -> CheckOutcome {
    timed(10, "noise decomposition", 120.0, |metrics| {
        let horizon = 20_000u64;
        let (mdp, features) = builtin("random3")?;
        let cfg = PolicyConfig::new(0.1, 1.0)?;
        let emb = mdp_to_sa(&mdp, &features, &cfg)?;
        let schedule = Schedule::lr1(Q_C_ALPHA, 0.8)?;
        let regime = select_regime(ScheduleKind::Lr1, 0.8, None, None)?;
        let sk: SkeletonTimescale = build_skeleton(&schedule, regime, horizon)?;
        let m0 = sk
            .ratio_m0(50)
            .ok_or_else(|| Error::InsufficientData("skeleton too short to report m0".into()))?;
        let seed = opts.seed.wrapping_add(10);
        let stream = Stream::new(seed, 0);
        let y0 = emb.initial_y(&stream)?;
        let w0 = vec![0.0; features.dim];
        let traj = run_sa(&emb, &emb, &schedule, &w0, y0, horizon, seed, 0)?;
        let profile = conservative_profile(&emb, &traj.ws)?;
        let rows = noise_decomposition(&traj, &schedule, &sk, &emb, &emb, &profile)?;
        let recon = rows.iter().map(|r| r.reconstruction_error).fold(0.0, f64::max);

        // the same chain frozen at w = 0 with an affine update: s2 must vanish
        let table = TableKernel {
            matrix: emb.matrix(&w0)?,
            dim: features.dim,
        };
        let affine = contracting_affine(emb.state_count(), features.dim, seed)?;
        let frozen_traj = run_sa(&table, &affine, &schedule, &w0, y0, horizon, seed, 1)?;
        let frozen_profile = fit_mixing_profile(&tv_profile_of_matrix(&table.matrix, 60)?)?;
        let frozen_rows = noise_decomposition(&frozen_traj, &schedule, &sk, &table, &affine, &frozen_profile)?;
        let s2_max = frozen_rows
            .iter()
            .flat_map(|r| r.s2.iter().map(|x| x.abs()))
            .fold(0.0, f64::max);
        let frozen_recon = frozen_rows.iter().map(|r| r.reconstruction_error).fold(0.0, f64::max);

        let mut bounded = true;
        let mut parts = Vec::new();
        for (name, f) in [
            ("ratio1", (|r: &SegmentNoise| r.ratio1) as fn(&SegmentNoise) -> f64),
            ("ratio2", |r| r.ratio2),
            ("ratio4", |r| r.ratio4),
        ] {
            let (head, tail) = halves(&rows, m0, f);
            let ok = head.is_finite() && tail.is_finite() && tail <= 2.0 * head.max(f64::MIN_POSITIVE);
            bounded &= ok;
            metrics.insert(format!("{name}_head_sup"), head);
            metrics.insert(format!("{name}_tail_sup"), tail);
            parts.push(format!("{name} sup {head:.3}/{tail:.3}"));
        }
        let (h3, t3) = halves(&rows, m0, |r| r.ratio3);
        metrics.insert("ratio3_head_sup".into(), h3);
        metrics.insert("ratio3_tail_sup".into(), t3);
        metrics.insert("reconstruction_error".into(), recon.max(frozen_recon));
        metrics.insert("frozen_s2_max".into(), s2_max);
        metrics.insert("m0".into(), m0 as f64);
        let ok = recon <= 1e-10 && frozen_recon <= 1e-10 && s2_max == 0.0 && bounded;
        Ok((
            ok,
            format!(
                "{} segments on {} chain states, reconstruction error {:.1e} (<= 1e-10); s2 with w-independent kernel max |.| = {s2_max:.1e} (== 0); head/tail halves from m0 = {m0}: {} (tail <= 2 x head: {})",
                rows.len(),
                emb.state_count(),
                recon.max(frozen_recon),
                parts.join(", "),
                verdict(bounded)
            ),
        ))
    })
}

/// `H(w, y) = -(I + E_y) w + b_y` with small random `E_y` and `b_y`.
fn contracting_affine(states: usize, dim: usize, seed: u64) -> Result<AffineUpdate> {
    let mut cur = Stream::new(seed, 7).with_lane(lane::GENERATE).cursor();
    let mut a = Vec::with_capacity(states);
    let mut b = Vec::with_capacity(states);
    for _ in 0..states {
        let mut m: Vec<f64> = (0..dim * dim).map(|_| 0.2 * (2.0 * cur.next_f64() - 1.0)).collect();
        for i in 0..dim {
            m[i * dim + i] -= 1.0;
        }
        a.push(m);
        b.push((0..dim).map(|_| 2.0 * cur.next_f64() - 1.0).collect());
    }
    AffineUpdate::new(dim, a, b)
}
