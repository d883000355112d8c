//! Runs one validated experiment and writes its output bundle:
//! `manifest.json`, `summary.json` with verdicts, and CSV series.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use siegmund::analysis::{
    calibrate_from_trackers, coverage_from_scales, dist_to_interval, fit_rate_points, noise_csv, noise_decomposition,
    rate_certificate, recording_grid, EnsembleStats, ScaleTracker, MAX_EXACT_STATES,
};
use siegmund::ensemble::{map_paths, with_threads};
use siegmund::formats::{parse_kernel, parse_path_csv, path_csv};
use siegmund::markov::{drift_scan, AffineUpdate, ParamKernel, TiltedKernel, UpdateFn};
use siegmund::numeric::norm;
use siegmund::processes::{
    example1_mean_audit, stream_example1, stream_rs_general, stream_rs_special, GrowthMonitor, NoiseModel, Observer,
    RunInfo, Sequence,
};
use siegmund::rl::{stream_linear_q, FeatureMap, Mdp, PolicyConfig};
use siegmund::rng::Stream;
use siegmund::sa::{run_sa, stream_sa};
use siegmund::schedules::{build_skeleton, Schedule};
use siegmund::{Error, Result};

use crate::checks::{conservative_profile, halves, skeleton_summary};
use crate::config::{train_count, ExperimentConfig, ExperimentKind};

/// One pass/fail statement about an experiment. `criterion` names the
/// acceptance criterion the verdict instantiates, if any.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub criterion: Option<u32>,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

fn verdict(check: &str, criterion: Option<u32>, pass: bool, value: f64, threshold: f64, detail: String) -> Verdict {
    Verdict {
        check: check.into(),
        criterion,
        pass,
        value,
        threshold,
        detail,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputBundle {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub metrics: BTreeMap<String, f64>,
    pub wall_seconds: f64,
}

impl OutputBundle {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    kind: &'static str,
    config_sha256: String,
    config: &'a ExperimentConfig,
    seed: u64,
    /// Path ids `first..=last`; path `i` uses the stream keyed by `(seed, i)`.
    path_ids: (u32, u32),
    threads: usize,
    wall_seconds: f64,
    files: &'a [String],
    partial: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    kind: &'static str,
    all_pass: bool,
    verdicts: &'a [Verdict],
    metrics: &'a BTreeMap<String, f64>,
}

/// Collects the files of a bundle.
struct Sink {
    dir: PathBuf,
    files: Vec<String>,
}

impl Sink {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

#[derive(Default)]
struct Outcome {
    verdicts: Vec<Verdict>,
    metrics: BTreeMap<String, f64>,
}

impl Outcome {
    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }
}

/// SHA-256 of the expanded config's canonical JSON.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let json = serde_json::to_vec(cfg).map_err(|e| Error::Argument(e.to_string()))?;
    Ok(siegmund::sha256_hex(&json))
}

/// Executes the experiment and writes its bundle to `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<OutputBundle> {
    let start = Instant::now();
    fs::create_dir_all(&cfg.out)?;
    let mut sink = Sink {
        dir: cfg.out.clone(),
        files: Vec::new(),
    };
    let outcome = with_threads(cfg.threads, || -> Result<Outcome> {
        match cfg.kind {
            ExperimentKind::RsSpecial => run_rs_special(cfg, &mut sink),
            ExperimentKind::Example1 => run_example1(cfg, &mut sink),
            ExperimentKind::RsGeneral => run_rs_general(cfg, &mut sink),
            ExperimentKind::Skeleton => run_skeleton(cfg, &mut sink),
            ExperimentKind::LinearQ => run_linear_q_experiment(cfg, &mut sink),
            ExperimentKind::SaGeneric => run_sa_generic(cfg, &mut sink),
            ExperimentKind::Analyze => run_analyze(cfg, &mut sink),
        }
    })?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let summary = Summary {
        kind: cfg.kind.name(),
        all_pass: outcome.verdicts.iter().all(|v| v.pass),
        verdicts: &outcome.verdicts,
        metrics: &outcome.metrics,
    };
    sink.write("summary.json", &to_json(&summary)?)?;
    let mut files = sink.files.clone();
    files.push("manifest.json".into());
    let threads = with_threads(cfg.threads, rayon_threads);
    let manifest = Manifest {
        tool: "siegmund",
        version: env!("CARGO_PKG_VERSION"),
        kind: cfg.kind.name(),
        config_sha256: config_hash(cfg)?,
        config: cfg,
        seed: cfg.seed,
        path_ids: (0, cfg.paths - 1),
        threads,
        wall_seconds,
        files: &files,
        partial: false,
    };
    sink.write("manifest.json", &to_json(&manifest)?)?;
    Ok(OutputBundle {
        dir: cfg.out.clone(),
        files: sink.files,
        verdicts: outcome.verdicts,
        metrics: outcome.metrics,
        wall_seconds,
    })
}

fn rayon_threads() -> usize {
    siegmund::ensemble::current_threads()
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Argument(e.to_string()))
}

/// Per-path reductions of a scalar process observed through `d = (z - hi)^+`.
struct ScalarObserver<'a> {
    grid: &'a [u64],
    next: usize,
    horizon: u64,
    hi: f64,
    z_grid: Vec<f64>,
    running_max: f64,
    tail_max_d: f64,
    tail_monotone: bool,
    last_d: f64,
    growth: Option<GrowthMonitor<'a>>,
    series: Option<Vec<f64>>,
    tracker: Option<ScaleTracker>,
}

impl Observer for ScalarObserver<'_> {
    fn observe(&mut self, n: u64, z: f64) {
        let d = dist_to_interval(z, self.hi);
        while self.next < self.grid.len() && self.grid[self.next] == n {
            self.z_grid.push(z);
            self.next += 1;
        }
        self.running_max = self.running_max.max(z);
        if n >= self.horizon - self.horizon / 10 {
            self.tail_max_d = self.tail_max_d.max(d);
        }
        if n >= self.horizon / 2 {
            self.tail_monotone &= d <= self.last_d;
            self.last_d = d;
        }
        if let Some(g) = self.growth.as_mut() {
            g.observe(n, z);
        }
        if let Some(s) = self.series.as_mut() {
            s.push(d);
        }
        if let Some(t) = self.tracker.as_mut() {
            t.push(n, d);
        }
    }
}

struct ScalarPath {
    z_grid: Vec<f64>,
    running_max: f64,
    tail_max_d: f64,
    tail_monotone: bool,
    growth_ok: Option<bool>,
    growth_worst: f64,
    certificate_sup: Option<f64>,
    tracker: Option<ScaleTracker>,
    info: RunInfo,
}

type PathSim<'a> = dyn Fn(u32, &mut ScalarObserver) -> Result<RunInfo> + Sync + 'a;

struct ScalarSetup<'a> {
    horizon: u64,
    hi: f64,
    growth: Option<(&'a Sequence, f64)>,
}

fn scalar_ensemble(
    cfg: &ExperimentConfig,
    setup: &ScalarSetup,
    count: u32,
    sim: &PathSim,
) -> Result<(Vec<u64>, Vec<ScalarPath>)> {
    let grid = recording_grid(setup.horizon, cfg.analysis.grid_points);
    let paths = map_paths(0, count, |i| {
        let mut obs = ScalarObserver {
            grid: &grid,
            next: 0,
            horizon: setup.horizon,
            hi: setup.hi,
            z_grid: Vec::with_capacity(grid.len()),
            running_max: 0.0,
            tail_max_d: 0.0,
            tail_monotone: true,
            last_d: f64::INFINITY,
            growth: setup.growth.map(|(seq, b)| GrowthMonitor::new(seq, b)),
            series: cfg
                .analysis
                .rate
                .as_ref()
                .map(|_| Vec::with_capacity(setup.horizon as usize + 1)),
            tracker: match &cfg.analysis.envelope {
                Some(e) => Some(ScaleTracker::new(e.template, &cfg.analysis.deltas, setup.horizon)?),
                None => None,
            },
        };
        let info = sim(i, &mut obs)?;
        let (growth_ok, growth_worst) = match obs.growth.take() {
            Some(g) => {
                let r = g.finish()?;
                (Some(r.ok), r.worst_ratio)
            }
            None => (None, 0.0),
        };
        let certificate_sup = match (&cfg.analysis.rate, &obs.series) {
            (Some(r), Some(s)) => Some(rate_certificate(s, r.eta, r.tail_start as usize, f64::INFINITY)?.sup_tail),
            _ => None,
        };
        Ok(ScalarPath {
            z_grid: obs.z_grid,
            running_max: obs.running_max,
            tail_max_d: obs.tail_max_d,
            tail_monotone: obs.tail_monotone,
            growth_ok,
            growth_worst,
            certificate_sup,
            tracker: obs.tracker,
            info,
        })
    })?;
    Ok((grid, paths))
}

fn long_csv(grid: &[u64], rows: &[Vec<f64>], value: &str) -> String {
    let mut out = format!("path,n,{value}\n");
    for (i, row) in rows.iter().enumerate() {
        for (n, v) in grid.iter().zip(row) {
            out.push_str(&format!("{i},{n},{v:.16e}\n"));
        }
    }
    out
}

/// Grid CSVs, ensemble statistics and the shared rate / envelope verdicts.
fn scalar_outputs(
    cfg: &ExperimentConfig,
    hi: f64,
    grid: &[u64],
    paths: &[ScalarPath],
    sink: &mut Sink,
    out: &mut Outcome,
) -> Result<()> {
    let a = &cfg.analysis;
    let z: Vec<Vec<f64>> = paths.iter().map(|p| p.z_grid.clone()).collect();
    let d: Vec<Vec<f64>> = z
        .iter()
        .map(|r| r.iter().map(|&v| dist_to_interval(v, hi)).collect())
        .collect();
    let diverged = paths.iter().filter(|p| p.info.diverged).count();
    sink.write("paths.csv", &long_csv(grid, &z, "z"))?;
    let zs = EnsembleStats::from_grid(grid.to_vec(), &z, &a.quantiles, &[], cfg.seed, diverged)?;
    sink.write("z_stats.csv", &zs.to_csv())?;
    let ds = EnsembleStats::from_grid(grid.to_vec(), &d, &a.quantiles, &a.moments, cfg.seed, diverged)?;
    sink.write("distance_stats.csv", &ds.to_csv())?;
    out.metric("diverged_paths", diverged as f64);
    out.metric("final_mean_distance", *ds.means.last().unwrap_or(&f64::NAN));

    if let Some(r) = &a.rate {
        let fit = fit_rate_points(grid, &ds.means, a.rate_window)?;
        let need = r.eta / 2.0 - 0.05;
        out.metric("rate_exponent", fit.exponent);
        out.metric("rate_r_squared", fit.r_squared);
        out.verdicts.push(verdict(
            "rate_exponent",
            Some(4),
            fit.exponent >= need,
            fit.exponent,
            need,
            format!(
                "exponent of the mean distance over n in [{}, {}] (R^2 {:.3})",
                fit.window.0, fit.window.1, fit.r_squared
            ),
        ));
        let train = train_count(r.train_fraction, paths.len() as u32) as usize;
        let sups: Vec<f64> = paths.iter().map(|p| p.certificate_sup.unwrap_or(f64::NAN)).collect();
        let tol = sups[..train].iter().copied().fold(0.0, f64::max);
        let passed = sups[train..].iter().filter(|&&s| s <= tol).count();
        let rate = passed as f64 / (sups.len() - train) as f64;
        out.metric("certificate_tol", tol);
        out.metric("certificate_pass_rate", rate);
        out.verdicts.push(verdict(
            "rate_certificate",
            Some(4),
            rate >= 0.95,
            rate,
            0.95,
            format!(
                "sup_(n >= {}) n^(eta/2) d_n <= {tol:.4e} (calibrated on {train} paths) on held-out paths",
                r.tail_start
            ),
        ));
    }

    if let Some(e) = &a.envelope {
        let train = train_count(e.train_fraction, paths.len() as u32) as usize;
        let trackers: Vec<ScaleTracker> = paths.iter().filter_map(|p| p.tracker.clone()).collect();
        let env = calibrate_from_trackers(e.template, &a.deltas, &trackers[..train])?;
        out.metric("envelope_scale", env.scale());
        let mut rows = String::from("delta,scale,coverage,threshold\n");
        for (j, &delta) in a.deltas.iter().enumerate() {
            let required: Vec<f64> = trackers[train..].iter().map(|t| t.full_scale[j]).collect();
            let rep = coverage_from_scales(&required, &env, delta);
            let need = 1.0 - delta - 0.03;
            rows.push_str(&format!("{delta},{:.16e},{:.16e},{need}\n", env.scale(), rep.coverage));
            out.verdicts.push(verdict(
                &format!("envelope_coverage[delta={delta}]"),
                Some(5),
                rep.coverage >= need,
                rep.coverage,
                need,
                format!(
                    "simultaneous coverage of {} held-out paths, scale {:.4e} from {train} paths",
                    required.len(),
                    env.scale()
                ),
            ));
        }
        sink.write("envelope.csv", &rows)?;
    }
    Ok(())
}

fn run_rs_special(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let sec = cfg
        .rs_special
        .as_ref()
        .ok_or_else(|| Error::Config("rs_special section missing".into()))?;
    let spec = sec.spec()?;
    let hi = spec.bound();
    let deterministic = sec.noise == NoiseModel::Deterministic;
    let setup = ScalarSetup {
        horizon: cfg.horizon,
        hi,
        growth: Some((&spec.t_seq, spec.growth_b)),
    };
    let sim = |i: u32, obs: &mut ScalarObserver| {
        stream_rs_special(&spec, &sec.noise, sec.z0, cfg.horizon, Stream::new(cfg.seed, i), obs)
    };
    let (grid, paths) = scalar_ensemble(cfg, &setup, cfg.paths, &sim)?;
    let mut out = Outcome::default();
    scalar_outputs(cfg, hi, &grid, &paths, sink, &mut out)?;
    let tol = cfg.analysis.tail_tolerance.unwrap_or(0.05);
    let tail = paths.iter().map(|p| p.tail_max_d).fold(0.0, f64::max);
    let criterion = if deterministic { 1 } else { 3 };
    out.metric("tail_max_distance", tail);
    out.verdicts.push(verdict(
        "tail_distance",
        Some(criterion),
        tail <= tol,
        tail,
        tol,
        format!("max over paths of d(z_n, [0, {hi}]) over the final 10% of steps"),
    ));
    if deterministic {
        let mono = paths.iter().all(|p| p.tail_monotone);
        out.verdicts.push(verdict(
            "tail_monotone",
            Some(1),
            mono,
            f64::from(u8::from(mono)),
            1.0,
            "d(z_n, [0, xi/alpha]) non-increasing over the second half".into(),
        ));
    }
    let ok = paths.iter().filter(|p| p.growth_ok == Some(true)).count();
    let worst = paths.iter().map(|p| p.growth_worst).fold(0.0, f64::max);
    out.metric("worst_growth_ratio", worst);
    out.verdicts.push(verdict(
        "growth_condition",
        if deterministic { None } else { Some(3) },
        ok == paths.len(),
        worst,
        spec.growth_b,
        format!("|z_(n+1) - z_n| <= B T_n (z_n + 1) held on {ok}/{} paths", paths.len()),
    ));
    if cfg.horizon <= 1_000_000 {
        let mut values = Vec::with_capacity(cfg.horizon as usize + 1);
        stream_rs_special(
            &spec,
            &sec.noise,
            sec.z0,
            cfg.horizon,
            Stream::new(cfg.seed, 0),
            &mut |_, z: f64| values.push(z),
        )?;
        sink.write("path_0.csv", &path_csv(&values))?;
    }
    Ok(out)
}

fn run_example1(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let setup = ScalarSetup {
        horizon: cfg.horizon,
        hi: 1.0,
        growth: None,
    };
    let sim = |i: u32, obs: &mut ScalarObserver| stream_example1(cfg.horizon, Stream::new(cfg.seed, i), obs);
    let (grid, paths) = scalar_ensemble(cfg, &setup, cfg.paths, &sim)?;
    let mut out = Outcome::default();
    scalar_outputs(cfg, 1.0, &grid, &paths, sink, &mut out)?;
    let n = paths.len() as f64;
    let above = paths.iter().filter(|p| p.running_max > 5.0).count() as f64 / n;
    let mean_spikes = paths.iter().map(|p| p.info.spikes.len() as f64).sum::<f64>() / n;
    let harmonic: f64 = (1..=cfg.horizon).map(|k| 1.0 / k as f64).sum();
    let late = paths
        .iter()
        .filter(|p| p.info.spikes.iter().any(|&s| s >= cfg.horizon / 2))
        .count() as f64
        / n;
    out.metric("mean_spikes", mean_spikes);
    out.metric("expected_spikes", harmonic);
    out.metric("fraction_spiking_in_final_half", late);
    out.metric("fraction_running_max_above_5", above);
    out.verdicts.push(verdict(
        "divergence",
        Some(2),
        above >= 0.9,
        above,
        0.9,
        format!(
            "fraction of paths whose running max exceeds 5 (mean spike count {mean_spikes:.3}, expected {harmonic:.3})"
        ),
    ));
    let audit = example1_mean_audit(cfg.horizon);
    out.metric("mean_identity_relative_gap", audit);
    out.verdicts.push(verdict(
        "conditional_mean_identity",
        Some(2),
        audit <= 1e-14,
        audit,
        1e-14,
        "max_n |p_n A_n - T_n| / T_n".into(),
    ));
    Ok(out)
}

fn run_rs_general(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let sec = cfg
        .rs_general
        .as_ref()
        .ok_or_else(|| Error::Config("rs_general section missing".into()))?;
    let spec = &sec.spec;
    let report = spec.certify(cfg.horizon)?;
    let hi = spec.threshold_b;
    let setup = ScalarSetup {
        horizon: cfg.horizon,
        hi,
        growth: Some((&spec.b_seq, 1.0)),
    };
    let sim =
        |i: u32, obs: &mut ScalarObserver| stream_rs_general(spec, sec.z0, cfg.horizon, Stream::new(cfg.seed, i), obs);
    let (grid, paths) = scalar_ensemble(cfg, &setup, cfg.paths, &sim)?;
    let mut out = Outcome::default();
    scalar_outputs(cfg, hi, &grid, &paths, sink, &mut out)?;
    out.verdicts.push(verdict(
        "hypotheses",
        None,
        report.all(),
        f64::from(u8::from(report.all())),
        1.0,
        format!(
            "sum a_n finite: {}, sum b_n^2 finite: {}, sum c_n infinite: {} ({:?} certification)",
            report.a_summable, report.b_square_summable, report.c_divergent, report.method
        ),
    ));
    let ok = paths.iter().filter(|p| p.growth_ok == Some(true)).count();
    out.verdicts.push(verdict(
        "growth_condition",
        None,
        ok == paths.len(),
        paths.iter().map(|p| p.growth_worst).fold(0.0, f64::max),
        1.0,
        format!("|z_(n+1) - z_n| <= b_n (z_n + 1) held on {ok}/{} paths", paths.len()),
    ));
    let tol = cfg.analysis.tail_tolerance.unwrap_or(0.05);
    let tail = paths.iter().map(|p| p.tail_max_d).fold(0.0, f64::max);
    out.verdicts.push(verdict(
        "tail_distance",
        None,
        tail <= tol,
        tail,
        tol,
        format!("max over paths of d(z_n, [0, {hi}]) over the final 10% of steps"),
    ));
    Ok(out)
}

fn run_skeleton(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let schedule = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Config("schedule missing".into()))?;
    let regime = cfg
        .resolved_regime()
        .ok_or_else(|| Error::Config("regime unresolved".into()))?;
    let s = skeleton_summary(schedule, regime, cfg.horizon)?;
    sink.write("skeleton.csv", &s.skeleton.to_csv())?;
    let mut out = Outcome::default();
    out.metric("segments", s.skeleton.segments() as f64);
    out.metric("m0", s.m0.map_or(f64::NAN, |m| m as f64));
    out.metric("lr_constant", s.c_full);
    out.metric("lr_constant_half", s.c_half);
    out.verdicts.push(verdict(
        "brackets",
        Some(6),
        s.brackets_ok,
        f64::from(u8::from(s.brackets_ok)),
        1.0,
        "T_m <= alpha_bar_m <= T_m + alpha_(t_(m+1) - 1) on every segment".into(),
    ));
    out.verdicts.push(verdict(
        "m0",
        Some(6),
        s.m0_ok(),
        s.m0.map_or(f64::NAN, |m| m as f64),
        100.0,
        "first m after which alpha_bar_m <= 2 T_m on all computed segments".into(),
    ));
    out.verdicts.push(verdict(
        "lr_constant_stable",
        Some(6),
        s.stable(),
        s.c_full,
        1.1 * s.c_half,
        "alpha_t <= C T_m^2 constant over [m0, M) within 10% of the one over [m0, M/2]".into(),
    ));
    Ok(out)
}

struct QPath {
    norm_grid: Vec<f64>,
    final_w: Vec<f64>,
    running_max: f64,
    half_running_max: f64,
    diverged: bool,
    worst_increment: f64,
}

#[allow(clippy::too_many_arguments)]
fn q_ensemble(
    mdp: &Mdp,
    features: &FeatureMap,
    policy: &PolicyConfig,
    schedule: &Schedule,
    anchors: &[u64],
    targets: &[f64],
    m0: usize,
    grid: &[u64],
    cfg: &ExperimentConfig,
) -> Result<Vec<QPath>> {
    let w0 = vec![0.0; features.dim];
    let horizon = cfg.horizon;
    map_paths(0, cfg.paths, |i| {
        let mut p = QPath {
            norm_grid: Vec::with_capacity(grid.len()),
            final_w: Vec::new(),
            running_max: 0.0,
            half_running_max: 0.0,
            diverged: false,
            worst_increment: 0.0,
        };
        let mut next_g = 0usize;
        let mut next_m = 0usize;
        let mut z_prev: Option<f64> = None;
        p.diverged = stream_linear_q(
            mdp,
            features,
            policy,
            schedule,
            &w0,
            horizon,
            &Stream::new(cfg.seed, i),
            |t, w, _| {
                let nrm = norm(w);
                p.running_max = p.running_max.max(nrm);
                if t == horizon / 2 {
                    p.half_running_max = p.running_max;
                }
                while next_g < grid.len() && grid[next_g] == t {
                    p.norm_grid.push(nrm);
                    next_g += 1;
                }
                if next_m < anchors.len() && t == anchors[next_m] {
                    let z = nrm * nrm;
                    if let Some(zp) = z_prev {
                        if next_m > m0 {
                            let tm = targets[next_m - 1];
                            p.worst_increment = p.worst_increment.max((z - zp).abs() / (tm * (zp + 1.0)));
                        }
                    }
                    z_prev = Some(z);
                    next_m += 1;
                }
                if t == horizon {
                    p.final_w = w.to_vec();
                }
            },
        )?;
        Ok(p)
    })
}

fn run_linear_q_experiment(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let (mdp, features) = cfg
        .mdp
        .as_ref()
        .ok_or_else(|| Error::Config("mdp missing".into()))?
        .load()?;
    let policy = cfg.policy.ok_or_else(|| Error::Config("policy missing".into()))?;
    let schedule = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Config("schedule missing".into()))?;
    let regime = cfg
        .resolved_regime()
        .ok_or_else(|| Error::Config("regime unresolved".into()))?;
    let sk = build_skeleton(schedule, regime, cfg.horizon)?;
    let m0 = sk.ratio_m0(50);
    let grid = recording_grid(cfg.horizon, cfg.analysis.grid_points);
    let paths = q_ensemble(
        &mdp,
        &features,
        &policy,
        schedule,
        &sk.anchors,
        &sk.targets,
        m0.unwrap_or(usize::MAX),
        &grid,
        cfg,
    )?;
    let mut out = Outcome::default();
    let norms: Vec<Vec<f64>> = paths.iter().map(|p| p.norm_grid.clone()).collect();
    let diverged = paths.iter().filter(|p| p.diverged).count();
    let stats = EnsembleStats::from_grid(grid.clone(), &norms, &cfg.analysis.quantiles, &[], cfg.seed, diverged)?;
    sink.write("w_norm_stats.csv", &stats.to_csv())?;
    sink.write("w_norm_paths.csv", &long_csv(&grid, &norms, "w_norm"))?;
    let mut finals = String::from("path");
    for k in 0..features.dim {
        finals.push_str(&format!(",w{k}"));
    }
    finals.push('\n');
    for (i, p) in paths.iter().enumerate() {
        finals.push_str(&i.to_string());
        for x in &p.final_w {
            finals.push_str(&format!(",{x:.16e}"));
        }
        finals.push('\n');
    }
    sink.write("final_w.csv", &finals)?;

    let max_norm = paths.iter().map(|p| p.running_max).fold(0.0, f64::max);
    let growth = paths
        .iter()
        .map(|p| (p.running_max - p.half_running_max) / p.half_running_max.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let worst_inc = paths.iter().map(|p| p.worst_increment).fold(0.0, f64::max);
    out.metric("max_norm", max_norm);
    out.metric("diverged_paths", diverged as f64);
    out.metric("running_max_growth", growth);
    out.metric("worst_skeleton_increment", worst_inc);
    out.metric("m0", m0.map_or(f64::NAN, |m| m as f64));
    out.verdicts.push(verdict(
        "bounded",
        Some(7),
        max_norm < 1e6 && diverged == 0,
        max_norm,
        1e6,
        format!("max ||w_t|| over {} seeds; {diverged} diverged", paths.len()),
    ));
    out.verdicts.push(verdict(
        "running_max_plateau",
        Some(7),
        growth < 0.01,
        growth,
        0.01,
        "relative growth of the running max of ||w_t|| over the final half".into(),
    ));
    out.verdicts.push(verdict(
        "skeleton_increments",
        Some(7),
        m0.is_some() && worst_inc <= 16.0,
        worst_inc,
        16.0,
        format!(
            "max |z_(m+1) - z_m| / (T_m (z_m + 1)) with z_m = ||w_(t_m)||^2 for m >= m0 = {}",
            m0.map_or("none".into(), |m| m.to_string())
        ),
    ));

    if let Some(sweep) = &cfg.policy_sweep {
        let mut rows = String::from("epsilon,kappa0,max_norm,diverged,running_max_growth\n");
        for &eps in &sweep.epsilon {
            for &k0 in &sweep.kappa0 {
                let cell = PolicyConfig {
                    epsilon: eps,
                    kappa0: k0,
                    adaptive: policy.adaptive,
                };
                let ps = q_ensemble(&mdp, &features, &cell, schedule, &[], &[], usize::MAX, &[], cfg)?;
                let mx = ps.iter().map(|p| p.running_max).fold(0.0, f64::max);
                let dv = ps.iter().filter(|p| p.diverged).count();
                let gr = ps
                    .iter()
                    .map(|p| (p.running_max - p.half_running_max) / p.half_running_max.max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                rows.push_str(&format!("{eps},{k0},{mx:.16e},{dv},{gr:.16e}\n"));
            }
        }
        sink.write("policy_sweep.csv", &rows)?;
    }
    Ok(out)
}

fn load_kernel(path: &Path) -> Result<(TiltedKernel, AffineUpdate)> {
    let text = fs::read_to_string(path)?;
    let file = parse_kernel(&text)?;
    let update = file
        .update
        .ok_or_else(|| Error::Config("kernel file has no affine update".into()))?;
    Ok((file.kernel, update))
}

fn run_sa_generic(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let sec = cfg
        .sa
        .as_ref()
        .ok_or_else(|| Error::Config("sa section missing".into()))?;
    let (kernel, update) = load_kernel(&sec.kernel_file)?;
    let schedule = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Config("schedule missing".into()))?;
    let regime = cfg
        .resolved_regime()
        .ok_or_else(|| Error::Config("regime unresolved".into()))?;
    let w0 = sec.w0.clone().unwrap_or_else(|| vec![0.0; update.dim()]);
    let grid = recording_grid(cfg.horizon, cfg.analysis.grid_points);
    let results = map_paths(0, cfg.paths, |i| {
        let mut row = Vec::with_capacity(grid.len());
        let mut next = 0usize;
        let mut max_norm = 0.0f64;
        let diverged = stream_sa(
            &kernel,
            &update,
            schedule,
            &w0,
            sec.y0,
            cfg.horizon,
            &Stream::new(cfg.seed, i),
            |t, w, _| {
                let nrm = norm(w);
                max_norm = max_norm.max(nrm);
                while next < grid.len() && grid[next] == t {
                    row.push(nrm);
                    next += 1;
                }
            },
        )?;
        Ok((row, max_norm, diverged))
    })?;
    let mut out = Outcome::default();
    let norms: Vec<Vec<f64>> = results.iter().map(|r| r.0.clone()).collect();
    let diverged = results.iter().filter(|r| r.2).count();
    let stats = EnsembleStats::from_grid(grid.clone(), &norms, &cfg.analysis.quantiles, &[], cfg.seed, diverged)?;
    sink.write("w_norm_stats.csv", &stats.to_csv())?;
    let max_norm = results.iter().map(|r| r.1).fold(0.0, f64::max);
    out.metric("max_norm", max_norm);
    out.metric("diverged_paths", diverged as f64);
    out.metric("lip_h", update.lip_h());

    let radii: Vec<f64> = [1.0, 2.0, 5.0, 10.0, 20.0]
        .iter()
        .map(|r| r * (1.0 + norm(&w0)))
        .collect();
    let drift = drift_scan(&kernel, &update, &radii, 32)?;
    out.metric("drift_feasible", f64::from(u8::from(drift.feasible)));
    out.metric("drift_c1", drift.c1_hat);
    out.metric("drift_c2", drift.c2_hat);

    let small = kernel.state_count() <= MAX_EXACT_STATES && cfg.horizon <= 1_000_000;
    if cfg.analysis.noise_decomposition && small {
        let sk = build_skeleton(schedule, regime, cfg.horizon)?;
        let traj = run_sa(&kernel, &update, schedule, &w0, sec.y0, cfg.horizon, cfg.seed, 0)?;
        let profile = conservative_profile(&kernel, &traj.ws)?;
        let rows = noise_decomposition(&traj, schedule, &sk, &kernel, &update, &profile)?;
        sink.write("noise.csv", &noise_csv(&rows))?;
        let recon = rows.iter().map(|r| r.reconstruction_error).fold(0.0, f64::max);
        out.metric("mixing_c", profile.c_mix);
        out.metric("mixing_tau", profile.tau_rate);
        out.verdicts.push(verdict(
            "noise_reconstruction",
            Some(10),
            recon <= 1e-10,
            recon,
            1e-10,
            format!(
                "s1 + s2 + s3 + s4 against the direct segment update over {} segments",
                rows.len()
            ),
        ));
        if kernel.is_constant() {
            let s2 = rows
                .iter()
                .flat_map(|r| r.s2.iter().map(|x| x.abs()))
                .fold(0.0, f64::max);
            out.verdicts.push(verdict(
                "s2_vanishes",
                Some(10),
                s2 == 0.0,
                s2,
                0.0,
                "the kernel does not depend on w, so the live and frozen laws coincide".into(),
            ));
        }
        if let Some(m0) = sk.ratio_m0(50) {
            for (name, f) in [
                (
                    "ratio1",
                    (|r: &siegmund::analysis::SegmentNoise| r.ratio1) as fn(&siegmund::analysis::SegmentNoise) -> f64,
                ),
                ("ratio2", |r| r.ratio2),
                ("ratio4", |r| r.ratio4),
            ] {
                let (head, tail) = halves(&rows, m0, f);
                out.verdicts.push(verdict(
                    &format!("{name}_bounded"),
                    Some(10),
                    head.is_finite() && tail <= 2.0 * head.max(f64::MIN_POSITIVE),
                    tail,
                    2.0 * head,
                    format!("sup over the second half of segments from m0 = {m0} against twice the first half"),
                ));
            }
        }
    }
    Ok(out)
}

fn run_analyze(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Outcome> {
    let sec = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("input section missing".into()))?;
    let mut series = Vec::with_capacity(sec.files.len());
    for f in &sec.files {
        let text = fs::read_to_string(f)?;
        series.push(parse_path_csv(&text)?);
    }
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    if len < 2 {
        return Err(Error::InsufficientData("input paths need at least two values".into()));
    }
    let horizon = len as u64 - 1;
    if let Some(r) = &cfg.analysis.rate {
        if r.tail_start >= horizon {
            return Err(Error::Config(format!(
                "analysis.rate.tail_start: {} is not below the input horizon {horizon}",
                r.tail_start
            )));
        }
    }
    let setup = ScalarSetup {
        horizon,
        hi: sec.bound,
        growth: None,
    };
    let sim = |i: u32, obs: &mut ScalarObserver| {
        for (n, &z) in series[i as usize][..len].iter().enumerate() {
            obs.observe(n as u64, z);
        }
        Ok(RunInfo::default())
    };
    let (grid, paths) = scalar_ensemble(cfg, &setup, series.len() as u32, &sim)?;
    let mut out = Outcome::default();
    out.metric("input_paths", series.len() as f64);
    out.metric("input_horizon", horizon as f64);
    scalar_outputs(cfg, sec.bound, &grid, &paths, sink, &mut out)?;
    Ok(out)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
