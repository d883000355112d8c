//! Experiment configuration: a JSON document validated in full before any
//! compute, with every default written back into the returned object.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use siegmund::analysis::Envelope;
use siegmund::formats::{parse_kernel, parse_mdp};
use siegmund::processes::{NoiseModel, RSGeneralSpec, RSSpecialSpec, Sequence};
use siegmund::rl::{FeatureMap, Mdp, PolicyConfig};
use siegmund::schedules::{select_regime, Regime, Schedule};
use siegmund::{Error, Result};

use crate::corpus::builtin;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RsSpecial,
    Example1,
    RsGeneral,
    Skeleton,
    LinearQ,
    SaGeneric,
    Analyze,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RsSpecial => "rs_special",
            ExperimentKind::Example1 => "example1",
            ExperimentKind::RsGeneral => "rs_general",
            ExperimentKind::Skeleton => "skeleton",
            ExperimentKind::LinearQ => "linear_q",
            ExperimentKind::SaGeneric => "sa_generic",
            ExperimentKind::Analyze => "analyze",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub paths: u32,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Worker count; absent means all available cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub regime: Option<RegimeSpec>,
    #[serde(default)]
    pub rs_special: Option<RsSpecialSection>,
    #[serde(default)]
    pub rs_general: Option<RsGeneralSection>,
    #[serde(default)]
    pub mdp: Option<MdpSource>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub policy_sweep: Option<PolicySweep>,
    #[serde(default)]
    pub sa: Option<SaSection>,
    #[serde(default)]
    pub input: Option<InputSection>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
}

fn default_paths() -> u32 {
    100
}

fn default_horizon() -> u64 {
    100_000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Skeleton exponents; absent entries are resolved from the schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    #[serde(default)]
    pub nu1: Option<f64>,
    #[serde(default)]
    pub nu2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsSpecialSection {
    pub alpha: f64,
    pub xi: f64,
    pub t_seq: Sequence,
    /// Defaults to `max(alpha, xi) + sigma`, the smallest constant the noise model honors.
    #[serde(default)]
    pub growth_b: Option<f64>,
    pub noise: NoiseModel,
    #[serde(default)]
    pub z0: f64,
}

impl RsSpecialSection {
    pub fn spec(&self) -> Result<RSSpecialSpec> {
        let spec = RSSpecialSpec {
            alpha: self.alpha,
            xi: self.xi,
            t_seq: self.t_seq.clone(),
            growth_b: self.growth_b.unwrap_or(f64::NAN),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsGeneralSection {
    pub spec: RSGeneralSpec,
    #[serde(default)]
    pub z0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    Builtin(String),
    File(PathBuf),
}

impl MdpSource {
    pub fn load(&self) -> Result<(Mdp, FeatureMap)> {
        match self {
            MdpSource::Builtin(name) => builtin(name),
            MdpSource::File(path) => parse_mdp(&read_text(path)?),
        }
    }
}

/// Grid of `(epsilon, kappa0)` cells run in addition to the main policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySweep {
    pub epsilon: Vec<f64>,
    pub kappa0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaSection {
    /// Kernel table file (see the kernel format in `siegmund::formats`).
    pub kernel_file: PathBuf,
    /// Defaults to the zero vector.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: usize,
}

/// Input of the `analyze` experiment: path CSV files (`n,z` columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub files: Vec<PathBuf>,
    /// Distances are measured to `[0, bound]`.
    #[serde(default)]
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateDirective {
    pub eta: f64,
    #[serde(default = "default_tail_start")]
    pub tail_start: u64,
    /// Fraction of paths used to calibrate the certificate tolerance.
    #[serde(default = "half")]
    pub train_fraction: f64,
}

fn default_tail_start() -> u64 {
    1000
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeDirective {
    /// Template whose scale constant is calibrated.
    pub template: Envelope,
    #[serde(default = "half")]
    pub train_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_moments")]
    pub moments: Vec<f64>,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Fraction of the horizon (from the end) used by rate fits.
    #[serde(default = "half")]
    pub rate_window: f64,
    /// Tolerance on the distance over the final tenth of the horizon.
    /// Defaults to `1e-3` for deterministic runs and `0.05` otherwise.
    #[serde(default)]
    pub tail_tolerance: Option<f64>,
    #[serde(default)]
    pub rate: Option<RateDirective>,
    #[serde(default)]
    pub envelope: Option<EnvelopeDirective>,
    /// Whether `sa_generic` decomposes the noise of path 0 segment by segment.
    #[serde(default = "default_true")]
    pub noise_decomposition: bool,
}

fn default_deltas() -> Vec<f64> {
    vec![0.1]
}

fn default_moments() -> Vec<f64> {
    vec![1.0, 2.0]
}

fn default_quantiles() -> Vec<f64> {
    vec![0.05, 0.25, 0.5, 0.75, 0.95]
}

fn default_grid_points() -> usize {
    200
}

fn default_true() -> bool {
    true
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            deltas: default_deltas(),
            moments: default_moments(),
            quantiles: default_quantiles(),
            grid_points: default_grid_points(),
            rate_window: half(),
            tail_tolerance: None,
            rate: None,
            envelope: None,
            noise_decomposition: true,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn field(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {e}"))
}

fn require<T: Clone>(v: &Option<T>, path: &str, kind: ExperimentKind) -> Result<T> {
    v.clone()
        .ok_or_else(|| field(path, format!("required for kind {}", kind.name())))
}

/// Parses and validates config text; see [`ExperimentConfig::validate`].
///
/// Syntax errors come back as [`Error::Parse`] with the line number; type and
/// value errors as [`Error::Config`] prefixed with the offending field path.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_syntax() || inner.is_eof() {
            Error::Parse {
                line: inner.line(),
                msg: inner.to_string(),
            }
        } else {
            let msg = inner.to_string();
            let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
            if path == "." {
                Error::Config(format!("{msg} (line {})", inner.line()))
            } else {
                Error::Config(format!("{path}: {msg} (line {})", inner.line()))
            }
        }
    })?;
    cfg.validate()
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    validate_config(&read_text(path)?)
}

impl ExperimentConfig {
    /// Checks every cross-field constraint and returns the config with all
    /// defaults that depend on the experiment kind filled in.
    pub fn validate(mut self) -> Result<ExperimentConfig> {
        let kind = self.kind;
        if self.paths == 0 {
            return Err(field("paths", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(field("horizon", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(field("threads", "must be at least 1"));
        }
        if let (ExperimentKind::Analyze, Some(input)) = (kind, &self.input) {
            self.paths = input.files.len().max(1) as u32;
        }
        self.validate_analysis()?;
        match kind {
            ExperimentKind::RsSpecial => {
                let mut sec = require(&self.rs_special, "rs_special", kind)?;
                let sigma = match sec.noise {
                    NoiseModel::BoundedMultiplicative { sigma } => sigma,
                    NoiseModel::Deterministic => 0.0,
                    NoiseModel::Example1 => {
                        return Err(field("rs_special.noise", "use kind example1 for the counterexample"))
                    }
                };
                sec.growth_b.get_or_insert(sec.alpha.max(sec.xi) + sigma);
                let spec = sec.spec().map_err(|e| field("rs_special", e))?;
                sec.noise.check(&spec).map_err(|e| field("rs_special.noise", e))?;
                sec.noise
                    .check_start(&spec, sec.z0)
                    .map_err(|e| field("rs_special.t_seq", e))?;
                if let Some(n) = sec.t_seq.len() {
                    if n < self.horizon {
                        return Err(field(
                            "rs_special.t_seq",
                            format!("{n} terms but horizon {}", self.horizon),
                        ));
                    }
                }
                if !(sec.z0 >= 0.0 && sec.z0.is_finite()) {
                    return Err(field("rs_special.z0", "must be nonnegative"));
                }
                let default_tol = if sigma == 0.0 { 1e-3 } else { 0.05 };
                self.analysis.tail_tolerance.get_or_insert(default_tol);
                self.rs_special = Some(sec);
            }
            ExperimentKind::Example1 => {}
            ExperimentKind::RsGeneral => {
                let sec = require(&self.rs_general, "rs_general", kind)?;
                sec.spec
                    .validate(self.horizon)
                    .map_err(|e| field("rs_general.spec", e))?;
                if !(sec.z0 >= 0.0 && sec.z0.is_finite()) {
                    return Err(field("rs_general.z0", "must be nonnegative"));
                }
                self.analysis.tail_tolerance.get_or_insert(0.05);
            }
            ExperimentKind::Skeleton => {
                self.resolve_schedule_and_regime()?;
            }
            ExperimentKind::LinearQ => {
                self.resolve_schedule_and_regime()?;
                let src = self.mdp.get_or_insert(MdpSource::Builtin("random5".into())).clone();
                src.load().map_err(|e| field("mdp", e))?;
                let policy = *self.policy.get_or_insert(PolicyConfig::new(0.1, 1.0)?);
                policy.validate().map_err(|e| field("policy", e))?;
                if let Some(sweep) = &self.policy_sweep {
                    if sweep.epsilon.is_empty() || sweep.kappa0.is_empty() {
                        return Err(field("policy_sweep", "needs at least one epsilon and one kappa0"));
                    }
                    for (i, &e) in sweep.epsilon.iter().enumerate() {
                        PolicyConfig::new(e, 1.0).map_err(|err| field(&format!("policy_sweep.epsilon[{i}]"), err))?;
                    }
                    for (i, &k) in sweep.kappa0.iter().enumerate() {
                        PolicyConfig::new(0.5, k).map_err(|err| field(&format!("policy_sweep.kappa0[{i}]"), err))?;
                    }
                }
            }
            ExperimentKind::SaGeneric => {
                self.resolve_schedule_and_regime()?;
                let mut sec = require(&self.sa, "sa", kind)?;
                let file = parse_kernel(&read_text(&sec.kernel_file).map_err(|e| field("sa.kernel_file", e))?)
                    .map_err(|e| field("sa.kernel_file", e))?;
                if file.update.is_none() {
                    return Err(field(
                        "sa.kernel_file",
                        "the kernel file declares no update_a / update_b sections",
                    ));
                }
                let (n, d) = (
                    siegmund::markov::ParamKernel::state_count(&file.kernel),
                    siegmund::markov::ParamKernel::dim(&file.kernel),
                );
                let w0 = sec.w0.get_or_insert(vec![0.0; d]);
                if w0.len() != d {
                    return Err(field(
                        "sa.w0",
                        format!("length {} but the kernel has dim {d}", w0.len()),
                    ));
                }
                if sec.y0 >= n {
                    return Err(field("sa.y0", format!("{} is not below the state count {n}", sec.y0)));
                }
                self.sa = Some(sec);
            }
            ExperimentKind::Analyze => {
                let sec = require(&self.input, "input", kind)?;
                if sec.files.is_empty() {
                    return Err(field("input.files", "needs at least one path file"));
                }
                if !(sec.bound >= 0.0 && sec.bound.is_finite()) {
                    return Err(field("input.bound", "must be nonnegative"));
                }
            }
        }
        Ok(self)
    }

    fn resolve_schedule_and_regime(&mut self) -> Result<()> {
        let schedule = self.schedule.get_or_insert(Schedule::lr1(1.0, 0.8)?).clone();
        if let Some(n) = schedule.len() {
            if n < self.horizon {
                return Err(field(
                    "schedule",
                    format!("table has {n} entries but horizon {}", self.horizon),
                ));
            }
        }
        let spec = self.regime.unwrap_or_default();
        let regime = match schedule.nu() {
            Some(nu) => select_regime(schedule.kind(), nu, spec.nu1, spec.nu2).map_err(|e| field("regime", e))?,
            None => return Err(field("schedule", "table schedules have no skeleton regime")),
        };
        self.regime = Some(RegimeSpec {
            nu1: Some(regime.nu1),
            nu2: Some(regime.nu2),
        });
        Ok(())
    }

    fn validate_analysis(&self) -> Result<()> {
        let a = &self.analysis;
        if a.deltas.is_empty() {
            return Err(field("analysis.deltas", "needs at least one value"));
        }
        for (i, &d) in a.deltas.iter().enumerate() {
            if !(d > 0.0 && d < 1.0) {
                return Err(field(
                    &format!("analysis.deltas[{i}]"),
                    format!("must lie in (0, 1), got {d}"),
                ));
            }
        }
        for (i, &p) in a.moments.iter().enumerate() {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(field(
                    &format!("analysis.moments[{i}]"),
                    format!("must be at least 1, got {p}"),
                ));
            }
        }
        for (i, &q) in a.quantiles.iter().enumerate() {
            if !(0.0..=1.0).contains(&q) {
                return Err(field(
                    &format!("analysis.quantiles[{i}]"),
                    format!("must lie in [0, 1], got {q}"),
                ));
            }
        }
        if a.grid_points < 2 {
            return Err(field("analysis.grid_points", "must be at least 2"));
        }
        if !(a.rate_window > 0.0 && a.rate_window <= 1.0) {
            return Err(field(
                "analysis.rate_window",
                format!("must lie in (0, 1], got {}", a.rate_window),
            ));
        }
        if let Some(t) = a.tail_tolerance {
            if !(t >= 0.0) {
                return Err(field("analysis.tail_tolerance", "must be nonnegative"));
            }
        }
        if let Some(r) = &a.rate {
            if !(r.eta > 0.0 && r.eta.is_finite()) {
                return Err(field("analysis.rate.eta", format!("must be positive, got {}", r.eta)));
            }
            if r.tail_start >= self.horizon {
                return Err(field("analysis.rate.tail_start", "must be below the horizon"));
            }
            check_fraction(r.train_fraction, "analysis.rate.train_fraction", self.paths)?;
        }
        if let Some(e) = &a.envelope {
            for &d in &a.deltas {
                siegmund::analysis::envelope_eval(&e.template, 0, d).map_err(|err| field("analysis.envelope", err))?;
            }
            check_fraction(e.train_fraction, "analysis.envelope.train_fraction", self.paths)?;
        }
        Ok(())
    }

    /// Resolved regime (set by [`ExperimentConfig::validate`] for schedule-driven kinds).
    pub fn resolved_regime(&self) -> Option<Regime> {
        let r = self.regime?;
        Some(Regime {
            nu1: r.nu1?,
            nu2: r.nu2?,
        })
    }
}

fn check_fraction(f: f64, path: &str, paths: u32) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(field(path, format!("must lie in (0, 1), got {f}")));
    }
    let train = (f * paths as f64).round() as u32;
    if train == 0 || train >= paths {
        return Err(field(
            path,
            format!("leaves an empty training or holdout block of {paths} paths"),
        ));
    }
    Ok(())
}

/// Number of training paths for a split fraction.
pub fn train_count(fraction: f64, paths: u32) -> u32 {
    (fraction * paths as f64).round() as u32
}
