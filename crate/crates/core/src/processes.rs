//! Scalar almost-supermartingale simulators.
//!
//! Every simulator is a pure function of `(spec, z0, horizon, seed, path)`; the
//! randomness for step `n` comes from the counter-based stream at counter `n`,
//! so ensembles can be run in any order or on any number of workers.
//!
//! Simulators report each `(n, z_n)` to an [`Observer`] so that large ensembles
//! can be summarized without materializing every path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::rng::Stream;
use crate::schedules::Schedule;

/// Values above this mark a path as diverged; the path is frozen from then on.
pub const DIVERGENCE_THRESHOLD: f64 = 1e300;

fn one() -> f64 {
    1.0
}

/// A deterministic nonnegative sequence indexed by `n >= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sequence {
    /// `coef / (n + offset)^exponent`
    Power {
        coef: f64,
        exponent: f64,
        #[serde(default = "one")]
        offset: f64,
    },
    Zero,
    Explicit {
        values: Vec<f64>,
    },
    Schedule {
        schedule: Schedule,
    },
}

impl Sequence {
    pub fn power(coef: f64, exponent: f64, offset: f64) -> Self {
        Sequence::Power { coef, exponent, offset }
    }

    pub fn at(&self, n: u64) -> Result<f64> {
        match self {
            Sequence::Power { coef, exponent, offset } => Ok(coef / (n as f64 + offset).powf(*exponent)),
            Sequence::Zero => Ok(0.0),
            Sequence::Explicit { values } => values.get(n as usize).copied().ok_or(Error::Index {
                index: n,
                len: values.len(),
            }),
            Sequence::Schedule { schedule } => schedule.alpha_at(n),
        }
    }

    /// Number of defined terms, if finite.
    pub fn len(&self) -> Option<u64> {
        match self {
            Sequence::Explicit { values } => Some(values.len() as u64),
            Sequence::Schedule { schedule } => schedule.len(),
            _ => None,
        }
    }

    fn check_defined(&self, horizon: u64, name: &str) -> Result<()> {
        if let Some(len) = self.len() {
            if len < horizon {
                return Err(Error::Config(format!(
                    "{name} has {len} terms but the horizon needs {horizon}"
                )));
            }
        }
        if let Sequence::Power { coef, offset, .. } = self {
            if !(*coef >= 0.0 && coef.is_finite()) || !(*offset > 0.0) {
                return Err(Error::Config(format!(
                    "{name}: power sequence needs coef >= 0 and offset > 0"
                )));
            }
        }
        Ok(())
    }

    /// Materializes the first `n` terms.
    pub fn prefix(&self, n: u64) -> Result<Vec<f64>> {
        (0..n).map(|i| self.at(i)).collect()
    }
}

/// Parameters of the special recursion `E_n z_{n+1} <= (1 - alpha T_n) z_n + xi T_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RSSpecialSpec {
    pub alpha: f64,
    pub xi: f64,
    pub t_seq: Sequence,
    /// Constant `B` of the increment bound `|z_{n+1} - z_n| <= B T_n (z_n + 1)`.
    pub growth_b: f64,
}

impl RSSpecialSpec {
    /// Spec with `growth_b = alpha + xi`, enough for the deterministic recursion.
    pub fn new(alpha: f64, xi: f64, t_seq: Sequence) -> Result<Self> {
        let spec = RSSpecialSpec {
            alpha,
            xi,
            t_seq,
            growth_b: alpha + xi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_growth_b(mut self, b: f64) -> Result<Self> {
        self.growth_b = b;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("xi must be nonnegative, got {}", self.xi)));
        }
        if !(self.growth_b >= self.alpha) {
            return Err(Error::Config(format!(
                "growth_b must be at least alpha = {}, got {}",
                self.alpha, self.growth_b
            )));
        }
        if matches!(self.t_seq, Sequence::Zero) {
            return Err(Error::Config("t_seq must be positive".into()));
        }
        if let Sequence::Power { exponent, .. } = self.t_seq {
            if !(exponent > 0.0) {
                return Err(Error::Config("t_seq must be strictly decreasing".into()));
            }
        }
        if let Sequence::Explicit { values } = &self.t_seq {
            if values.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(Error::Config("t_seq must be strictly decreasing".into()));
            }
        }
        Ok(())
    }

    /// Right end of the limiting interval `[0, xi/alpha]`.
    pub fn bound(&self) -> f64 {
        self.xi / self.alpha
    }

    fn t_at(&self, n: u64) -> Result<f64> {
        let t = self.t_seq.at(n)?;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::StepSize {
                n: n as usize,
                value: t,
            });
        }
        if self.alpha * t > 1.0 {
            return Err(Error::StepSize {
                n: n as usize,
                value: self.alpha * t,
            });
        }
        Ok(t)
    }
}

/// How `z_{n+1}` is drawn given `z_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    Deterministic,
    /// `z' = (1 - alpha T) z + xi T + sigma T (z + 1) U`, `U ~ Uniform[-1, 1]`.
    BoundedMultiplicative {
        sigma: f64,
    },
    /// The divergent counterexample; ignores the spec coefficients.
    Example1,
}

impl NoiseModel {
    /// Checks compatibility of the noise with `spec` so that both the mean
    /// recursion and the growth bound hold and `z` stays nonnegative.
    pub fn check(&self, spec: &RSSpecialSpec) -> Result<()> {
        if let NoiseModel::BoundedMultiplicative { sigma } = *self {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::Config(format!("sigma must lie in [0, 1], got {sigma}")));
            }
            if sigma > spec.alpha.min(spec.xi) {
                return Err(Error::Config(format!(
                    "sigma = {sigma} exceeds min(alpha, xi) = {}",
                    spec.alpha.min(spec.xi)
                )));
            }
            let need = spec.alpha.max(spec.xi) + sigma;
            if spec.growth_b < need {
                return Err(Error::Config(format!(
                    "growth_b = {} is below max(alpha, xi) + sigma = {need}",
                    spec.growth_b
                )));
            }
        }
        Ok(())
    }

    /// Checks that the noisy iterate cannot turn negative from `z0`: with
    /// `z > 0` this needs `(alpha + sigma) T_n <= 1`, and `T_n` is nonincreasing,
    /// so it is enough to test the first step taken from a positive state.
    pub fn check_start(&self, spec: &RSSpecialSpec, z0: f64) -> Result<()> {
        if let NoiseModel::BoundedMultiplicative { sigma } = *self {
            let first = if z0 > 0.0 { 0 } else { 1 };
            let t = spec.t_at(first)?;
            if (spec.alpha + sigma) * t > 1.0 {
                return Err(Error::Config(format!(
                    "(alpha + sigma) T_{first} = {} exceeds 1, so the iterate can turn negative",
                    (spec.alpha + sigma) * t
                )));
            }
        }
        Ok(())
    }
}

/// Receives `(n, z_n)` for `n = 0..=horizon`.
pub trait Observer {
    fn observe(&mut self, n: u64, z: f64);
}

impl<F: FnMut(u64, f64)> Observer for F {
    fn observe(&mut self, n: u64, z: f64) {
        self(n, z)
    }
}

/// A sampled scalar trajectory `z_0..=z_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub values: Vec<f64>,
    pub seed: u64,
    pub path_id: u32,
    pub fingerprint: String,
    /// Indices `n` with a spike `X_{n+1} = A_n` (Example 1 only).
    pub spikes: Vec<u64>,
    pub diverged: bool,
}

impl Path {
    pub fn horizon(&self) -> u64 {
        self.values.len().saturating_sub(1) as u64
    }
}

/// Summary returned by the streaming simulators.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunInfo {
    pub spikes: Vec<u64>,
    pub diverged: bool,
}

fn finish_path(values: Vec<f64>, seed: u64, path_id: u32, fingerprint: String, info: RunInfo) -> Path {
    Path {
        values,
        seed,
        path_id,
        fingerprint,
        spikes: info.spikes,
        diverged: info.diverged,
    }
}

/// `z_{n+1} = (1 - alpha T_n) z_n + xi T_n` with equality.
pub fn iterate_rs_special_deterministic(spec: &RSSpecialSpec, z0: f64, horizon: u64) -> Result<Path> {
    simulate_rs_special(spec, &NoiseModel::Deterministic, z0, horizon, 0)
}

fn check_start(z0: f64, horizon: u64) -> Result<()> {
    if horizon < 1 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    if !(z0 >= 0.0 && z0.is_finite()) {
        return Err(Error::Argument(format!("z0 must be nonnegative, got {z0}")));
    }
    Ok(())
}

/// Streams one RS-Special path into `obs`.
pub fn stream_rs_special(
    spec: &RSSpecialSpec,
    noise: &NoiseModel,
    z0: f64,
    horizon: u64,
    stream: Stream,
    obs: &mut impl Observer,
) -> Result<RunInfo> {
    check_start(z0, horizon)?;
    if *noise == NoiseModel::Example1 {
        return stream_example1_from(z0, horizon, stream, obs);
    }
    spec.validate()?;
    noise.check(spec)?;
    noise.check_start(spec, z0)?;
    let sigma = match *noise {
        NoiseModel::BoundedMultiplicative { sigma } => sigma,
        _ => 0.0,
    };
    let mut info = RunInfo::default();
    let mut z = z0;
    obs.observe(0, z);
    for n in 0..horizon {
        if !info.diverged {
            let t = spec.t_at(n)?;
            let mut next = (1.0 - spec.alpha * t) * z + spec.xi * t;
            if sigma > 0.0 {
                next += sigma * t * (z + 1.0) * stream.symmetric(n);
            }
            if next < 0.0 {
                return Err(Error::Invariant(format!("negative iterate {next} at n = {}", n + 1)));
            }
            if next > DIVERGENCE_THRESHOLD || !next.is_finite() {
                info.diverged = true;
            } else {
                z = next;
            }
        }
        obs.observe(n + 1, z);
    }
    Ok(info)
}

/// One sampled RS-Special path.
pub fn simulate_rs_special(spec: &RSSpecialSpec, noise: &NoiseModel, z0: f64, horizon: u64, seed: u64) -> Result<Path> {
    simulate_rs_special_path(spec, noise, z0, horizon, seed, 0)
}

pub fn simulate_rs_special_path(
    spec: &RSSpecialSpec,
    noise: &NoiseModel,
    z0: f64,
    horizon: u64,
    seed: u64,
    path_id: u32,
) -> Result<Path> {
    let mut values = Vec::with_capacity(horizon as usize + 1);
    let info = stream_rs_special(spec, noise, z0, horizon, Stream::new(seed, path_id), &mut |_, z| {
        values.push(z)
    })?;
    let fp = crate::fingerprint(&(spec, noise));
    Ok(finish_path(values, seed, path_id, fp, info))
}

/// Step size `T_n = (n+1)^{-3/4}` of the counterexample.
pub fn example1_t(n: u64) -> f64 {
    (n as f64 + 1.0).powf(-0.75)
}

/// Spike height `A_n = (n+1)^{1/4}`.
pub fn example1_a(n: u64) -> f64 {
    (n as f64 + 1.0).powf(0.25)
}

/// Spike probability `p_n = 1/(n+1)`.
pub fn example1_p(n: u64) -> f64 {
    1.0 / (n as f64 + 1.0)
}

fn stream_example1_from(z0: f64, horizon: u64, stream: Stream, obs: &mut impl Observer) -> Result<RunInfo> {
    let mut info = RunInfo::default();
    let mut z = z0;
    obs.observe(0, z);
    for n in 0..horizon {
        let t = example1_t(n);
        let mut next = (1.0 - t) * z;
        if stream.uniform(n) < example1_p(n) {
            next += example1_a(n);
            info.spikes.push(n);
        }
        z = next;
        obs.observe(n + 1, z);
    }
    Ok(info)
}

/// Streams one Example-1 path started at `z_0 = 0`.
pub fn stream_example1(horizon: u64, stream: Stream, obs: &mut impl Observer) -> Result<RunInfo> {
    check_start(0.0, horizon)?;
    stream_example1_from(0.0, horizon, stream, obs)
}

pub fn simulate_example1(horizon: u64, seed: u64) -> Result<Path> {
    simulate_example1_path(horizon, seed, 0)
}

pub fn simulate_example1_path(horizon: u64, seed: u64, path_id: u32) -> Result<Path> {
    let mut values = Vec::with_capacity(horizon as usize + 1);
    let info = stream_example1(horizon, Stream::new(seed, path_id), &mut |_, z| values.push(z))?;
    let fp = crate::fingerprint(&NoiseModel::Example1);
    Ok(finish_path(values, seed, path_id, fp, info))
}

/// Largest relative gap `|p_n A_n - T_n| / T_n` over `n < horizon`: the
/// conditional mean of Example 1 is `(1 - T_n) z_n + p_n A_n`, which equals the
/// RS-Special mean with `xi = alpha = 1` exactly when `p_n A_n = T_n`.
pub fn example1_mean_audit(horizon: u64) -> f64 {
    (0..horizon)
        .map(|n| {
            let t = example1_t(n);
            (example1_p(n) * example1_a(n) - t).abs() / t
        })
        .fold(0.0, f64::max)
}

/// Outcome of checking `|z_{n+1} - z_n| <= b T_n (z_n + 1)` along a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub ok: bool,
    /// `max_n |z_{n+1} - z_n| / (T_n (z_n + 1))`.
    pub worst_ratio: f64,
    pub worst_index: u64,
}

/// Streaming form of [`verify_growth_condition`]; feed it consecutive values.
#[derive(Debug)]
pub struct GrowthMonitor<'a> {
    t_seq: &'a Sequence,
    b: f64,
    prev: Option<(u64, f64)>,
    report: GrowthReport,
    error: Option<Error>,
}

/// Relative slack absorbing floating-point rounding in the growth comparison.
const GROWTH_SLACK: f64 = 1e-12;

impl<'a> GrowthMonitor<'a> {
    pub fn new(t_seq: &'a Sequence, b: f64) -> Self {
        GrowthMonitor {
            t_seq,
            b,
            prev: None,
            report: GrowthReport {
                ok: true,
                worst_ratio: 0.0,
                worst_index: 0,
            },
            error: None,
        }
    }

    pub fn finish(self) -> Result<GrowthReport> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.report),
        }
    }
}

impl Observer for GrowthMonitor<'_> {
    fn observe(&mut self, n: u64, z: f64) {
        if let Some((m, zm)) = self.prev {
            match self.t_seq.at(m) {
                Ok(t) => {
                    let ratio = (z - zm).abs() / (t * (zm + 1.0));
                    if ratio > self.report.worst_ratio {
                        self.report.worst_ratio = ratio;
                        self.report.worst_index = m;
                    }
                    if ratio > self.b * (1.0 + GROWTH_SLACK) {
                        self.report.ok = false;
                    }
                }
                Err(e) => {
                    self.error.get_or_insert(e);
                }
            }
        }
        self.prev = Some((n, z));
    }
}

pub fn verify_growth_condition(values: &[f64], t_seq: &Sequence, b: f64) -> Result<GrowthReport> {
    if values.len() < 2 {
        return Err(Error::Argument("growth check needs at least two values".into()));
    }
    let mut mon = GrowthMonitor::new(t_seq, b);
    for (n, &z) in values.iter().enumerate() {
        mon.observe(n as u64, z);
    }
    mon.finish()
}

/// How the mean increment behaves relative to the threshold `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftRule {
    /// `mu = a z - c (z - B)^+`
    Clipped,
    /// `mu = a z - c (z - B)`
    Linear,
}

/// A synthetic instance of the general recursion
/// `E_n z_{n+1} <= (1 + a_n) z_n + x_n - y_n` with `x_n - y_n <= -c_n (z_n - B)` above `B`.
///
/// Increments are `mu_n + sigma * min(b_n (z+1) - |mu_n|, z + mu_n) * U_n`, so
/// the conditional mean is `z + mu_n` and `|z_{n+1} - z_n| <= b_n (z_n + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RSGeneralSpec {
    pub a_seq: Sequence,
    pub b_seq: Sequence,
    pub c_seq: Sequence,
    pub threshold_b: f64,
    pub drift: DriftRule,
    /// Noise scale `sigma` in `[0, 1]`.
    pub noise_scale: f64,
    /// Reject specs whose `c_n` are not certified to have a divergent sum.
    #[serde(default = "yes")]
    pub check_hypotheses: bool,
}

fn yes() -> bool {
    true
}

/// How a sequence's summability was decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certification {
    Analytic,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub a_summable: bool,
    pub b_square_summable: bool,
    pub c_divergent: bool,
    pub method: Certification,
}

impl HypothesisReport {
    pub fn all(&self) -> bool {
        self.a_summable && self.b_square_summable && self.c_divergent
    }
}

/// Fraction of the prefix sum contributed by the second half of the prefix.
/// Summable tails contribute little; divergent ones a nonvanishing share.
fn tail_share(values: &[f64]) -> f64 {
    let total: KahanSum = values.iter().copied().collect();
    let tail: KahanSum = values[values.len() / 2..].iter().copied().collect();
    if total.value() == 0.0 {
        0.0
    } else {
        tail.value() / total.value()
    }
}

const TAIL_SHARE_CUTOFF: f64 = 0.05;

impl RSGeneralSpec {
    /// Decides `sum a_n < inf`, `sum b_n^2 < inf`, `sum c_n = inf`: exactly for
    /// power laws and zero, by a tail-share heuristic on the first `horizon`
    /// terms otherwise.
    pub fn certify(&self, horizon: u64) -> Result<HypothesisReport> {
        fn power(seq: &Sequence) -> Option<(f64, f64)> {
            match *seq {
                Sequence::Power { coef, exponent, .. } => Some((coef, exponent)),
                Sequence::Zero => Some((0.0, 0.0)),
                _ => None,
            }
        }
        if let (Some(a), Some(b), Some(c)) = (power(&self.a_seq), power(&self.b_seq), power(&self.c_seq)) {
            return Ok(HypothesisReport {
                a_summable: a.0 == 0.0 || a.1 > 1.0,
                b_square_summable: b.0 == 0.0 || 2.0 * b.1 > 1.0,
                c_divergent: c.0 > 0.0 && c.1 <= 1.0,
                method: Certification::Analytic,
            });
        }
        if horizon < 16 {
            return Err(Error::InsufficientData(
                "numeric certification needs at least 16 terms".into(),
            ));
        }
        let a = self.a_seq.prefix(horizon)?;
        let b2: Vec<f64> = self.b_seq.prefix(horizon)?.iter().map(|b| b * b).collect();
        let c = self.c_seq.prefix(horizon)?;
        Ok(HypothesisReport {
            a_summable: tail_share(&a) <= TAIL_SHARE_CUTOFF,
            b_square_summable: tail_share(&b2) <= TAIL_SHARE_CUTOFF,
            c_divergent: c.iter().any(|&x| x > 0.0) && tail_share(&c) > TAIL_SHARE_CUTOFF,
            method: Certification::Numeric,
        })
    }

    pub fn validate(&self, horizon: u64) -> Result<()> {
        for (seq, name) in [(&self.a_seq, "a_seq"), (&self.b_seq, "b_seq"), (&self.c_seq, "c_seq")] {
            seq.check_defined(horizon, name)?;
        }
        if !(self.threshold_b >= 0.0 && self.threshold_b.is_finite()) {
            return Err(Error::Config("threshold_b must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_scale) {
            return Err(Error::Config(format!(
                "noise_scale must lie in [0, 1], got {}",
                self.noise_scale
            )));
        }
        if self.check_hypotheses {
            let rep = self.certify(horizon)?;
            if !rep.c_divergent {
                return Err(Error::Config(
                    "c_seq is not certified to have a divergent sum; disable check_hypotheses to allow it".into(),
                ));
            }
        }
        Ok(())
    }

    fn coefficients(&self, n: u64) -> Result<(f64, f64, f64)> {
        let (a, b, c) = (self.a_seq.at(n)?, self.b_seq.at(n)?, self.c_seq.at(n)?);
        for (v, name) in [(a, "a"), (b, "b"), (c, "c")] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name}_{n} = {v} is negative")));
            }
        }
        if a.max(c) > b {
            return Err(Error::Argument(format!(
                "step {n}: max(a, c) = {} exceeds b = {b}",
                a.max(c)
            )));
        }
        if c > 1.0 {
            return Err(Error::Argument(format!("step {n}: c = {c} exceeds 1")));
        }
        if self.drift == DriftRule::Linear && c * self.threshold_b > b {
            return Err(Error::Argument(format!(
                "step {n}: c B = {} exceeds b = {b}",
                c * self.threshold_b
            )));
        }
        Ok((a, b, c))
    }
}

pub fn stream_rs_general(
    spec: &RSGeneralSpec,
    z0: f64,
    horizon: u64,
    stream: Stream,
    obs: &mut impl Observer,
) -> Result<RunInfo> {
    check_start(z0, horizon)?;
    spec.validate(horizon)?;
    let mut info = RunInfo::default();
    let mut z = z0;
    obs.observe(0, z);
    for n in 0..horizon {
        if !info.diverged {
            let (a, b, c) = spec.coefficients(n)?;
            let excess = z - spec.threshold_b;
            let mu = match spec.drift {
                DriftRule::Clipped => a * z - c * excess.max(0.0),
                DriftRule::Linear => a * z - c * excess,
            };
            let mut next = z + mu;
            if spec.noise_scale > 0.0 {
                let amp = (b * (z + 1.0) - mu.abs()).min(z + mu).max(0.0);
                next += spec.noise_scale * amp * stream.symmetric(n);
            }
            if next < 0.0 {
                return Err(Error::Invariant(format!("negative iterate {next} at n = {}", n + 1)));
            }
            if next > DIVERGENCE_THRESHOLD || !next.is_finite() {
                info.diverged = true;
            } else {
                z = next;
            }
        }
        obs.observe(n + 1, z);
    }
    Ok(info)
}

pub fn simulate_rs_general(spec: &RSGeneralSpec, z0: f64, horizon: u64, seed: u64) -> Result<Path> {
    simulate_rs_general_path(spec, z0, horizon, seed, 0)
}

pub fn simulate_rs_general_path(spec: &RSGeneralSpec, z0: f64, horizon: u64, seed: u64, path_id: u32) -> Result<Path> {
    let mut values = Vec::with_capacity(horizon as usize + 1);
    let info = stream_rs_general(spec, z0, horizon, Stream::new(seed, path_id), &mut |_, z| {
        values.push(z)
    })?;
    Ok(finish_path(values, seed, path_id, crate::fingerprint(spec), info))
}

/// `bound_n = (c + x0) exp(l sum_{i<n} a_i)` for `n = 0..=a.len()`.
///
/// Any nonnegative sequence with `x_0 <= x0` and `x_{n+1} <= c + x0 + l sum_{i<=n} a_i x_i`
/// stays below it.
pub fn gronwall_envelope(c: f64, l: f64, x0: f64, a: &[f64]) -> Vec<f64> {
    let mut acc = KahanSum::new();
    let mut out = Vec::with_capacity(a.len() + 1);
    out.push(c + x0);
    for &ai in a {
        acc.add(ai);
        out.push((c + x0) * (l * acc.value()).exp());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t34() -> Sequence {
        Sequence::power(1.0, 0.75, 1.0)
    }

    #[test]
    fn fixed_point_and_contraction() {
        let spec = RSSpecialSpec::new(1.0, 1.0, t34()).unwrap();
        let p = iterate_rs_special_deterministic(&spec, 1.0, 1000).unwrap();
        assert!(p.values.iter().all(|&z| z == 1.0));

        let spec = RSSpecialSpec::new(1.0, 0.0, Sequence::power(0.5, 0.75, 1.0)).unwrap();
        let p = iterate_rs_special_deterministic(&spec, 1.0, 1000).unwrap();
        let mut prod = 1.0;
        for n in 0..1000u64 {
            assert!(p.values[n as usize + 1] < p.values[n as usize]);
            prod *= 1.0 - 0.5 * (n as f64 + 1.0).powf(-0.75);
            assert!((p.values[n as usize + 1] - prod).abs() <= 1e-14);
        }
    }

    #[test]
    fn deterministic_reaches_interval() {
        let spec = RSSpecialSpec::new(1.0, 1.0, t34()).unwrap();
        let p = iterate_rs_special_deterministic(&spec, 0.0, 100_000).unwrap();
        let last = *p.values.last().unwrap();
        assert!((0.999..=1.0).contains(&last));
    }

    #[test]
    fn step_size_violation_names_index() {
        let spec = RSSpecialSpec::new(2.0, 1.0, Sequence::power(1.0, 1.0, 1.0)).unwrap();
        match iterate_rs_special_deterministic(&spec, 0.0, 10) {
            Err(Error::StepSize { n: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noise_variants_degenerate_to_deterministic() {
        let spec = RSSpecialSpec::new(1.0, 1.0, t34()).unwrap().with_growth_b(2.5).unwrap();
        let d = iterate_rs_special_deterministic(&spec, 3.0, 5000).unwrap();
        let s0 = simulate_rs_special(&spec, &NoiseModel::BoundedMultiplicative { sigma: 0.0 }, 3.0, 5000, 9).unwrap();
        assert_eq!(d.values, s0.values);
    }

    #[test]
    fn noise_constraints_are_checked() {
        let spec = RSSpecialSpec::new(1.0, 1.0, t34()).unwrap().with_growth_b(1.2).unwrap();
        assert!(NoiseModel::BoundedMultiplicative { sigma: 0.5 }.check(&spec).is_err());
        let spec = spec.with_growth_b(1.5).unwrap();
        assert!(NoiseModel::BoundedMultiplicative { sigma: 0.5 }.check(&spec).is_ok());
        let spec0 = RSSpecialSpec::new(1.0, 0.2, t34()).unwrap().with_growth_b(3.0).unwrap();
        assert!(NoiseModel::BoundedMultiplicative { sigma: 0.5 }.check(&spec0).is_err());
    }

    #[test]
    fn bounded_multiplicative_obeys_growth_bound() {
        let spec = RSSpecialSpec::new(1.0, 1.0, t34()).unwrap().with_growth_b(1.5).unwrap();
        for seed in 0..5 {
            let p = simulate_rs_special(
                &spec,
                &NoiseModel::BoundedMultiplicative { sigma: 0.5 },
                0.0,
                20_000,
                seed,
            )
            .unwrap();
            let rep = verify_growth_condition(&p.values, &spec.t_seq, spec.growth_b).unwrap();
            assert!(rep.ok, "{rep:?}");
            assert!(p.values.iter().all(|&z| z >= 0.0));
        }
    }

    #[test]
    fn bounded_multiplicative_conditional_mean() {
        let spec = RSSpecialSpec::new(1.0, 1.0, t34()).unwrap().with_growth_b(1.5).unwrap();
        let (n, z, sigma) = (10u64, 4.0, 0.5);
        let t = example1_t(n);
        let mean_bound = (1.0 - t) * z + t;
        // resample the step from many independent streams at the same (n, z)
        let draws: Vec<f64> = (0..100_000u32)
            .map(|k| {
                let u = Stream::new(77, k).symmetric(n);
                (1.0 - spec.alpha * t) * z + spec.xi * t + sigma * t * (z + 1.0) * u
            })
            .collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!(m <= mean_bound + 3.0 * se);
    }

    #[test]
    fn monotone_in_xi() {
        let lo = RSSpecialSpec::new(1.0, 0.5, t34()).unwrap();
        let hi = RSSpecialSpec::new(1.0, 0.9, t34()).unwrap();
        let a = iterate_rs_special_deterministic(&lo, 2.0, 2000).unwrap();
        let b = iterate_rs_special_deterministic(&hi, 2.0, 2000).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(x, y)| x <= y));
    }

    #[test]
    fn example1_first_step_always_spikes() {
        for seed in 0..50 {
            let p = simulate_example1(3, seed).unwrap();
            assert_eq!(p.values[1], 1.0);
            assert_eq!(p.spikes[0], 0);
        }
    }

    #[test]
    fn example1_mean_identity() {
        assert!(example1_mean_audit(100_000) < 1e-14);
    }

    #[test]
    fn example1_violates_growth() {
        let p = simulate_example1(100_000, 3).unwrap();
        let rep = verify_growth_condition(&p.values, &t34(), 50.0).unwrap();
        assert!(!rep.ok);
    }

    #[test]
    fn growth_check_trivial_cases() {
        let rep = verify_growth_condition(&[2.0; 10], &t34(), 1.0).unwrap();
        assert!(rep.ok && rep.worst_ratio == 0.0);
        assert!(verify_growth_condition(&[1.0], &t34(), 1.0).is_err());
    }

    #[test]
    fn deterministic_growth_with_alpha_plus_xi() {
        let spec = RSSpecialSpec::new(0.7, 1.3, t34()).unwrap();
        for z0 in [0.0, 5.0, 100.0] {
            let p = iterate_rs_special_deterministic(&spec, z0, 5000).unwrap();
            assert!(verify_growth_condition(&p.values, &spec.t_seq, 2.0).unwrap().ok);
        }
    }

    fn general(drift: DriftRule, sigma: f64) -> RSGeneralSpec {
        RSGeneralSpec {
            a_seq: Sequence::power(1.0, 2.0, 1.0),
            b_seq: Sequence::power(1.0, 0.75, 1.0),
            c_seq: Sequence::power(1.0, 0.9, 1.0),
            threshold_b: 2.0,
            drift,
            noise_scale: sigma,
            check_hypotheses: true,
        }
    }

    #[test]
    fn general_reduces_to_special() {
        let (alpha, xi, b1) = (0.8, 1.2, 2.0);
        let spec = RSSpecialSpec::new(alpha, xi, t34()).unwrap().with_growth_b(b1).unwrap();
        let g = RSGeneralSpec {
            a_seq: Sequence::Zero,
            b_seq: Sequence::power(b1, 0.75, 1.0),
            c_seq: Sequence::power(alpha, 0.75, 1.0),
            threshold_b: xi / alpha,
            drift: DriftRule::Linear,
            noise_scale: 0.0,
            check_hypotheses: true,
        };
        for z0 in [0.0, 7.0] {
            let a = iterate_rs_special_deterministic(&spec, z0, 20_000).unwrap();
            let b = simulate_rs_general(&g, z0, 20_000, 1).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn general_rejects_nondivergent_c() {
        let mut g = general(DriftRule::Clipped, 0.5);
        g.c_seq = Sequence::Zero;
        g.a_seq = Sequence::Zero;
        assert!(simulate_rs_general(&g, 0.0, 100, 0).is_err());
        g.check_hypotheses = false;
        assert!(simulate_rs_general(&g, 0.0, 100, 0).is_ok());
    }

    #[test]
    fn general_rejects_negative_coefficients() {
        let mut g = general(DriftRule::Clipped, 0.5);
        g.a_seq = Sequence::Explicit {
            values: vec![-0.1; 100],
        };
        g.check_hypotheses = false;
        assert!(matches!(simulate_rs_general(&g, 0.0, 50, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn general_growth_and_nonnegativity() {
        let g = general(DriftRule::Clipped, 1.0);
        for seed in 0..5 {
            let p = simulate_rs_general(&g, 10.0, 20_000, seed).unwrap();
            assert!(p.values.iter().all(|&z| z >= 0.0));
            assert!(verify_growth_condition(&p.values, &g.b_seq, 1.0).unwrap().ok);
        }
    }

    #[test]
    fn certification_numeric_matches_analytic() {
        let mut g = general(DriftRule::Clipped, 0.5);
        let analytic = g.certify(10_000).unwrap();
        assert!(analytic.all());
        g.a_seq = Sequence::Explicit {
            values: g.a_seq.prefix(100_000).unwrap(),
        };
        g.b_seq = Sequence::Explicit {
            values: g.b_seq.prefix(100_000).unwrap(),
        };
        g.c_seq = Sequence::Explicit {
            values: g.c_seq.prefix(100_000).unwrap(),
        };
        let numeric = g.certify(100_000).unwrap();
        assert_eq!(numeric.method, Certification::Numeric);
        assert!(numeric.all(), "{numeric:?}");
        g.a_seq = Sequence::Explicit {
            values: vec![0.01; 100_000],
        };
        assert!(!g.certify(100_000).unwrap().a_summable);
    }

    #[test]
    fn gronwall_cases() {
        assert_eq!(gronwall_envelope(2.0, 0.0, 1.0, &[0.5; 4]), vec![3.0; 5]);
        let n = 100_000;
        let a = vec![1.0 / n as f64; n];
        let env = gronwall_envelope(0.0, 1.0, 1.0, &a);
        assert!((env[n] - std::f64::consts::E).abs() < 1e-10);
    }
}
