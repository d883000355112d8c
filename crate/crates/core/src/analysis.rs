//! Distances, rate fits, concentration envelopes and their coverage, ensemble
//! statistics, and the per-segment noise decomposition of skeleton SA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{expected_update, tau_alpha, MixingProfile, ParamKernel, UpdateFn};
use crate::numeric::{norm, pairwise_sum};
use crate::sa::SaTrajectory;
use crate::schedules::{Schedule, SkeletonTimescale};

/// `d(z, [0, hi]) = (z - hi)^+` for `z >= 0`.
pub fn dist_to_interval(z: f64, hi: f64) -> f64 {
    (z - hi).max(0.0)
}

/// `(||w|| - r)^+`.
pub fn dist_to_ball(w: &[f64], r: f64) -> f64 {
    (norm(w) - r).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Fitted `e` in `d_n ~ exp(intercept) n^{-e}`.
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Inclusive `n` range of the window.
    pub window: (u64, u64),
    /// Zero entries inside the window that were left out of the regression.
    pub zeros_excluded: usize,
}

/// Least-squares fit of `ln d_n = intercept - exponent ln n` over the points
/// with `n >= (1 - window_fraction) n_max`; nonpositive `d_n` and `n = 0` are skipped.
pub fn fit_rate_points(ns: &[u64], ds: &[f64], window_fraction: f64) -> Result<RateFit> {
    if ns.len() != ds.len() || ns.is_empty() {
        return Err(Error::Argument("fit_rate needs equally long, nonempty inputs".into()));
    }
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "window_fraction must lie in (0, 1], got {window_fraction}"
        )));
    }
    let n_max = *ns.iter().max().unwrap_or(&0);
    let lo = ((1.0 - window_fraction) * n_max as f64).ceil() as u64;
    let mut zeros = 0;
    let mut pts = Vec::new();
    for (&n, &d) in ns.iter().zip(ds) {
        if n < lo || n == 0 {
            continue;
        }
        if d > 0.0 {
            pts.push(((n as f64).ln(), d.ln()));
        } else {
            zeros += 1;
        }
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} usable points in the rate window ({zeros} zeros)",
            pts.len()
        )));
    }
    let (slope, intercept) = crate::markov::least_squares(pts.iter().copied());
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        exponent: -slope,
        intercept,
        r_squared,
        window: (lo.max(1), n_max),
        zeros_excluded: zeros,
    })
}

/// [`fit_rate_points`] for a series indexed by `n = 0, 1, ...`.
pub fn fit_rate(series: &[f64], window_fraction: f64) -> Result<RateFit> {
    let ns: Vec<u64> = (0..series.len() as u64).collect();
    fit_rate_points(&ns, series, window_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub pass: bool,
    pub sup_tail: f64,
}

/// `pass` iff `sup_{n >= tail_start} n^{eta/2} d_n <= tol`.
pub fn rate_certificate(series: &[f64], eta: f64, tail_start: usize, tol: f64) -> Result<RateCertificate> {
    if tail_start >= series.len() {
        return Err(Error::Argument(format!(
            "tail_start {tail_start} is past the series end {}",
            series.len()
        )));
    }
    let sup_tail = series[tail_start..]
        .iter()
        .enumerate()
        .map(|(i, d)| ((tail_start + i) as f64).powf(eta / 2.0) * d)
        .fold(0.0, f64::max);
    Ok(RateCertificate {
        pass: sup_tail <= tol,
        sup_tail,
    })
}

/// Concentration bounds.
///
/// `Rs` bounds `d^2`: `b_prime / (n + n0) * [ln(b_cap / delta) + 1 + ln(n + n0)]^k`.
/// `Sa` bounds `d`: `scale * exp(-L) * [ln(1 / delta) + offset + L]^k` with
/// `L = ln^{1 - nu}(t + 1) / (1 - nu)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Rs { b_cap: f64, b_prime: f64, n0: f64, k: i32 },
    Sa { scale: f64, offset: f64, k: i32, nu: f64 },
}

impl Envelope {
    /// Whether the envelope bounds `d^2` (as opposed to `d`).
    pub fn bounds_square(&self) -> bool {
        matches!(self, Envelope::Rs { .. })
    }

    pub fn scale(&self) -> f64 {
        match *self {
            Envelope::Rs { b_prime, .. } => b_prime,
            Envelope::Sa { scale, .. } => scale,
        }
    }

    pub fn with_scale(self, s: f64) -> Self {
        match self {
            Envelope::Rs { b_cap, n0, k, .. } => Envelope::Rs {
                b_cap,
                b_prime: s,
                n0,
                k,
            },
            Envelope::Sa { offset, k, nu, .. } => Envelope::Sa {
                scale: s,
                offset,
                k,
                nu,
            },
        }
    }

    /// The envelope divided by its scale constant.
    pub fn shape(&self, n: u64, delta: f64) -> Result<f64> {
        envelope_eval(&self.with_scale(1.0), n, delta)
    }

    /// The statistic the envelope bounds: `d^2` or `d`.
    pub fn statistic(&self, d: f64) -> f64 {
        if self.bounds_square() {
            d * d
        } else {
            d
        }
    }
}

pub fn envelope_eval(env: &Envelope, n: u64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    match *env {
        Envelope::Rs { b_cap, b_prime, n0, k } => {
            let x = n as f64 + n0;
            Ok(b_prime / x * ((b_cap / delta).ln() + 1.0 + x.ln()).powi(k))
        }
        Envelope::Sa { scale, offset, k, nu } => {
            let l = (n as f64 + 1.0).ln().powf(1.0 - nu) / (1.0 - nu);
            Ok(scale * (-l).exp() * ((1.0 / delta).ln() + offset + l).powi(k))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    /// First uncovered `(path, n)` in path order.
    pub first_violation: Option<(usize, u64)>,
    /// `1 - delta - 3 sqrt(delta (1 - delta) / paths)`.
    pub threshold: f64,
    pub pass: bool,
}

fn coverage_threshold(delta: f64, paths: usize) -> f64 {
    1.0 - delta - 3.0 * (delta * (1.0 - delta) / paths as f64).sqrt()
}

/// Fraction of paths lying under the envelope at every recorded `n`
/// (`paths[i][n]` is `d_n` of path `i`).
pub fn envelope_coverage(paths: &[Vec<f64>], env: &Envelope, delta: f64) -> Result<CoverageReport> {
    if paths.is_empty() {
        return Err(Error::InsufficientData("no paths".into()));
    }
    let bound: Vec<f64> = (0..paths.iter().map(Vec::len).max().unwrap_or(0) as u64)
        .map(|n| envelope_eval(env, n, delta))
        .collect::<Result<_>>()?;
    let mut covered = 0usize;
    let mut first = None;
    for (i, p) in paths.iter().enumerate() {
        match p.iter().enumerate().find(|(n, &d)| !(env.statistic(d) <= bound[*n])) {
            None => covered += 1,
            Some((n, _)) => {
                first.get_or_insert((i, n as u64));
            }
        }
    }
    let coverage = covered as f64 / paths.len() as f64;
    let threshold = coverage_threshold(delta, paths.len());
    Ok(CoverageReport {
        coverage,
        first_violation: first,
        threshold,
        pass: coverage >= threshold,
    })
}

/// Coverage from per-path required scales (see [`ScaleTracker`]): path `i` is
/// covered iff `required[i] <= env.scale()`.
pub fn coverage_from_scales(required: &[f64], env: &Envelope, delta: f64) -> CoverageReport {
    let covered = required.iter().filter(|&&s| s <= env.scale()).count();
    let coverage = covered as f64 / required.len().max(1) as f64;
    let threshold = coverage_threshold(delta, required.len().max(1));
    CoverageReport {
        coverage,
        first_violation: required.iter().position(|&s| !(s <= env.scale())).map(|i| (i, 0)),
        threshold,
        pass: coverage >= threshold,
    }
}

/// Streams one path and records, for each `delta`, the smallest scale that
/// keeps the whole path under the envelope, both over the first half of the
/// horizon and over all of it.
#[derive(Clone, Debug)]
pub struct ScaleTracker {
    env: Envelope,
    deltas: Vec<f64>,
    half: u64,
    pub half_scale: Vec<f64>,
    pub full_scale: Vec<f64>,
}

impl ScaleTracker {
    pub fn new(template: Envelope, deltas: &[f64], horizon: u64) -> Result<Self> {
        for &d in deltas {
            envelope_eval(&template, 0, d)?;
        }
        Ok(ScaleTracker {
            env: template,
            deltas: deltas.to_vec(),
            half: horizon / 2,
            half_scale: vec![0.0; deltas.len()],
            full_scale: vec![0.0; deltas.len()],
        })
    }

    pub fn push(&mut self, n: u64, d: f64) {
        let stat = self.env.statistic(d);
        for (j, &delta) in self.deltas.iter().enumerate() {
            let shape = self.env.shape(n, delta).unwrap_or(f64::NAN);
            let need = if stat == 0.0 { 0.0 } else { stat / shape };
            let need = if need.is_nan() { f64::INFINITY } else { need };
            self.full_scale[j] = self.full_scale[j].max(need);
            if n <= self.half {
                self.half_scale[j] = self.half_scale[j].max(need);
            }
        }
    }
}

/// Scale growth from half to full horizon beyond which calibration is refused:
/// the required constant is still increasing with the horizon.
pub const CALIBRATION_GROWTH_LIMIT: f64 = 2.0;

/// `ceil(q * len)`-th smallest value (1-based), the smallest threshold covering
/// a fraction `q` of the values.
pub fn order_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Fits the scale constant from per-path trackers: for each `delta` the smallest
/// scale covering a `1 - delta` fraction of training paths, maximized over the
/// grid. Fails when some required scale is infinite or when it keeps growing
/// between the half and full horizon.
pub fn calibrate_from_trackers(template: Envelope, deltas: &[f64], trackers: &[ScaleTracker]) -> Result<Envelope> {
    if trackers.is_empty() {
        return Err(Error::Calibration("no training paths".into()));
    }
    let mut best = 0.0f64;
    for (j, &delta) in deltas.iter().enumerate() {
        let full: Vec<f64> = trackers.iter().map(|t| t.full_scale[j]).collect();
        let half: Vec<f64> = trackers.iter().map(|t| t.half_scale[j]).collect();
        let qf = order_quantile(&full, 1.0 - delta);
        let qh = order_quantile(&half, 1.0 - delta);
        if !qf.is_finite() {
            return Err(Error::Calibration(format!(
                "no finite scale covers the paths at delta = {delta}"
            )));
        }
        if qf > CALIBRATION_GROWTH_LIMIT * qh {
            return Err(Error::Calibration(format!(
                "required scale keeps growing with the horizon at delta = {delta} ({qh:.3e} at half, {qf:.3e} at full)"
            )));
        }
        best = best.max(qf);
    }
    Ok(template.with_scale(best))
}

/// Calibrates on materialized distance paths (`paths[i][n] = d_n`).
pub fn calibrate_envelope(paths: &[Vec<f64>], template: Envelope, deltas: &[f64], k: i32) -> Result<Envelope> {
    let template = match template {
        Envelope::Rs { b_cap, b_prime, n0, .. } => Envelope::Rs { b_cap, b_prime, n0, k },
        Envelope::Sa { scale, offset, nu, .. } => Envelope::Sa { scale, offset, k, nu },
    };
    let mut trackers = Vec::with_capacity(paths.len());
    for p in paths {
        let mut tr = ScaleTracker::new(template, deltas, p.len().saturating_sub(1) as u64)?;
        for (n, &d) in p.iter().enumerate() {
            tr.push(n as u64, d);
        }
        trackers.push(tr);
    }
    calibrate_from_trackers(template, deltas, &trackers)
}

/// Per-time mean of `d^p` across paths, summed pairwise in path order.
pub fn lp_moment_series(paths: &[Vec<f64>], p: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0) {
        return Err(Error::Argument(format!("p must be at least 1, got {p}")));
    }
    let len = paths.iter().map(Vec::len).min().unwrap_or(0);
    let mut col = vec![0.0; paths.len()];
    Ok((0..len)
        .map(|n| {
            for (c, path) in col.iter_mut().zip(paths) {
                *c = path[n].powf(p);
            }
            pairwise_sum(&col) / paths.len() as f64
        })
        .collect())
}

/// Smallest `C` with `moment(n) <= C a(n) b(n)^k` on the given points, where
/// `a(n) = 1 / (n + n0)` and `b(n) = 1 + ln(n + n0)`.
pub fn moment_shape_constant(ns: &[u64], moment: &[f64], n0: f64, k: i32) -> f64 {
    ns.iter()
        .zip(moment)
        .map(|(&n, &m)| {
            let x = n as f64 + n0;
            m * x / (1.0 + x.ln()).powi(k)
        })
        .fold(0.0, f64::max)
}

/// Sorted, deduplicated recording times containing `0` and `horizon`, roughly
/// geometrically spaced with `points` entries, plus a dense linear tail.
pub fn recording_grid(horizon: u64, points: usize) -> Vec<u64> {
    let mut g: Vec<u64> = vec![0, horizon];
    let pts = points.max(2);
    for i in 0..pts {
        let x = (horizon as f64 + 1.0).powf(i as f64 / (pts - 1) as f64) - 1.0;
        g.push(x.round() as u64);
        g.push(horizon * i as u64 / (pts as u64 - 1));
    }
    g.sort_unstable();
    g.dedup();
    g.retain(|&n| n <= horizon);
    g
}

/// Per-time statistics of an ensemble recorded on a common grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<u64>,
    pub q_grid: Vec<f64>,
    /// `quantiles[i][j]` is the `q_grid[j]` quantile at `times[i]`.
    pub quantiles: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// `(p, series)` pairs of `E d^p`.
    pub moments: Vec<(f64, Vec<f64>)>,
    pub path_count: usize,
    pub seed_base: u64,
    pub diverged: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl EnsembleStats {
    /// `values[i][j]` is path `i` at `times[j]`.
    pub fn from_grid(
        times: Vec<u64>,
        values: &[Vec<f64>],
        q_grid: &[f64],
        p_list: &[f64],
        seed_base: u64,
        diverged: usize,
    ) -> Result<Self> {
        if values.iter().any(|v| v.len() != times.len()) {
            return Err(Error::Argument("paths do not match the recording grid".into()));
        }
        let mut q = q_grid.to_vec();
        q.sort_by(f64::total_cmp);
        let mut quantiles = Vec::with_capacity(times.len());
        let mut means = Vec::with_capacity(times.len());
        let mut col = vec![0.0; values.len()];
        for j in 0..times.len() {
            for (c, v) in col.iter_mut().zip(values) {
                *c = v[j];
            }
            means.push(pairwise_sum(&col) / values.len().max(1) as f64);
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            quantiles.push(q.iter().map(|&qq| quantile_sorted(&sorted, qq)).collect());
        }
        let moments = p_list
            .iter()
            .map(|&p| lp_moment_series(values, p).map(|s| (p, s)))
            .collect::<Result<_>>()?;
        Ok(EnsembleStats {
            times,
            q_grid: q,
            quantiles,
            means,
            moments,
            path_count: values.len(),
            seed_base,
            diverged,
        })
    }

    /// Columns `n, mean, q<..>..., m<p>...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,mean");
        for q in &self.q_grid {
            out.push_str(&format!(",q{q}"));
        }
        for (p, _) in &self.moments {
            out.push_str(&format!(",m{p}"));
        }
        out.push('\n');
        for (i, n) in self.times.iter().enumerate() {
            out.push_str(&format!("{n},{:.16e}", self.means[i]));
            for v in &self.quantiles[i] {
                out.push_str(&format!(",{v:.16e}"));
            }
            for (_, s) in &self.moments {
                out.push_str(&format!(",{:.16e}", s[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-segment noise terms of skeleton SA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNoise {
    pub m: usize,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
    pub s4: Vec<f64>,
    /// `sum_t alpha_t H(w_t, Y_{t+1}) - alpha_bar_m h(w_{t_m})`.
    pub total: Vec<f64>,
    /// `||s1 + s2 + s3 + s4 - (w_{t_{m+1}} - w_{t_m} - alpha_bar_m h(w_{t_m}))||`.
    pub reconstruction_error: f64,
    /// `||s_i|| / (T_m^2 (||w_{t_m}|| + 1))` for `i = 1, 2, 4`.
    pub ratio1: f64,
    pub ratio2: f64,
    pub ratio4: f64,
    /// `||s_3|| / (T_m (||w_{t_m}|| + 1))`.
    pub ratio3: f64,
}

/// Largest chain for which exact conditional expectations are attempted.
pub const MAX_EXACT_STATES: usize = 1000;

fn propagate(kernel: &dyn ParamKernel, w: &[f64], dist: &[f64], row: &mut [f64]) -> Vec<f64> {
    let mut out = vec![0.0; dist.len()];
    for (y, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        kernel.row(w, y, row);
        for (o, r) in out.iter_mut().zip(row.iter()) {
            *o += p * r;
        }
    }
    out
}

fn point_mass(n: usize, y: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[y] = 1.0;
    v
}

fn weigh(dist: &[f64], g: &[Vec<f64>], out: &mut [f64], scale: f64) {
    for (y, &p) in dist.iter().enumerate() {
        if p != 0.0 {
            for (o, gi) in out.iter_mut().zip(&g[y]) {
                *o += scale * p * gi;
            }
        }
    }
}

/// Splits each skeleton segment's noise into iterate drift (`s1`), the
/// live-versus-frozen chain gap (`s2`), the mixing bias (`s4`) and the
/// remaining centered noise (`s3`).
///
/// With `k0 = max(t - tau_{alpha_t}, 0)` and `g(y) = H(w_{t_m}, y)`:
/// * `s1 = sum_t alpha_t (H(w_t, Y_{t+1}) - g(Y_{t+1}))`, exact.
/// * `s2 = sum_t alpha_t <e_{Y_k0} (P_{w_k0} ... P_{w_t} - P_{w_k0}^{tau+1}), g>`.
/// * `s4 = sum_t alpha_t (<D_t P_{w_k0}^{tau+1}, g> - h(w_{t_m}))` where `D_t`
///   is `e_{Y_k0}` if `k0 <= t_m` and otherwise `e_{Y_{t_m}} P_{w_{t_m}} ... P_{w_{k0-1}}`.
/// * `s3 = total - s1 - s2 - s4`.
///
/// Products over future iterates use the realized iterate path.
pub fn noise_decomposition(
    traj: &SaTrajectory,
    schedule: &Schedule,
    skeleton: &SkeletonTimescale,
    kernel: &dyn ParamKernel,
    h: &dyn UpdateFn,
    profile: &MixingProfile,
) -> Result<Vec<SegmentNoise>> {
    let ny = kernel.state_count();
    if ny > MAX_EXACT_STATES {
        return Err(Error::Capability(format!(
            "{ny} chain states exceed the exact-expectation limit {MAX_EXACT_STATES}"
        )));
    }
    let d = h.dim();
    let end = *skeleton.anchors.last().unwrap_or(&0) as usize;
    if traj.horizon() < end {
        return Err(Error::Argument(format!(
            "trajectory horizon {} is shorter than the skeleton end {end}",
            traj.horizon()
        )));
    }
    let mut row = vec![0.0; ny];
    let mut out = Vec::with_capacity(skeleton.segments());
    for m in 0..skeleton.segments() {
        let (tm, tm1) = (skeleton.anchors[m] as usize, skeleton.anchors[m + 1] as usize);
        let wm = &traj.ws[tm];
        let hm = expected_update(kernel, h, wm)?;
        let g: Vec<Vec<f64>> = (0..ny).map(|y| h.eval(wm, y)).collect();
        let mut s1 = vec![0.0; d];
        let mut s2 = vec![0.0; d];
        let mut s4 = vec![0.0; d];
        let mut total = vec![0.0; d];
        let mut buf = vec![0.0; d];
        // quenched law of Y_k given F_{t_m}, advanced lazily to k0
        let mut dist_k = point_mass(ny, traj.ys[tm]);
        let mut k_at = tm;
        for t in tm..tm1 {
            let alpha = schedule.alpha_at(t as u64)?;
            let y1 = traj.ys[t + 1];
            h.apply(&traj.ws[t], y1, &mut buf);
            for i in 0..d {
                total[i] += alpha * buf[i];
                s1[i] += alpha * (buf[i] - g[y1][i]);
            }
            let tau = tau_alpha(profile, alpha)? as usize;
            let k0 = t.saturating_sub(tau);
            // live and frozen laws of Y_{t+1} started from Y_{k0}
            let start = point_mass(ny, traj.ys[k0]);
            let mut live = start.clone();
            for k in k0..=t {
                live = propagate(kernel, &traj.ws[k], &live, &mut row);
            }
            let mut frozen = start;
            for _ in k0..=t {
                frozen = propagate(kernel, &traj.ws[k0], &frozen, &mut row);
            }
            let gap: Vec<f64> = live.iter().zip(&frozen).map(|(a, b)| a - b).collect();
            weigh(&gap, &g, &mut s2, alpha);
            let mut law = if k0 <= tm {
                point_mass(ny, traj.ys[k0])
            } else {
                while k_at < k0 {
                    dist_k = propagate(kernel, &traj.ws[k_at], &dist_k, &mut row);
                    k_at += 1;
                }
                dist_k.clone()
            };
            for _ in k0..=t {
                law = propagate(kernel, &traj.ws[k0], &law, &mut row);
            }
            weigh(&law, &g, &mut s4, alpha);
            for i in 0..d {
                s4[i] -= alpha * hm[i];
            }
        }
        let abar = skeleton.realized[m];
        for i in 0..d {
            total[i] -= abar * hm[i];
        }
        let s3: Vec<f64> = (0..d).map(|i| total[i] - s1[i] - s2[i] - s4[i]).collect();
        let recon_err = (0..d)
            .map(|i| {
                let direct = traj.ws[tm1][i] - wm[i] - abar * hm[i];
                (s1[i] + s2[i] + s3[i] + s4[i] - direct).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        let tmv = skeleton.targets[m];
        let scale = norm(wm) + 1.0;
        out.push(SegmentNoise {
            m,
            ratio1: norm(&s1) / (tmv * tmv * scale),
            ratio2: norm(&s2) / (tmv * tmv * scale),
            ratio4: norm(&s4) / (tmv * tmv * scale),
            ratio3: norm(&s3) / (tmv * scale),
            s1,
            s2,
            s3,
            s4,
            total,
            reconstruction_error: recon_err,
        });
    }
    Ok(out)
}

/// Columns `m,s1,s2,s3,s4,total,ratio1,ratio2,ratio3,ratio4,reconstruction_error` (norms).
pub fn noise_csv(rows: &[SegmentNoise]) -> String {
    let mut out = String::from("m,s1,s2,s3,s4,total,ratio1,ratio2,ratio3,ratio4,reconstruction_error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.m,
            norm(&r.s1),
            norm(&r.s2),
            norm(&r.s3),
            norm(&r.s4),
            norm(&r.total),
            r.ratio1,
            r.ratio2,
            r.ratio3,
            r.ratio4,
            r.reconstruction_error
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        assert_eq!(dist_to_interval(5.0, 3.0), 2.0);
        assert_eq!(dist_to_interval(2.0, 3.0), 0.0);
        assert_eq!(dist_to_ball(&[0.6, 0.8], 1.0), 0.0);
        assert!((dist_to_ball(&[3.0, 0.0], 1.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn fit_rate_synthetic() {
        let s: Vec<f64> = (0..1000).map(|n| (n.max(1) as f64).powf(-0.5)).collect();
        let f = fit_rate(&s, 0.5).unwrap();
        assert!((f.exponent - 0.5).abs() < 1e-6 && f.r_squared > 0.999_999);
        let f = fit_rate(&vec![2.0; 100], 0.5).unwrap();
        assert!(f.exponent.abs() < 1e-6);
        let s: Vec<f64> = (0..1000).map(|n| 3.0 / n.max(1) as f64).collect();
        let f = fit_rate(&s, 0.5).unwrap();
        assert!((f.exponent - 1.0).abs() < 1e-6 && (f.intercept - 3f64.ln()).abs() < 1e-6);
        assert!(matches!(fit_rate(&[0.0; 50], 0.5), Err(Error::InsufficientData(_))));
        let mut z = s.clone();
        z[900] = 0.0;
        assert_eq!(fit_rate(&z, 0.5).unwrap().zeros_excluded, 1);
    }

    #[test]
    fn rate_certificate_cases() {
        let c = rate_certificate(&[0.0; 100], 0.5, 10, 0.1).unwrap();
        assert!(c.pass && c.sup_tail == 0.0);
        let s: Vec<f64> = (0..10_000).map(|n| 0.5 * (n.max(1) as f64).powf(-0.25)).collect();
        let c = rate_certificate(&s, 0.5, 10, 1.0).unwrap();
        assert!(c.pass && (c.sup_tail - 0.5).abs() < 1e-12);
        let s: Vec<f64> = (0..100_000).map(|n| (n.max(1) as f64).powf(-0.125)).collect();
        let c = rate_certificate(&s, 0.5, 10, 3.0).unwrap();
        assert!(!c.pass);
    }

    #[test]
    fn envelope_cases() {
        let env = Envelope::Rs {
            b_cap: 1.0,
            b_prime: 1.0,
            n0: 1.0,
            k: 1,
        };
        assert!((envelope_eval(&env, 0, (-1.0f64).exp()).unwrap() - 2.0).abs() < 1e-15);
        assert!(envelope_eval(&env, 3, 0.01).unwrap() > envelope_eval(&env, 3, 0.1).unwrap());
        assert!(envelope_eval(&env, 3, 1.0).is_err());
        let flat = Envelope::Rs {
            b_cap: 2.0,
            b_prime: 3.0,
            n0: 4.0,
            k: 0,
        };
        assert!((envelope_eval(&flat, 6, 0.2).unwrap() - 0.3).abs() < 1e-15);
        let sa = Envelope::Sa {
            scale: 1.0,
            offset: 0.0,
            k: 1,
            nu: 0.5,
        };
        assert!(envelope_eval(&sa, 10, 0.01).unwrap() > envelope_eval(&sa, 10, 0.1).unwrap());
    }

    #[test]
    fn coverage_trivial_bounds() {
        let paths = vec![vec![0.5, 0.2, 0.1]; 10];
        let huge = Envelope::Rs {
            b_cap: 1.0,
            b_prime: 1e300,
            n0: 1.0,
            k: 1,
        };
        assert_eq!(envelope_coverage(&paths, &huge, 0.1).unwrap().coverage, 1.0);
        let zero = huge.with_scale(0.0);
        let r = envelope_coverage(&paths, &zero, 0.1).unwrap();
        assert_eq!(r.coverage, 0.0);
        assert_eq!(r.first_violation, Some((0, 0)));
    }

    #[test]
    fn calibration_homogeneity_and_agreement() {
        let paths: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                (0..200)
                    .map(|n| (1.0 + i as f64 / 10.0) / (n as f64 + 2.0).sqrt())
                    .collect()
            })
            .collect();
        let tpl = Envelope::Rs {
            b_cap: 1.0,
            b_prime: 1.0,
            n0: 2.0,
            k: 1,
        };
        let e1 = calibrate_envelope(&paths, tpl, &[0.1], 1).unwrap();
        let doubled: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().map(|d| 2.0 * d).collect()).collect();
        let e2 = calibrate_envelope(&doubled, tpl, &[0.1], 1).unwrap();
        assert!((e2.scale() / e1.scale() - 4.0).abs() < 1e-12);
        let rep = envelope_coverage(&paths, &e1, 0.1).unwrap();
        assert!(rep.coverage >= 0.9);
    }

    #[test]
    fn calibration_refuses_growing_paths() {
        let paths: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..1000).map(|n| (n as f64).powf(0.25)).collect())
            .collect();
        let tpl = Envelope::Rs {
            b_cap: 1.0,
            b_prime: 1.0,
            n0: 1.0,
            k: 1,
        };
        assert!(matches!(
            calibrate_envelope(&paths, tpl, &[0.1], 1),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn moments_and_quantiles() {
        assert_eq!(lp_moment_series(&vec![vec![0.0; 4]; 3], 1.0).unwrap(), vec![0.0; 4]);
        let paths = vec![vec![1.0, 2.0], vec![3.0, 0.5], vec![0.0, 4.0]];
        let m1 = lp_moment_series(&paths, 1.0).unwrap();
        let m2 = lp_moment_series(&paths, 2.0).unwrap();
        let m3 = lp_moment_series(&paths, 3.0).unwrap();
        for n in 0..2 {
            assert!(m1[n] <= m2[n].sqrt() + 1e-15 && m2[n].sqrt() <= m3[n].cbrt() + 1e-15);
        }
        let st = EnsembleStats::from_grid(vec![0, 5], &paths, &[0.9, 0.1, 0.5], &[2.0], 7, 0).unwrap();
        assert_eq!(st.q_grid, vec![0.1, 0.5, 0.9]);
        assert_eq!(st.quantiles[0][1], 1.0);
        assert!(st.to_csv().starts_with("n,mean,q0.1,q0.5,q0.9,m2\n"));
    }

    #[test]
    fn grid_shape() {
        let g = recording_grid(100_000, 50);
        assert_eq!(g[0], 0);
        assert_eq!(*g.last().unwrap(), 100_000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
