//! Finite Markov kernels parameterized by a vector `w`, their stationary
//! distributions and mixing profiles, and checks of the kernel and drift
//! assumptions used by the stochastic-approximation analysis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, norm, vec_mat};
use crate::rng::{inverse_cdf, Stream};

/// Row-sum tolerance for stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Dense row-major square matrix with nonnegative rows summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

impl StochasticMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::Argument(format!("expected {n}x{n} entries, got {}", data.len())));
        }
        for i in 0..n {
            let row = &data[i * n..(i + 1) * n];
            if let Some(j) = row.iter().position(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::Structure(format!(
                    "entry ({i}, {j}) = {} is not a probability",
                    row[j]
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Structure(format!("row {i} sums to {s}")));
            }
        }
        Ok(StochasticMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Argument("matrix is not square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `v P` for a row vector `v`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        vec_mat(v, &self.data, &mut out);
        out
    }

    /// `self * other`.
    pub fn mul(&self, other: &StochasticMatrix) -> StochasticMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            vec_mat(self.row(i), &other.data, &mut data[i * n..(i + 1) * n]);
        }
        StochasticMatrix { n, data }
    }

    fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).filter(move |&j| self.get(i, j) > 0.0).map(move |j| (i, j)))
    }

    fn reach(&self, reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..self.n {
                let p = if reverse { self.get(v, u) } else { self.get(u, v) };
                if p > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Period of an irreducible chain: gcd of `level(u) + 1 - level(v)` over edges.
    fn period(&self) -> usize {
        let mut level = vec![usize::MAX; self.n];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..self.n {
                if self.get(u, v) > 0.0 && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let mut g = 0usize;
        for (u, v) in self.edges() {
            let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
            g = gcd(g, diff);
        }
        g
    }

    /// Irreducibility (strong connectivity) and aperiodicity.
    pub fn check_structure(&self) -> Result<()> {
        if self.reach(false).iter().any(|&b| !b) || self.reach(true).iter().any(|&b| !b) {
            return Err(Error::Structure("chain is reducible (not strongly connected)".into()));
        }
        let p = self.period();
        if p != 1 {
            return Err(Error::Structure(format!("chain is periodic with period {p}")));
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn residual_l1(p: &StochasticMatrix, d: &[f64]) -> f64 {
    p.left_mul(d).iter().zip(d).map(|(a, b)| (a - b).abs()).sum()
}

/// Stationary distribution of an irreducible aperiodic chain.
///
/// Solves `d (P - I) = 0, sum d = 1` densely; falls back to power iteration if
/// the solve is singular or its residual exceeds `1e-10`.
pub fn stationary_distribution(p: &StochasticMatrix) -> Result<Vec<f64>> {
    p.check_structure()?;
    let n = p.size();
    // Transposed balance equations with the last one replaced by normalization.
    let a = DMatrix::from_fn(n, n, |i, j| {
        if i == n - 1 {
            1.0
        } else {
            p.get(j, i) - if i == j { 1.0 } else { 0.0 }
        }
    });
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let solved = a.lu().solve(&rhs).map(|v| v.iter().copied().collect::<Vec<f64>>());
    if let Some(mut d) = solved {
        if d.iter().all(|&x| x > 0.0) {
            let s: f64 = d.iter().sum();
            d.iter_mut().for_each(|x| *x /= s);
            if residual_l1(p, &d) <= 1e-10 {
                return Ok(d);
            }
        }
    }
    let mut d = vec![1.0 / n as f64; n];
    for _ in 0..1_000_000 {
        let next = p.left_mul(&d);
        let done = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum::<f64>() <= 1e-14;
        d = next;
        if done {
            break;
        }
    }
    let res = residual_l1(p, &d);
    if res > 1e-10 || d.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Structure(format!(
            "stationary solve did not converge (residual {res})"
        )));
    }
    Ok(d)
}

/// A family of row-stochastic matrices `P_w` over a finite state space.
pub trait ParamKernel: Sync {
    fn state_count(&self) -> usize;
    /// Dimension of `w`.
    fn dim(&self) -> usize;
    /// Writes row `y` of `P_w` into `out`.
    fn row(&self, w: &[f64], y: usize, out: &mut [f64]);

    fn matrix(&self, w: &[f64]) -> Result<StochasticMatrix> {
        let n = self.state_count();
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            self.row(w, y, &mut data[y * n..(y + 1) * n]);
        }
        StochasticMatrix::new(n, data)
    }

    /// Whether `P_w` is the same matrix for every `w`.
    fn is_constant(&self) -> bool {
        false
    }
}

/// The update map `H(w, y)` of a stochastic-approximation scheme.
pub trait UpdateFn: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, w: &[f64], y: usize, out: &mut [f64]);
    /// Lipschitz constant `L_h` (also bounds `||H(0, y)||`).
    fn lip_h(&self) -> f64;

    fn eval(&self, w: &[f64], y: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply(w, y, &mut out);
        out
    }
}

/// A kernel that ignores `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableKernel {
    pub matrix: StochasticMatrix,
    pub dim: usize,
}

impl ParamKernel for TableKernel {
    fn state_count(&self) -> usize {
        self.matrix.size()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn row(&self, _w: &[f64], y: usize, out: &mut [f64]) {
        out.copy_from_slice(self.matrix.row(y));
    }
    fn matrix(&self, _w: &[f64]) -> Result<StochasticMatrix> {
        Ok(self.matrix.clone())
    }
    fn is_constant(&self) -> bool {
        true
    }
}

/// Bounded squashing `x / (1 + |x|)` used by [`TiltedKernel`].
pub fn squash(x: f64) -> f64 {
    x / (1.0 + x.abs())
}

/// `P_w = M_0 + sum_k squash(w_k) G_k` with zero-row-sum tilts `G_k` and
/// `M_0 - sum_k |G_k| >= 0` entrywise, so every `P_w` is stochastic and
/// `w -> P_w` is Lipschitz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltedKernel {
    pub base: StochasticMatrix,
    /// One `n x n` row-major matrix per coordinate of `w` (possibly fewer).
    pub tilts: Vec<Vec<f64>>,
    pub dim: usize,
}

impl TiltedKernel {
    pub fn new(base: StochasticMatrix, tilts: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        let n = base.size();
        if tilts.len() > dim {
            return Err(Error::Config(format!("{} tilts for dimension {dim}", tilts.len())));
        }
        for (k, g) in tilts.iter().enumerate() {
            if g.len() != n * n {
                return Err(Error::Config(format!(
                    "tilt {k} has {} entries, expected {}",
                    g.len(),
                    n * n
                )));
            }
            for i in 0..n {
                let s: f64 = g[i * n..(i + 1) * n].iter().sum();
                if s.abs() > ROW_SUM_TOL {
                    return Err(Error::Config(format!("tilt {k} row {i} sums to {s}, expected 0")));
                }
            }
        }
        for i in 0..n * n {
            let slack = base.data[i] - tilts.iter().map(|g| g[i].abs()).sum::<f64>();
            if slack < 0.0 {
                return Err(Error::Config(format!(
                    "tilts can push entry ({}, {}) negative",
                    i / n,
                    i % n
                )));
            }
        }
        Ok(TiltedKernel { base, tilts, dim })
    }
}

impl ParamKernel for TiltedKernel {
    fn state_count(&self) -> usize {
        self.base.size()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn row(&self, w: &[f64], y: usize, out: &mut [f64]) {
        let n = self.base.size();
        out.copy_from_slice(self.base.row(y));
        for (k, g) in self.tilts.iter().enumerate() {
            let s = squash(w[k]);
            for (o, gv) in out.iter_mut().zip(&g[y * n..(y + 1) * n]) {
                *o += s * gv;
            }
        }
        for o in out.iter_mut() {
            *o = o.max(0.0);
        }
    }
    fn is_constant(&self) -> bool {
        self.tilts.iter().all(|g| g.iter().all(|&x| x == 0.0))
    }
}

/// `H(w, y) = A_y w + b_y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineUpdate {
    pub dim: usize,
    /// Row-major `dim x dim` matrix per state.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl AffineUpdate {
    pub fn new(dim: usize, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        if a.len() != b.len() || a.iter().any(|m| m.len() != dim * dim) || b.iter().any(|v| v.len() != dim) {
            return Err(Error::Config("affine update shapes do not match".into()));
        }
        Ok(AffineUpdate { dim, a, b })
    }
}

fn spectral_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

impl UpdateFn for AffineUpdate {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, w: &[f64], y: usize, out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            out[i] = dot(&self.a[y][i * d..(i + 1) * d], w) + self.b[y][i];
        }
    }
    fn lip_h(&self) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| spectral_norm(self.dim, self.dim, a).max(norm(b)))
            .fold(0.0, f64::max)
    }
}

/// Geometric envelope `s(n) <= c_mix tau_rate^n` of a TV profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub c_mix: f64,
    pub tau_rate: f64,
}

/// `s(n) = max_y sum_{y'} |P^n(y, y') - d(y')|` for `n = 0..=n_max` (unhalved).
pub fn tv_profile_of_matrix(p: &StochasticMatrix, n_max: usize) -> Result<Vec<f64>> {
    let d = stationary_distribution(p)?;
    let n = p.size();
    let mut pn = StochasticMatrix {
        n,
        data: (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect(),
    };
    let mut out = Vec::with_capacity(n_max + 1);
    for step in 0..=n_max {
        let s = (0..n)
            .map(|y| pn.row(y).iter().zip(&d).map(|(a, b)| (a - b).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        out.push(s);
        if step < n_max {
            pn = pn.mul(p);
        }
    }
    Ok(out)
}

pub fn total_variation_profile(kernel: &dyn ParamKernel, w: &[f64], n_max: usize) -> Result<Vec<f64>> {
    tv_profile_of_matrix(&kernel.matrix(w)?, n_max)
}

/// Profile entries below this are treated as exact zeros (rounding floor).
pub const TV_FLOOR: f64 = 1e-12;

/// Least-squares fit of `ln s(n)` on `n` over the entries above [`TV_FLOOR`],
/// then `c_mix = max_n s(n) / tau_rate^n` over the same entries.
pub fn fit_mixing_profile(profile: &[f64]) -> Result<MixingProfile> {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= TV_FLOOR)
        .map(|(n, &s)| (n as f64, s))
        .collect();
    if pts.is_empty() {
        return Ok(MixingProfile {
            c_mix: 1.0,
            tau_rate: 0.0,
        });
    }
    if pts.len() == 1 && pts[0].0 == 0.0 {
        return Ok(MixingProfile {
            c_mix: pts[0].1,
            tau_rate: 0.0,
        });
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "mixing fit needs 3 positive entries, got {}",
            pts.len()
        )));
    }
    let (slope, _) = least_squares(pts.iter().map(|&(n, s)| (n, s.ln())));
    let tau_rate = slope.exp();
    let c_mix = pts.iter().map(|&(n, s)| (s.ln() - n * slope).exp()).fold(0.0, f64::max);
    Ok(MixingProfile { c_mix, tau_rate })
}

/// Ordinary least squares `y = intercept + slope x`; returns `(slope, intercept)`.
pub(crate) fn least_squares(points: impl Iterator<Item = (f64, f64)> + Clone) -> (f64, f64) {
    let n = points.clone().count() as f64;
    let (mx, my) = points.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = points.fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Whether the envelope has reached accuracy `alpha` after `n` steps.
fn mixed_after(profile: &MixingProfile, alpha: f64, n: u64) -> bool {
    profile.c_mix * profile.tau_rate.powi(n.min(i32::MAX as u64) as i32) <= alpha
}

/// `min { n >= 0 : c_mix tau_rate^n <= alpha }`.
pub fn tau_alpha(profile: &MixingProfile, alpha: f64) -> Result<u64> {
    if !(alpha > 0.0) {
        return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
    }
    if !(profile.tau_rate < 1.0 && profile.tau_rate >= 0.0) {
        return Err(Error::NonMixing(profile.tau_rate));
    }
    if mixed_after(profile, alpha, 0) {
        return Ok(0);
    }
    if profile.tau_rate == 0.0 {
        return Ok(1);
    }
    let guess = ((alpha / profile.c_mix).ln() / profile.tau_rate.ln()).ceil().max(0.0);
    let mut n = guess.min(i32::MAX as f64) as u64;
    while n > 0 && mixed_after(profile, alpha, n - 1) {
        n -= 1;
    }
    while !mixed_after(profile, alpha, n) {
        n += 1;
    }
    Ok(n)
}

/// Next state from row `P_w(y, .)` by inverse CDF of the single uniform `u`.
pub fn sample_step(kernel: &dyn ParamKernel, w: &[f64], y: usize, u: f64) -> usize {
    let mut row = vec![0.0; kernel.state_count()];
    kernel.row(w, y, &mut row);
    inverse_cdf(&row, u)
}

/// `h(w) = sum_y d_w(y) H(w, y)`.
pub fn expected_update(kernel: &dyn ParamKernel, h: &dyn UpdateFn, w: &[f64]) -> Result<Vec<f64>> {
    let d = stationary_distribution(&kernel.matrix(w)?)?;
    let mut out = vec![0.0; h.dim()];
    let mut buf = vec![0.0; h.dim()];
    for (y, &dy) in d.iter().enumerate() {
        h.apply(w, y, &mut buf);
        for (o, b) in out.iter_mut().zip(&buf) {
            *o += dy * b;
        }
    }
    Ok(out)
}

/// `||P_{w1} - P_{w2}||_2 (1 + ||w1|| + ||w2||) / ||w1 - w2||` with the spectral norm.
pub fn kernel_lipschitz_ratio(kernel: &dyn ParamKernel, w1: &[f64], w2: &[f64]) -> Result<f64> {
    let gap = crate::numeric::distance(w1, w2);
    if gap == 0.0 {
        return Err(Error::Argument("kernel_lipschitz_ratio needs w1 != w2".into()));
    }
    let (p1, p2) = (kernel.matrix(w1)?, kernel.matrix(w2)?);
    let n = p1.size();
    let diff: Vec<f64> = p1.as_slice().iter().zip(p2.as_slice()).map(|(a, b)| a - b).collect();
    Ok(spectral_norm(n, n, &diff) * (1.0 + norm(w1) + norm(w2)) / gap)
}

/// Frozen chain: equal to `states` through index `t - tau`, then driven by the
/// fixed matrix `P_{w_{t-tau}}` using the same uniforms `stream.uniform(k)` that
/// produced the base chain's step `k`. Returns `steps + 1` states starting at
/// index `t - tau`.
pub fn simulate_auxiliary(
    kernel: &dyn ParamKernel,
    states: &[usize],
    params: &[Vec<f64>],
    t: usize,
    tau: usize,
    steps: usize,
    stream: &Stream,
) -> Result<Vec<usize>> {
    if tau > t {
        return Err(Error::Argument(format!("tau = {tau} exceeds t = {t}")));
    }
    let k0 = t - tau;
    if k0 >= states.len() || k0 >= params.len() {
        return Err(Error::Index {
            index: k0 as u64,
            len: states.len().min(params.len()),
        });
    }
    let frozen = kernel.matrix(&params[k0])?;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = states[k0];
    out.push(y);
    for k in k0..k0 + steps {
        y = inverse_cdf(frozen.row(y), stream.uniform(k as u64));
        out.push(y);
    }
    Ok(out)
}

/// Runs the chain `Y_{k+1} ~ P_{w_k}(Y_k, .)` for a given parameter sequence,
/// drawing step `k` with `stream.uniform(k)`.
pub fn simulate_chain(kernel: &dyn ParamKernel, y0: usize, params: &[Vec<f64>], stream: &Stream) -> Vec<usize> {
    let mut out = Vec::with_capacity(params.len() + 1);
    let mut y = y0;
    out.push(y);
    let mut row = vec![0.0; kernel.state_count()];
    for (k, w) in params.iter().enumerate() {
        kernel.row(w, y, &mut row);
        y = inverse_cdf(&row, stream.uniform(k as u64));
        out.push(y);
    }
    out
}

/// Deterministic quasi-uniform points on the unit sphere in `R^dim`.
///
/// `dim = 1` gives `{+1, -1}`; `dim = 2` equally spaced angles; higher
/// dimensions normalize a Halton sequence on the cube `[-1, 1]^dim`.
pub fn sphere_probes(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let primes = first_primes(dim);
            let mut out = Vec::with_capacity(count);
            let mut i = 1u64;
            while out.len() < count {
                let v: Vec<f64> = primes.iter().map(|&p| 2.0 * radical_inverse(i, p) - 1.0).collect();
                i += 1;
                let r = norm(&v);
                if r > 1e-3 {
                    out.push(v.iter().map(|x| x / r).collect());
                }
            }
            out
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn first_primes(k: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(k);
    let mut c = 2u64;
    while out.len() < k {
        if out.iter().all(|p| !c.is_multiple_of(*p)) {
            out.push(c);
        }
        c += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftProbe {
    pub w: Vec<f64>,
    /// `<w, h(w)>`
    pub inner: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub feasible: bool,
    pub c1_hat: f64,
    pub c2_hat: f64,
    /// Probes with `<w, h(w)> > -c1_hat ||w||^2`, i.e. the ones that force `c2_hat > 0`
    /// (or, when infeasible, the single most violating probe).
    pub violations: Vec<DriftProbe>,
}

/// Fits `<w, h(w)> <= -C1 ||w||^2 + C2` over sphere probes.
///
/// `C1` is the largest slope admissible on the outermost radius with `C2`
/// absorbing the inner shells; `C2` is then the smallest offset covering all
/// probes. Infeasible when `<w, h(w)> >= 0` somewhere on the outermost shell.
pub fn drift_scan_fn(
    dim: usize,
    h: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    radii: &[f64],
    directions_per_radius: usize,
) -> Result<DriftReport> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Argument("drift_scan needs positive radii".into()));
    }
    let dirs = sphere_probes(dim, directions_per_radius.max(1));
    let mut probes = Vec::with_capacity(radii.len() * dirs.len());
    for &r in radii {
        for u in &dirs {
            let w: Vec<f64> = u.iter().map(|x| r * x).collect();
            let hw = h(&w)?;
            probes.push(DriftProbe { inner: dot(&w, &hw), w });
        }
    }
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let outer = probes
        .iter()
        .filter(|p| (norm(&p.w) - r_max).abs() <= 1e-9 * r_max)
        .map(|p| p.inner / (r_max * r_max))
        .fold(f64::NEG_INFINITY, f64::max);
    if outer >= 0.0 {
        let worst = probes
            .iter()
            .max_by(|a, b| (a.inner / dot(&a.w, &a.w)).total_cmp(&(b.inner / dot(&b.w, &b.w))))
            .cloned();
        return Ok(DriftReport {
            feasible: false,
            c1_hat: 0.0,
            c2_hat: 0.0,
            violations: worst.into_iter().collect(),
        });
    }
    let c1 = -outer;
    let need = |p: &DriftProbe| p.inner + c1 * dot(&p.w, &p.w);
    let c2 = probes.iter().map(need).fold(0.0, f64::max);
    let violations = probes.iter().filter(|p| need(p) > 0.0).cloned().collect();
    Ok(DriftReport {
        feasible: true,
        c1_hat: c1,
        c2_hat: c2,
        violations,
    })
}

pub fn drift_scan(
    kernel: &dyn ParamKernel,
    h: &dyn UpdateFn,
    radii: &[f64],
    directions_per_radius: usize,
) -> Result<DriftReport> {
    drift_scan_fn(h.dim(), |w| expected_update(kernel, h, w), radii, directions_per_radius)
}
