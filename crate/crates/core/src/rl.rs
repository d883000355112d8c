//! Finite MDPs, linear features, the adaptive-temperature ε-softmax behavior
//! policy and linear Q-learning, plus its embedding as a generic
//! stochastic-approximation scheme over transitions `y = (s, a, s')`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{ParamKernel, UpdateFn};
use crate::numeric::{dot, norm};
use crate::rng::{inverse_cdf, lane, Stream};
use crate::schedules::Schedule;

/// Row-sum tolerance for transition rows and distributions.
const PROB_TOL: f64 = 1e-12;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if let Some(x) = p.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::Config(format!("{what} has invalid entry {x}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::Config(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Finite discounted MDP with deterministic rewards `r(s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `r(s, a)` at `s * n_actions + a`.
    pub reward: Vec<f64>,
    /// `p(s' | s, a)` at `(s * n_actions + a) * n_states + s'`.
    pub transition: Vec<f64>,
    pub gamma: f64,
    pub initial: Vec<f64>,
}

impl Mdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(Error::Config("MDP needs at least one state and action".into()));
        }
        if self.reward.len() != s * a || self.transition.len() != s * a * s || self.initial.len() != s {
            return Err(Error::Config("MDP table sizes do not match n_states/n_actions".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("reward has non-finite entries".into()));
        }
        for si in 0..s {
            for ai in 0..a {
                check_distribution(self.p_row(si, ai), &format!("transition row ({si}, {ai})"))?;
            }
        }
        check_distribution(&self.initial, "initial distribution")
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn p_row(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_actions + a) * self.n_states;
        &self.transition[k..k + self.n_states]
    }
}

/// Dense feature table `x(s, a)` in `R^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    /// `x(s, a)` at `(s * n_actions + a) * dim`.
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(n_states: usize, n_actions: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != n_states * n_actions * dim {
            return Err(Error::Config(format!(
                "feature table has {} entries, expected {}",
                data.len(),
                n_states * n_actions * dim
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("feature table has non-finite entries".into()));
        }
        Ok(FeatureMap {
            n_states,
            n_actions,
            dim,
            data,
        })
    }

    /// One-hot features `x(s, a) = e_{s * n_actions + a}`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let d = n_states * n_actions;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        FeatureMap {
            n_states,
            n_actions,
            dim: d,
            data,
        }
    }

    pub fn x(&self, s: usize, a: usize) -> &[f64] {
        let k = (s * self.n_actions + a) * self.dim;
        &self.data[k..k + self.dim]
    }

    fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Config("feature map shape does not match the MDP".into()));
        }
        Ok(())
    }
}

fn default_adaptive() -> bool {
    true
}

/// ε-softmax behavior policy with inverse temperature `kappa0 / max(1, ||w||)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub epsilon: f64,
    pub kappa0: f64,
    /// When false the temperature is held at `kappa0` regardless of `||w||`.
    #[serde(default = "default_adaptive")]
    pub adaptive: bool,
}

impl PolicyConfig {
    pub fn new(epsilon: f64, kappa0: f64) -> Result<Self> {
        let cfg = PolicyConfig {
            epsilon,
            kappa0,
            adaptive: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.kappa0 > 0.0 && self.kappa0.is_finite()) {
            return Err(Error::Config(format!("kappa0 must be positive, got {}", self.kappa0)));
        }
        Ok(())
    }
}

/// `kappa0 / max(1, ||w||)`.
pub fn kappa(w: &[f64], kappa0: f64) -> f64 {
    kappa0 / norm(w).max(1.0)
}

/// Softmax logits `kappa_w x(s, a)^T w` for every action.
pub fn policy_logits(w: &[f64], s: usize, cfg: &PolicyConfig, features: &FeatureMap) -> Vec<f64> {
    let k = if cfg.adaptive { kappa(w, cfg.kappa0) } else { cfg.kappa0 };
    (0..features.n_actions).map(|a| k * dot(features.x(s, a), w)).collect()
}

/// `mu_w(a | s) = eps / |A| + (1 - eps) softmax(kappa_w x(s, .)^T w)_a`.
pub fn behavior_policy(w: &[f64], s: usize, cfg: &PolicyConfig, features: &FeatureMap) -> Vec<f64> {
    let logits = policy_logits(w, s, cfg, features);
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = ex.iter().sum();
    let floor = cfg.epsilon / features.n_actions as f64;
    ex.iter().map(|e| floor + (1.0 - cfg.epsilon) * e / z).collect()
}

/// `x(s, a)^T w` for every pair, indexed `s * n_actions + a`.
pub fn q_values(w: &[f64], features: &FeatureMap) -> Vec<f64> {
    (0..features.n_states * features.n_actions)
        .map(|k| dot(&features.data[k * features.dim..(k + 1) * features.dim], w))
        .collect()
}

/// Greedy action and value at `s`; ties go to the lowest action index.
pub fn greedy(w: &[f64], s: usize, features: &FeatureMap) -> (usize, f64) {
    let mut best = (0, dot(features.x(s, 0), w));
    for a in 1..features.n_actions {
        let q = dot(features.x(s, a), w);
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// TD error `r + gamma max_a' x(s', a')^T w - x(s, a)^T w`.
fn td_error(w: &[f64], s: usize, a: usize, r: f64, s_next: usize, features: &FeatureMap, gamma: f64) -> f64 {
    r + gamma * greedy(w, s_next, features).1 - dot(features.x(s, a), w)
}

/// `w + alpha (r + gamma max_a x(s', a)^T w - x(s, a)^T w) x(s, a)`.
pub fn linear_q_step(w: &[f64], tr: &Transition, alpha: f64, features: &FeatureMap, gamma: f64) -> Vec<f64> {
    let delta = td_error(w, tr.s, tr.a, tr.r, tr.s_next, features, gamma);
    let x = features.x(tr.s, tr.a);
    w.iter().zip(x).map(|(wi, xi)| wi + alpha * (delta * xi)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQRun {
    pub w_trajectory: Vec<Vec<f64>>,
    pub transitions: Vec<Transition>,
    pub seed: u64,
    pub path_id: u32,
    pub schedule_fingerprint: String,
    pub diverged: bool,
}

/// Draws `S_0 ~ p_0` from the stream's init lane.
pub fn initial_state(mdp: &Mdp, stream: &Stream) -> usize {
    inverse_cdf(&mdp.initial, stream.with_lane(lane::INIT).uniform(0))
}

/// Joint weights `mu_w(a | s) p(s' | s, a)` over `(a, s')` in lexicographic order.
fn joint_row(mdp: &Mdp, features: &FeatureMap, cfg: &PolicyConfig, w: &[f64], s: usize, out: &mut Vec<f64>) {
    let mu = behavior_policy(w, s, cfg, features);
    out.clear();
    for (a, mu_a) in mu.iter().enumerate() {
        out.extend(mdp.p_row(s, a).iter().map(|p| mu_a * p));
    }
}

/// Streams a closed-loop linear Q-learning rollout.
///
/// Step `t` draws `(A_t, S_{t+1})` jointly from `mu_{w_t}(a | S_t) p(s' | S_t, a)`
/// with the single uniform `stream.uniform(t)`. `obs(t, w_t, transition_t)` is
/// called for `t = 0..=horizon`, where the transition is the one that produced
/// `w_t` (none for `t = 0`). Returns whether the run diverged.
#[allow(clippy::too_many_arguments)]
pub fn stream_linear_q(
    mdp: &Mdp,
    features: &FeatureMap,
    cfg: &PolicyConfig,
    schedule: &Schedule,
    w0: &[f64],
    horizon: u64,
    stream: &Stream,
    mut obs: impl FnMut(u64, &[f64], Option<&Transition>),
) -> Result<bool> {
    mdp.validate()?;
    features.check_against(mdp)?;
    cfg.validate()?;
    if w0.len() != features.dim {
        return Err(Error::Argument(format!(
            "w0 has length {}, expected {}",
            w0.len(),
            features.dim
        )));
    }
    let mut w = w0.to_vec();
    let mut s = initial_state(mdp, stream);
    let mut row = Vec::with_capacity(mdp.n_actions * mdp.n_states);
    let mut diverged = false;
    obs(0, &w, None);
    for t in 0..horizon {
        if diverged {
            obs(t + 1, &w, None);
            continue;
        }
        joint_row(mdp, features, cfg, &w, s, &mut row);
        let k = inverse_cdf(&row, stream.uniform(t));
        let tr = Transition {
            s,
            a: k / mdp.n_states,
            r: mdp.r(s, k / mdp.n_states),
            s_next: k % mdp.n_states,
        };
        let next = linear_q_step(&w, &tr, schedule.alpha_at(t)?, features, mdp.gamma);
        if next.iter().all(|x| x.is_finite()) {
            w = next;
        } else {
            diverged = true;
        }
        s = tr.s_next;
        obs(t + 1, &w, Some(&tr));
    }
    Ok(diverged)
}

#[allow(clippy::too_many_arguments)]
pub fn run_linear_q(
    mdp: &Mdp,
    features: &FeatureMap,
    cfg: &PolicyConfig,
    schedule: &Schedule,
    horizon: u64,
    seed: u64,
    path_id: u32,
) -> Result<LinearQRun> {
    let stream = Stream::new(seed, path_id);
    let mut ws = Vec::with_capacity(horizon as usize + 1);
    let mut trs = Vec::with_capacity(horizon as usize);
    let w0 = vec![0.0; features.dim];
    let diverged = stream_linear_q(mdp, features, cfg, schedule, &w0, horizon, &stream, |_, w, tr| {
        ws.push(w.to_vec());
        if let Some(tr) = tr {
            trs.push(*tr);
        }
    })?;
    Ok(LinearQRun {
        w_trajectory: ws,
        transitions: trs,
        seed,
        path_id,
        schedule_fingerprint: schedule.fingerprint(),
        diverged,
    })
}

/// Linear Q-learning seen as SA over `Y = {(s, a, s') : p(s' | s, a) > 0}`,
/// ordered lexicographically.
#[derive(Clone, Debug)]
pub struct QEmbedding {
    pub mdp: Mdp,
    pub features: FeatureMap,
    pub cfg: PolicyConfig,
    pub triples: Vec<(usize, usize, usize)>,
    /// Triples starting at state `s` occupy `starts[s]..starts[s + 1]`.
    starts: Vec<usize>,
}

pub fn mdp_to_sa(mdp: &Mdp, features: &FeatureMap, cfg: &PolicyConfig) -> Result<QEmbedding> {
    mdp.validate()?;
    features.check_against(mdp)?;
    cfg.validate()?;
    let mut triples = Vec::new();
    let mut starts = vec![0];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            for (s2, &p) in mdp.p_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    triples.push((s, a, s2));
                }
            }
        }
        starts.push(triples.len());
    }
    Ok(QEmbedding {
        mdp: mdp.clone(),
        features: features.clone(),
        cfg: *cfg,
        triples,
        starts,
    })
}

impl QEmbedding {
    pub fn index_of(&self, triple: (usize, usize, usize)) -> Option<usize> {
        self.triples.binary_search(&triple).ok()
    }

    /// Lowest-index `y` whose last component is `s`; a start state for the
    /// embedded chain that makes its next transition begin at `s`.
    pub fn entry_for(&self, s: usize) -> Result<usize> {
        self.triples
            .iter()
            .position(|&(_, _, s2)| s2 == s)
            .ok_or_else(|| Error::Structure(format!("no transition enters state {s}")))
    }

    /// Same start as [`run_linear_q`]: `S_0` from the init lane, mapped by [`entry_for`](Self::entry_for).
    pub fn initial_y(&self, stream: &Stream) -> Result<usize> {
        self.entry_for(initial_state(&self.mdp, stream))
    }

    /// `L_h = max_y max(||x|| (gamma max_a' ||x(s', a')|| + ||x||), |r| ||x||)` with `x = x(s, a)`.
    pub fn analytic_lip_h(&self) -> f64 {
        let f = &self.features;
        let max_next: Vec<f64> = (0..self.mdp.n_states)
            .map(|s| (0..self.mdp.n_actions).map(|a| norm(f.x(s, a))).fold(0.0, f64::max))
            .collect();
        self.triples
            .iter()
            .map(|&(s, a, s2)| {
                let nx = norm(f.x(s, a));
                (nx * (self.mdp.gamma * max_next[s2] + nx)).max(self.mdp.r(s, a).abs() * nx)
            })
            .fold(0.0, f64::max)
    }

    /// Rebuilds `Y_0..=Y_N` for a closed-loop run started with the same stream.
    pub fn states_of_run(&self, run: &LinearQRun) -> Result<Vec<usize>> {
        let stream = Stream::new(run.seed, run.path_id);
        let mut ys = vec![self.initial_y(&stream)?];
        for tr in &run.transitions {
            ys.push(
                self.index_of((tr.s, tr.a, tr.s_next))
                    .ok_or_else(|| Error::Invariant("transition outside the embedding".into()))?,
            );
        }
        Ok(ys)
    }
}

impl ParamKernel for QEmbedding {
    fn state_count(&self) -> usize {
        self.triples.len()
    }
    fn dim(&self) -> usize {
        self.features.dim
    }
    fn row(&self, w: &[f64], y: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let s = self.triples[y].2;
        let mu = behavior_policy(w, s, &self.cfg, &self.features);
        for k in self.starts[s]..self.starts[s + 1] {
            let (_, a, s2) = self.triples[k];
            out[k] = mu[a] * self.mdp.p_row(s, a)[s2];
        }
    }
}

impl UpdateFn for QEmbedding {
    fn dim(&self) -> usize {
        self.features.dim
    }
    fn apply(&self, w: &[f64], y: usize, out: &mut [f64]) {
        let (s, a, s2) = self.triples[y];
        let delta = td_error(w, s, a, self.mdp.r(s, a), s2, &self.features, self.mdp.gamma);
        for (o, xi) in out.iter_mut().zip(self.features.x(s, a)) {
            *o = delta * xi;
        }
    }
    fn lip_h(&self) -> f64 {
        self.analytic_lip_h()
    }
}

/// Seeded random MDP with strictly positive transitions, rewards in `[0, 1)`
/// and features scaled so every `||x(s, a)|| <= feature_norm`.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    dim: usize,
    gamma: f64,
    feature_norm: f64,
    seed: u64,
) -> Result<(Mdp, FeatureMap)> {
    let mut cur = Stream::new(seed, 0).with_lane(lane::GENERATE).cursor();
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let raw: Vec<f64> = (0..n_states).map(|_| 0.05 + cur.next_f64()).collect();
        let z: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / z).collect();
        // absorb rounding so the row sums to one within the tolerance
        let s: f64 = row.iter().sum();
        row[n_states - 1] += 1.0 - s;
        transition.extend(row);
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| cur.next_f64()).collect();
    let mut data: Vec<f64> = (0..n_states * n_actions * dim)
        .map(|_| 2.0 * cur.next_f64() - 1.0)
        .collect();
    let max_norm = data.chunks(dim).map(norm).fold(0.0, f64::max);
    if max_norm > 0.0 {
        data.iter_mut().for_each(|x| *x *= feature_norm / max_norm);
    }
    let mdp = Mdp {
        n_states,
        n_actions,
        reward,
        transition,
        gamma,
        initial: vec![1.0 / n_states as f64; n_states],
    };
    mdp.validate()?;
    Ok((mdp, FeatureMap::new(n_states, n_actions, dim, data)?))
}

/// Seven-state star counterexample for off-policy linear methods.
///
/// Action 0 ("solid") moves to state 6, action 1 ("dashed") to a uniformly
/// random state among 0..=5. Rewards are zero. State features are
/// `2 e_i + e_7` for `i < 6` and `e_6 + 2 e_7`; `x(s, a)` places them in block `a`
/// of `R^16`.
pub fn baird(gamma: f64) -> Result<(Mdp, FeatureMap)> {
    let (ns, na, base) = (7usize, 2usize, 8usize);
    let mut transition = vec![0.0; ns * na * ns];
    for s in 0..ns {
        transition[(s * na) * ns + 6] = 1.0;
        for s2 in 0..6 {
            transition[(s * na + 1) * ns + s2] = 1.0 / 6.0;
        }
    }
    let mut data = vec![0.0; ns * na * 2 * base];
    for s in 0..ns {
        let mut phi = vec![0.0; base];
        if s < 6 {
            phi[s] = 2.0;
            phi[7] = 1.0;
        } else {
            phi[6] = 1.0;
            phi[7] = 2.0;
        }
        for a in 0..na {
            let off = (s * na + a) * 2 * base + a * base;
            data[off..off + base].copy_from_slice(&phi);
        }
    }
    let mdp = Mdp {
        n_states: ns,
        n_actions: na,
        reward: vec![0.0; ns * na],
        transition,
        gamma,
        initial: vec![1.0 / ns as f64; ns],
    };
    mdp.validate()?;
    Ok((mdp, FeatureMap::new(ns, na, 2 * base, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state_mdp(gamma: f64) -> Mdp {
        Mdp {
            n_states: 2,
            n_actions: 2,
            reward: vec![1.0, 0.0, 0.5, 2.0],
            transition: vec![0.7, 0.3, 0.2, 0.8, 0.5, 0.5, 1.0, 0.0],
            gamma,
            initial: vec![0.5, 0.5],
        }
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(kappa(&[0.3, 0.4], 2.0), 2.0);
        assert!((kappa(&[6.0, 8.0], 2.0) - 0.2).abs() < 1e-15);
        let w = [3.0, 4.0];
        for c in [1.0, 2.0, 10.0] {
            let cw: Vec<f64> = w.iter().map(|x| c * x).collect();
            assert!(kappa(&cw, 1.5) * norm(&cw) <= 1.5 + 1e-12);
        }
    }

    #[test]
    fn policy_cases() {
        let f = FeatureMap::new(1, 3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = PolicyConfig::new(0.1, 1.0).unwrap();
        let mu = behavior_policy(&[0.0; 3], 0, &cfg, &f);
        assert!(mu.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        // ||w|| = 1 so kappa_w = 1 and logits are (1, 0, 0)
        let mu = behavior_policy(&[1.0, 0.0, 0.0], 0, &cfg, &f);
        let e = std::f64::consts::E;
        let z = e + 2.0;
        let expect = [0.1 / 3.0 + 0.9 * e / z, 0.1 / 3.0 + 0.9 / z, 0.1 / 3.0 + 0.9 / z];
        for (p, q) in mu.iter().zip(expect) {
            assert!((p - q).abs() < 1e-15);
        }
        let f2 = FeatureMap::new(1, 2, 1, vec![1.0, -1.0]).unwrap();
        let cfg2 = PolicyConfig {
            epsilon: 0.2,
            kappa0: 1e6,
            adaptive: false,
        };
        let mu = behavior_policy(&[1.0], 0, &cfg2, &f2);
        assert!((mu[0] - 0.9).abs() < 1e-12 && (mu[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_bounds() {
        assert!(PolicyConfig::new(1.0, 1.0).is_err());
        assert!(PolicyConfig::new(0.0, 1.0).is_err());
        assert!(PolicyConfig::new(0.5, 0.0).is_err());
    }

    #[test]
    fn q_step_hand_cases() {
        let f = FeatureMap::tabular(1, 2);
        let tr = Transition {
            s: 0,
            a: 0,
            r: 1.0,
            s_next: 0,
        };
        assert_eq!(linear_q_step(&[0.0, 0.0], &tr, 0.5, &f, 0.0), vec![0.5, 0.0]);
        // r + gamma max - q = 1 + 0.5 * 2 - 2 = 0
        let w = [2.0, 1.0];
        assert_eq!(linear_q_step(&w, &tr, 0.3, &f, 0.5), w.to_vec());
    }

    #[test]
    fn q_values_readoff() {
        let f = FeatureMap::tabular(2, 2);
        assert_eq!(q_values(&[0.0; 4], &f), vec![0.0; 4]);
        assert_eq!(q_values(&[1.0, 2.0, 3.0, 4.0], &f), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn tabular_features_match_tabular_q_learning() {
        let mdp = two_state_mdp(0.9);
        let f = FeatureMap::tabular(2, 2);
        let cfg = PolicyConfig::new(0.3, 1.0).unwrap();
        let sched = Schedule::lr1(1.0, 0.8).unwrap();
        let run = run_linear_q(&mdp, &f, &cfg, &sched, 2000, 17, 0).unwrap();
        let mut q = [[0.0f64; 2]; 2];
        for (t, tr) in run.transitions.iter().enumerate() {
            let target = tr.r + 0.9 * q[tr.s_next][0].max(q[tr.s_next][1]);
            let alpha = sched.alpha_at(t as u64).unwrap();
            q[tr.s][tr.a] += alpha * (target - q[tr.s][tr.a]);
            let w = &run.w_trajectory[t + 1];
            for s in 0..2 {
                for a in 0..2 {
                    assert!((w[s * 2 + a] - q[s][a]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn embedding_structure() {
        let mdp = two_state_mdp(0.9);
        let f = FeatureMap::tabular(2, 2);
        let cfg = PolicyConfig::new(0.1, 1.0).unwrap();
        let emb = mdp_to_sa(&mdp, &f, &cfg).unwrap();
        let positive = mdp.transition.iter().filter(|&&p| p > 0.0).count();
        assert_eq!(emb.state_count(), positive);
        for w in [[0.0; 4], [1.0, -2.0, 3.0, 0.5]] {
            let p = emb.matrix(&w).unwrap();
            for y in 0..p.size() {
                assert!((p.row(y).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embedding_reproduces_closed_loop_exactly() {
        let mdp = two_state_mdp(0.9);
        let (m5, f5) = random_mdp(5, 2, 3, 0.9, 0.7, 3).unwrap();
        let cfg = PolicyConfig::new(0.1, 1.0).unwrap();
        let sched = Schedule::lr1(1.0, 0.8).unwrap();
        for (mdp, f) in [(mdp, FeatureMap::tabular(2, 2)), (m5, f5)] {
            let emb = mdp_to_sa(&mdp, &f, &cfg).unwrap();
            for seed in 0..3 {
                let run = run_linear_q(&mdp, &f, &cfg, &sched, 3000, seed, 2).unwrap();
                let y0 = emb.initial_y(&Stream::new(seed, 2)).unwrap();
                let sa = crate::sa::run_sa(&emb, &emb, &sched, &vec![0.0; f.dim], y0, 3000, seed, 2).unwrap();
                assert_eq!(run.w_trajectory, sa.ws);
                assert_eq!(emb.states_of_run(&run).unwrap(), sa.ys);
            }
        }
    }

    #[test]
    fn gamma_zero_converges_to_rewards() {
        let mdp = Mdp {
            n_states: 2,
            n_actions: 1,
            reward: vec![0.3, -1.2],
            transition: vec![0.0, 1.0, 1.0, 0.0],
            gamma: 0.0,
            initial: vec![1.0, 0.0],
        };
        let f = FeatureMap::tabular(2, 1);
        let cfg = PolicyConfig::new(0.1, 1.0).unwrap();
        let run = run_linear_q(&mdp, &f, &cfg, &Schedule::lr1(2.0, 1.0).unwrap(), 100_000, 1, 0).unwrap();
        let w = run.w_trajectory.last().unwrap();
        assert!((w[0] - 0.3).abs() < 1e-3 && (w[1] + 1.2).abs() < 1e-3);
        for tr in &run.transitions[run.transitions.len() - 10..] {
            let td = tr.r - w[tr.s];
            assert!(td.abs() < 1e-3);
        }
    }

    #[test]
    fn random_mdp_is_valid_and_contractive() {
        let (mdp, f) = random_mdp(5, 2, 3, 0.9, 0.7, 42).unwrap();
        assert!(mdp.transition.iter().all(|&p| p > 0.0));
        let emb = mdp_to_sa(&mdp, &f, &PolicyConfig::new(0.1, 1.0).unwrap()).unwrap();
        assert!(emb.analytic_lip_h() < 1.0);
        let est = crate::sa::probe_lip_h(&emb, emb.state_count(), 200, 5.0, 1);
        assert!(est <= emb.analytic_lip_h() + 1e-12);
    }

    #[test]
    fn baird_shape() {
        let (mdp, f) = baird(0.99).unwrap();
        assert_eq!(f.dim, 16);
        assert_eq!(f.x(6, 1)[8 + 6], 1.0);
        assert_eq!(f.x(6, 1)[8 + 7], 2.0);
        assert_eq!(f.x(2, 0)[2], 2.0);
        assert_eq!(mdp.p_row(3, 0)[6], 1.0);
    }
}
