//! Generic stochastic approximation driven by iterate-dependent Markov noise:
//! `Y_{t+1} ~ P_{w_t}(Y_t, .)` and `w_{t+1} = w_t + alpha_t H(w_t, Y_{t+1})`.
//!
//! Step `t` consumes exactly one uniform, `stream.uniform(t)`, to draw
//! `Y_{t+1}` by inverse CDF of the kernel row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{ParamKernel, UpdateFn};
use crate::numeric::{distance, norm};
use crate::rng::{inverse_cdf, Cursor, Stream};
use crate::schedules::Schedule;

/// Recorded iterates `w_0..=w_N` and chain states `Y_0..=Y_N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaTrajectory {
    pub ws: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
    pub seed: u64,
    pub path_id: u32,
    pub diverged: bool,
}

impl SaTrajectory {
    pub fn horizon(&self) -> usize {
        self.ws.len().saturating_sub(1)
    }
}

/// Streams the SA recursion; `obs(t, w_t, Y_t)` is called for `t = 0..=horizon`.
/// Returns whether a non-finite iterate froze the run.
#[allow(clippy::too_many_arguments)]
pub fn stream_sa(
    kernel: &dyn ParamKernel,
    h: &dyn UpdateFn,
    schedule: &Schedule,
    w0: &[f64],
    y0: usize,
    horizon: u64,
    stream: &Stream,
    mut obs: impl FnMut(u64, &[f64], usize),
) -> Result<bool> {
    if w0.len() != h.dim() || kernel.dim() != h.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: w0 {}, kernel {}, update {}",
            w0.len(),
            kernel.dim(),
            h.dim()
        )));
    }
    if y0 >= kernel.state_count() {
        return Err(Error::Index {
            index: y0 as u64,
            len: kernel.state_count(),
        });
    }
    let mut w = w0.to_vec();
    let mut y = y0;
    let mut row = vec![0.0; kernel.state_count()];
    let mut buf = vec![0.0; h.dim()];
    let mut next = vec![0.0; h.dim()];
    let mut diverged = false;
    obs(0, &w, y);
    for t in 0..horizon {
        if !diverged {
            kernel.row(&w, y, &mut row);
            y = inverse_cdf(&row, stream.uniform(t));
            h.apply(&w, y, &mut buf);
            let alpha = schedule.alpha_at(t)?;
            for i in 0..w.len() {
                next[i] = w[i] + alpha * buf[i];
            }
            if next.iter().all(|x| x.is_finite()) {
                std::mem::swap(&mut w, &mut next);
            } else {
                diverged = true;
            }
        }
        obs(t + 1, &w, y);
    }
    Ok(diverged)
}

#[allow(clippy::too_many_arguments)]
pub fn run_sa(
    kernel: &dyn ParamKernel,
    h: &dyn UpdateFn,
    schedule: &Schedule,
    w0: &[f64],
    y0: usize,
    horizon: u64,
    seed: u64,
    path_id: u32,
) -> Result<SaTrajectory> {
    let stream = Stream::new(seed, path_id);
    let mut ws = Vec::with_capacity(horizon as usize + 1);
    let mut ys = Vec::with_capacity(horizon as usize + 1);
    let diverged = stream_sa(kernel, h, schedule, w0, y0, horizon, &stream, |_, w, y| {
        ws.push(w.to_vec());
        ys.push(y);
    })?;
    Ok(SaTrajectory {
        ws,
        ys,
        seed,
        path_id,
        diverged,
    })
}

/// Probe estimate of `L_h`: the largest of `||H(w1,y) - H(w2,y)|| / ||w1 - w2||`
/// and `||H(0,y)||` over random pairs with coordinates in `[-radius, radius]`.
pub fn probe_lip_h(h: &dyn UpdateFn, states: usize, pairs: usize, radius: f64, seed: u64) -> f64 {
    let mut cur: Cursor = Stream::new(seed, 0).with_lane(crate::rng::lane::GENERATE).cursor();
    let d = h.dim();
    let zero = vec![0.0; d];
    let mut best = (0..states).map(|y| norm(&h.eval(&zero, y))).fold(0.0, f64::max);
    for _ in 0..pairs {
        let w1: Vec<f64> = (0..d).map(|_| radius * (2.0 * cur.next_f64() - 1.0)).collect();
        let w2: Vec<f64> = (0..d).map(|_| radius * (2.0 * cur.next_f64() - 1.0)).collect();
        let gap = distance(&w1, &w2);
        if gap == 0.0 {
            continue;
        }
        for y in 0..states {
            best = best.max(distance(&h.eval(&w1, y), &h.eval(&w2, y)) / gap);
        }
    }
    best
}
