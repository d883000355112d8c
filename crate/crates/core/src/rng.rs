//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, path, lane, step)`, computed with
//! the Philox-4x32-10 bijection. Paths can therefore be simulated on any
//! worker in any order and still reproduce bit-for-bit, and two processes that
//! share a key (a base chain and its frozen auxiliary copy, or two different
//! implementations of the same recursion) see identical uniforms.

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline]
fn round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(M0, ctr[0]);
    let (hi1, lo1) = mulhilo(M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// Philox-4x32 with 10 rounds.
pub fn philox4x32(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    ctr = round(ctr, key);
    for _ in 1..10 {
        key[0] = key[0].wrapping_add(W0);
        key[1] = key[1].wrapping_add(W1);
        ctr = round(ctr, key);
    }
    ctr
}

#[inline]
fn unit(hi: u32, lo: u32) -> f64 {
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Lanes separate independent uses of one path's stream.
pub mod lane {
    /// Per-step transition / noise draws.
    pub const STEP: u32 = 0;
    /// Initial-state and other one-off draws.
    pub const INIT: u32 = 1;
    /// Instance generation (random MDPs, probe sets).
    pub const GENERATE: u32 = 2;
}

/// A keyed stream of uniforms addressed by step index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stream {
    key: [u32; 2],
    path: u32,
    lane: u32,
}

impl Stream {
    pub fn new(seed: u64, path: u32) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            path,
            lane: lane::STEP,
        }
    }

    pub fn with_lane(self, lane: u32) -> Self {
        Self { lane, ..self }
    }

    pub fn seed(&self) -> u64 {
        u64::from(self.key[0]) | (u64::from(self.key[1]) << 32)
    }

    pub fn path(&self) -> u32 {
        self.path
    }

    pub fn block(&self, step: u64) -> [u32; 4] {
        philox4x32([step as u32, (step >> 32) as u32, self.path, self.lane], self.key)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&self, step: u64) -> f64 {
        let b = self.block(step);
        unit(b[0], b[1])
    }

    pub fn uniform_pair(&self, step: u64) -> (f64, f64) {
        let b = self.block(step);
        (unit(b[0], b[1]), unit(b[2], b[3]))
    }

    /// Uniform on `[-1, 1)`.
    pub fn symmetric(&self, step: u64) -> f64 {
        2.0 * self.uniform(step) - 1.0
    }

    pub fn cursor(self) -> Cursor {
        Cursor { stream: self, next: 0 }
    }
}

/// Sequential view over a [`Stream`], for one-off generation tasks.
#[derive(Clone, Debug)]
pub struct Cursor {
    stream: Stream,
    next: u64,
}

impl Cursor {
    pub fn next_f64(&mut self) -> f64 {
        let u = self.stream.uniform(self.next);
        self.next += 1;
        u
    }

    /// Standard normal via Box-Muller (one variate per call).
    pub fn next_normal(&mut self) -> f64 {
        let (u1, u2) = self.stream.uniform_pair(self.next);
        self.next += 1;
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn next_index(&mut self, n: usize) -> usize {
        ((self.next_f64() * n as f64) as usize).min(n.saturating_sub(1))
    }
}

/// Inverse-CDF selection over unnormalized-but-summing-to-one weights.
///
/// Returns the first index whose cumulative weight exceeds `u`. When rounding
/// leaves the total slightly below `u`, the last index with positive weight is
/// returned.
pub fn inverse_cdf(weights: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in weights.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = i;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 reference implementation.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn streams_are_pure_functions_of_their_key() {
        let a = Stream::new(42, 7);
        let b = Stream::new(42, 7);
        for step in [0u64, 1, 99, 1 << 40] {
            assert_eq!(a.uniform(step), b.uniform(step));
        }
        assert_ne!(a.uniform(3), Stream::new(42, 8).uniform(3));
        assert_ne!(a.uniform(3), a.with_lane(lane::INIT).uniform(3));
        assert_ne!(a.uniform(3), Stream::new(43, 7).uniform(3));
    }

    #[test]
    fn uniforms_in_unit_interval_with_sane_moments() {
        let s = Stream::new(1, 0);
        let n = 200_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for step in 0..n {
            let u = s.uniform(step);
            assert!((0.0..1.0).contains(&u));
            sum += u;
            sum_sq += u * u;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 4.0 * (1.0f64 / 12.0 / n as f64).sqrt());
        assert!((var - 1.0 / 12.0).abs() < 1e-3);
    }

    #[test]
    fn inverse_cdf_skips_zero_weights_and_handles_rounding() {
        let w = [0.0, 0.25, 0.0, 0.75];
        assert_eq!(inverse_cdf(&w, 0.0), 1);
        assert_eq!(inverse_cdf(&w, 0.2499), 1);
        assert_eq!(inverse_cdf(&w, 0.25), 3);
        assert_eq!(inverse_cdf(&[0.5, 0.4999999, 0.0], 0.99999999), 1);
    }
}
