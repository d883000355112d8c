//! Small dense-vector helpers shared by the simulators.

/// Compensated (Kahan) accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Row-vector times row-major square matrix.
pub fn vec_mat(v: &[f64], m: &[f64], out: &mut [f64]) {
    let n = v.len();
    debug_assert_eq!(m.len(), n * n);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &m[i * n..(i + 1) * n];
        for (o, &p) in out.iter_mut().zip(row) {
            *o += vi * p;
        }
    }
}

/// Pairwise (tree) summation; the result does not depend on thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_many_small_terms() {
        let n = 10_000_000;
        let acc: KahanSum = std::iter::repeat_n(0.1, n).collect();
        assert!((acc.value() - 1_000_000.0).abs() < 1e-6);
    }

    #[test]
    fn vec_mat_matches_hand_product() {
        let m = [0.9, 0.1, 0.5, 0.5];
        let mut out = [0.0; 2];
        vec_mat(&[1.0, 0.0], &m, &mut out);
        assert_eq!(out, [0.9, 0.1]);
        vec_mat(&[0.5, 0.5], &m, &mut out);
        assert!((out[0] - 0.7).abs() < 1e-15 && (out[1] - 0.3).abs() < 1e-15);
    }
}
