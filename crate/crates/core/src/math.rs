//! Small numerical kernels shared by the solvers.

use alloc::vec::Vec;

/// Maximises a unimodal function on `[lo, hi]` by golden-section search.
/// Returns `(argmax, max)`. Ties resolve towards the lower end.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol * (1.0 + libm::fabs(a) + libm::fabs(b)) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Finds a root of an increasing function on `[lo, hi]` by bisection.
pub fn bisect_increasing<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (libm::fabs(lo) + libm::fabs(hi)) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Binomial probabilities `P(X = k)` for `X ~ Bin(trials, p)`, dropping tails
/// below `cutoff`. Returns `(first_k, probabilities)` renormalised to sum to 1.
pub fn binomial_pmf(trials: u64, p: f64, cutoff: f64) -> (u64, Vec<f64>) {
    if trials == 0 || p <= 0.0 {
        return (0, alloc::vec![1.0]);
    }
    if p >= 1.0 {
        return (trials, alloc::vec![1.0]);
    }
    let n = trials as f64;
    let ln_p = libm::log(p);
    let ln_q = libm::log1p(-p);
    let lg_n = libm::lgamma(n + 1.0);
    let ln_pmf = |k: u64| {
        let k = k as f64;
        lg_n - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0) + k * ln_p + (n - k) * ln_q
    };
    let mode = libm::floor((n + 1.0) * p).min(n) as u64;
    let ln_cut = libm::log(cutoff);
    let mut lo = mode;
    while lo > 0 && ln_pmf(lo - 1) > ln_cut {
        lo -= 1;
    }
    let mut hi = mode;
    while hi < trials && ln_pmf(hi + 1) > ln_cut {
        hi += 1;
    }
    let mut probs: Vec<f64> = (lo..=hi).map(|k| libm::exp(ln_pmf(k))).collect();
    let total: f64 = probs.iter().sum();
    for q in &mut probs {
        *q /= total;
    }
    (lo, probs)
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson) on strictly
/// increasing knots. Outside the knot range the end segments are extended
/// linearly with the end slopes.
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
    // (x_0, 1 / h) when the knots are evenly spaced
    uniform: Option<(f64, f64)>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n, "pchip needs at least two matching knots");
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut m = alloc::vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        if n > 2 {
            m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        let span = x[n - 1] - x[0];
        let even = h.iter().all(|&hi| libm::fabs(hi * (n - 1) as f64 - span) <= 1e-12 * span);
        let uniform = if even { Some((x[0], (n - 1) as f64 / span)) } else { None };
        Self { x, y, m, uniform }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0] + self.m[0] * (t - self.x[0]);
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1] + self.m[n - 1] * (t - self.x[n - 1]);
        }
        let i = match self.uniform {
            Some((x0, inv_h)) => (((t - x0) * inv_h) as usize).min(n - 2),
            None => match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap_or(core::cmp::Ordering::Less)) {
                Ok(i) => return self.y[i],
                Err(i) => i - 1,
            },
        };
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && libm::fabs(m) > libm::fabs(3.0 * d0) {
        3.0 * d0
    } else {
        m
    }
}

/// Cholesky factor of a symmetric positive semidefinite matrix (row-major,
/// `k x k`). Zero pivots are allowed; returns `None` if the matrix is not PSD.
pub fn cholesky_psd(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = alloc::vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s < -1e-10 {
                    return None;
                }
                l[i * k + i] = libm::sqrt(s.max(0.0));
            } else if l[j * k + j] > 1e-14 {
                l[i * k + j] = s / l[j * k + j];
            } else if libm::fabs(s) > 1e-8 {
                return None;
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(fx, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn binomial_matches_direct_formula() {
        let (lo, p) = binomial_pmf(5, 0.3, 1e-300);
        assert_eq!(lo, 0);
        let direct = [0.16807, 0.36015, 0.3087, 0.1323, 0.02835, 0.00243];
        for (a, b) in p.iter().zip(direct) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn pchip_reproduces_linear_data() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let p = Pchip::new(x, y);
        assert_abs_diff_eq!(p.eval(2.5), 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eval(7.0), 15.0, epsilon = 1e-12);
    }

    #[test]
    fn pchip_preserves_monotonicity() {
        let x = alloc::vec![0.0, 1.0, 2.0, 3.0];
        let y = alloc::vec![0.0, 0.0, 1.0, 1.0];
        let p = Pchip::new(x, y);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=300 {
            let v = p.eval(i as f64 * 0.01);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn cholesky_handles_perfect_correlation() {
        let l = cholesky_psd(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_abs_diff_eq!(l[2], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[3], 0.0, epsilon = 1e-12);
        assert!(cholesky_psd(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
