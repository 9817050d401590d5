//! Small numerical kernels shared across modules: stable log-space
//! arithmetic, closed-form averages of `ln` over linear pieces, and a
//! tanh-sinh (double exponential) quadrature rule.
//!
//! Tanh-sinh never evaluates the endpoints and clusters nodes doubly
//! exponentially toward them, so integrable log and algebraic endpoint
//! singularities (which the limit-plan densities have) cost nothing extra.

use std::f64::consts::FRAC_PI_2;

/// `ln(e^a + e^b)` without overflow; `-inf` is the additive identity.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a >= b`; `-inf` when the difference is not positive.
#[inline]
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if !(a > b) {
        return f64::NEG_INFINITY;
    }
    if a == f64::INFINITY {
        return a;
    }
    a + (-(b - a).exp_m1()).ln()
}

/// `x ln x` with the convention `0 ln 0 = 0`.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Average of `ln u` over `u` between `f0` and `f1` (both `>= 0`, not both 0).
///
/// This is `(1/(t1-t0)) * integral ln f(t) dt` for `f` linear from `f0` to `f1`.
pub fn mean_log_linear(f0: f64, f1: f64) -> f64 {
    debug_assert!(f0 >= 0.0 && f1 >= 0.0);
    if f0 == f1 {
        return f0.ln();
    }
    let m = 0.5 * (f0 + f1);
    let r = 0.5 * (f1 - f0).abs() / m;
    if r < 1e-3 {
        let r2 = r * r;
        m.ln() - r2 / 6.0 - r2 * r2 / 20.0 - r2 * r2 * r2 / 42.0
    } else {
        (xlogx(f1) - xlogx(f0)) / (f1 - f0) - 1.0
    }
}

/// `ln(f1/f0) / (f1 - f0)` for positive `f0, f1`, i.e. the average of `1/f`
/// over a linear piece from `f0` to `f1`. Returns `+inf` if either end is 0.
pub fn mean_reciprocal_linear(f0: f64, f1: f64) -> f64 {
    if f0 <= 0.0 || f1 <= 0.0 {
        return f64::INFINITY;
    }
    let r = (f1 - f0) / f0;
    if r == 0.0 {
        return 1.0 / f0;
    }
    r.ln_1p() / r / f0
}

/// Integral of `ln|x - c|` for `x` in `[lo, hi]` on one side of `c`.
pub(crate) fn integral_log_distance(c: f64, lo: f64, hi: f64) -> f64 {
    let anti = |t: f64| xlogx(t) - t;
    let (d0, d1) = ((lo - c).abs(), (hi - c).abs());
    anti(d0.max(d1)) - anti(d0.min(d1))
}

const TANH_SINH_TMAX: f64 = 3.2;

/// Tanh-sinh nodes and weights on `[lo, hi]` with `n` abscissae in the
/// transformed variable. Nodes that round onto an endpoint are dropped.
pub fn tanh_sinh(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let n = n.max(3);
    let width = hi - lo;
    if width <= 0.0 {
        return Vec::new();
    }
    let step = 2.0 * TANH_SINH_TMAX / (n - 1) as f64;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = -TANH_SINH_TMAX + k as f64 * step;
        let s = FRAC_PI_2 * t.sinh();
        let ch = s.cosh();
        let w = step * FRAC_PI_2 * t.cosh() / (ch * ch) * 0.5 * width;
        let x = if s < 0.0 {
            lo + width / (1.0 + (-2.0 * s).exp())
        } else {
            hi - width / (1.0 + (2.0 * s).exp())
        };
        if x > lo && x < hi && w > 0.0 && w.is_finite() {
            out.push((x, w));
        }
    }
    out
}

/// Composite tanh-sinh over consecutive `knots`, about `n_total` nodes in all
/// (at least `min_per_piece` per piece).
pub fn composite_tanh_sinh(knots: &[f64], n_total: usize, min_per_piece: usize) -> Vec<(f64, f64)> {
    let pieces = knots.len().saturating_sub(1);
    if pieces == 0 {
        return Vec::new();
    }
    let per = (n_total / pieces).max(min_per_piece);
    knots
        .windows(2)
        .filter(|w| w[1] > w[0])
        .flat_map(|w| tanh_sinh(w[0], w[1], per))
        .collect()
}

/// Sorted, deduplicated copy of `points` restricted to `[lo, hi]`, with both
/// ends included.
pub(crate) fn knots_within(points: impl IntoIterator<Item = f64>, lo: f64, hi: f64) -> Vec<f64> {
    let mut knots: Vec<f64> = points.into_iter().filter(|&p| p > lo && p < hi).collect();
    knots.push(lo);
    knots.push(hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    knots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_diff_exp_is_stable() {
        assert!((log_diff_exp(2f64.ln(), 0.0) - 0.0).abs() < 1e-15);
        assert!((log_diff_exp(700.0, 699.0) - (700.0 + (1.0 - (-1f64).exp()).ln())).abs() < 1e-12);
        assert_eq!(log_diff_exp(-5.0, f64::NEG_INFINITY), -5.0);
        assert_eq!(log_diff_exp(1.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 2.0), 2.0);
        assert!((log_add_exp(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((log_add_exp(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn mean_log_matches_series_and_closed_form() {
        // Both branches agree with the exact value near the switch point.
        for d in [1.9e-3, 2.1e-3, 1e-6] {
            let exact = (1.0 + d) * f64::ln_1p(d) / d - 1.0;
            assert!((mean_log_linear(1.0, 1.0 + d) - exact).abs() < 1e-13, "{d}");
        }
        // From zero: ln f1 - 1.
        assert!((mean_log_linear(0.0, 0.5) - (0.5f64.ln() - 1.0)).abs() < 1e-15);
        assert!((mean_log_linear(0.25, 0.0) - (0.25f64.ln() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mean_reciprocal_limits() {
        assert_eq!(mean_reciprocal_linear(0.5, 0.5), 2.0);
        let v = mean_reciprocal_linear(1.0, 2.0);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert!(mean_reciprocal_linear(0.0, 1.0).is_infinite());
    }

    #[test]
    fn tanh_sinh_integrates_endpoint_log_singularity() {
        let rule = tanh_sinh(0.0, 1.0, 80);
        let v: f64 = rule.iter().map(|&(x, w)| w * x.ln()).sum();
        assert!((v + 1.0).abs() < 1e-12, "{v}");
        let v: f64 = rule.iter().map(|&(x, w)| w / x.sqrt()).sum();
        assert!((v - 2.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn log_distance_integral() {
        // integral_0^1 ln x dx = -1 measured from c = 0 either way round.
        assert!((integral_log_distance(0.0, 0.0, 1.0) + 1.0).abs() < 1e-15);
        assert!((integral_log_distance(1.0, 0.0, 1.0) + 1.0).abs() < 1e-15);
        let v = integral_log_distance(0.0, 0.5, 1.0);
        let exact = (0.0 - 1.0) - (0.5 * 0.5f64.ln() - 0.5);
        assert!((v - exact).abs() < 1e-15);
    }
}
