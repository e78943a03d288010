//! Small scalar helpers shared by the model and the samplers.

pub use statrs::function::gamma::ln_gamma;

/// Standard logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(x_i)`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln Γ(x + n) − ln Γ(x)` for `x > 0`.
///
/// Short rising factorials are summed term by term, which avoids the
/// cancellation between two large log-gamma values when `x` is big.
#[inline]
pub fn ln_rising(x: f64, n: u64) -> f64 {
    if n <= 16 {
        let mut acc = 0.0;
        for j in 0..n {
            acc += (x + j as f64).ln();
        }
        acc
    } else {
        ln_gamma(x + n as f64) - ln_gamma(x)
    }
}

/// `ln(n!)`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logistic_is_symmetric_and_saturates() {
        assert_eq!(logistic(0.0), 0.5);
        assert_relative_eq!(logistic(3.0) + logistic(-3.0), 1.0, epsilon = 1e-15);
        assert_eq!(logistic(800.0), 1.0);
        assert_eq!(logistic(-800.0), 0.0);
    }

    #[test]
    fn rising_factorial_matches_gamma_difference() {
        for &x in &[0.05, 1.0, 2.5, 40.0] {
            for n in [0u64, 1, 5, 16, 17, 200] {
                let want = ln_gamma(x + n as f64) - ln_gamma(x);
                assert_relative_eq!(ln_rising(x, n), want, epsilon = 1e-10, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn log_sum_exp_handles_infinities() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_add_exp(-1.0, 2.0), (1f64.exp().recip() + 2f64.exp()).ln());
    }
}
