//! Scalar special functions shared by the estimators.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use libm::{erf, erfc};
use statrs::function::erf::erfc_inv;
pub use statrs::function::gamma::digamma;

/// `log Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Derivative of the digamma function.
pub fn trigamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return f64::INFINITY;
    }
    if x < 0.0 {
        // Reflection: psi1(1-x) + psi1(x) = pi^2 / sin^2(pi x)
        let s = (PI * x).sin();
        return -trigamma(1.0 - x) + PI * PI / (s * s);
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 12.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    // Asymptotic series in Bernoulli numbers.
    acc + r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))))
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile from `p` and its complement `1 - p`, whichever
/// is smaller is used so that both tails keep full relative precision.
pub fn norm_quantile_pair(p: f64, q: f64) -> f64 {
    if p <= q {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erfc_inv(2.0 * q)
    }
}

pub fn norm_quantile(p: f64) -> f64 {
    norm_quantile_pair(p, 1.0 - p)
}

/// `Phi(b) - Phi(a)` for `a <= b`, evaluated without cancellation when both
/// endpoints sit in the same tail.
pub fn norm_interval_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (erfc(a * FRAC_1_SQRT_2) - erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b * FRAC_1_SQRT_2) - erfc(-a * FRAC_1_SQRT_2))
    } else {
        0.5 * (erf(b * FRAC_1_SQRT_2) - erf(a * FRAC_1_SQRT_2))
    }
}

/// `log sum exp` of a slice; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Natural log of the Poisson pmf at `k` with rate `rate`.
pub fn poisson_ln_pmf(k: u64, rate: f64) -> f64 {
    let kf = k as f64;
    if rate <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    kf * rate.ln() - rate - ln_gamma(kf + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((log_sigmoid(5.0) - (-0.006_715_348_489_118_068)).abs() < 1e-15);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-12);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        for x in [-30.0, -2.0, 0.3, 12.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn trigamma_reference_values() {
        // psi1(1) = pi^2/6, psi1(1/2) = pi^2/2, psi1(2) = pi^2/6 - 1
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-13);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
        assert!((trigamma(2.0) - (PI * PI / 6.0 - 1.0)).abs() < 1e-13);
        // Finite-difference of digamma.
        for x in [0.3f64, 3.7, 25.0, 140.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-6 * trigamma(x).max(1.0), "x={x}");
        }
    }

    #[test]
    fn digamma_at_one() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
    }

    #[test]
    fn normal_quantile_round_trip() {
        for x in [-9.0, -3.0, -0.2, 0.0, 1.5, 8.5] {
            let p = norm_cdf(x);
            let q = norm_cdf(-x);
            assert!((norm_quantile_pair(p, q) - x).abs() < 1e-9 * x.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn interval_mass_tails() {
        let m = norm_interval_mass(9.0, 10.0);
        assert!(m > 0.0 && (m / (norm_cdf(-9.0) - norm_cdf(-10.0)) - 1.0).abs() < 1e-10);
        let m = norm_interval_mass(-1.0, 1.0);
        assert!((m - 0.682_689_492_137_085_9).abs() < 1e-14, "{m:e}");
    }

    #[test]
    fn poisson_pmf() {
        assert!((poisson_ln_pmf(1, 1.0) + 1.0).abs() < 1e-14);
        assert_eq!(poisson_ln_pmf(0, 0.0), 0.0);
        assert!((poisson_ln_pmf(0, 3.5) + 3.5).abs() < 1e-14);
    }
}
