//! Special functions behind every p-value and sample-size computation,
//! backed by `statrs`. Accuracy is pinned against arbitrary-precision
//! reference values in `tests/special_reference.rs`.

use statrs::function::{beta, erf, gamma};

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "inc_beta requires a, b > 0");
    beta::beta_reg(a, b, x.clamp(0.0, 1.0))
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_p requires a > 0");
    if x <= 0.0 {
        return 0.0;
    }
    gamma::gamma_lr(a, x)
}

/// Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "gamma_q requires a > 0");
    if x <= 0.0 {
        return 1.0;
    }
    gamma::gamma_ur(a, x)
}

/// Standard normal CDF Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile Φ⁻¹(p).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal_quantile requires 0 < p < 1, got {p}");
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Two-sided p-value of a t statistic with `dof` degrees of freedom.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    inc_beta(0.5 * dof, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Upper-tail p-value of an F(d1, d2) statistic.
pub fn f_upper_p(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    inc_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Upper-tail p-value of a chi-square statistic with `dof` degrees of freedom.
pub fn chi2_upper_p(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * dof, 0.5 * x).clamp(0.0, 1.0)
}
