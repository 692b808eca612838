//! Deterministic scalar math kernels.
//!
//! Every transcendental on a path that influences coded bits goes through
//! `libm` (a pure-Rust port of musl's libm) instead of the platform math
//! library, so that encoder and decoder produce bit-identical results on
//! every target. Plain `+ - * /`, `sqrt` and `round` are exactly specified
//! by IEEE 754 and may use `std`.

use std::f64::consts::FRAC_1_SQRT_2;

/// 1 / sqrt(2 * pi)
pub const INV_SQRT_2PI: f64 = 0.39894228040143267794;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Standard normal cumulative distribution function.
///
/// Accurate to well below 1e-12 absolute error over the whole real line
/// (musl's `erfc` is correctly rounded to within about 1 ulp).
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal probability density function.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * exp(-0.5 * x * x)
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x >= 0.0 {
        x + libm::log1p(exp(-x))
    } else {
        libm::log1p(exp(x))
    }
}

/// Inverse of [`softplus`]: returns `y` with `softplus(y) == x` for `x > 0`.
#[inline]
pub fn softplus_inv(x: f64) -> f64 {
    ln(libm::expm1(x))
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Round half away from zero. `f64::round` implements exactly this tie rule
/// and is a single correctly-rounded IEEE operation.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}
