//! Quantized-bin probabilities under a Gaussian with adaptive bin width.
//!
//! An attribute value reconstructed at `v` with bin width `delta` under
//! `N(mu, sigma)` has probability mass
//! `Phi((v - mu + delta/2) / sigma) - Phi((v - mu - delta/2) / sigma)`.
//! In code mode `v - mu = s * delta` exactly, where `s` is the coded
//! integer symbol; in train mode `v` is the value plus uniform noise.

use crate::math;

/// Bin mass as a function of `vm = v - mu`.
#[inline]
pub fn bin_mass(vm: f64, sigma: f64, delta: f64) -> f64 {
    let hi = (vm + 0.5 * delta) / sigma;
    let lo = (vm - 0.5 * delta) / sigma;
    math::normal_cdf(hi) - math::normal_cdf(lo)
}

/// Bin mass plus partial derivatives with respect to `vm`, `sigma` and
/// `delta`.
#[inline]
pub fn bin_mass_grads(vm: f64, sigma: f64, delta: f64) -> (f64, f64, f64, f64) {
    let hi = (vm + 0.5 * delta) / sigma;
    let lo = (vm - 0.5 * delta) / sigma;
    let mass = math::normal_cdf(hi) - math::normal_cdf(lo);
    let phi_hi = math::normal_pdf(hi);
    let phi_lo = math::normal_pdf(lo);
    let d_vm = (phi_hi - phi_lo) / sigma;
    let d_sigma = (lo * phi_lo - hi * phi_hi) / sigma;
    let d_delta = 0.5 * (phi_hi + phi_lo) / sigma;
    (mass, d_vm, d_sigma, d_delta)
}
