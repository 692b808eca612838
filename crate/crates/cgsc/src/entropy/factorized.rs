//! Non-parametric factorized density for the hyperprior.
//!
//! Each hyperprior channel gets an independent univariate density built
//! from a monotone CDF: a chain of four stages with widths [1, 3, 3, 3, 1].
//! Every stage multiplies by a positively-reparameterized matrix
//! (`softplus` of the raw weights), adds a bias and, except for the last
//! stage, applies the gated nonlinearity `y + tanh(a) * tanh(y)`; the last
//! stage squashes through a logistic. The construction is strictly
//! monotone, hits 0 and 1 in the limits, and is differentiable everywhere.
//!
//! Quantized-bin probabilities are CDF differences one half-step apart,
//! floored at [`crate::entropy::P_MIN`] by the callers.

use crate::math;

pub const STAGE_WIDTH: usize = 3;

/// Raw (unconstrained) parameters of one channel. Also used as its own
/// gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedChannel {
    pub h1: [f64; 3],
    pub b1: [f64; 3],
    pub a1: [f64; 3],
    pub h2: [f64; 9],
    pub b2: [f64; 3],
    pub a2: [f64; 3],
    pub h3: [f64; 9],
    pub b3: [f64; 3],
    pub a3: [f64; 3],
    pub h4: [f64; 3],
    pub b4: f64,
}

impl FactorizedChannel {
    pub fn zeros() -> Self {
        FactorizedChannel {
            h1: [0.0; 3],
            b1: [0.0; 3],
            a1: [0.0; 3],
            h2: [0.0; 9],
            b2: [0.0; 3],
            a2: [0.0; 3],
            h3: [0.0; 9],
            b3: [0.0; 3],
            a3: [0.0; 3],
            h4: [0.0; 3],
            b4: 0.0,
        }
    }

    /// Symmetric initializer: biases and gates at zero (so `cdf(0) = 1/2`
    /// exactly), matrix entries set so the initial density has scale
    /// `init_scale`.
    pub fn init(init_scale: f64) -> Self {
        // With zero gates/biases the chain is linear with slope
        // 27 * u^4 where u = softplus(h); pick u for slope 1/init_scale.
        let u = (1.0 / (27.0 * init_scale)).powf(0.25);
        let h = math::softplus_inv(u);
        let mut c = Self::zeros();
        c.h1 = [h; 3];
        c.h2 = [h; 9];
        c.h3 = [h; 9];
        c.h4 = [h; 3];
        c
    }

    pub const PARAM_COUNT: usize = 3 + 3 + 3 + 9 + 3 + 3 + 9 + 3 + 3 + 3 + 1;

    /// Canonical parameter order: h1, b1, a1, h2, b2, a2, h3, b3, a3, h4, b4.
    pub fn for_each_param(&self, f: &mut impl FnMut(f64)) {
        for v in self.h1.iter().chain(&self.b1).chain(&self.a1) {
            f(*v);
        }
        for v in self.h2.iter().chain(&self.b2).chain(&self.a2) {
            f(*v);
        }
        for v in self.h3.iter().chain(&self.b3).chain(&self.a3) {
            f(*v);
        }
        for v in &self.h4 {
            f(*v);
        }
        f(self.b4);
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for v in self
            .h1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.a1.iter_mut())
        {
            f(v);
        }
        for v in self
            .h2
            .iter_mut()
            .chain(self.b2.iter_mut())
            .chain(self.a2.iter_mut())
        {
            f(v);
        }
        for v in self
            .h3
            .iter_mut()
            .chain(self.b3.iter_mut())
            .chain(self.a3.iter_mut())
        {
            f(v);
        }
        for v in self.h4.iter_mut() {
            f(v);
        }
        f(&mut self.b4);
    }
}

/// Softplus-transformed weights and tanh-transformed gates of one channel,
/// precomputed once per evaluation batch.
#[derive(Debug, Clone)]
pub struct PreparedChannel {
    pub w1: [f64; 3],
    pub g1: [f64; 3],
    pub w2: [f64; 9],
    pub g2: [f64; 3],
    pub w3: [f64; 9],
    pub g3: [f64; 3],
    pub w4: [f64; 3],
    raw: FactorizedChannel,
}

/// Intermediate state of one CDF evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CdfCache {
    x: f64,
    t1: [f64; 3],
    z1: [f64; 3],
    t2: [f64; 3],
    z2: [f64; 3],
    t3: [f64; 3],
    z3: [f64; 3],
    pub cdf: f64,
}

impl PreparedChannel {
    pub fn new(raw: &FactorizedChannel) -> Self {
        let sp3 = |h: &[f64; 3]| [math::softplus(h[0]), math::softplus(h[1]), math::softplus(h[2])];
        let th3 = |a: &[f64; 3]| [math::tanh(a[0]), math::tanh(a[1]), math::tanh(a[2])];
        let mut w2 = [0.0; 9];
        let mut w3 = [0.0; 9];
        for i in 0..9 {
            w2[i] = math::softplus(raw.h2[i]);
            w3[i] = math::softplus(raw.h3[i]);
        }
        PreparedChannel {
            w1: sp3(&raw.h1),
            g1: th3(&raw.a1),
            w2,
            g2: th3(&raw.a2),
            w3,
            g3: th3(&raw.a3),
            w4: sp3(&raw.h4),
            raw: raw.clone(),
        }
    }

    /// Cumulative distribution at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_cached(x).cdf
    }

    pub fn cdf_cached(&self, x: f64) -> CdfCache {
        let raw = &self.raw;
        let mut y1 = [0.0; 3];
        let mut t1 = [0.0; 3];
        let mut z1 = [0.0; 3];
        for i in 0..3 {
            y1[i] = self.w1[i] * x + raw.b1[i];
            t1[i] = math::tanh(y1[i]);
            z1[i] = y1[i] + self.g1[i] * t1[i];
        }
        let mut y2 = [0.0; 3];
        let mut t2 = [0.0; 3];
        let mut z2 = [0.0; 3];
        for i in 0..3 {
            let mut acc = raw.b2[i];
            for j in 0..3 {
                acc += self.w2[i * 3 + j] * z1[j];
            }
            y2[i] = acc;
            t2[i] = math::tanh(acc);
            z2[i] = acc + self.g2[i] * t2[i];
        }
        let mut y3 = [0.0; 3];
        let mut t3 = [0.0; 3];
        let mut z3 = [0.0; 3];
        for i in 0..3 {
            let mut acc = raw.b3[i];
            for j in 0..3 {
                acc += self.w3[i * 3 + j] * z2[j];
            }
            y3[i] = acc;
            t3[i] = math::tanh(acc);
            z3[i] = acc + self.g3[i] * t3[i];
        }
        let mut y4 = raw.b4;
        for j in 0..3 {
            y4 += self.w4[j] * z3[j];
        }
        CdfCache {
            x,
            t1,
            z1,
            t2,
            z2,
            t3,
            z3,
            cdf: math::sigmoid(y4),
        }
    }

    /// Backpropagates `dcdf` through one cached evaluation. Accumulates
    /// parameter gradients into `grad` (raw parameterization) and returns
    /// the gradient w.r.t. the evaluation point.
    pub fn backward(&self, cache: &CdfCache, dcdf: f64, grad: &mut FactorizedChannel) -> f64 {
        let raw = &self.raw;
        let s = cache.cdf;
        let dy4 = dcdf * s * (1.0 - s);
        grad.b4 += dy4;
        let mut dz3 = [0.0; 3];
        for j in 0..3 {
            // w4 = softplus(h4)
            grad.h4[j] += dy4 * cache.z3[j] * math::sigmoid(raw.h4[j]);
            dz3[j] = dy4 * self.w4[j];
        }

        let mut dz2 = [0.0; 3];
        for i in 0..3 {
            // z3 = y3 + g3 * tanh(y3)
            let dy3 = dz3[i] * (1.0 + self.g3[i] * (1.0 - cache.t3[i] * cache.t3[i]));
            grad.a3[i] += dz3[i] * cache.t3[i] * (1.0 - self.g3[i] * self.g3[i]);
            grad.b3[i] += dy3;
            for j in 0..3 {
                grad.h3[i * 3 + j] += dy3 * cache.z2[j] * math::sigmoid(raw.h3[i * 3 + j]);
                dz2[j] += dy3 * self.w3[i * 3 + j];
            }
        }

        let mut dz1 = [0.0; 3];
        for i in 0..3 {
            let dy2 = dz2[i] * (1.0 + self.g2[i] * (1.0 - cache.t2[i] * cache.t2[i]));
            grad.a2[i] += dz2[i] * cache.t2[i] * (1.0 - self.g2[i] * self.g2[i]);
            grad.b2[i] += dy2;
            for j in 0..3 {
                grad.h2[i * 3 + j] += dy2 * cache.z1[j] * math::sigmoid(raw.h2[i * 3 + j]);
                dz1[j] += dy2 * self.w2[i * 3 + j];
            }
        }

        let mut dx = 0.0;
        for i in 0..3 {
            let dy1 = dz1[i] * (1.0 + self.g1[i] * (1.0 - cache.t1[i] * cache.t1[i]));
            grad.a1[i] += dz1[i] * cache.t1[i] * (1.0 - self.g1[i] * self.g1[i]);
            grad.b1[i] += dy1;
            grad.h1[i] += dy1 * cache.x * math::sigmoid(raw.h1[i]);
            dx += dy1 * self.w1[i];
        }
        dx
    }

    /// Probability of the integer bin `s`: `cdf(s + 1/2) - cdf(s - 1/2)`.
    pub fn bin_prob(&self, s: f64) -> f64 {
        self.cdf(s + 0.5) - self.cdf(s - 0.5)
    }
}

/// Independent learned densities for all hyperprior channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedDensity {
    pub channels: Vec<FactorizedChannel>,
}

impl FactorizedDensity {
    pub fn init(channels: usize, init_scale: f64) -> Self {
        FactorizedDensity {
            channels: vec![FactorizedChannel::init(init_scale); channels],
        }
    }

    pub fn prepare(&self) -> Vec<PreparedChannel> {
        self.channels.iter().map(PreparedChannel::new).collect()
    }
}
