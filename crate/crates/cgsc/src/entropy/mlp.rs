//! Small dense network with two ReLU hidden layers.
//!
//! Weights are `f64` at run time but are snapped to `f32` before they are
//! serialized or used for coding, so both sides of the codec evaluate the
//! same numbers. The same struct doubles as its own gradient container.

use rand::Rng;

/// Row-major dense 3-layer perceptron: `in -> hidden -> hidden -> out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Forward-pass activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

fn uniform_fan_in(rng: &mut impl Rng, rows: usize, cols: usize, out: &mut Vec<f64>) {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    out.clear();
    for _ in 0..rows * cols {
        out.push(rng.gen_range(-bound..bound));
    }
}

impl Mlp {
    /// Uniform fan-in initialization, deterministic given the RNG state.
    /// Draw order: w1, b1, w2, b2, w3, b3, each row-major.
    pub fn init(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Mlp {
        let mut net = Mlp::zeros(input_dim, hidden_dim, output_dim);
        uniform_fan_in(rng, hidden_dim, input_dim, &mut net.w1);
        uniform_fan_in(rng, hidden_dim, 1, &mut net.b1);
        uniform_fan_in(rng, hidden_dim, hidden_dim, &mut net.w2);
        uniform_fan_in(rng, hidden_dim, 1, &mut net.b2);
        uniform_fan_in(rng, output_dim, hidden_dim, &mut net.w3);
        uniform_fan_in(rng, output_dim, 1, &mut net.b3);
        net
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Mlp {
        Mlp {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * hidden_dim],
            b2: vec![0.0; hidden_dim],
            w3: vec![0.0; output_dim * hidden_dim],
            b3: vec![0.0; output_dim],
        }
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp::zeros(self.input_dim, self.hidden_dim, self.output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.w3.len()
            + self.b3.len()
    }

    pub fn forward(&self, input: &[f64]) -> MlpCache {
        assert_eq!(input.len(), self.input_dim);
        let mut h1 = vec![0.0; self.hidden_dim];
        for i in 0..self.hidden_dim {
            let row = &self.w1[i * self.input_dim..(i + 1) * self.input_dim];
            let mut acc = self.b1[i];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            h1[i] = acc.max(0.0);
        }
        let mut h2 = vec![0.0; self.hidden_dim];
        for i in 0..self.hidden_dim {
            let row = &self.w2[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            let mut acc = self.b2[i];
            for (w, x) in row.iter().zip(&h1) {
                acc += w * x;
            }
            h2[i] = acc.max(0.0);
        }
        let mut out = vec![0.0; self.output_dim];
        for i in 0..self.output_dim {
            let row = &self.w3[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            let mut acc = self.b3[i];
            for (w, x) in row.iter().zip(&h2) {
                acc += w * x;
            }
            out[i] = acc;
        }
        MlpCache {
            input: input.to_vec(),
            h1,
            h2,
            out,
        }
    }

    /// Accumulates gradients of a scalar loss into `grad` given the
    /// upstream `dout`; optionally also returns the gradient w.r.t. the
    /// input (needed to reach the hyperprior entries in the context).
    pub fn backward(
        &self,
        cache: &MlpCache,
        dout: &[f64],
        grad: &mut Mlp,
        mut dinput: Option<&mut [f64]>,
    ) {
        assert_eq!(dout.len(), self.output_dim);
        let mut dh2 = vec![0.0; self.hidden_dim];
        for i in 0..self.output_dim {
            let g = dout[i];
            if g == 0.0 {
                continue;
            }
            grad.b3[i] += g;
            let row = &self.w3[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            let grow = &mut grad.w3[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            for j in 0..self.hidden_dim {
                grow[j] += g * cache.h2[j];
                dh2[j] += g * row[j];
            }
        }
        let mut dh1 = vec![0.0; self.hidden_dim];
        for i in 0..self.hidden_dim {
            // ReLU gate: h2 stores the post-activation value.
            let g = if cache.h2[i] > 0.0 { dh2[i] } else { 0.0 };
            if g == 0.0 {
                continue;
            }
            grad.b2[i] += g;
            let row = &self.w2[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            let grow = &mut grad.w2[i * self.hidden_dim..(i + 1) * self.hidden_dim];
            for j in 0..self.hidden_dim {
                grow[j] += g * cache.h1[j];
                dh1[j] += g * row[j];
            }
        }
        for i in 0..self.hidden_dim {
            let g = if cache.h1[i] > 0.0 { dh1[i] } else { 0.0 };
            if g == 0.0 {
                continue;
            }
            grad.b1[i] += g;
            let row = &self.w1[i * self.input_dim..(i + 1) * self.input_dim];
            let grow = &mut grad.w1[i * self.input_dim..(i + 1) * self.input_dim];
            if let Some(dx) = dinput.as_deref_mut() {
                for j in 0..self.input_dim {
                    grow[j] += g * cache.input[j];
                    dx[j] += g * row[j];
                }
            } else {
                for j in 0..self.input_dim {
                    grow[j] += g * cache.input[j];
                }
            }
        }
    }

    pub fn for_each_param(&self, f: &mut impl FnMut(f64)) {
        for v in self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(&self.b3)
        {
            f(*v);
        }
    }

    pub fn for_each_param_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        for v in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
            .chain(self.w3.iter_mut())
            .chain(self.b3.iter_mut())
        {
            f(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_net_outputs_biases() {
        let mut net = Mlp::zeros(4, 8, 3);
        net.b3 = vec![1.5, -2.0, 0.25];
        let cache = net.forward(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cache.out, vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut net = Mlp::init(5, 7, 4, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Scalar loss: weighted sum of outputs (weights fixed).
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            let c = net.forward(x);
            c.out.iter().zip(&w).map(|(o, wi)| o * wi).sum()
        };
        let cache = net.forward(&x);
        let mut grad = net.zeros_like();
        let mut dx = vec![0.0; 5];
        net.backward(&cache, &w, &mut grad, Some(&mut dx));

        let h = 1e-6;
        // Probe a few weights from each matrix.
        let probes: Vec<(usize, usize)> = vec![(0, 3), (1, 10), (2, 20), (3, 2), (4, 11), (5, 1)];
        fn slot<'a>(n: &'a mut Mlp, which: usize) -> &'a mut Vec<f64> {
            match which {
                0 => &mut n.w1,
                1 => &mut n.b1,
                2 => &mut n.w2,
                3 => &mut n.b2,
                4 => &mut n.w3,
                _ => &mut n.b3,
            }
        }
        for (which, idx) in probes {
            let idx = idx % slot(&mut net, which).len();
            let orig = slot(&mut net, which)[idx];
            slot(&mut net, which)[idx] = orig + h;
            let up = loss(&net, &x);
            slot(&mut net, which)[idx] = orig - h;
            let down = loss(&net, &x);
            slot(&mut net, which)[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let got = match which {
                0 => grad.w1[idx],
                1 => grad.b1[idx],
                2 => grad.w2[idx],
                3 => grad.b2[idx],
                4 => grad.w3[idx],
                _ => grad.b3[idx],
            };
            assert!(
                (fd - got).abs() <= 1e-6 * fd.abs().max(1.0),
                "param class {which} idx {idx}: fd {fd} vs analytic {got}"
            );
        }
        // Input gradient too.
        for j in 0..5 {
            let mut xp = x.clone();
            xp[j] += h;
            let up = loss(&net, &xp);
            xp[j] = x[j] - h;
            let down = loss(&net, &xp);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx[j]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }
}
