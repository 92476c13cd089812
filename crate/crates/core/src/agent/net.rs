//! Minimal dense networks with manual backpropagation, plus Adam.
//!
//! An [`Mlp`] is a stack of linear layers with tanh between them and a linear
//! output. Weights are row-major `Vec<f64>` per layer; the whole network can
//! be flattened to (and restored from) a single parameter vector, which is
//! what the optimizer, the checkpoints and the finite-difference tests all
//! operate on. Initialization is orthogonal (modified Gram-Schmidt on
//! Gaussian draws) with gain sqrt(2) on hidden layers and a caller-chosen
//! gain on the output layer, so freshly initialized policy heads can start
//! near zero.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::Rng;

/// One dense layer, `output x input`, weights row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    /// `y = W x + b`, appended into `out`.
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input);
        out.clear();
        for o in 0..self.output {
            let row = &self.weights[o * self.input..(o + 1) * self.input];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }

    fn param_count(&self) -> usize {
        self.output * self.input + self.output
    }
}

/// Gradients for one layer, same layout as [`Linear`].
#[derive(Debug, Clone)]
struct LinearGrads {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Accumulated gradients for a whole network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    layers: Vec<LinearGrads>,
}

impl MlpGrads {
    /// Appends the gradients in flattening order (per layer: weights, bias).
    pub fn push_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }
}

/// Forward-pass activations needed for the backward pass: the input and the
/// post-tanh activation of every hidden layer.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `acts[0]` is the network input; `acts[k]` for k >= 1 is the output of
    /// hidden layer k after tanh. The final linear output is not cached (the
    /// backward pass starts from its gradient).
    acts: Vec<Vec<f64>>,
}

/// Dense tanh network with a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Builds an `rows x cols` orthogonal-ish matrix scaled by `gain`: Gaussian
/// draws orthonormalized over the smaller dimension with modified
/// Gram-Schmidt (redrawing on the measure-zero degenerate case).
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let (k, n) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // basis vectors become rows when rows <= cols, else columns
            let v = if rows <= cols { basis[r][c] } else { basis[c][r] };
            out[r * cols + c] = gain * v;
        }
    }
    out
}

impl Mlp {
    /// New network with the given layer widths (`dims[0]` inputs through
    /// `dims.last()` outputs). Hidden layers use gain sqrt(2); the output
    /// layer uses `head_gain`. Biases start at zero.
    pub fn new(dims: &[usize], head_gain: f64, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d >= 1), "zero-width layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (input, output) = (pair[0], pair[1]);
            let gain = if i == dims.len() - 2 { head_gain } else { std::f64::consts::SQRT_2 };
            layers.push(Linear {
                input,
                output,
                weights: orthogonal(output, input, gain, rng),
                bias: vec![0.0; output],
            });
        }
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output
    }

    /// Structural checks after deserialization: consistent chained shapes and
    /// finite coefficients.
    pub fn validate(&self) -> Result<(), Error> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        let mut prev_out = self.layers[0].input;
        for (i, l) in self.layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::InvalidConfig(format!("layer {i} has a zero dimension")));
            }
            if l.input != prev_out {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} expects {} inputs but the previous layer produces {prev_out}",
                    l.input
                )));
            }
            if l.weights.len() != l.output * l.input || l.bias.len() != l.output {
                return Err(Error::InvalidConfig(format!("layer {i} coefficient counts mismatch its shape")));
            }
            if !(l.weights.iter().all(|w| w.is_finite()) && l.bias.iter().all(|b| b.is_finite())) {
                return Err(Error::InvalidConfig(format!("layer {i} has non-finite coefficients")));
            }
            prev_out = l.output;
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if i + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping the activations needed by [`Mlp::backward`].
    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(x.to_vec());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if i + 1 < self.layers.len() {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
                acts.push(next.clone());
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (cur, MlpCache { acts })
    }

    /// Zeroed gradient accumulator with this network's shapes.
    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LinearGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Accumulates `dLoss/dparams` into `grads` given `dLoss/doutput` for the
    /// forward pass recorded in `cache`.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grads: &mut MlpGrads) {
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let mut g = grad_out.to_vec();
        let mut g_prev = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &cache.acts[i];
            let lg = &mut grads.layers[i];
            // dL/dW[o][j] += g[o] * a_in[j]; dL/db[o] += g[o]
            let weight_rows = lg.weights.chunks_exact_mut(layer.input);
            for ((go, bias), row) in g.iter().zip(&mut lg.bias).zip(weight_rows) {
                *bias += go;
                for (wj, aj) in row.iter_mut().zip(a_in) {
                    *wj += go * aj;
                }
            }
            if i == 0 {
                break;
            }
            // Propagate to the previous activation, through its tanh.
            g_prev.clear();
            g_prev.resize(layer.input, 0.0);
            for (go, row) in g.iter().zip(layer.weights.chunks_exact(layer.input)) {
                for (gp, w) in g_prev.iter_mut().zip(row) {
                    *gp += go * w;
                }
            }
            for (gp, a) in g_prev.iter_mut().zip(a_in) {
                *gp *= 1.0 - a * a;
            }
            std::mem::swap(&mut g, &mut g_prev);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }

    /// Appends all parameters in flattening order (per layer: weights, bias).
    pub fn push_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Restores parameters from the flattening order; returns how many values
    /// were consumed.
    pub fn load_flat(&mut self, flat: &[f64]) -> usize {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        off
    }
}

// ─────────────────────────────────────────────────────────────────────────────
// Adam
// ─────────────────────────────────────────────────────────────────────────────

/// Adam over a flat parameter vector (betas 0.9/0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One descent step in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_hand_computation() {
        // 2 -> 2 -> 1 with fixed weights.
        let net = Mlp {
            layers: vec![
                Linear {
                    input: 2,
                    output: 2,
                    weights: vec![0.5, -0.25, 1.0, 0.75],
                    bias: vec![0.1, -0.2],
                },
                Linear {
                    input: 2,
                    output: 1,
                    weights: vec![2.0, -1.0],
                    bias: vec![0.05],
                },
            ],
        };
        let x = [0.3, -0.6];
        let h0 = (0.5_f64 * 0.3 + (-0.25) * (-0.6) + 0.1).tanh();
        let h1 = (1.0_f64 * 0.3 + 0.75 * (-0.6) - 0.2).tanh();
        let expected = 2.0 * h0 - 1.0 * h1 + 0.05;
        let y = net.forward(&x);
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn init_shapes_and_orthogonality() {
        let mut rng = Rng::new(5);
        let net = Mlp::new(&[12, 64, 64, 5], 0.01, &mut rng);
        assert_eq!(net.input_dim(), 12);
        assert_eq!(net.output_dim(), 5);
        assert_eq!(net.param_count(), 12 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5);
        net.validate().unwrap();
        // First hidden layer: 64 x 12, so its 12 columns are orthogonal with
        // squared norm gain^2 = 2.
        let l = &net.layers[0];
        for c1 in 0..12 {
            for c2 in 0..12 {
                let dot: f64 = (0..64).map(|r| l.weights[r * 12 + c1] * l.weights[r * 12 + c2]).sum();
                let want = if c1 == c2 { 2.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "col {c1}.{c2}: {dot}");
            }
        }
        // Output layer scaled way down.
        let head = net.layers.last().unwrap();
        assert!(head.weights.iter().all(|w| w.abs() < 0.011));
        // Biases all zero.
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn flat_roundtrip_is_identity() {
        let mut rng = Rng::new(9);
        let net = Mlp::new(&[3, 8, 2], 1.0, &mut rng);
        let mut flat = Vec::new();
        net.push_flat(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut other = Mlp::new(&[3, 8, 2], 1.0, &mut rng);
        assert_ne!(net, other);
        let used = other.load_flat(&flat);
        assert_eq!(used, flat.len());
        assert_eq!(net, other);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(31);
        let mut net = Mlp::new(&[4, 6, 3], 1.0, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        // Scalar loss: weighted sum of outputs, so dL/dy is the weight vector.
        let c: Vec<f64> = (0..3).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let loss = |net: &Mlp| -> f64 { net.forward(&x).iter().zip(&c).map(|(y, ci)| y * ci).sum() };

        let (_, cache) = net.forward_cached(&x);
        let mut grads = net.zero_grads();
        net.backward(&cache, &c, &mut grads);
        let mut flat_g = Vec::new();
        grads.push_flat(&mut flat_g);

        let mut flat = Vec::new();
        net.push_flat(&mut flat);
        let h = 1e-5;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            net.load_flat(&flat);
            let up = loss(&net);
            flat[i] = orig - h;
            net.load_flat(&flat);
            let down = loss(&net);
            flat[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - flat_g[i]).abs();
            assert!(
                err <= 1e-6 + 1e-6 * fd.abs().max(flat_g[i].abs()),
                "param {i}: analytic {} vs fd {fd}",
                flat_g[i]
            );
        }
        net.load_flat(&flat);
    }

    #[test]
    fn adam_first_step_size_is_lr() {
        let mut opt = Adam::new(0.1, 1);
        let mut p = vec![1.0];
        // Gradient of x^2 at 1 is 2; the bias-corrected first step is lr.
        opt.step(&mut p, &[2.0]);
        assert!((p[0] - 0.9).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Adam::new(0.05, 2);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * (p[1] + 1.0)];
            opt.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3, "{}", p[0]);
        assert!((p[1] + 1.0).abs() < 1e-3, "{}", p[1]);
    }

    #[test]
    fn validate_catches_shape_breaks() {
        let mut rng = Rng::new(11);
        let mut net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        net.layers[1].input = 5;
        assert!(net.validate().is_err());
        let mut net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        net.layers[0].weights.pop();
        assert!(net.validate().is_err());
        let mut net = Mlp::new(&[3, 4, 2], 1.0, &mut rng);
        net.layers[0].weights[0] = f64::NAN;
        assert!(net.validate().is_err());
    }
}
