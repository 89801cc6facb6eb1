//! Feedforward policy network with a bounded output layer.
//!
//! Parameter layout, frozen: for each affine layer in order, the weight matrix
//! row-major (`out x in`, entry `W[o][i]` at `o * in + i`) followed by the
//! `out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::diff::Scalar;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "nodecorr-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

/// Output interval `(lb, ub)` of one scale-layer channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lb: f64,
    pub ub: f64,
}

impl Bound {
    pub fn new(lb: f64, ub: f64) -> Self {
        Self { lb, ub }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lb + self.ub)
    }
}

#[inline]
fn sigmoid<S: Scalar>(u: S) -> S {
    // Branch on the sign so neither exp() can overflow.
    if u.value() >= 0.0 {
        ((-u).exp() + 1.0).recip()
    } else {
        let e = u.exp();
        e / (e + 1.0)
    }
}

/// `(ub - lb) / (1 + exp(-u)) + lb`.
pub fn f_scale<S: Scalar>(u: S, b: Bound) -> S {
    sigmoid(u) * (b.ub - b.lb) + b.lb
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNetwork {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    bounds: Vec<Bound>,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    net: PolicyNetwork,
}

impl PolicyNetwork {
    /// Network with zero parameters. `activations` has one entry per affine
    /// layer; `bounds` (possibly empty) adds the scale layer on the output.
    pub fn new(layer_dims: Vec<usize>, activations: Vec<Activation>, bounds: Vec<Bound>) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!("invalid layer dims {layer_dims:?}")));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::LengthMismatch { expected: layer_dims.len() - 1, got: activations.len() });
        }
        if !bounds.is_empty() && bounds.len() != *layer_dims.last().unwrap() {
            return Err(Error::LengthMismatch { expected: *layer_dims.last().unwrap(), got: bounds.len() });
        }
        if bounds.iter().any(|b| !(b.lb < b.ub)) {
            return Err(Error::Config("scale bounds need lb < ub".into()));
        }
        let l = param_count(&layer_dims);
        Ok(Self { layer_dims, activations, bounds, theta: vec![0.0; l] })
    }

    /// 6 -> 10 tanh -> 10 tanh -> 3 linear -> scale.
    pub fn mars(bounds: [Bound; 3]) -> Self {
        Self::new(vec![6, 10, 10, 3], vec![Activation::Tanh, Activation::Tanh, Activation::Linear], bounds.to_vec())
            .expect("static architecture")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.theta.clone()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Same architecture, new parameters.
    pub fn unflatten(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::LengthMismatch { expected: self.theta.len(), got: theta.len() });
        }
        Ok(Self { theta: theta.to_vec(), ..self.clone() })
    }

    /// Glorot-uniform weights and zero biases, reproducible per seed.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(self.theta.len());
        for w in self.layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = glorot_limit(fan_in, fan_out);
            for _ in 0..fan_in * fan_out {
                theta.push(rng.random_range(-limit..limit));
            }
            theta.extend(std::iter::repeat_n(0.0, fan_out));
        }
        theta
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_with(&self.theta, input)
    }

    /// Forward pass with externally supplied parameters, on any scalar type.
    pub fn forward_with<S: Scalar>(&self, theta: &[S], input: &[S]) -> Vec<S> {
        assert_eq!(input.len(), self.input_dim(), "policy input length");
        assert_eq!(theta.len(), self.theta.len(), "policy parameter length");
        let mut a: Vec<S> = input.to_vec();
        let mut off = 0;
        for (w, act) in self.layer_dims.windows(2).zip(&self.activations) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &theta[off..off + n_in * n_out];
            let biases = &theta[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            a = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let mut z = biases[o];
                    for (wi, ai) in row.iter().zip(&a) {
                        z += *wi * *ai;
                    }
                    match act {
                        Activation::Tanh => z.tanh(),
                        Activation::Linear => z,
                    }
                })
                .collect();
        }
        if !self.bounds.is_empty() {
            for (ai, b) in a.iter_mut().zip(&self.bounds) {
                *ai = f_scale(*ai, *b);
            }
        }
        a
    }

    /// Reverse-mode product: returns `(gᵀ ∂y/∂input, gᵀ ∂y/∂θ)` for output
    /// cotangent `g`, together with the forward output.
    pub fn vjp(&self, theta: &[f64], input: &[f64], out_grad: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        assert_eq!(out_grad.len(), self.output_dim());
        let n_layers = self.activations.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(input.to_vec());
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for (w, act) in self.layer_dims.windows(2).zip(&self.activations) {
            let (n_in, n_out) = (w[0], w[1]);
            offsets.push(off);
            let prev = acts.last().unwrap();
            let next: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &theta[off + o * n_in..off + (o + 1) * n_in];
                    let mut z = theta[off + n_in * n_out + o];
                    for (wi, ai) in row.iter().zip(prev) {
                        z += wi * ai;
                    }
                    match act {
                        Activation::Tanh => z.tanh(),
                        Activation::Linear => z,
                    }
                })
                .collect();
            off += n_in * n_out + n_out;
            acts.push(next);
        }
        let pre_scale = acts.last().unwrap().clone();
        let mut g = out_grad.to_vec();
        let output = if self.bounds.is_empty() {
            pre_scale
        } else {
            pre_scale
                .iter()
                .zip(&self.bounds)
                .zip(g.iter_mut())
                .map(|((&u, b), gi)| {
                    let s = sigmoid(u);
                    *gi *= (b.ub - b.lb) * s * (1.0 - s);
                    f_scale(u, *b)
                })
                .collect()
        };
        let mut grad_theta = vec![0.0; theta.len()];
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
            let off = offsets[layer];
            let out = &acts[layer + 1];
            let inp = &acts[layer];
            if self.activations[layer] == Activation::Tanh {
                for (gi, ai) in g.iter_mut().zip(out) {
                    *gi *= 1.0 - ai * ai;
                }
            }
            let mut g_in = vec![0.0; n_in];
            for o in 0..n_out {
                let go = g[o];
                grad_theta[off + n_in * n_out + o] = go;
                let base = off + o * n_in;
                for i in 0..n_in {
                    grad_theta[base + i] = go * inp[i];
                    g_in[i] += theta[base + i] * go;
                }
            }
            g = g_in;
        }
        (output, g, grad_theta)
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, net: self.clone() };
        serde_json::to_string_pretty(&ck).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let net = ck.net;
        let expect = Self::new(net.layer_dims.clone(), net.activations.clone(), net.bounds.clone())?;
        expect.unflatten(&net.theta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub fn param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{jacobian_fd, Dual};
    use proptest::prelude::*;

    fn mars_bounds() -> [Bound; 3] {
        let deg = std::f64::consts::PI / 180.0;
        [Bound::new(0.2, 1.0), Bound::new(-180.0 * deg, 180.0 * deg), Bound::new(-90.0 * deg, 90.0 * deg)]
    }

    #[test]
    fn mars_architecture_has_213_parameters() {
        let net = PolicyNetwork::mars(mars_bounds());
        assert_eq!(net.param_count(), 6 * 10 + 10 + 10 * 10 + 10 + 10 * 3 + 3);
        assert_eq!(net.param_count(), 213);
    }

    #[test]
    fn zero_parameters_give_midpoints() {
        let net = PolicyNetwork::mars(mars_bounds());
        let y = net.forward(&[0.3, -1.0, 2.0, 0.0, 0.5, -0.2]);
        for (yi, b) in y.iter().zip(net.bounds()) {
            assert!((yi - b.midpoint()).abs() < 1e-15);
        }
        assert!((y[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn scale_limits() {
        let b = Bound::new(0.2, 1.0);
        assert!((f_scale(800.0, b) - 1.0).abs() < 1e-15);
        assert!((f_scale(-800.0, b) - 0.2).abs() < 1e-15);
        assert!(f_scale(-800.0_f64, b).is_finite());
        let d = f_scale(Dual::<1>::variable(-800.0, 0), b);
        assert!(d.is_finite());
    }

    #[test]
    fn init_is_reproducible_and_bounded() {
        let net = PolicyNetwork::mars(mars_bounds());
        assert_eq!(net.init(3), net.init(3));
        let all: Vec<Vec<f64>> = (0..=10).map(|s| net.init(s)).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
        let theta = &all[0];
        let mut off = 0;
        for w in net.layer_dims().windows(2) {
            let lim = glorot_limit(w[0], w[1]);
            for k in 0..w[0] * w[1] {
                assert!(theta[off + k].abs() <= lim);
            }
            assert!(theta[off + w[0] * w[1]..off + w[0] * w[1] + w[1]].iter().all(|&b| b == 0.0));
            off += w[0] * w[1] + w[1];
        }
    }

    #[test]
    fn unflatten_checks_length() {
        let net = PolicyNetwork::mars(mars_bounds());
        assert_eq!(net.unflatten(&[0.0; 5]).unwrap_err(), Error::LengthMismatch { expected: 213, got: 5 });
        let shifted = net.unflatten(&vec![0.1; 213]).unwrap();
        assert_eq!(shifted.layer_dims(), net.layer_dims());
        assert_eq!(shifted.bounds(), net.bounds());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = PolicyNetwork::mars(mars_bounds());
        let net = net.unflatten(&net.init(7)).unwrap();
        let back = PolicyNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        assert!(PolicyNetwork::from_json("{\"format\":\"x\"}").is_err());
    }

    #[test]
    fn vjp_matches_dual_and_finite_differences() {
        let net = PolicyNetwork::mars(mars_bounds());
        let theta = net.init(11);
        let input = [0.4, -0.1, 0.9, -1.2, 0.05, 0.3];
        let g = [0.7, -1.1, 0.25];
        let (_, g_in, g_theta) = net.vjp(&theta, &input, &g);
        let fd = jacobian_fd(|x| Ok(net.forward_with(&theta, x)), &input, &[1e-6; 6]).unwrap();
        for i in 0..6 {
            let expect: f64 = (0..3).map(|o| g[o] * fd[(o, i)]).sum();
            assert!((g_in[i] - expect).abs() <= 1e-6 * (1.0 + expect.abs()), "input {i}");
        }
        for k in [0usize, 17, 59, 65, 70, 100, 169, 175, 200, 212] {
            let mut seeded: Vec<Dual<1>> = theta.iter().map(|&v| Dual::constant(v)).collect();
            seeded[k] = Dual::variable(theta[k], 0);
            let xin: Vec<Dual<1>> = input.iter().map(|&v| Dual::constant(v)).collect();
            let y = net.forward_with(&seeded, &xin);
            let expect: f64 = (0..3).map(|o| g[o] * y[o].d[0]).sum();
            assert!((g_theta[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "param {k}");
        }
    }

    proptest! {
        #[test]
        fn outputs_stay_within_bounds(seed in 0u64..1000, x in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let net = PolicyNetwork::mars(mars_bounds());
            let theta = net.init(seed);
            let y = net.forward_with(&theta, &x);
            for (yi, b) in y.iter().zip(net.bounds()) {
                prop_assert!(*yi > b.lb && *yi < b.ub);
            }
        }

        #[test]
        fn flatten_unflatten_identity(theta in proptest::collection::vec(-3.0f64..3.0, 213)) {
            let net = PolicyNetwork::mars(mars_bounds());
            prop_assert_eq!(net.unflatten(&theta).unwrap().flatten(), theta);
        }
    }
}
