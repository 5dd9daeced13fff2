//! Dense numeric kernel: a small multilayer perceptron with analytic
//! forward/backward passes, Kaiming initialisation, and first-order
//! stochastic ascent optimizers (Adam, AMSGrad) with an optional cosine
//! learning-rate schedule.
//!
//! All gradients follow the ascent convention: objectives are maximised and
//! optimizers add the scaled step.

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat};
use crate::rng::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Negative slope of the leaky rectifier used between layers.
pub const LEAKY_SLOPE: f64 = 0.01;

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Layer {
    /// out x in weight matrix.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Fully-connected network. The leaky rectifier is applied after every layer
/// except the last; `activate_output` additionally activates the last layer,
/// which lets a network serve as the shared trunk of a larger one.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activate_output: bool,
}

/// Intermediate values of one forward pass, sufficient for backward.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer (activations of the previous one), length L.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer, length L.
    preacts: Vec<Vec<f64>>,
}

impl Mlp {
    /// Kaiming fan-in initialisation for the 0.01-slope leaky rectifier;
    /// biases are zero. `shape` lists layer sizes input-first.
    pub fn init(shape: &[usize], rng: &mut Rng) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "network shape needs at least 2 entries, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("network shape entries must be positive".into()));
        }
        let gain2 = 2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE);
        let mut layers = Vec::with_capacity(shape.len() - 1);
        for pair in shape.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (gain2 / fan_in as f64).sqrt();
            let w = (0..fan_out)
                .map(|_| {
                    (0..fan_in)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(rng);
                            z * std
                        })
                        .collect()
                })
                .collect();
            layers.push(Layer { w, b: vec![0.0; fan_out] });
        }
        Ok(Mlp { layers, activate_output: false })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].w[0].len()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().unwrap().b.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() * l.w[0].len() + l.b.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_size() {
            return Err(Error::InvalidArgument(format!(
                "input length {} does not match network input size {}",
                x.len(),
                self.input_size()
            )));
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut preacts = Vec::with_capacity(n_layers);
        let mut act = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<f64> = layer
                .w
                .iter()
                .zip(&layer.b)
                .map(|(row, b)| dot(row, &act) + b)
                .collect();
            inputs.push(act);
            preacts.push(z.clone());
            let is_last = li + 1 == n_layers;
            if !is_last || self.activate_output {
                for v in &mut z {
                    *v = leaky(*v);
                }
            }
            act = z;
        }
        Ok((act, MlpCache { inputs, preacts }))
    }

    /// Reverse-mode gradients of `output . upstream`. Parameter gradients are
    /// accumulated into `grads` (layout per [`Mlp::write_params`]); the return
    /// value is the gradient with respect to the input.
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.output_size() {
            return Err(Error::InvalidArgument(format!(
                "upstream length {} does not match network output size {}",
                upstream.len(),
                self.output_size()
            )));
        }
        if grads.len() != self.param_count() {
            return Err(Error::InvalidArgument("gradient buffer length mismatch".into()));
        }
        let n_layers = self.layers.len();
        let mut layer_offsets = Vec::with_capacity(n_layers);
        let mut off = 0usize;
        for layer in &self.layers {
            layer_offsets.push(off);
            off += layer.w.len() * layer.w[0].len() + layer.b.len();
        }

        let mut delta = upstream.to_vec();
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            let is_last = li + 1 == n_layers;
            if !is_last || self.activate_output {
                for (d, z) in delta.iter_mut().zip(&cache.preacts[li]) {
                    *d *= leaky_grad(*z);
                }
            }
            let input = &cache.inputs[li];
            let fan_in = input.len();
            let base = layer_offsets[li];
            for (o, d) in delta.iter().enumerate() {
                let row = &mut grads[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let b_base = base + layer.w.len() * fan_in;
            for (o, d) in delta.iter().enumerate() {
                grads[b_base + o] += d;
            }
            let mut prev = vec![0.0; fan_in];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for (p, w) in prev.iter_mut().zip(&layer.w[o]) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            for row in &layer.w {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.b);
        }
    }

    pub fn read_params(&mut self, data: &[f64]) -> usize {
        let mut off = 0;
        for layer in &mut self.layers {
            for row in &mut layer.w {
                let len = row.len();
                row.copy_from_slice(&data[off..off + len]);
                off += len;
            }
            let len = layer.b.len();
            layer.b.copy_from_slice(&data[off..off + len]);
            off += len;
        }
        off
    }

    /// Weight matrix of layer `li` as a `Mat` (out x in).
    pub fn weight_mat(&self, li: usize) -> Mat {
        Mat::from_rows(&self.layers[li].w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptMode {
    Adam,
    AmsGrad,
}

/// Cosine decay of the learning rate over a fixed step budget.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub initial_alpha: f64,
    pub total_steps: usize,
}

/// First-order ascent optimizer state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub mode: OptMode,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    v_max: Vec<f64>,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub cosine: Option<CosineSchedule>,
}

impl OptimizerState {
    pub fn new(mode: OptMode, dim: usize, alpha: f64) -> Self {
        OptimizerState {
            mode,
            t: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            v_max: if mode == OptMode::AmsGrad { vec![0.0; dim] } else { Vec::new() },
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            cosine: None,
        }
    }

    pub fn adam(dim: usize, alpha: f64) -> Self {
        Self::new(OptMode::Adam, dim, alpha)
    }

    pub fn amsgrad(dim: usize, alpha: f64) -> Self {
        Self::new(OptMode::AmsGrad, dim, alpha)
    }

    pub fn with_cosine(mut self, total_steps: usize) -> Self {
        self.cosine = Some(CosineSchedule { initial_alpha: self.alpha, total_steps });
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    fn effective_alpha(&self) -> f64 {
        match self.cosine {
            None => self.alpha,
            Some(cs) => {
                let progress = if cs.total_steps == 0 {
                    1.0
                } else {
                    (self.t as f64 / cs.total_steps as f64).min(1.0)
                };
                cs.initial_alpha * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    /// One bias-corrected adaptive step along the ascent gradient. Aborts
    /// without touching any state if the gradient has non-finite entries.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, got params={} grad={}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient entry {} at coordinate {pos}; step aborted",
                grad[pos]
            )));
        }
        let alpha = self.effective_alpha();
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = match self.mode {
                OptMode::Adam => self.v[i] / bc2,
                OptMode::AmsGrad => {
                    if self.v[i] > self.v_max[i] {
                        self.v_max[i] = self.v[i];
                    }
                    self.v_max[i] / bc2
                }
            };
            params[i] += alpha * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
