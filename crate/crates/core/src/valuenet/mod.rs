//! Fully-connected value network `V(x̂, t̂)` with exact input derivatives.
//!
//! The network input is `z = [t̂, x̂_1, .., x̂_n]`. Hidden layers compute
//! `a = act(w * (W a_prev + b))` where `w` is the layer frequency (sine only;
//! other activations use `w = 1`); the output layer is linear.
//!
//! Derivatives are carried forward as tangent channels (one per input
//! coordinate) next to the value channel, and parameter gradients of any loss
//! built from the value and its input gradients are obtained by a hand-written
//! reverse sweep through that augmented forward pass. See [`engine`].

mod checkpoint;
pub mod engine;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::SystemSpec;

pub use checkpoint::Checkpoint;
pub use engine::{BatchResult, SampleAdjoint, SampleView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sine,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sine" => Some(Self::Sine),
            "relu" => Some(Self::Relu),
            "tanh" => Some(Self::Tanh),
            "sigmoid" => Some(Self::Sigmoid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sine => "sine",
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        }
    }

    /// `(f(s), f'(s), f''(s))`.
    #[inline]
    pub(crate) fn eval(self, s: f64) -> (f64, f64, f64) {
        match self {
            Self::Sine => {
                let (sn, cs) = s.sin_cos();
                (sn, cs, -sn)
            }
            Self::Relu => {
                if s > 0.0 {
                    (s, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Self::Tanh => {
                let t = s.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Self::Sigmoid => {
                let y = 1.0 / (1.0 + (-s).exp());
                let d = y * (1.0 - y);
                (y, d, d * (1.0 - 2.0 * y))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// State dimension plus one (time).
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Frequency of the first sine layer.
    pub omega0: f64,
    /// Frequency of the deeper sine layers.
    pub hidden_omega: f64,
}

impl Architecture {
    pub fn sine(input_dim: usize, hidden_layers: usize, hidden_width: usize, omega0: f64) -> Self {
        Self {
            input_dim,
            hidden_layers,
            hidden_width,
            activation: Activation::Sine,
            omega0,
            hidden_omega: omega0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if !(self.omega0 > 0.0 && self.hidden_omega > 0.0) {
            return Err(Error::Config("sine frequencies must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of linear layer `l` (the last one is the output).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let fan_in = if l == 0 { self.input_dim } else { self.hidden_width };
        let fan_out = if l == self.hidden_layers { 1 } else { self.hidden_width };
        (fan_in, fan_out)
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    /// Frequency multiplying the pre-activation of hidden layer `l`.
    pub fn frequency(&self, l: usize) -> f64 {
        match self.activation {
            Activation::Sine if l == 0 => self.omega0,
            Activation::Sine => self.hidden_omega,
            _ => 1.0,
        }
    }

    /// Offsets of each layer's weights (row-major `fan_out x fan_in`)
    /// followed by its biases, plus the total parameter count.
    fn offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut at = 0;
        for l in 0..self.num_layers() {
            offsets.push(at);
            let (i, o) = self.layer_shape(l);
            at += o * i + o;
        }
        (offsets, at)
    }

    pub fn num_params(&self) -> usize {
        self.offsets().1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub seed: u64,
    data: Vec<f64>,
    offsets: Vec<usize>,
}

/// Weights and biases of one linear layer.
pub struct LayerRef<'a> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

impl NetworkParams {
    pub fn from_flat(arch: Architecture, seed: u64, data: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let (offsets, total) = arch.offsets();
        if data.len() != total {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: total,
                got: data.len(),
            });
        }
        Ok(Self { arch, seed, data, offsets })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn layer(&self, l: usize) -> LayerRef<'_> {
        let (fan_in, fan_out) = self.arch.layer_shape(l);
        let at = self.offsets[l];
        let w_end = at + fan_in * fan_out;
        LayerRef {
            fan_in,
            fan_out,
            weights: &self.data[at..w_end],
            bias: &self.data[w_end..w_end + fan_out],
        }
    }

    pub(crate) fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteParameter(i)),
            None => Ok(()),
        }
    }

    pub fn forward(&self, x_hat: &[f64], t_hat: f64) -> Result<f64> {
        forward(self, x_hat, t_hat)
    }
}

/// Sinusoidal network with the standard initialization: first layer
/// `U(-1/fan_in, 1/fan_in)`, deeper layers `U(-sqrt(6/fan_in)/w, sqrt(6/fan_in)/w)`
/// with `w` the hidden frequency. Biases share each layer's range.
pub fn init(seed: u64, input_dim: usize, hidden_layers: usize, hidden_width: usize, omega0: f64) -> Result<NetworkParams> {
    init_with(Architecture::sine(input_dim, hidden_layers, hidden_width, omega0), seed)
}

/// Initialization for any activation. Non-sine networks use He-uniform
/// (ReLU) or Glorot-uniform (tanh, sigmoid) weights with biases drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_with(arch: Architecture, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(arch.num_params());
    for l in 0..arch.num_layers() {
        let (fan_in, fan_out) = arch.layer_shape(l);
        let (w_range, b_range) = init_ranges(&arch, l, fan_in, fan_out);
        data.extend((0..fan_in * fan_out).map(|_| uniform(&mut rng, w_range)));
        data.extend((0..fan_out).map(|_| uniform(&mut rng, b_range)));
    }
    NetworkParams::from_flat(arch, seed, data)
}

pub(crate) fn init_ranges(arch: &Architecture, l: usize, fan_in: usize, fan_out: usize) -> (f64, f64) {
    let fi = fan_in as f64;
    match arch.activation {
        Activation::Sine => {
            let r = if l == 0 {
                1.0 / fi
            } else {
                (6.0 / fi).sqrt() / arch.hidden_omega
            };
            (r, r)
        }
        Activation::Relu => ((6.0 / fi).sqrt(), 1.0 / fi.sqrt()),
        Activation::Tanh | Activation::Sigmoid => ((6.0 / (fi + fan_out as f64)).sqrt(), 1.0 / fi.sqrt()),
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    rng.random_range(-r..=r)
}

fn network_input(params: &NetworkParams, x_hat: &[f64], t_hat: f64) -> Result<Vec<f64>> {
    let expected = params.arch.input_dim - 1;
    if x_hat.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "normalized state",
            expected,
            got: x_hat.len(),
        });
    }
    let mut z = Vec::with_capacity(expected + 1);
    z.push(t_hat);
    z.extend_from_slice(x_hat);
    Ok(z)
}

/// `V(x̂, t̂)`.
pub fn forward(params: &NetworkParams, x_hat: &[f64], t_hat: f64) -> Result<f64> {
    params.check_finite()?;
    let z = network_input(params, x_hat, t_hat)?;
    let tape = engine::forward(params, &z, 1, false);
    Ok(tape.value(0))
}

/// `(V, dV/dt̂, grad_x̂ V)` at one input.
pub fn value_and_input_grads(params: &NetworkParams, x_hat: &[f64], t_hat: f64) -> Result<(f64, f64, Vec<f64>)> {
    params.check_finite()?;
    let z = network_input(params, x_hat, t_hat)?;
    let tape = engine::forward(params, &z, 1, true);
    let grads = tape.input_grads(0);
    Ok((tape.value(0), grads[0], grads[1..].to_vec()))
}

/// Loss and parameter gradient of `sum_i loss(i, V_i, dV_i/dt̂, grad_x̂ V_i)`.
///
/// `inputs` is row-major `samples x input_dim` in network order `[t̂, x̂]`.
/// The closure writes the loss's partial derivatives into the adjoint and
/// returns the sample loss; non-finite losses abort with the sample index.
pub fn loss_param_grads<F>(params: &NetworkParams, inputs: &[f64], loss: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, SampleView<'_>, &mut SampleAdjoint) -> f64 + Sync,
{
    params.check_finite()?;
    let r = engine::evaluate(params, inputs, true, 1, |i, v, adj| [loss(i, v, adj), 0.0])?;
    Ok((r.terms[0], r.grad))
}

/// Affine map between the physical box and `[-1, 1]^n`, and between physical
/// time `t` and `t̂ = (T - t) / T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub horizon: f64,
}

impl NormalizationMap {
    pub fn new(center: Vec<f64>, half_width: Vec<f64>, horizon: f64) -> Result<Self> {
        if center.len() != half_width.len() {
            return Err(Error::DimensionMismatch {
                what: "normalization half-widths",
                expected: center.len(),
                got: half_width.len(),
            });
        }
        if half_width.iter().any(|s| !(*s > 0.0 && s.is_finite())) || !(horizon > 0.0) {
            return Err(Error::Config("normalization scales must be positive".into()));
        }
        Ok(Self { center, half_width, horizon })
    }

    pub fn for_system(system: &SystemSpec) -> Self {
        Self {
            center: system.domain.iter().map(|iv| iv.center()).collect(),
            half_width: system.domain.iter().map(|iv| 0.5 * iv.width()).collect(),
            horizon: system.horizon,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.center.iter().zip(&self.half_width))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }

    pub fn denormalize(&self, x_hat: &[f64]) -> Vec<f64> {
        x_hat
            .iter()
            .zip(self.center.iter().zip(&self.half_width))
            .map(|(v, (c, s))| c + s * v)
            .collect()
    }

    pub fn normalize_time(&self, t: f64) -> f64 {
        (self.horizon - t) / self.horizon
    }

    pub fn denormalize_time(&self, t_hat: f64) -> f64 {
        self.horizon * (1.0 - t_hat)
    }

    /// Network input row `[t̂, x̂]` for a physical `(x, t)`.
    pub fn network_input(&self, x: &[f64], t: f64, out: &mut [f64]) {
        out[0] = self.normalize_time(t);
        for i in 0..x.len() {
            out[i + 1] = (x[i] - self.center[i]) / self.half_width[i];
        }
    }
}

/// `(V, D_t V, grad_x V)` in physical coordinates.
pub fn physical_gradients(params: &NetworkParams, map: &NormalizationMap, x: &[f64], t: f64) -> Result<(f64, f64, Vec<f64>)> {
    if x.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            what: "state",
            expected: map.dim(),
            got: x.len(),
        });
    }
    let (v, dt_hat, dx_hat) = value_and_input_grads(params, &map.normalize(x), map.normalize_time(t))?;
    let dx = dx_hat.iter().zip(&map.half_width).map(|(g, s)| g / s).collect();
    Ok((v, -dt_hat / map.horizon, dx))
}
