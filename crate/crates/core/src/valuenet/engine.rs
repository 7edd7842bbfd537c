//! Batched forward pass with tangent channels and its reverse sweep.
//!
//! Activations of a hidden layer are stored as a `width x cols` row-major
//! matrix whose columns are grouped by channel: columns `0..S` hold the value
//! channel of the `S` samples and columns `(1 + k) S..(2 + k) S` hold the
//! derivative of the activations with respect to network input `k`.
//!
//! For a hidden layer `y = W a + b`, `s = w y`, `a' = f(s)`:
//!
//! ```text
//! value:    a' = f(s)
//! tangent:  ȧ'_k = f'(s) w ẏ_k,   ẏ_k = W ȧ_k   (ȧ_k = e_k at the input)
//! reverse:  ȳ   = ā' f'(s) w + sum_k ǡ'_k f''(s) w² ẏ_k
//!           ẏ̄_k = ǡ'_k f'(s) w
//!           dW += [ȳ | ẏ̄] [a | ȧ]^T,  [ā | ǡ] = W^T [ȳ | ẏ̄]
//! ```
//!
//! Samples are processed in fixed-size chunks whose gradients are summed in
//! chunk order, so results do not depend on the worker count.

use rayon::prelude::*;

use super::NetworkParams;
use crate::error::{Error, Result};

/// Samples per chunk.
pub const CHUNK: usize = 512;

/// Network outputs at one sample (normalized coordinates).
#[derive(Clone, Copy, Debug)]
pub struct SampleView<'a> {
    pub value: f64,
    /// `dV/dt̂`; NaN when derivatives were not requested.
    pub d_time: f64,
    /// `grad_x̂ V`; empty when derivatives were not requested.
    pub d_state: &'a [f64],
}

/// Partial derivatives of a sample loss with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct SampleAdjoint {
    pub value: f64,
    pub d_time: f64,
    pub d_state: Vec<f64>,
}

impl SampleAdjoint {
    fn new(state_dim: usize) -> Self {
        Self {
            value: 0.0,
            d_time: 0.0,
            d_state: vec![0.0; state_dim],
        }
    }

    fn clear(&mut self) {
        self.value = 0.0;
        self.d_time = 0.0;
        self.d_state.fill(0.0);
    }
}

/// Summed per-sample loss terms and the parameter gradient of their total.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub terms: [f64; 2],
    pub grad: Vec<f64>,
}

/// Optional worker pool for chunk-parallel evaluation.
pub struct Workers(Option<rayon::ThreadPool>);

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count <= 1 {
            return Ok(Self(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map(|p| Self(Some(p)))
            .map_err(|e| Error::Config(format!("cannot start {count} workers: {e}")))
    }

    pub fn serial() -> Self {
        Self(None)
    }
}

struct HiddenTape {
    /// `width x cols` activations, all channels.
    act: Vec<f64>,
    /// `width x cols` pre-activations (tangent columns are read in reverse).
    pre: Vec<f64>,
    /// `width x S` values of `f'(s)` and `f''(s)`.
    d1: Vec<f64>,
    d2: Vec<f64>,
}

pub(crate) struct Tape {
    samples: usize,
    channels: usize,
    inputs: Vec<f64>,
    hidden: Vec<HiddenTape>,
    /// `channels x S` network outputs.
    out: Vec<f64>,
}

impl Tape {
    pub(crate) fn value(&self, s: usize) -> f64 {
        self.out[s]
    }

    /// `[dV/dt̂, dV/dx̂_1, ..]` of sample `s`.
    pub(crate) fn input_grads(&self, s: usize) -> Vec<f64> {
        (1..self.channels).map(|c| self.out[c * self.samples + s]).collect()
    }
}

/// `C = A B + beta C` for strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, rs: usize, cl: usize, cs: usize| (r - 1) * rs + (cl - 1) * cs;
    if k > 0 {
        assert!(last(m, rsa, k, csa) < a.len());
        assert!(last(k, rsb, n, csb) < b.len());
    }
    assert!(last(m, rsc, n, 1) < c.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Forward pass over `samples` rows of `inputs` (row-major, `input_dim` wide).
pub(crate) fn forward(params: &NetworkParams, inputs: &[f64], samples: usize, with_grads: bool) -> Tape {
    let arch = &params.arch;
    let m = arch.input_dim;
    debug_assert_eq!(inputs.len(), samples * m);
    let channels = if with_grads { 1 + m } else { 1 };
    let s_n = samples;
    let cols = channels * s_n;
    let mut hidden: Vec<HiddenTape> = Vec::with_capacity(arch.hidden_layers);

    for l in 0..arch.hidden_layers {
        let layer = params.layer(l);
        let w = layer.fan_out;
        let omega = arch.frequency(l);
        let mut pre = vec![0.0; w * cols];
        if l == 0 {
            gemm(w, m, s_n, layer.weights, (m, 1), inputs, (1, m), 0.0, &mut pre, cols);
            if with_grads {
                for j in 0..w {
                    for k in 0..m {
                        let v = layer.weights[j * m + k];
                        let at = j * cols + (1 + k) * s_n;
                        pre[at..at + s_n].fill(v);
                    }
                }
            }
        } else {
            let prev = &hidden[l - 1].act;
            gemm(w, layer.fan_in, cols, layer.weights, (layer.fan_in, 1), prev, (cols, 1), 0.0, &mut pre, cols);
        }

        let mut act = vec![0.0; w * cols];
        let mut d1 = vec![0.0; w * s_n];
        let mut d2 = if with_grads { vec![0.0; w * s_n] } else { Vec::new() };
        let act_fn = arch.activation;
        for j in 0..w {
            let b = layer.bias[j];
            let row = &mut pre[j * cols..(j + 1) * cols];
            let arow = &mut act[j * cols..(j + 1) * cols];
            let d1row = &mut d1[j * s_n..(j + 1) * s_n];
            for s in 0..s_n {
                let y = row[s] + b;
                row[s] = y;
                let (a, f1, f2) = act_fn.eval(omega * y);
                arow[s] = a;
                d1row[s] = f1;
                if with_grads {
                    d2[j * s_n + s] = f2;
                }
            }
            for c in 1..channels {
                let (src, dst) = (&row[c * s_n..(c + 1) * s_n], &mut arow[c * s_n..(c + 1) * s_n]);
                for ((o, y), f1) in dst.iter_mut().zip(src).zip(d1row.iter()) {
                    *o = f1 * omega * y;
                }
            }
        }
        hidden.push(HiddenTape { act, pre, d1, d2 });
    }

    let last = params.layer(arch.hidden_layers);
    let prev = &hidden[arch.hidden_layers - 1].act;
    let mut out = vec![0.0; cols];
    gemm(1, last.fan_in, cols, last.weights, (last.fan_in, 1), prev, (cols, 1), 0.0, &mut out, cols);
    for v in &mut out[..s_n] {
        *v += last.bias[0];
    }

    Tape {
        samples,
        channels,
        inputs: inputs.to_vec(),
        hidden,
        out,
    }
}

/// Accumulates into `grad` the parameter gradient of `sum_col adj[col] * out[col]`.
pub(crate) fn backward(params: &NetworkParams, tape: &Tape, adj: &[f64], grad: &mut [f64]) {
    let arch = &params.arch;
    let (s_n, channels) = (tape.samples, tape.channels);
    let cols = channels * s_n;
    let m = arch.input_dim;
    debug_assert_eq!(adj.len(), cols);

    // output layer
    let nl = arch.hidden_layers;
    let last = params.layer(nl);
    let width = last.fan_in;
    let off = params.layer_offset(nl);
    let prev = &tape.hidden[nl - 1].act;
    gemm(1, cols, width, adj, (cols, 1), prev, (1, cols), 1.0, &mut grad[off..off + width], width);
    grad[off + width] += adj[..s_n].iter().sum::<f64>();
    let mut abar = vec![0.0; width * cols];
    for j in 0..width {
        let wj = last.weights[j];
        for (dst, a) in abar[j * cols..(j + 1) * cols].iter_mut().zip(adj) {
            *dst = wj * a;
        }
    }

    for l in (0..nl).rev() {
        let layer = params.layer(l);
        let (fan_in, w) = (layer.fan_in, layer.fan_out);
        let omega = arch.frequency(l);
        let ht = &tape.hidden[l];
        let mut ybar = vec![0.0; w * cols];
        let omega2 = omega * omega;
        for j in 0..w {
            let (ar, yr) = (&abar[j * cols..(j + 1) * cols], &mut ybar[j * cols..(j + 1) * cols]);
            let (d1r, pr) = (&ht.d1[j * s_n..(j + 1) * s_n], &ht.pre[j * cols..(j + 1) * cols]);
            let (yv, yt) = yr.split_at_mut(s_n);
            for ((o, a), f1) in yv.iter_mut().zip(&ar[..s_n]).zip(d1r) {
                *o = a * f1 * omega;
            }
            if channels > 1 {
                let d2r = &ht.d2[j * s_n..(j + 1) * s_n];
                for c in 1..channels {
                    let (ac, pc) = (&ar[c * s_n..(c + 1) * s_n], &pr[c * s_n..(c + 1) * s_n]);
                    let yc = &mut yt[(c - 1) * s_n..c * s_n];
                    for s in 0..s_n {
                        yv[s] += ac[s] * d2r[s] * omega2 * pc[s];
                        yc[s] = ac[s] * d1r[s] * omega;
                    }
                }
            }
        }

        let off = params.layer_offset(l);
        let (gw, gb) = grad[off..off + w * fan_in + w].split_at_mut(w * fan_in);
        for j in 0..w {
            gb[j] += ybar[j * cols..j * cols + s_n].iter().sum::<f64>();
        }
        if l == 0 {
            gemm(w, s_n, m, &ybar, (cols, 1), &tape.inputs, (m, 1), 1.0, gw, m);
            for j in 0..w {
                for k in 1..channels {
                    let at = j * cols + k * s_n;
                    gw[j * m + (k - 1)] += ybar[at..at + s_n].iter().sum::<f64>();
                }
            }
        } else {
            let prev = &tape.hidden[l - 1].act;
            gemm(w, cols, fan_in, &ybar, (cols, 1), prev, (1, cols), 1.0, gw, fan_in);
            let mut next = vec![0.0; fan_in * cols];
            gemm(fan_in, w, cols, layer.weights, (1, fan_in), &ybar, (cols, 1), 0.0, &mut next, cols);
            abar = next;
        }
    }
}

fn evaluate_chunk<F>(params: &NetworkParams, inputs: &[f64], first: usize, with_grads: bool, f: &F) -> Result<BatchResult>
where
    F: Fn(usize, SampleView<'_>, &mut SampleAdjoint) -> [f64; 2] + Sync,
{
    let m = params.arch.input_dim;
    let s_n = inputs.len() / m;
    let tape = forward(params, inputs, s_n, with_grads);
    let channels = tape.channels;
    let mut adj_out = vec![0.0; channels * s_n];
    let mut adjoint = SampleAdjoint::new(if with_grads { m - 1 } else { 0 });
    let mut grads_buf = vec![0.0; m.saturating_sub(1)];
    let mut terms = [0.0; 2];
    for s in 0..s_n {
        let d_time = if with_grads {
            for k in 1..m {
                grads_buf[k - 1] = tape.out[(1 + k) * s_n + s];
            }
            tape.out[s_n + s]
        } else {
            f64::NAN
        };
        let view = SampleView {
            value: tape.out[s],
            d_time,
            d_state: if with_grads { &grads_buf } else { &[] },
        };
        adjoint.clear();
        let t = f(first + s, view, &mut adjoint);
        if !(t[0].is_finite() && t[1].is_finite()) {
            return Err(Error::NonFiniteLoss(first + s));
        }
        terms[0] += t[0];
        terms[1] += t[1];
        adj_out[s] = adjoint.value;
        if with_grads {
            adj_out[s_n + s] = adjoint.d_time;
            for k in 1..m {
                adj_out[(1 + k) * s_n + s] = adjoint.d_state[k - 1];
            }
        }
    }
    let mut grad = vec![0.0; params.len()];
    backward(params, &tape, &adj_out, &mut grad);
    Ok(BatchResult { terms, grad })
}

/// Evaluates two per-sample loss terms over `inputs` and the parameter
/// gradient of their sum. The closure receives the global sample index.
pub fn evaluate<F>(params: &NetworkParams, inputs: &[f64], with_grads: bool, workers: usize, f: F) -> Result<BatchResult>
where
    F: Fn(usize, SampleView<'_>, &mut SampleAdjoint) -> [f64; 2] + Sync,
{
    let pool = Workers::new(workers)?;
    evaluate_with(params, inputs, with_grads, &pool, f)
}

pub fn evaluate_with<F>(params: &NetworkParams, inputs: &[f64], with_grads: bool, workers: &Workers, f: F) -> Result<BatchResult>
where
    F: Fn(usize, SampleView<'_>, &mut SampleAdjoint) -> [f64; 2] + Sync,
{
    let m = params.arch.input_dim;
    if inputs.len() % m != 0 {
        return Err(Error::DimensionMismatch {
            what: "network input batch",
            expected: m,
            got: inputs.len() % m,
        });
    }
    let chunks: Vec<(usize, &[f64])> = inputs
        .chunks(CHUNK * m)
        .enumerate()
        .map(|(i, c)| (i * CHUNK, c))
        .collect();
    let results: Vec<Result<BatchResult>> = match &workers.0 {
        Some(pool) => pool.install(|| {
            chunks
                .par_iter()
                .map(|(first, c)| evaluate_chunk(params, c, *first, with_grads, &f))
                .collect()
        }),
        None => chunks
            .iter()
            .map(|(first, c)| evaluate_chunk(params, c, *first, with_grads, &f))
            .collect(),
    };
    let mut total = BatchResult {
        terms: [0.0; 2],
        grad: vec![0.0; params.len()],
    };
    for r in results {
        let r = r?;
        total.terms[0] += r.terms[0];
        total.terms[1] += r.terms[1];
        for (a, b) in total.grad.iter_mut().zip(&r.grad) {
            *a += b;
        }
    }
    Ok(total)
}

/// Values (and optionally `[dV/dt̂, grad_x̂ V]`) for every input row.
pub fn evaluate_outputs(params: &NetworkParams, inputs: &[f64], with_grads: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = params.arch.input_dim;
    let mut values = Vec::with_capacity(inputs.len() / m);
    let mut grads = Vec::new();
    for chunk in inputs.chunks(CHUNK * m) {
        let s_n = chunk.len() / m;
        let tape = forward(params, chunk, s_n, with_grads);
        values.extend_from_slice(&tape.out[..s_n]);
        if with_grads {
            grads.extend((0..s_n).map(|s| tape.input_grads(s)));
        }
    }
    Ok((values, grads))
}
