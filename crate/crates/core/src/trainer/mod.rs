//! Self-supervised training of the value network on the terminal-value HJI
//! variational inequality.
//!
//! Per sample the loss has a boundary term `h1 = |V - l|` (terminal samples
//! only) and a PDE term `h2 = |min{D_t V + H(x, grad V), l - V}|` (reach-avoid
//! problems wrap the min in `max{., g - V}`). The batch loss is
//! `mean(h1) + lambda * mean(h2)`.
//!
//! Training first fits the terminal condition with `lambda = 0`, then sweeps a
//! time window backward from `T`: at curriculum step `k` of `K` times are drawn
//! with `t̂ ∈ [0, k/K]`, and a fixed fraction of every batch stays pinned at
//! `t = T`.

mod adam;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::systems::SystemSpec;
use crate::valuenet::engine::{self, SampleAdjoint, SampleView, Workers};
use crate::valuenet::{Checkpoint, NetworkParams, NormalizationMap};

pub use adam::{adam_step, AdamConfig, AdamState};

/// How the PDE-term weight is chosen once pretraining ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub enum LambdaPolicy {
    /// Ratio of the mean terms on the first curriculum batch, then frozen.
    AutoBalance,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRepr {
    Name(String),
    Value(f64),
}

impl TryFrom<LambdaRepr> for LambdaPolicy {
    type Error = String;

    fn try_from(r: LambdaRepr) -> std::result::Result<Self, String> {
        match r {
            LambdaRepr::Name(s) if s == "auto" => Ok(Self::AutoBalance),
            LambdaRepr::Name(s) => Err(format!("lambda must be \"auto\" or a number, got {s:?}")),
            LambdaRepr::Value(v) if v >= 0.0 && v.is_finite() => Ok(Self::Fixed(v)),
            LambdaRepr::Value(v) => Err(format!("lambda must be non-negative, got {v}")),
        }
    }
}

impl From<LambdaPolicy> for LambdaRepr {
    fn from(p: LambdaPolicy) -> Self {
        match p {
            LambdaPolicy::AutoBalance => Self::Name("auto".into()),
            LambdaPolicy::Fixed(v) => Self::Value(v),
        }
    }
}

/// Largest state dimension the loss kernel supports.
pub const MAX_STATE_DIM: usize = 16;

pub const LAMBDA_MIN: f64 = 1e-2;
pub const LAMBDA_MAX: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub pretrain_iters: usize,
    pub curriculum_iters: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaPolicy,
    #[serde(default = "default_terminal_fraction")]
    pub terminal_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_lambda() -> LambdaPolicy {
    LambdaPolicy::AutoBalance
}
fn default_terminal_fraction() -> f64 {
    0.1
}
fn default_checkpoint_every() -> usize {
    1000
}
fn default_workers() -> usize {
    1
}

impl TrainSchedule {
    pub fn new(batch_size: usize, pretrain_iters: usize, curriculum_iters: usize, seed: u64) -> Self {
        Self {
            batch_size,
            pretrain_iters,
            curriculum_iters,
            learning_rate: default_lr(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            lambda: default_lambda(),
            terminal_fraction: default_terminal_fraction(),
            seed,
            checkpoint_every: default_checkpoint_every(),
            workers: default_workers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        let positive = [self.learning_rate, self.adam_eps];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("learning_rate and adam_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.terminal_fraction) {
            return bad("terminal_fraction must lie in [0, 1]");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn total_iters(&self) -> usize {
        self.pretrain_iters + self.curriculum_iters
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Curriculum,
}

/// Training samples in physical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub dim: usize,
    /// Row-major `len x dim`.
    pub states: Vec<f64>,
    pub times: Vec<f64>,
    /// `true` exactly when the sample time equals the horizon.
    pub terminal: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draws a batch. Pretraining batches sit entirely at `t = T`; curriculum
/// batch `k` pins the first `round(rho N)` samples at `T` and draws the rest
/// with `t̂` uniform in `[0, k/K]`. Each `(phase, k)` has its own RNG stream.
pub fn sample_batch(schedule: &TrainSchedule, system: &SystemSpec, k: usize, phase: Phase) -> Result<Batch> {
    let n = system.state_dim();
    let big_k = schedule.curriculum_iters;
    let (tag, window) = match phase {
        Phase::Pretrain => (0u64, 0.0),
        Phase::Curriculum => {
            if k > big_k {
                return Err(Error::Config(format!("curriculum step {k} exceeds {big_k}")));
            }
            (1u64, if big_k == 0 { 0.0 } else { k as f64 / big_k as f64 })
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(tag << 40 | k as u64);

    let size = schedule.batch_size;
    let pinned = match phase {
        Phase::Pretrain => size,
        Phase::Curriculum => (schedule.terminal_fraction * size as f64).round() as usize,
    };
    let horizon = system.horizon;
    let mut states = Vec::with_capacity(size * n);
    let mut times = Vec::with_capacity(size);
    for i in 0..size {
        for iv in &system.domain {
            let u: f64 = rng.random();
            states.push(iv.lo + u * iv.width());
        }
        let t = if i < pinned {
            horizon
        } else {
            let t_hat = window * rng.random::<f64>();
            horizon * (1.0 - t_hat)
        };
        times.push(t);
    }
    let terminal = times.iter().map(|&t| t == horizon).collect();
    Ok(Batch {
        dim: n,
        states,
        times,
        terminal,
    })
}

/// Residual terms of one sample together with their partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residual {
    pub h1: f64,
    pub h2: f64,
    pub dh1_dv: f64,
    pub dh2_dv: f64,
    pub dh2_ddt: f64,
    /// `dh2/d(grad_x V)` equals this factor times the optimal-play flow.
    pub dh2_dp_scale: f64,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Residual and subgradient selection. Ties in the inner min pick the PDE
/// branch, ties in the outer max pick the obstacle branch, and `|0|` has zero
/// slope.
fn residual_parts(system: &SystemSpec, x: &[f64], terminal: bool, v: f64, dtv: f64, grad: &[f64], g: Option<f64>) -> Residual {
    let l = system.target_unchecked(x);
    let boundary = match g {
        Some(g) => l.max(g),
        None => l,
    };
    let (h1, dh1_dv) = if terminal {
        ((v - boundary).abs(), sign(v - boundary))
    } else {
        (0.0, 0.0)
    };
    let pde = dtv + system.hamiltonian(x, grad);
    let clamp = l - v;
    // (value, d/dv, d/dD_tV, d/dp scale) of the selected branch
    let mut branch = if pde <= clamp {
        (pde, 0.0, 1.0, 1.0)
    } else {
        (clamp, -1.0, 0.0, 0.0)
    };
    if let Some(g) = g {
        if g - v >= branch.0 {
            branch = (g - v, -1.0, 0.0, 0.0);
        }
    }
    let s = sign(branch.0);
    Residual {
        h1,
        h2: branch.0.abs(),
        dh1_dv,
        dh2_dv: s * branch.1,
        dh2_ddt: s * branch.2,
        dh2_dp_scale: s * branch.3,
    }
}

/// `(h1, h2)` for a reachable-tube problem; gradients are physical.
pub fn residual_brt(system: &SystemSpec, x: &[f64], terminal: bool, value: f64, d_t: f64, grad: &[f64]) -> (f64, f64) {
    let r = residual_parts(system, x, terminal, value, d_t, grad, None);
    (r.h1, r.h2)
}

/// `(h1, h2)` for a reach-avoid problem; fails when the system has no obstacle.
pub fn residual_brat(system: &SystemSpec, x: &[f64], terminal: bool, value: f64, d_t: f64, grad: &[f64]) -> Result<(f64, f64)> {
    let g = system
        .obstacle_unchecked(x)
        .ok_or_else(|| Error::NoObstacle(system.name.clone()))?;
    let r = residual_parts(system, x, terminal, value, d_t, grad, Some(g));
    Ok((r.h1, r.h2))
}

/// Full residual with partials; reach-avoid form whenever the system has an
/// obstacle.
pub fn residual(system: &SystemSpec, x: &[f64], terminal: bool, value: f64, d_t: f64, grad: &[f64]) -> Residual {
    residual_parts(system, x, terminal, value, d_t, grad, system.obstacle_unchecked(x))
}

/// `mean h1 / (mean h2 + 1e-12)` clamped to `[1e-2, 1e4]`.
pub fn auto_lambda(h1_mean: f64, h2_mean: f64) -> f64 {
    if h2_mean == 0.0 {
        log::warn!("PDE term is zero on the first curriculum batch; using lambda = {LAMBDA_MAX}");
        return LAMBDA_MAX;
    }
    (h1_mean / (h2_mean + 1e-12)).clamp(LAMBDA_MIN, LAMBDA_MAX)
}

/// Mean terms, total loss and its parameter gradient over one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub h1: f64,
    pub h2: f64,
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn batch_loss(
    params: &NetworkParams,
    system: &SystemSpec,
    map: &NormalizationMap,
    batch: &Batch,
    lambda: f64,
    workers: &Workers,
) -> Result<BatchLoss> {
    let n = batch.dim;
    let m = n + 1;
    if n != map.dim() || m != params.arch.input_dim {
        return Err(Error::DimensionMismatch {
            what: "batch state",
            expected: params.arch.input_dim - 1,
            got: n,
        });
    }
    if n > MAX_STATE_DIM {
        return Err(Error::Config(format!("state dimension {n} exceeds {MAX_STATE_DIM}")));
    }
    let size = batch.len();
    let mut inputs = vec![0.0; size * m];
    for i in 0..size {
        map.network_input(batch.state(i), batch.times[i], &mut inputs[i * m..(i + 1) * m]);
    }
    let inv_n = 1.0 / size as f64;
    let inv_t = 1.0 / map.horizon;
    let closure = |i: usize, out: SampleView<'_>, adj: &mut SampleAdjoint| {
        let x = batch.state(i);
        let mut buf = [0.0; MAX_STATE_DIM];
        let grad = &mut buf[..n];
        for (k, g) in grad.iter_mut().enumerate() {
            *g = out.d_state[k] / map.half_width[k];
        }
        let dtv = -out.d_time * inv_t;
        let r = residual(system, x, batch.terminal[i], out.value, dtv, grad);
        adj.value = (r.dh1_dv + lambda * r.dh2_dv) * inv_n;
        adj.d_time = -lambda * r.dh2_ddt * inv_t * inv_n;
        if r.dh2_dp_scale != 0.0 && lambda != 0.0 {
            let mut f = [0.0; MAX_STATE_DIM];
            system.hamiltonian_grad_p(x, grad, &mut f[..n]);
            let c = lambda * r.dh2_dp_scale * inv_n;
            for k in 0..n {
                adj.d_state[k] = c * f[k] / map.half_width[k];
            }
        }
        [r.h1, r.h2]
    };
    let res = engine::evaluate_with(params, &inputs, true, workers, closure)?;
    let (h1, h2) = (res.terms[0] * inv_n, res.terms[1] * inv_n);
    Ok(BatchLoss {
        h1,
        h2,
        loss: h1 + lambda * h2,
        grad: res.grad,
    })
}

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub h1: f64,
    pub h2: f64,
    pub lambda: f64,
    pub wall_time: f64,
}

impl LossRecord {
    pub fn total(&self) -> f64 {
        self.h1 + self.lambda * self.h2
    }
}

pub const LOSS_LOG_HEADER: &str = "iteration,h1,h2,lambda,wall_time";

pub fn write_loss_log(path: &Path, log: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{LOSS_LOG_HEADER}")?;
    for r in log {
        writeln!(f, "{},{:e},{:e},{:e},{:.3}", r.iteration, r.h1, r.h2, r.lambda, r.wall_time)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_HEADER) {
        return Err(Error::Format(format!("{}: unexpected loss log header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Format(format!("{}: bad loss log row `{line}`", path.display()));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LossRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                h1: num(f[1])?,
                h2: num(f[2])?,
                lambda: num(f[3])?,
                wall_time: num(f[4])?,
            })
        })
        .collect()
}

/// Where and how often training artifacts are written.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub params: NetworkParams,
    pub map: NormalizationMap,
    pub lambda: f64,
    pub log: Vec<LossRecord>,
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:07}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const LOSS_LOG: &str = "loss_log.csv";

/// Pretraining followed by the curriculum. Artifacts go to `out.dir` when set:
/// a checkpoint every `checkpoint_every` iterations, `final.ckpt` and
/// `loss_log.csv`. A non-finite loss or gradient aborts with the last
/// checkpoint written.
pub fn train(system: &SystemSpec, schedule: &TrainSchedule, init: NetworkParams, out: &TrainOutput) -> Result<TrainResult> {
    system.validate()?;
    schedule.validate()?;
    if init.arch.input_dim != system.state_dim() + 1 {
        return Err(Error::DimensionMismatch {
            what: "network input",
            expected: system.state_dim() + 1,
            got: init.arch.input_dim,
        });
    }
    if let Some(dir) = &out.dir {
        fs::create_dir_all(dir)?;
    }
    let map = NormalizationMap::for_system(system);
    let workers = Workers::new(schedule.workers)?;
    let adam_cfg = schedule.adam();
    let mut params = init;
    let mut adam = AdamState::new(params.len());
    let mut log = Vec::with_capacity(schedule.total_iters());
    let mut last_good: Option<PathBuf> = None;
    let mut lambda = 0.0;
    let start = Instant::now();

    let save = |params: &NetworkParams, iteration: usize, lambda: f64, name: &str| -> Result<Option<PathBuf>> {
        let Some(dir) = &out.dir else { return Ok(None) };
        let mut ck = Checkpoint::new(params.clone(), Some(map.clone()), iteration as u64, system.name.clone());
        ck.lambda = Some(lambda);
        let path = dir.join(name);
        ck.save(&path)?;
        Ok(Some(path))
    };

    for it in 0..schedule.total_iters() {
        let (phase, k) = if it < schedule.pretrain_iters {
            (Phase::Pretrain, it)
        } else {
            (Phase::Curriculum, it - schedule.pretrain_iters + 1)
        };
        let batch = sample_batch(schedule, system, k, phase)?;
        if phase == Phase::Curriculum && k == 1 {
            lambda = match schedule.lambda {
                LambdaPolicy::Fixed(v) => v,
                LambdaPolicy::AutoBalance => {
                    let probe = batch_loss(&params, system, &map, &batch, 0.0, &workers)
                        .map_err(|e| diverged(e, it, &last_good))?;
                    auto_lambda(probe.h1, probe.h2)
                }
            };
            log::info!("curriculum starts with lambda = {lambda:e}");
        }
        let bl = batch_loss(&params, system, &map, &batch, lambda, &workers).map_err(|e| diverged(e, it, &last_good))?;
        if !bl.loss.is_finite() {
            return Err(diverged(Error::NonFiniteLoss(0), it, &last_good));
        }
        adam_step(params.as_mut_slice(), &bl.grad, &mut adam, schedule.learning_rate, &adam_cfg)
            .map_err(|e| diverged(e, it, &last_good))?;
        log.push(LossRecord {
            iteration: it,
            h1: bl.h1,
            h2: bl.h2,
            lambda,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if (it + 1) % schedule.checkpoint_every == 0 {
            if let Some(p) = save(&params, it + 1, lambda, &checkpoint_name(it + 1))? {
                last_good = Some(p);
            }
            if let Some(dir) = &out.dir {
                write_loss_log(&dir.join(LOSS_LOG), &log)?;
            }
            log::info!("iteration {}: h1 {:.3e} h2 {:.3e}", it + 1, bl.h1, bl.h2);
        }
    }
    save(&params, schedule.total_iters(), lambda, FINAL_CHECKPOINT)?;
    if let Some(dir) = &out.dir {
        write_loss_log(&dir.join(LOSS_LOG), &log)?;
    }
    Ok(TrainResult { params, map, lambda, log })
}

fn diverged(e: Error, iteration: usize, last_good: &Option<PathBuf>) -> Error {
    match e {
        Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_) | Error::NonFiniteParameter(_) => {
            log::error!("training diverged at iteration {iteration}: {e}");
            Error::Diverged {
                iteration,
                last_good: last_good.clone(),
            }
        }
        other => other,
    }
}
