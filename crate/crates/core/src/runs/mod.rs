//! Reproducible run directories for training, grid solves, evaluation sweeps
//! and rollouts.
//!
//! A training run lives in `<root>/<name>-<hash8>-s<seed>/` and holds the
//! resolved config (`config.toml`), run metadata (`run.json`), the trainer's
//! artifacts and `checksums.txt` (SHA-256 of every artifact except the loss
//! log, whose wall-clock column varies between runs).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, GridSource, NetworkSource, ValueSource};
use crate::config::{sha256_hex, RunConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::gridsolver::{self, ValueGrid};
use crate::rollout::{self, Trajectory};
use crate::systems::SystemSpec;
use crate::trainer::{self, LossRecord, TrainOutput, FINAL_CHECKPOINT, LOSS_LOG};
use crate::valuenet::{Activation, Checkpoint};

pub const RUN_CONFIG: &str = "config.toml";
pub const RUN_META: &str = "run.json";
pub const CHECKSUMS: &str = "checksums.txt";

const CHECKPOINT_MAGIC: &[u8] = b"RTVNET01";
const GRID_MAGIC: &[u8] = b"RTGRID01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub system: String,
    pub workers: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRecord>,
    /// Artifacts were already present and training was skipped.
    pub reused: bool,
}

pub fn run_dir_name(name: &str, cfg: &RunConfig) -> Result<String> {
    Ok(format!("{name}-{}-s{}", cfg.hash8()?, cfg.schedule()?.seed))
}

/// Trains `cfg` into its run directory under `root`. A directory that
/// already holds a final checkpoint for the same resolved config is reused
/// after its checksums are verified.
pub fn train_run(cfg: &RunConfig, name: &str, root: &Path) -> Result<TrainedRun> {
    let cfg = cfg.resolved();
    let system = cfg.system.build()?;
    let schedule = cfg.schedule()?.clone();
    schedule.validate()?;
    let network = cfg.network.clone().unwrap_or_default();
    let dir = root.join(run_dir_name(name, &cfg)?);
    let config_text = cfg.to_toml()?;
    let final_path = dir.join(FINAL_CHECKPOINT);

    if final_path.exists() && fs::read_to_string(dir.join(RUN_CONFIG)).ok().as_deref() == Some(config_text.as_str()) {
        if dir.join(CHECKSUMS).exists() && !verify_checksums(&dir)? {
            return Err(Error::Format(format!("{}: artifacts do not match {CHECKSUMS}", dir.display())));
        }
        log::info!("reusing finished run in {}", dir.display());
        let checkpoint = Checkpoint::load(&final_path)?;
        let log = trainer::read_loss_log(&dir.join(LOSS_LOG))?;
        write_checksums(&dir)?;
        return Ok(TrainedRun { dir, checkpoint, log, reused: true });
    }

    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RUN_CONFIG), &config_text)?;
    let meta = RunMeta {
        name: name.to_string(),
        config_hash: cfg.hash8()?,
        seed: schedule.seed,
        system: system.name.clone(),
        workers: schedule.workers,
    };
    fs::write(dir.join(RUN_META), serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?)?;
    log::info!("training {} into {}", system.name, dir.display());
    let init = network.init(system.state_dim(), schedule.seed)?;
    let out = TrainOutput { dir: Some(dir.clone()) };
    let result = trainer::train(&system, &schedule, init, &out)?;
    write_checksums(&dir)?;
    Ok(TrainedRun {
        checkpoint: Checkpoint::load(&final_path)?,
        dir,
        log: result.log,
        reused: false,
    })
}

/// Files covered by the checksum list, sorted by name.
fn checksummed_files(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_file() && name != LOSS_LOG && name != CHECKSUMS {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

pub fn checksums(dir: &Path) -> Result<String> {
    let mut out = String::new();
    for name in checksummed_files(dir)? {
        out.push_str(&format!("{}  {name}\n", sha256_hex(&fs::read(dir.join(&name))?)));
    }
    Ok(out)
}

pub fn write_checksums(dir: &Path) -> Result<()> {
    fs::write(dir.join(CHECKSUMS), checksums(dir)?)?;
    Ok(())
}

/// True when the recorded checksums match the files on disk.
pub fn verify_checksums(dir: &Path) -> Result<bool> {
    Ok(fs::read_to_string(dir.join(CHECKSUMS))? == checksums(dir)?)
}

pub fn grid_file_name(t: f64) -> String {
    format!("value_t{t:.4}.grid")
}

/// Solves the `[grid]` block into `dir`, one file per snapshot.
pub fn grid_run(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let system = cfg.system.build()?;
    let grid = cfg.grid()?;
    let grids = gridsolver::solve(&system, &grid.resolution, &grid.snapshots)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RUN_CONFIG), cfg.to_toml()?)?;
    let mut paths = Vec::with_capacity(grids.len());
    for g in &grids {
        let path = dir.join(grid_file_name(g.time));
        g.save(&path)?;
        paths.push(path);
    }
    write_checksums(dir)?;
    Ok(paths)
}

/// One evaluation of a network against a grid snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub checkpoint: String,
    pub grid: String,
    pub system: String,
    pub activation: Activation,
    pub seed: u64,
    pub iteration: u64,
    pub time: f64,
    pub mse: f64,
    pub volume_error: f64,
    pub nodes: usize,
}

pub fn evaluate(checkpoint: &Checkpoint, checkpoint_label: &str, grid: &ValueGrid, grid_label: &str) -> Result<MetricsRecord> {
    let (activation, seed, iteration) = (checkpoint.params.arch.activation, checkpoint.params.seed, checkpoint.iteration);
    let net = NetworkSource::from_checkpoint(checkpoint.clone())?;
    let c = analysis::compare(&net, grid)?;
    Ok(MetricsRecord {
        checkpoint: checkpoint_label.to_string(),
        grid: grid_label.to_string(),
        system: net.system,
        activation,
        seed,
        iteration,
        time: grid.time,
        mse: c.mse,
        volume_error: c.volume_error,
        nodes: c.nodes,
    })
}

pub fn evaluate_files(checkpoint: &Path, grid: &Path) -> Result<MetricsRecord> {
    evaluate(
        &Checkpoint::load(checkpoint)?,
        &checkpoint.display().to_string(),
        &ValueGrid::load(grid)?,
        &grid.display().to_string(),
    )
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub activation: Activation,
    pub runs: usize,
    pub median_mse: f64,
    pub median_volume_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<SweepSummary>,
}

impl SweepReport {
    pub fn summary_for(&self, activation: Activation) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.activation == activation)
    }

    /// `records.jsonl` (one record per line) and `summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut lines = String::new();
        for r in &self.records {
            lines.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
            lines.push('\n');
        }
        fs::write(dir.join("records.jsonl"), lines)?;
        let mut csv = String::from("activation,runs,median_mse,median_volume_error\n");
        for s in &self.summary {
            csv.push_str(&format!(
                "{},{},{:e},{}\n",
                s.activation.name(),
                s.runs,
                s.median_mse,
                s.median_volume_error
            ));
        }
        fs::write(dir.join("summary.csv"), csv)?;
        Ok(())
    }
}

/// Trains every `(activation, seed)` pair of `cfg` and compares each final
/// network with `grid`. Runs are named `<name>-<activation>`.
pub fn sweep(cfg: &RunConfig, name: &str, activations: &[Activation], seeds: &[u64], grid: &ValueGrid, grid_label: &str, root: &Path) -> Result<SweepReport> {
    if activations.is_empty() || seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one activation and one seed".into()));
    }
    let mut records = Vec::new();
    let mut summary = Vec::new();
    for &activation in activations {
        let mut mses = Vec::new();
        let mut vols = Vec::new();
        for &seed in seeds {
            let mut run_cfg = cfg.resolved();
            run_cfg.network.get_or_insert_with(Default::default).activation = activation;
            run_cfg
                .schedule
                .as_mut()
                .ok_or_else(|| Error::Config("missing [schedule] block".into()))?
                .seed = seed;
            let run = train_run(&run_cfg, &format!("{name}-{}", activation.name()), root)?;
            let label = run.dir.join(FINAL_CHECKPOINT).display().to_string();
            let rec = evaluate(&run.checkpoint, &label, grid, grid_label)?;
            log::info!("{} seed {seed}: mse {:e}, volume error {:.3}%", activation.name(), rec.mse, rec.volume_error);
            mses.push(rec.mse);
            vols.push(rec.volume_error);
            records.push(rec);
        }
        summary.push(SweepSummary {
            activation,
            runs: seeds.len(),
            median_mse: median(&mses),
            median_volume_error: median(&vols),
        });
    }
    Ok(SweepReport { records, summary })
}

/// A network checkpoint or a set of grid snapshots.
pub enum LoadedSource {
    Network(NetworkSource),
    Grid(GridSource),
}

impl LoadedSource {
    /// Reads a checkpoint file, a grid file, or a directory of `.grid` files.
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let mut grids = Vec::new();
            let mut names: Vec<PathBuf> = fs::read_dir(path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            names.sort();
            for p in names.iter().filter(|p| p.extension().is_some_and(|e| e == "grid")) {
                grids.push(ValueGrid::load(p)?);
            }
            return Ok(Self::Grid(GridSource::new(grids)?));
        }
        let bytes = fs::read(path)?;
        if bytes.starts_with(CHECKPOINT_MAGIC) {
            Ok(Self::Network(NetworkSource::from_checkpoint(Checkpoint::from_bytes(&bytes)?)?))
        } else if bytes.starts_with(GRID_MAGIC) {
            Ok(Self::Grid(GridSource::new(vec![ValueGrid::from_bytes(&bytes)?])?))
        } else {
            Err(Error::Format(format!("{}: neither a checkpoint nor a grid file", path.display())))
        }
    }

    pub fn system_name(&self) -> &str {
        match self {
            Self::Network(n) => &n.system,
            Self::Grid(g) => &g.grids()[0].system,
        }
    }

    pub fn source(&self) -> &dyn ValueSource {
        match self {
            Self::Network(n) => n,
            Self::Grid(g) => g,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub file: String,
    pub start: Vec<f64>,
    pub initial_value: f64,
    pub payoff: f64,
    pub closest_approach: Option<f64>,
    pub overridden_steps: usize,
    pub truncated: bool,
}

/// Runs every start of `scenario` (optimal play, or filtered play when
/// `filtered`) and writes `trajectory_<i>.csv` files plus `summary.json`.
/// `base` resolves relative paths in the scenario.
pub fn rollout_run(
    system: &SystemSpec,
    source: &LoadedSource,
    scenario: &ScenarioConfig,
    base: &Path,
    filtered: bool,
    dir: &Path,
) -> Result<Vec<RolloutSummary>> {
    if source.system_name() != system.name {
        return Err(Error::SystemMismatch(source.system_name().to_string(), system.name.clone()));
    }
    let policy = match (&scenario.filter, filtered) {
        (Some(f), true) => Some(f.policy(base)?),
        (None, true) => return Err(Error::Config("--filtered needs a [scenario.filter] block".into())),
        (_, false) => None,
    };
    let src = source.source();
    let trajectories: Vec<Trajectory> = scenario
        .starts
        .par_iter()
        .map(|x0| match &policy {
            Some(p) => rollout::simulate_filtered(system, src, p, x0, scenario.t0, scenario.dt),
            None => rollout::simulate_optimal(system, src, x0, scenario.t0, scenario.dt),
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(dir)?;
    let mut out = Vec::with_capacity(trajectories.len());
    for (i, (tr, x0)) in trajectories.iter().zip(&scenario.starts).enumerate() {
        let file = format!("trajectory_{i:03}.csv");
        tr.write_csv(std::io::BufWriter::new(fs::File::create(dir.join(&file))?))?;
        out.push(RolloutSummary {
            file,
            start: x0.clone(),
            initial_value: tr.values[0],
            payoff: tr.payoff,
            closest_approach: tr.closest_approach(),
            overridden_steps: tr.overridden.iter().filter(|&&o| o).count(),
            truncated: tr.truncated,
        });
    }
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&out).map_err(|e| Error::Format(e.to_string()))?,
    )?;
    Ok(out)
}

#[cfg(test)]
mod tests;
