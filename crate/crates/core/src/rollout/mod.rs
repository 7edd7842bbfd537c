//! Closed-loop simulation under the value function's optimal inputs, the
//! realized min-over-time payoff, and a least-restrictive safety filter.
//!
//! Inputs are held constant over each step (zero-order hold) and the state
//! is advanced with classical fourth-order Runge-Kutta. Value queries clamp
//! time to `[0, T]`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::ValueSource;
use crate::error::{Error, Result};
use crate::systems::{Dynamics, Interval, Orientation, SystemSpec};

/// A simulated closed-loop run. Row `k` holds the state at `times[k]` and
/// the inputs applied from there.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    /// Steps where the safety input replaced the nominal one.
    pub overridden: Vec<bool>,
    pub min_distance: Vec<Option<f64>>,
    /// Minimum of the target function over the stored states.
    pub payoff: f64,
    /// The run stopped early because the state left the domain.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Smallest recorded inter-vehicle distance, if defined for the system.
    pub fn closest_approach(&self) -> Option<f64> {
        self.min_distance.iter().flatten().copied().reduce(f64::min)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        let (n, nu, nd) = (
            self.states.first().map_or(0, Vec::len),
            self.controls.first().map_or(0, Vec::len),
            self.disturbances.first().map_or(0, Vec::len),
        );
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        header.extend((0..nd).map(|i| format!("d{i}")));
        header.extend(["value", "overridden", "min_distance"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            row.extend(self.controls[k].iter().map(f64::to_string));
            row.extend(self.disturbances[k].iter().map(f64::to_string));
            row.push(self.values[k].to_string());
            row.push(u8::from(self.overridden[k]).to_string());
            row.push(self.min_distance[k].map_or(String::new(), |d| d.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Nominal control used by the safety filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NominalControl {
    Constant(Vec<f64>),
    /// Piecewise-constant schedule; each entry applies from its time until
    /// the next one. Times must increase.
    Schedule(Vec<ScheduleEntry>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub from: f64,
    pub control: Vec<f64>,
}

impl NominalControl {
    /// Reads a schedule table with a header row and columns `t, u0, u1, ..`.
    pub fn from_csv(input: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("nominal table line {}: {e}", i + 1)))?;
            if vals.len() < 2 {
                return Err(Error::Config(format!("nominal table line {} needs a time and a control", i + 1)));
            }
            entries.push(ScheduleEntry {
                from: vals[0],
                control: vals[1..].to_vec(),
            });
        }
        Ok(Self::Schedule(entries))
    }

    pub fn validate(&self, bounds: &[Interval]) -> Result<()> {
        let check = |u: &[f64]| -> Result<()> {
            if u.len() != bounds.len() {
                return Err(Error::DimensionMismatch {
                    what: "nominal control",
                    expected: bounds.len(),
                    got: u.len(),
                });
            }
            for (index, (&value, b)) in u.iter().zip(bounds).enumerate() {
                if !b.contains(value) {
                    return Err(Error::InputOutOfBounds {
                        what: "nominal control",
                        index,
                        value,
                        lo: b.lo,
                        hi: b.hi,
                    });
                }
            }
            Ok(())
        };
        match self {
            Self::Constant(u) => check(u),
            Self::Schedule(entries) => {
                if entries.is_empty() {
                    return Err(Error::Config("nominal schedule is empty".into()));
                }
                if entries.windows(2).any(|w| w[1].from <= w[0].from) {
                    return Err(Error::Config("nominal schedule times must increase".into()));
                }
                entries.iter().try_for_each(|e| check(&e.control))
            }
        }
    }

    /// Control in effect at time `t` (the first entry also covers earlier times).
    pub fn at(&self, t: f64) -> &[f64] {
        match self {
            Self::Constant(u) => u,
            Self::Schedule(entries) => {
                let i = entries.partition_point(|e| e.from <= t).max(1) - 1;
                &entries[i].control
            }
        }
    }
}

/// Least-restrictive filter: the nominal control runs while the safety margin
/// exceeds `margin`; otherwise the optimal input takes over for that step.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterPolicy {
    pub nominal: NominalControl,
    pub margin: f64,
}

impl FilterPolicy {
    pub fn new(nominal: NominalControl, margin: f64) -> Result<Self> {
        if margin.is_nan() || margin < 0.0 && margin.is_finite() {
            return Err(Error::Config(format!("filter margin must be non-negative, got {margin}")));
        }
        Ok(Self { nominal, margin })
    }
}

/// Distance to the nearest other vehicle, for systems where that is defined.
pub fn min_pairwise_distance(system: &SystemSpec, x: &[f64]) -> Option<f64> {
    let d = |a: &[f64], b: &[f64]| (a[0] - b[0]).hypot(a[1] - b[1]);
    match &system.dynamics {
        Dynamics::Air3d(_) => Some(x[0].hypot(x[1])),
        Dynamics::TwoVehicle(_) => Some(d(&x[0..2], &x[3..5])),
        Dynamics::ThreeVehicle(_) => Some(d(&x[0..2], &x[3..5]).min(d(&x[0..2], &x[6..8])).min(d(&x[3..5], &x[6..8]))),
        Dynamics::NarrowPassage(p) => {
            let (c1, c2) = ([x[0], x[1]], [x[5], x[6]]);
            Some(d(&c1, &c2).min(d(&c1, &p.stranded)).min(d(&c2, &p.stranded)))
        }
        _ => None,
    }
}

/// Minimum of the target function over the stored states.
pub fn payoff(traj: &Trajectory, system: &SystemSpec) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::Config("payoff of an empty trajectory".into()));
    }
    traj.states
        .iter()
        .map(|x| system.target_l(x))
        .try_fold(f64::INFINITY, |m, l| Ok(m.min(l?)))
}

fn rk4_step(system: &SystemSpec, x: &[f64], u: &[f64], d: &[f64], dt: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut y = vec![0.0; n];
    system.flow_unchecked(x, u, d, &mut k[0]);
    for (stage, c) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
        for i in 0..n {
            y[i] = x[i] + c * dt * k[stage - 1][i];
        }
        system.flow_unchecked(&y, u, d, &mut k[stage]);
    }
    (0..n)
        .map(|i| x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

/// Sign convention: the margin is `V` for avoid problems and `-V` for
/// reach-avoid problems, so "small margin" always means "near losing".
fn safety_margin(system: &SystemSpec, v: f64) -> f64 {
    match system.orientation {
        Orientation::AvoidTarget => v,
        Orientation::ReachTarget => -v,
    }
}

fn check_start(system: &SystemSpec, x0: &[f64]) -> Result<()> {
    if x0.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: system.state_dim(),
            got: x0.len(),
        });
    }
    for (dim, (&value, iv)) in x0.iter().zip(&system.domain).enumerate() {
        if !system.is_periodic(dim) && !iv.contains(value) {
            return Err(Error::OutOfDomain { dim, value, lo: iv.lo, hi: iv.hi });
        }
    }
    Ok(())
}

fn simulate(system: &SystemSpec, source: &dyn ValueSource, filter: Option<&FilterPolicy>, x0: &[f64], t0: f64, dt: f64) -> Result<Trajectory> {
    system.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    check_start(system, x0)?;
    if source.state_dim() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "value source",
            expected: system.state_dim(),
            got: source.state_dim(),
        });
    }
    if let Some(f) = filter {
        f.nominal.validate(&system.control_bounds)?;
    }
    let horizon = system.horizon;
    let steps = ((horizon - t0) / dt - 1e-9).ceil().max(0.0) as usize;
    let (nu, nd) = (system.control_dim(), system.disturbance_dim());
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::new(),
        disturbances: Vec::new(),
        values: Vec::new(),
        overridden: Vec::new(),
        min_distance: Vec::new(),
        payoff: f64::INFINITY,
        truncated: false,
    };
    let mut x = x0.to_vec();
    system.wrap_state(&mut x);
    let (mut u, mut d) = (vec![0.0; nu], vec![0.0; nd]);
    for k in 0..=steps {
        let t = t0 + k as f64 * dt;
        let tq = t.clamp(0.0, horizon);
        let (v, grad) = source.value_and_gradient(&x, tq)?;
        system.optimal_inputs_into(&x, &grad, &mut u, &mut d);
        let mut overridden = false;
        if let Some(f) = filter {
            if safety_margin(system, v) <= f.margin {
                overridden = true;
            } else {
                u.copy_from_slice(f.nominal.at(t));
            }
        }
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.controls.push(u.clone());
        traj.disturbances.push(d.clone());
        traj.values.push(v);
        traj.overridden.push(overridden);
        traj.min_distance.push(min_pairwise_distance(system, &x));
        traj.payoff = traj.payoff.min(system.target_unchecked(&x));
        if k == steps {
            break;
        }
        let mut next = rk4_step(system, &x, &u, &d, dt);
        system.wrap_state(&mut next);
        if !system.in_domain(&next) {
            traj.truncated = true;
            break;
        }
        x = next;
    }
    Ok(traj)
}

/// Both players use the inputs that are optimal for the value source.
pub fn simulate_optimal(system: &SystemSpec, source: &dyn ValueSource, x0: &[f64], t0: f64, dt: f64) -> Result<Trajectory> {
    simulate(system, source, None, x0, t0, dt)
}

/// The nominal control runs until the margin is reached, then the optimal
/// input overrides it; the disturbance always plays its optimal input.
pub fn simulate_filtered(
    system: &SystemSpec,
    source: &dyn ValueSource,
    policy: &FilterPolicy,
    x0: &[f64],
    t0: f64,
    dt: f64,
) -> Result<Trajectory> {
    simulate(system, source, Some(policy), x0, t0, dt)
}
