//! Comparisons between learned and grid value functions, slice exports and
//! the pairwise-union approximation for the three-vehicle game.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridsolver::ValueGrid;
use crate::systems::{wrap_angle, SystemSpec};
use crate::valuenet::{self, engine, Checkpoint, NetworkParams, NormalizationMap};

/// Anything that can report `V(x, t)` and `grad_x V(x, t)`.
pub trait ValueSource: Sync {
    fn state_dim(&self) -> usize;

    fn value(&self, x: &[f64], t: f64) -> Result<f64>;

    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    fn value_and_gradient(&self, x: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(x, t)?, self.gradient(x, t)?))
    }
}

/// Trained network with its input normalization.
#[derive(Clone, Debug)]
pub struct NetworkSource {
    pub params: NetworkParams,
    pub map: NormalizationMap,
    pub system: String,
}

impl NetworkSource {
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let map = ck
            .map
            .ok_or_else(|| Error::Format("checkpoint has no normalization map".into()))?;
        Ok(Self {
            params: ck.params,
            map,
            system: ck.system,
        })
    }

    /// Values at many `(x, t)` rows (row-major states) in one batched pass.
    pub fn values_at(&self, states: &[f64], t: f64) -> Result<Vec<f64>> {
        self.params.check_finite()?;
        let n = self.map.dim();
        let mut z = vec![0.0; states.len() / n * (n + 1)];
        for (row, x) in z.chunks_mut(n + 1).zip(states.chunks(n)) {
            self.map.network_input(x, t, row);
        }
        Ok(engine::evaluate_outputs(&self.params, &z, false)?.0)
    }
}

impl ValueSource for NetworkSource {
    fn state_dim(&self) -> usize {
        self.map.dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        self.params.forward(&self.map.normalize(x), self.map.normalize_time(t))
    }

    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(valuenet::physical_gradients(&self.params, &self.map, x, t)?.2)
    }

    fn value_and_gradient(&self, x: &[f64], t: f64) -> Result<(f64, Vec<f64>)> {
        let (v, _, g) = valuenet::physical_gradients(&self.params, &self.map, x, t)?;
        Ok((v, g))
    }
}

/// Grid snapshots interpolated multilinearly in space and linearly in time.
/// Queries outside the covered time span use the nearest snapshot.
#[derive(Clone, Debug)]
pub struct GridSource {
    grids: Vec<ValueGrid>,
}

impl GridSource {
    pub fn new(mut grids: Vec<ValueGrid>) -> Result<Self> {
        let first = grids.first().ok_or_else(|| Error::Grid("no grid snapshots".into()))?;
        if grids.iter().any(|g| g.axes != first.axes) {
            return Err(Error::Grid("grid snapshots have different axes".into()));
        }
        grids.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { grids })
    }

    pub fn grids(&self) -> &[ValueGrid] {
        &self.grids
    }

    /// `(lower, upper, weight of upper)` snapshots bracketing `t`.
    fn bracket(&self, t: f64) -> (&ValueGrid, &ValueGrid, f64) {
        let g = &self.grids;
        if t <= g[0].time || g.len() == 1 {
            return (&g[0], &g[0], 0.0);
        }
        let last = g.len() - 1;
        if t >= g[last].time {
            return (&g[last], &g[last], 0.0);
        }
        let i = g.partition_point(|s| s.time <= t) - 1;
        let w = (t - g[i].time) / (g[i + 1].time - g[i].time);
        (&g[i], &g[i + 1], w)
    }
}

impl ValueSource for GridSource {
    fn state_dim(&self) -> usize {
        self.grids[0].dim()
    }

    fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        let (a, b, w) = self.bracket(t);
        let va = a.interpolate(x)?;
        if w == 0.0 {
            return Ok(va);
        }
        Ok((1.0 - w) * va + w * b.interpolate(x)?)
    }

    fn gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let (a, b, w) = self.bracket(t);
        let ga = a.gradient(x)?;
        if w == 0.0 {
            return Ok(ga);
        }
        let gb = b.gradient(x)?;
        Ok(ga.iter().zip(&gb).map(|(p, q)| (1.0 - w) * p + w * q).collect())
    }
}

/// Mean squared difference and sign-disagreement percentage at grid nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mse: f64,
    /// Percentage of all grid nodes whose tube membership differs.
    pub volume_error: f64,
    pub nodes: usize,
}

/// Compares a field given at every grid node with the grid.
pub fn compare_values(values: &[f64], grid: &ValueGrid) -> Result<Comparison> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            what: "node values",
            expected: grid.len(),
            got: values.len(),
        });
    }
    let mut sq = 0.0;
    let mut wrong = 0usize;
    for (a, b) in values.iter().zip(&grid.values) {
        sq += (a - b) * (a - b);
        if (*a <= 0.0) != (*b <= 0.0) {
            wrong += 1;
        }
    }
    let n = grid.len();
    Ok(Comparison {
        mse: sq / n as f64,
        volume_error: 100.0 * wrong as f64 / n as f64,
        nodes: n,
    })
}

fn check_system(net: &NetworkSource, grid: &ValueGrid) -> Result<()> {
    if net.system != grid.system {
        return Err(Error::SystemMismatch(net.system.clone(), grid.system.clone()));
    }
    if net.map.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            what: "grid dimension",
            expected: net.map.dim(),
            got: grid.dim(),
        });
    }
    Ok(())
}

fn grid_nodes(grid: &ValueGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.len() * grid.dim()];
    for (i, row) in out.chunks_mut(grid.dim()).enumerate() {
        grid.node_into(i, row);
    }
    out
}

/// Network vs grid at the grid's time stamp.
pub fn compare(net: &NetworkSource, grid: &ValueGrid) -> Result<Comparison> {
    check_system(net, grid)?;
    let values = net.values_at(&grid_nodes(grid), grid.time)?;
    compare_values(&values, grid)
}

pub fn mse(net: &NetworkSource, grid: &ValueGrid) -> Result<f64> {
    Ok(compare(net, grid)?.mse)
}

/// Percentage of grid nodes whose tube membership (`V <= 0`) differs.
pub fn brt_volume_error(net: &NetworkSource, grid: &ValueGrid) -> Result<f64> {
    Ok(compare(net, grid)?.volume_error)
}

/// Writes a `resolution x resolution` slice over two free dimensions
/// spanning the system domain; all other coordinates come from `base`.
/// Columns: the two free coordinates, value, and tube membership.
pub fn export_slice(
    source: &dyn ValueSource,
    system: &SystemSpec,
    base: &[f64],
    free: [usize; 2],
    resolution: usize,
    t: f64,
    mut out: impl Write,
) -> Result<()> {
    let n = system.state_dim();
    if base.len() != n || source.state_dim() != n {
        return Err(Error::DimensionMismatch {
            what: "slice base state",
            expected: n,
            got: base.len(),
        });
    }
    if free[0] == free[1] || free.iter().any(|&d| d >= n) {
        return Err(Error::Config(format!("slice needs two distinct dimensions below {n}, got {free:?}")));
    }
    if resolution < 2 {
        return Err(Error::Config("slice resolution must be at least 2".into()));
    }
    let axis = |d: usize, i: usize| {
        let iv = system.domain[d];
        iv.lo + iv.width() * i as f64 / (resolution - 1) as f64
    };
    writeln!(out, "x{},x{},value,in_brt", free[0], free[1])?;
    let mut x = base.to_vec();
    for i in 0..resolution {
        for j in 0..resolution {
            x[free[0]] = axis(free[0], i);
            x[free[1]] = axis(free[1], j);
            let v = source.value(&x, t)?;
            writeln!(out, "{},{},{},{}", x[free[0]], x[free[1]], v, u8::from(v <= 0.0))?;
        }
    }
    Ok(())
}

/// Relative state of vehicle `j` in the frame of vehicle `i`:
/// `(R(-th_i) (p_j - p_i), th_j - th_i)` with the heading wrapped to `[-pi, pi)`.
pub fn relative_state(i: &[f64], j: &[f64]) -> [f64; 3] {
    let (dx, dy) = (j[0] - i[0], j[1] - i[1]);
    let (s, c) = i[2].sin_cos();
    [c * dx + s * dy, -s * dx + c * dy, wrap_angle(j[2] - i[2], -std::f64::consts::PI)]
}

/// Joint two-vehicle state that puts the evader at the origin with zero
/// heading and the pursuer at the given relative state.
pub fn joint_from_relative(rel: &[f64]) -> [f64; 6] {
    [rel[0], rel[1], rel[2], 0.0, 0.0, 0.0]
}

/// Minimum over the three vehicle pairs of the relative-coordinate value
/// (union of the pairwise tubes). Pairs whose relative position leaves the
/// relative domain fall back to that pair's target function.
pub fn pairwise_union_value(source: &dyn ValueSource, relative: &SystemSpec, joint: &[f64], t: f64) -> Result<f64> {
    if joint.len() != 9 {
        return Err(Error::DimensionMismatch {
            what: "three-vehicle state",
            expected: 9,
            got: joint.len(),
        });
    }
    let (e1, e2, p) = (&joint[0..3], &joint[3..6], &joint[6..9]);
    let mut best = f64::INFINITY;
    for (a, b) in [(e1, p), (e2, p), (e1, e2)] {
        best = best.min(pair_value(source, relative, &relative_state(a, b), t)?);
    }
    Ok(best)
}

/// Values of each pair `(e1, p), (e2, p), (e1, e2)` in that order.
pub fn pairwise_values(source: &dyn ValueSource, relative: &SystemSpec, joint: &[f64], t: f64) -> Result<[f64; 3]> {
    let (e1, e2, p) = (&joint[0..3], &joint[3..6], &joint[6..9]);
    Ok([
        pair_value(source, relative, &relative_state(e1, p), t)?,
        pair_value(source, relative, &relative_state(e2, p), t)?,
        pair_value(source, relative, &relative_state(e1, e2), t)?,
    ])
}

fn pair_value(source: &dyn ValueSource, relative: &SystemSpec, rel: &[f64; 3], t: f64) -> Result<f64> {
    if relative.in_domain(rel) {
        source.value(rel, t)
    } else {
        relative.target_l(rel)
    }
}

/// Values of a joint-coordinate two-vehicle network projected onto every
/// node of a relative-coordinate grid.
pub fn project_two_vehicle(net: &NetworkSource, grid: &ValueGrid) -> Result<Vec<f64>> {
    if net.map.dim() != 6 || grid.dim() != 3 {
        return Err(Error::DimensionMismatch {
            what: "projection dimensions (6 -> 3)",
            expected: 6,
            got: net.map.dim(),
        });
    }
    let rel = grid_nodes(grid);
    let joint: Vec<f64> = rel.chunks(3).flat_map(joint_from_relative).collect();
    net.values_at(&joint, grid.time)
}

#[cfg(test)]
mod tests;
