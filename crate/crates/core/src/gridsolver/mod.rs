//! Grid level-set solver for the terminal-value HJI variational inequality,
//! used as the reference solution for low-dimensional systems.
//!
//! Starting from `V(., T) = l` (or `max{l, g}`), each backward step is
//!
//! ```text
//! V(x, t - dt) = min( l(x), V(x, t) + dt * min(Ĥ(x), 0) )   [then max with g]
//! Ĥ(x)         = H(x, p_c) + sum_i a_i (p+_i - p-_i) / 2
//! ```
//!
//! with central differences `p_c`, one-sided differences `p±`, the global
//! Lax-Friedrichs coefficients `a_i = max |f_i|` over nodes and input corners,
//! and `dt = 0.5 / sum_i (a_i / dx_i)`. Non-periodic edges use linearly
//! extrapolated ghost nodes; periodic axes wrap.
//!
//! The exact tube only grows backward in time, and away from the box edges
//! the scheme is monotone so `Ĥ <= 0` wherever `V < l` anyway. At the edges
//! the extrapolated ghost nodes cancel the dissipation and can produce small
//! spurious increases; clamping `Ĥ` at zero suppresses them.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binfmt;
use crate::error::{Error, Result};
use crate::systems::SystemSpec;

/// Largest state dimension the grid solver accepts.
pub const MAX_GRID_DIM: usize = 4;

const MAGIC: &[u8; 8] = b"RTGRID01";

/// One grid axis. Non-periodic axes place `count` nodes on `[lo, hi]`
/// including both ends; periodic axes place them on `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub periodic: bool,
}

impl GridAxis {
    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.count as f64
        } else {
            (self.hi - self.lo) / (self.count - 1) as f64
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        if !self.periodic && i + 1 == self.count {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    /// Lower cell index and fractional offset of `v`, or an error when a
    /// non-periodic coordinate falls outside the axis.
    fn locate(&self, dim: usize, v: f64) -> Result<(usize, usize, f64)> {
        let dx = self.spacing();
        if self.periodic {
            let period = self.hi - self.lo;
            let w = v - period * ((v - self.lo) / period).floor();
            let u = (w - self.lo) / dx;
            let i0 = (u.floor() as usize).min(self.count - 1);
            let frac = (u - i0 as f64).clamp(0.0, 1.0);
            return Ok((i0, (i0 + 1) % self.count, frac));
        }
        let tol = 1e-9 * dx;
        if !(v >= self.lo - tol && v <= self.hi + tol) {
            return Err(Error::OutOfDomain {
                dim,
                value: v,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let u = ((v - self.lo) / dx).clamp(0.0, (self.count - 1) as f64);
        let i0 = (u.floor() as usize).min(self.count - 2);
        Ok((i0, i0 + 1, u - i0 as f64))
    }
}

/// Node values of a scalar field on a rectangular grid at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    pub system: String,
    pub axes: Vec<GridAxis>,
    /// Row-major values (last axis fastest).
    pub values: Vec<f64>,
    pub time: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    system: String,
    axes: Vec<GridAxis>,
    time: f64,
}

impl ValueGrid {
    /// Grid over the system's domain with `resolution[i]` nodes per axis,
    /// filled with `f`.
    pub fn for_system(system: &SystemSpec, resolution: &[usize], time: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let n = system.state_dim();
        if n > MAX_GRID_DIM {
            return Err(Error::Grid(format!(
                "{}-dimensional system exceeds the {MAX_GRID_DIM}-dimensional grid limit",
                n
            )));
        }
        if resolution.len() != n {
            return Err(Error::DimensionMismatch {
                what: "grid resolution",
                expected: n,
                got: resolution.len(),
            });
        }
        if let Some(r) = resolution.iter().find(|&&r| r < 3) {
            return Err(Error::Grid(format!("resolution {r} is below the minimum of 3 nodes per axis")));
        }
        let axes = system
            .domain
            .iter()
            .zip(resolution)
            .enumerate()
            .map(|(i, (iv, &count))| GridAxis {
                lo: iv.lo,
                hi: iv.hi,
                count,
                periodic: system.is_periodic(i),
            })
            .collect();
        Self::from_fn(system.name.clone(), axes, time, f)
    }

    pub fn from_fn(system: String, axes: Vec<GridAxis>, time: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut grid = Self {
            system,
            axes,
            values: Vec::new(),
            time,
        };
        grid.check_axes()?;
        let mut x = vec![0.0; grid.dim()];
        grid.values = (0..grid.len())
            .map(|flat| {
                grid.node_into(flat, &mut x);
                f(&x)
            })
            .collect();
        Ok(grid)
    }

    fn check_axes(&self) -> Result<()> {
        for ax in &self.axes {
            if ax.count < 3 {
                return Err(Error::Grid(format!("resolution {} is below the minimum of 3 nodes per axis", ax.count)));
            }
            if !(ax.lo < ax.hi && ax.lo.is_finite() && ax.hi.is_finite()) {
                return Err(Error::Grid(format!("axis [{}, {}] is empty", ax.lo, ax.hi)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat-index stride of each axis.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.axes[d + 1].count;
        }
        s
    }

    pub fn node_into(&self, mut flat: usize, out: &mut [f64]) {
        for d in (0..self.dim()).rev() {
            let c = self.axes[d].count;
            out[d] = self.axes[d].node(flat % c);
            flat /= c;
        }
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(flat, &mut x);
        x
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "grid query",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Multilinear weights over the cell containing `x`: `(corner flat index, weight)`.
    fn cell(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        self.check_query(x)?;
        let strides = self.strides();
        let mut corners = vec![(0usize, 1.0f64)];
        for (d, ax) in self.axes.iter().enumerate() {
            let (i0, i1, frac) = ax.locate(d, x[d])?;
            let mut next = Vec::with_capacity(corners.len() * 2);
            for &(flat, w) in &corners {
                next.push((flat + i0 * strides[d], w * (1.0 - frac)));
                next.push((flat + i1 * strides[d], w * frac));
            }
            corners = next;
        }
        Ok(corners)
    }

    /// Multilinear interpolation; exact at nodes.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.cell(x)?.iter().map(|&(i, w)| w * self.values[i]).sum())
    }

    /// Central-difference gradient at node `flat` (one-sided at non-periodic
    /// edges, which matches linear ghost extrapolation).
    pub fn node_gradient(&self, flat: usize, strides: &[usize], out: &mut [f64]) {
        let mut rem = flat;
        for d in (0..self.dim()).rev() {
            let ax = &self.axes[d];
            let i = rem % ax.count;
            rem /= ax.count;
            let base = flat - i * strides[d];
            let at = |j: usize| self.values[base + j * strides[d]];
            let dx = ax.spacing();
            out[d] = if ax.periodic {
                let (ip, im) = ((i + 1) % ax.count, (i + ax.count - 1) % ax.count);
                (at(ip) - at(im)) / (2.0 * dx)
            } else if i == 0 {
                (at(1) - at(0)) / dx
            } else if i + 1 == ax.count {
                (at(i) - at(i - 1)) / dx
            } else {
                (at(i + 1) - at(i - 1)) / (2.0 * dx)
            };
        }
    }

    /// Node-wise central differences, multilinearly interpolated to `x`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let strides = self.strides();
        let mut g = vec![0.0; self.dim()];
        let mut tmp = vec![0.0; self.dim()];
        for (flat, w) in self.cell(x)? {
            if w == 0.0 {
                continue;
            }
            self.node_gradient(flat, &strides, &mut tmp);
            for (a, b) in g.iter_mut().zip(&tmp) {
                *a += w * b;
            }
        }
        Ok(g)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = GridHeader {
            system: self.system.clone(),
            axes: self.axes.clone(),
            time: self.time,
        };
        binfmt::encode(MAGIC, &header, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, body): (GridHeader, _) = binfmt::decode(MAGIC, bytes)?;
        let mut grid = Self {
            system: h.system,
            axes: h.axes,
            values: Vec::new(),
            time: h.time,
        };
        grid.check_axes().map_err(|e| Error::Format(e.to_string()))?;
        grid.values = binfmt::read_f64s(body, grid.len())?;
        if grid.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("grid file holds non-finite values".into()));
        }
        Ok(grid)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfmt::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// True when `self` is a grid for `system` (name and domain).
    pub fn matches(&self, system: &SystemSpec) -> bool {
        self.system == system.name
            && self.dim() == system.state_dim()
            && self
                .axes
                .iter()
                .zip(&system.domain)
                .enumerate()
                .all(|(i, (a, iv))| a.lo == iv.lo && a.hi == iv.hi && a.periodic == system.is_periodic(i))
    }
}

/// Solves backward from `T` and returns one grid per requested time, ordered
/// as requested. Steps are shortened to land exactly on each snapshot time.
pub fn solve(system: &SystemSpec, resolution: &[usize], snapshots: &[f64]) -> Result<Vec<ValueGrid>> {
    system.validate()?;
    let horizon = system.horizon;
    for &t in snapshots {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Grid(format!("snapshot time {t} outside [0, {horizon}]")));
        }
    }
    let mut grid = ValueGrid::for_system(system, resolution, horizon, |x| system.terminal_value(x))?;
    let n = grid.dim();
    let len = grid.len();
    let strides = grid.strides();
    let nodes: Vec<f64> = (0..len).flat_map(|i| grid.node(i)).collect();
    let target: Vec<f64> = nodes.chunks(n).map(|x| system.target_unchecked(x)).collect();
    let obstacle: Option<Vec<f64>> = system
        .has_obstacle()
        .then(|| nodes.chunks(n).map(|x| system.obstacle_unchecked(x).unwrap_or(f64::NEG_INFINITY)).collect());
    let alpha = system.max_abs_flow(nodes.chunks(n));
    let dxs: Vec<f64> = grid.axes.iter().map(|a| a.spacing()).collect();
    let rate: f64 = alpha.iter().zip(&dxs).map(|(a, dx)| a / dx).sum();
    let dt_max = if rate > 0.0 { 0.5 / rate } else { horizon.max(f64::MIN_POSITIVE) };

    let mut order: Vec<usize> = (0..snapshots.len()).collect();
    order.sort_by(|&a, &b| snapshots[b].total_cmp(&snapshots[a]));
    let mut out: Vec<Option<ValueGrid>> = vec![None; snapshots.len()];
    let mut next = vec![0.0; len];
    let mut t = horizon;

    for &idx in &order {
        let t_snap = snapshots[idx];
        while t > t_snap {
            let dt = dt_max.min(t - t_snap);
            let cur = &grid.values;
            next.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
                let mut p = [0.0; MAX_GRID_DIM];
                for (k, v) in chunk.iter_mut().enumerate() {
                    let flat = c * 4096 + k;
                    let x = &nodes[flat * n..(flat + 1) * n];
                    let mut diss = 0.0;
                    let mut rem = flat;
                    for d in (0..n).rev() {
                        let ax = &grid.axes[d];
                        let i = rem % ax.count;
                        rem /= ax.count;
                        let base = flat - i * strides[d];
                        let at = |j: usize| cur[base + j * strides[d]];
                        let v0 = cur[flat];
                        let (vm, vp) = if ax.periodic {
                            (at((i + ax.count - 1) % ax.count), at((i + 1) % ax.count))
                        } else if i == 0 {
                            (2.0 * v0 - at(1), at(1))
                        } else if i + 1 == ax.count {
                            (at(i - 1), 2.0 * v0 - at(i - 1))
                        } else {
                            (at(i - 1), at(i + 1))
                        };
                        let dx = dxs[d];
                        p[d] = (vp - vm) / (2.0 * dx);
                        diss += alpha[d] * (vp - 2.0 * v0 + vm) / (2.0 * dx);
                    }
                    let h = system.hamiltonian(x, &p[..n]) + diss;
                    let mut nv = target[flat].min(cur[flat] + dt * h.min(0.0));
                    if let Some(g) = &obstacle {
                        nv = nv.max(g[flat]);
                    }
                    *v = nv;
                }
            });
            std::mem::swap(&mut grid.values, &mut next);
            t -= dt;
            if t - t_snap < 1e-12 * horizon {
                t = t_snap;
            }
        }
        if let Some(i) = grid.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite value at node {i}")));
        }
        grid.time = t_snap;
        out[idx] = Some(grid.clone());
    }
    Ok(out.into_iter().map(|g| g.expect("every snapshot visited")).collect())
}

#[cfg(test)]
mod tests;
