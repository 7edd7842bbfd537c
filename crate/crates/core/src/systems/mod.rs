//! Dynamical systems, target/obstacle functions and their Hamiltonians.
//!
//! Every shipped system is affine in its inputs and has box input bounds, so
//! the Hamiltonian
//!
//! ```text
//! H(x, p) = max_u min_d <p, f(x, u, d)>      (AvoidTarget)
//! H(x, p) = min_u max_d <p, f(x, u, d)>      (ReachTarget)
//! ```
//!
//! splits into a drift term plus one independent bang-bang term per scalar
//! input. [`SystemSpec::hamiltonian_analytic`] evaluates that closed form;
//! [`SystemSpec::hamiltonian_bruteforce`] enumerates every corner of the input
//! boxes using only [`SystemSpec::flow`] and serves as its oracle.

mod air3d;
mod integrator;
mod multi_vehicle;
mod narrow_passage;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use air3d::Air3dParams;
pub use narrow_passage::{BoxRegion, NarrowPassageParams};

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Which player the controller is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// The target is unsafe: control maximizes the payoff, disturbance minimizes.
    AvoidTarget,
    /// The target is a goal: control minimizes, disturbance maximizes.
    ReachTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    /// Relative pursuit-evasion dynamics of two identical planar vehicles.
    Air3d(Air3dParams),
    /// The Air3D game in the joint state of pursuer then evader (6D).
    TwoVehicle(Air3dParams),
    /// Two evaders and one pursuer in joint coordinates (9D).
    ThreeVehicle(Air3dParams),
    /// Two bicycle-model cars passing a stranded vehicle (10D, reach-avoid).
    NarrowPassage(NarrowPassageParams),
    /// `x' = u`, `|u| <= 1`, target `|x| <= 0.25`.
    ControlIntegrator,
    /// `x' = d`, `|d| <= 1`, target `|x| <= 0.25`.
    DisturbanceIntegrator,
    /// `f = 0` in `dim` dimensions; target is the ball of radius 0.25.
    Stationary { dim: usize },
}

/// Obstacle function attached to a system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Obstacle {
    Absent,
    /// `g(x) = c` everywhere.
    Constant(f64),
    /// Curbs, the stranded vehicle and inter-vehicle collisions of the
    /// narrow-passage scenario.
    NarrowPassage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub dynamics: Dynamics,
    pub control_bounds: Vec<Interval>,
    pub disturbance_bounds: Vec<Interval>,
    pub domain: Vec<Interval>,
    pub periodic_dims: Vec<usize>,
    pub orientation: Orientation,
    pub horizon: f64,
    pub obstacle: Obstacle,
}

/// Largest number of input corners enumerated by the brute-force Hamiltonian.
const MAX_CORNER_BITS: usize = 20;

impl SystemSpec {
    /// Air3D relative dynamics on `[-r, r]^2 x [-pi, pi)` where `r = params.half_width`.
    pub fn air3d(params: Air3dParams) -> Self {
        let r = params.half_width;
        Self {
            name: "air3d".into(),
            control_bounds: vec![Interval::symmetric(params.omega_bar)],
            disturbance_bounds: vec![Interval::symmetric(params.omega_bar)],
            domain: vec![Interval::symmetric(r), Interval::symmetric(r), Interval::symmetric(PI)],
            periodic_dims: vec![2],
            orientation: Orientation::AvoidTarget,
            horizon: params.horizon,
            obstacle: Obstacle::Absent,
            dynamics: Dynamics::Air3d(params),
        }
    }

    /// Joint pursuer/evader game. State: pursuer `(x, y, heading)` then evader.
    pub fn two_vehicle(params: Air3dParams) -> Self {
        let r = params.half_width;
        let pose = [Interval::symmetric(r), Interval::symmetric(r), Interval::symmetric(PI)];
        Self {
            name: "two_vehicle".into(),
            control_bounds: vec![Interval::symmetric(params.omega_bar)],
            disturbance_bounds: vec![Interval::symmetric(params.omega_bar)],
            domain: pose.iter().chain(pose.iter()).copied().collect(),
            periodic_dims: vec![2, 5],
            orientation: Orientation::AvoidTarget,
            horizon: params.horizon,
            obstacle: Obstacle::Absent,
            dynamics: Dynamics::TwoVehicle(params),
        }
    }

    /// Two evaders and a pursuer. State: evader 1, evader 2, pursuer poses.
    /// The evaders' turn rates are two independent controls.
    pub fn three_vehicle(params: Air3dParams) -> Self {
        let r = params.half_width;
        let pose = [Interval::symmetric(r), Interval::symmetric(r), Interval::symmetric(PI)];
        Self {
            name: "three_vehicle".into(),
            control_bounds: vec![Interval::symmetric(params.omega_bar); 2],
            disturbance_bounds: vec![Interval::symmetric(params.omega_bar)],
            domain: pose.iter().cycle().take(9).copied().collect(),
            periodic_dims: vec![2, 5, 8],
            orientation: Orientation::AvoidTarget,
            horizon: params.horizon,
            obstacle: Obstacle::Absent,
            dynamics: Dynamics::ThreeVehicle(params),
        }
    }

    pub fn narrow_passage(params: NarrowPassageParams) -> Self {
        let car = [
            params.x_range,
            params.y_range,
            Interval::symmetric(PI),
            params.speed_range,
            params.steer_range,
        ];
        Self {
            name: "narrow_passage".into(),
            control_bounds: vec![params.accel, params.steer_rate, params.accel, params.steer_rate],
            disturbance_bounds: vec![],
            domain: car.iter().chain(car.iter()).copied().collect(),
            periodic_dims: vec![2, 7],
            orientation: Orientation::ReachTarget,
            horizon: params.horizon,
            obstacle: Obstacle::NarrowPassage,
            dynamics: Dynamics::NarrowPassage(params),
        }
    }

    pub fn control_integrator() -> Self {
        Self {
            name: "control_integrator".into(),
            dynamics: Dynamics::ControlIntegrator,
            control_bounds: vec![Interval::symmetric(1.0)],
            disturbance_bounds: vec![],
            domain: vec![Interval::symmetric(1.0)],
            periodic_dims: vec![],
            orientation: Orientation::AvoidTarget,
            horizon: 0.5,
            obstacle: Obstacle::Absent,
        }
    }

    pub fn disturbance_integrator() -> Self {
        Self {
            name: "disturbance_integrator".into(),
            dynamics: Dynamics::DisturbanceIntegrator,
            control_bounds: vec![],
            disturbance_bounds: vec![Interval::symmetric(1.0)],
            domain: vec![Interval::symmetric(1.0)],
            periodic_dims: vec![],
            orientation: Orientation::AvoidTarget,
            horizon: 0.5,
            obstacle: Obstacle::Absent,
        }
    }

    pub fn stationary(dim: usize) -> Self {
        Self {
            name: "stationary".into(),
            dynamics: Dynamics::Stationary { dim },
            control_bounds: vec![],
            disturbance_bounds: vec![],
            domain: vec![Interval::symmetric(1.0); dim],
            periodic_dims: vec![],
            orientation: Orientation::AvoidTarget,
            horizon: 1.0,
            obstacle: Obstacle::Absent,
        }
    }

    pub fn with_obstacle(mut self, obstacle: Obstacle) -> Self {
        self.obstacle = obstacle;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.domain.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_bounds.len()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.disturbance_bounds.len()
    }

    pub fn has_obstacle(&self) -> bool {
        !matches!(self.obstacle, Obstacle::Absent)
    }

    pub fn is_periodic(&self, dim: usize) -> bool {
        self.periodic_dims.contains(&dim)
    }

    /// Checks the structural invariants of the spec.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidSystem {
            name: self.name.clone(),
            reason,
        };
        let n = self.state_dim();
        if n == 0 {
            return Err(bad("state dimension must be positive".into()));
        }
        let expected = match &self.dynamics {
            Dynamics::Air3d(_) => (3, 1, 1),
            Dynamics::TwoVehicle(_) => (6, 1, 1),
            Dynamics::ThreeVehicle(_) => (9, 2, 1),
            Dynamics::NarrowPassage(_) => (10, 4, 0),
            Dynamics::ControlIntegrator => (1, 1, 0),
            Dynamics::DisturbanceIntegrator => (1, 0, 1),
            Dynamics::Stationary { dim } => (*dim, 0, 0),
        };
        if (n, self.control_dim(), self.disturbance_dim()) != expected {
            return Err(bad(format!(
                "expected (state, control, disturbance) dims {expected:?}, got ({n}, {}, {})",
                self.control_dim(),
                self.disturbance_dim()
            )));
        }
        let all = self
            .domain
            .iter()
            .chain(&self.control_bounds)
            .chain(&self.disturbance_bounds);
        for iv in all {
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi) {
                return Err(bad(format!("interval [{}, {}] is not compact", iv.lo, iv.hi)));
            }
        }
        for &d in &self.periodic_dims {
            if d >= n {
                return Err(bad(format!("periodic dimension {d} out of range")));
            }
            if (self.domain[d].width() - 2.0 * PI).abs() > 1e-9 {
                return Err(bad(format!("periodic dimension {d} must span 2*pi")));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(bad("horizon must be positive".into()));
        }
        if let Dynamics::Air3d(p) | Dynamics::TwoVehicle(p) | Dynamics::ThreeVehicle(p) = &self.dynamics {
            p.validate().map_err(bad)?;
        }
        if let Dynamics::NarrowPassage(p) = &self.dynamics {
            p.validate().map_err(bad)?;
        }
        Ok(())
    }

    /// Wraps a periodic coordinate into `[lo, lo + 2*pi)`.
    pub fn wrap_coord(&self, dim: usize, v: f64) -> f64 {
        if self.is_periodic(dim) {
            wrap_angle(v, self.domain[dim].lo)
        } else {
            v
        }
    }

    /// Wraps all periodic coordinates in place.
    pub fn wrap_state(&self, x: &mut [f64]) {
        for &d in &self.periodic_dims {
            if d < x.len() {
                x[d] = wrap_angle(x[d], self.domain[d].lo);
            }
        }
    }

    /// True when every non-periodic coordinate lies inside the domain box.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.state_dim()
            && x
                .iter()
                .enumerate()
                .all(|(i, &v)| self.is_periodic(i) || self.domain[i].contains(v))
    }

    fn check_state(&self, what: &'static str, x: &[f64]) -> Result<()> {
        check_len(what, self.state_dim(), x.len())
    }

    fn check_inputs(&self, u: &[f64], d: &[f64]) -> Result<()> {
        check_len("control", self.control_dim(), u.len())?;
        check_len("disturbance", self.disturbance_dim(), d.len())?;
        check_bounds("control", u, &self.control_bounds)?;
        check_bounds("disturbance", d, &self.disturbance_bounds)
    }

    /// `f(x, u, d)`.
    pub fn flow(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.flow_into(x, u, d, &mut out)?;
        Ok(out)
    }

    pub fn flow_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_state("state", x)?;
        self.check_state("flow output", out)?;
        self.check_inputs(u, d)?;
        self.flow_unchecked(x, u, d, out);
        Ok(())
    }

    pub(crate) fn flow_unchecked(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            Dynamics::Air3d(p) => air3d::flow(p, x, u, d, out),
            Dynamics::TwoVehicle(p) => multi_vehicle::two_vehicle_flow(p, x, u, d, out),
            Dynamics::ThreeVehicle(p) => multi_vehicle::three_vehicle_flow(p, x, u, d, out),
            Dynamics::NarrowPassage(p) => narrow_passage::flow(p, x, u, out),
            Dynamics::ControlIntegrator => out[0] = u[0],
            Dynamics::DisturbanceIntegrator => out[0] = d[0],
            Dynamics::Stationary { .. } => out.fill(0.0),
        }
    }

    /// Target function `l(x)`; the target set is `{l <= 0}`.
    pub fn target_l(&self, x: &[f64]) -> Result<f64> {
        self.check_state("state", x)?;
        Ok(self.target_unchecked(x))
    }

    pub(crate) fn target_unchecked(&self, x: &[f64]) -> f64 {
        match &self.dynamics {
            Dynamics::Air3d(p) => air3d::target(p, x),
            Dynamics::TwoVehicle(p) => multi_vehicle::two_vehicle_target(p, x),
            Dynamics::ThreeVehicle(p) => multi_vehicle::three_vehicle_target(p, x),
            Dynamics::NarrowPassage(p) => narrow_passage::target(p, x),
            Dynamics::ControlIntegrator | Dynamics::DisturbanceIntegrator => {
                integrator::target(x[0])
            }
            Dynamics::Stationary { .. } => {
                x.iter().map(|v| v * v).sum::<f64>().sqrt() - integrator::TARGET_RADIUS
            }
        }
    }

    /// Obstacle function `g(x)`; the unsafe set is `{g > 0}`. `Ok(None)` when
    /// the system has no obstacle.
    pub fn obstacle_g(&self, x: &[f64]) -> Result<Option<f64>> {
        self.check_state("state", x)?;
        Ok(self.obstacle_unchecked(x))
    }

    pub(crate) fn obstacle_unchecked(&self, x: &[f64]) -> Option<f64> {
        match (&self.obstacle, &self.dynamics) {
            (Obstacle::Absent, _) => None,
            (Obstacle::Constant(c), _) => Some(*c),
            (Obstacle::NarrowPassage, Dynamics::NarrowPassage(p)) => {
                Some(narrow_passage::obstacle(p, x))
            }
            // validate() does not allow this pairing to be built by the config
            // layer; treat it as absent rather than invent a value.
            (Obstacle::NarrowPassage, _) => None,
        }
    }

    /// Terminal value: `l` for BRT systems, `max(l, g)` when an obstacle exists.
    pub fn terminal_value(&self, x: &[f64]) -> f64 {
        let l = self.target_unchecked(x);
        match self.obstacle_unchecked(x) {
            Some(g) => l.max(g),
            None => l,
        }
    }

    /// Writes the drift term `<p, f0(x)>` and the per-input coefficients
    /// `<p, df/du_j>`, `<p, df/dd_k>` (closed form per system).
    fn affine_terms(&self, x: &[f64], p: &[f64], ctrl: &mut [f64], dist: &mut [f64]) -> f64 {
        match &self.dynamics {
            Dynamics::Air3d(q) => air3d::affine_terms(q, x, p, ctrl, dist),
            Dynamics::TwoVehicle(q) => multi_vehicle::two_vehicle_terms(q, x, p, ctrl, dist),
            Dynamics::ThreeVehicle(q) => multi_vehicle::three_vehicle_terms(q, x, p, ctrl, dist),
            Dynamics::NarrowPassage(q) => narrow_passage::affine_terms(q, x, p, ctrl),
            Dynamics::ControlIntegrator => {
                ctrl[0] = p[0];
                0.0
            }
            Dynamics::DisturbanceIntegrator => {
                dist[0] = p[0];
                0.0
            }
            Dynamics::Stationary { .. } => 0.0,
        }
    }

    fn control_maximizes(&self) -> bool {
        self.orientation == Orientation::AvoidTarget
    }

    /// Closed-form Hamiltonian.
    pub fn hamiltonian_analytic(&self, x: &[f64], grad: &[f64]) -> Result<f64> {
        self.check_state("state", x)?;
        self.check_state("gradient", grad)?;
        Ok(self.hamiltonian(x, grad))
    }

    /// Unchecked closed-form Hamiltonian for hot loops.
    pub fn hamiltonian(&self, x: &[f64], grad: &[f64]) -> f64 {
        let mut ctrl = [0.0; 4];
        let mut dist = [0.0; 4];
        let (nu, nd) = (self.control_dim(), self.disturbance_dim());
        let drift = self.affine_terms(x, grad, &mut ctrl[..nu], &mut dist[..nd]);
        let cmax = self.control_maximizes();
        let mut h = drift;
        for (c, b) in ctrl[..nu].iter().zip(&self.control_bounds) {
            h += c * best_endpoint(*c, b, cmax);
        }
        for (c, b) in dist[..nd].iter().zip(&self.disturbance_bounds) {
            h += c * best_endpoint(*c, b, !cmax);
        }
        h
    }

    /// Optimal `(u*, d*)` realizing the Hamiltonian. Ties (zero coefficient)
    /// resolve to the lower bound endpoint.
    pub fn optimal_inputs(&self, x: &[f64], grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_state("state", x)?;
        self.check_state("gradient", grad)?;
        let mut u = vec![0.0; self.control_dim()];
        let mut d = vec![0.0; self.disturbance_dim()];
        self.optimal_inputs_into(x, grad, &mut u, &mut d);
        Ok((u, d))
    }

    pub(crate) fn optimal_inputs_into(&self, x: &[f64], grad: &[f64], u: &mut [f64], d: &mut [f64]) {
        let mut ctrl = [0.0; 4];
        let mut dist = [0.0; 4];
        let (nu, nd) = (self.control_dim(), self.disturbance_dim());
        self.affine_terms(x, grad, &mut ctrl[..nu], &mut dist[..nd]);
        let cmax = self.control_maximizes();
        for j in 0..nu {
            u[j] = best_endpoint(ctrl[j], &self.control_bounds[j], cmax);
        }
        for k in 0..nd {
            d[k] = best_endpoint(dist[k], &self.disturbance_bounds[k], !cmax);
        }
    }

    /// Gradient of the Hamiltonian with respect to `grad`, i.e. the flow under
    /// the optimal inputs (the tie rule fixes the subgradient).
    pub(crate) fn hamiltonian_grad_p(&self, x: &[f64], grad: &[f64], out: &mut [f64]) {
        let mut u = [0.0; 4];
        let mut d = [0.0; 4];
        let (nu, nd) = (self.control_dim(), self.disturbance_dim());
        self.optimal_inputs_into(x, grad, &mut u[..nu], &mut d[..nd]);
        self.flow_unchecked(x, &u[..nu], &d[..nd], out);
    }

    /// Max-min (or min-max) of `<grad, f>` over all corners of the input boxes.
    pub fn hamiltonian_bruteforce(&self, x: &[f64], grad: &[f64]) -> Result<f64> {
        self.check_state("state", x)?;
        self.check_state("gradient", grad)?;
        let (nu, nd) = (self.control_dim(), self.disturbance_dim());
        if nu + nd > MAX_CORNER_BITS {
            return Err(Error::InvalidSystem {
                name: self.name.clone(),
                reason: format!("{} inputs is too many to enumerate", nu + nd),
            });
        }
        let cmax = self.control_maximizes();
        let mut f = vec![0.0; self.state_dim()];
        let mut u = vec![0.0; nu];
        let mut d = vec![0.0; nd];
        let mut outer = if cmax { f64::NEG_INFINITY } else { f64::INFINITY };
        for ui in 0..(1usize << nu) {
            corner(ui, &self.control_bounds, &mut u);
            let mut inner = if cmax { f64::INFINITY } else { f64::NEG_INFINITY };
            for di in 0..(1usize << nd) {
                corner(di, &self.disturbance_bounds, &mut d);
                self.flow_unchecked(x, &u, &d, &mut f);
                let v: f64 = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
                inner = if cmax { inner.min(v) } else { inner.max(v) };
            }
            outer = if cmax { outer.max(inner) } else { outer.min(inner) };
        }
        Ok(outer)
    }

    /// Largest `|f_i|` over the given states and every input corner.
    pub fn max_abs_flow<'a>(&self, states: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let n = self.state_dim();
        let (nu, nd) = (self.control_dim(), self.disturbance_dim());
        let mut alpha = vec![0.0f64; n];
        let mut f = vec![0.0; n];
        let mut u = vec![0.0; nu];
        let mut d = vec![0.0; nd];
        for x in states {
            for ui in 0..(1usize << nu) {
                corner(ui, &self.control_bounds, &mut u);
                for di in 0..(1usize << nd) {
                    corner(di, &self.disturbance_bounds, &mut d);
                    self.flow_unchecked(x, &u, &d, &mut f);
                    for (a, v) in alpha.iter_mut().zip(&f) {
                        *a = a.max(v.abs());
                    }
                }
            }
        }
        alpha
    }
}

/// Endpoint of `b` optimizing `c * v`; zero coefficients pick `b.lo`.
fn best_endpoint(c: f64, b: &Interval, maximize: bool) -> f64 {
    let take_hi = if maximize { c > 0.0 } else { c < 0.0 };
    if take_hi {
        b.hi
    } else {
        b.lo
    }
}

fn corner(bits: usize, bounds: &[Interval], out: &mut [f64]) {
    for (j, b) in bounds.iter().enumerate() {
        out[j] = if bits >> j & 1 == 1 { b.hi } else { b.lo };
    }
}

/// Wraps `v` into `[lo, lo + 2*pi)`.
pub fn wrap_angle(v: f64, lo: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = v - two_pi * ((v - lo) / two_pi).floor();
    // floating-point rounding can land exactly on the excluded endpoint
    if w >= lo + two_pi {
        lo
    } else {
        w
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

fn check_bounds(what: &'static str, v: &[f64], bounds: &[Interval]) -> Result<()> {
    const SLACK: f64 = 1e-12;
    for (index, (&value, b)) in v.iter().zip(bounds).enumerate() {
        let tol = SLACK * (1.0 + b.lo.abs().max(b.hi.abs()));
        if !(value >= b.lo - tol && value <= b.hi + tol) {
            return Err(Error::InputOutOfBounds {
                what,
                index,
                value,
                lo: b.lo,
                hi: b.hi,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
