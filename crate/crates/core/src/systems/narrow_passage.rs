//! Two kinematic bicycle cars negotiating a lane blocked by a stranded car.
//!
//! Per car: `(x, y, heading, speed, steering)` with
//!
//! ```text
//! x' = v cos th,  y' = v sin th,  th' = v tan(phi) / L,  v' = a,  phi' = psi
//! ```
//!
//! Geometry is repo-chosen: a straight two-lane road along the x axis, car 1
//! driving toward +x in the lower lane (where the stranded car sits) and car 2
//! toward -x in the upper lane. Each car must reach its target box while
//! staying clear of the curbs, the stranded car and the other car.

use serde::{Deserialize, Serialize};

use super::Interval;

/// Axis-aligned box in the road plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub x: Interval,
    pub y: Interval,
}

impl BoxRegion {
    /// Signed distance from a point to the box (negative inside).
    pub fn signed_distance(&self, px: f64, py: f64) -> f64 {
        let qx = (px - self.x.center()).abs() - 0.5 * self.x.width();
        let qy = (py - self.y.center()).abs() - 0.5 * self.y.width();
        let outside = qx.max(0.0).hypot(qy.max(0.0));
        let inside = qx.max(qy).min(0.0);
        outside + inside
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NarrowPassageParams {
    /// Wheelbase `L` (m).
    pub wheelbase: f64,
    /// Collision footprint radius of every car (m).
    pub footprint_radius: f64,
    pub accel: Interval,
    pub steer_rate: Interval,
    /// Lower and upper curb lines (y, m).
    pub curb_lo: f64,
    pub curb_hi: f64,
    /// Stranded-car position.
    pub stranded: [f64; 2],
    pub target_1: BoxRegion,
    pub target_2: BoxRegion,
    pub x_range: Interval,
    pub y_range: Interval,
    pub speed_range: Interval,
    pub steer_range: Interval,
    pub horizon: f64,
}

impl Default for NarrowPassageParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.0,
            footprint_radius: 0.75,
            accel: Interval::new(-4.0, 2.0),
            steer_rate: Interval::new(-3.0, 3.0),
            curb_lo: -2.8,
            curb_hi: 2.8,
            stranded: [0.0, -1.8],
            target_1: BoxRegion {
                x: Interval::new(4.5, 8.0),
                y: Interval::new(-2.8, 0.0),
            },
            target_2: BoxRegion {
                x: Interval::new(-8.0, -4.5),
                y: Interval::new(0.0, 2.8),
            },
            x_range: Interval::new(-8.0, 8.0),
            y_range: Interval::new(-3.8, 3.8),
            speed_range: Interval::new(-1.0, 7.0),
            steer_range: Interval::new(-1.0, 1.0),
            horizon: 4.0,
        }
    }
}

impl NarrowPassageParams {
    pub(crate) fn validate(&self) -> Result<(), String> {
        if !(self.wheelbase > 0.0 && self.footprint_radius > 0.0) {
            return Err("wheelbase and footprint radius must be positive".into());
        }
        if self.curb_lo >= self.curb_hi {
            return Err("curb_lo must be below curb_hi".into());
        }
        if self.steer_range.lo.abs().max(self.steer_range.hi.abs()) >= std::f64::consts::FRAC_PI_2 {
            return Err("steering range must stay inside (-pi/2, pi/2)".into());
        }
        for (name, b) in [("target_1", &self.target_1), ("target_2", &self.target_2)] {
            let inside = self.x_range.contains(b.x.lo)
                && self.x_range.contains(b.x.hi)
                && self.y_range.contains(b.y.lo)
                && self.y_range.contains(b.y.hi);
            if !inside {
                return Err(format!("{name} must lie inside the domain"));
            }
        }
        Ok(())
    }

    /// Clearance of a car centred at `y` to the nearer curb (negative when
    /// its footprint crosses the curb line).
    fn curb_clearance(&self, y: f64) -> f64 {
        (y - self.curb_lo - self.footprint_radius).min(self.curb_hi - self.footprint_radius - y)
    }
}

fn bicycle(p: &NarrowPassageParams, s: &[f64], accel: f64, steer_rate: f64, out: &mut [f64]) {
    let (th, v, phi) = (s[2], s[3], s[4]);
    out[0] = v * th.cos();
    out[1] = v * th.sin();
    out[2] = v * phi.tan() / p.wheelbase;
    out[3] = accel;
    out[4] = steer_rate;
}

pub(super) fn flow(p: &NarrowPassageParams, x: &[f64], u: &[f64], out: &mut [f64]) {
    bicycle(p, &x[0..5], u[0], u[1], &mut out[0..5]);
    bicycle(p, &x[5..10], u[2], u[3], &mut out[5..10]);
}

pub(super) fn affine_terms(p: &NarrowPassageParams, x: &[f64], g: &[f64], ctrl: &mut [f64]) -> f64 {
    let mut drift = 0.0;
    for car in 0..2 {
        let (s, gc) = (&x[5 * car..5 * car + 5], &g[5 * car..5 * car + 5]);
        let (th, v, phi) = (s[2], s[3], s[4]);
        drift += v * (gc[0] * th.cos() + gc[1] * th.sin() + gc[2] * phi.tan() / p.wheelbase);
        ctrl[2 * car] = gc[3];
        ctrl[2 * car + 1] = gc[4];
    }
    drift
}

/// `max(d(Q1, T1), d(Q2, T2))`.
pub(super) fn target(p: &NarrowPassageParams, x: &[f64]) -> f64 {
    p.target_1
        .signed_distance(x[0], x[1])
        .max(p.target_2.signed_distance(x[5], x[6]))
}

/// `-min(pairwise clearance of the three cars, curb clearance of each car)`.
pub(super) fn obstacle(p: &NarrowPassageParams, x: &[f64]) -> f64 {
    let two_r = 2.0 * p.footprint_radius;
    let (c1, c2, cs) = ([x[0], x[1]], [x[5], x[6]], p.stranded);
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]) - two_r;
    let pairwise = dist(c1, c2).min(dist(c1, cs)).min(dist(c2, cs));
    let curbs = p.curb_clearance(x[1]).min(p.curb_clearance(x[6]));
    -pairwise.min(curbs)
}
