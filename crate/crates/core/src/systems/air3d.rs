//! Relative dynamics of an evader (control) and a pursuer (disturbance):
//!
//! ```text
//! x1' = -v_e + v_p cos x3 + w_e x2
//! x2' =  v_p sin x3 - w_e x1
//! x3' =  w_p - w_e
//! ```

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Air3dParams {
    /// Evader speed (m/s).
    pub v_e: f64,
    /// Pursuer speed (m/s).
    pub v_p: f64,
    /// Turn-rate bound shared by both vehicles (rad/s).
    pub omega_bar: f64,
    /// Collision radius (m).
    pub beta: f64,
    /// Horizon `T` (s).
    pub horizon: f64,
    /// Half-width of the planar position box of the domain (m).
    pub half_width: f64,
}

impl Default for Air3dParams {
    fn default() -> Self {
        Self {
            v_e: 0.75,
            v_p: 0.75,
            omega_bar: 3.0,
            beta: 0.25,
            horizon: 1.0,
            half_width: 1.0,
        }
    }
}

impl Air3dParams {
    pub(crate) fn validate(&self) -> Result<(), String> {
        let fields = [
            ("v_e", self.v_e),
            ("v_p", self.v_p),
            ("omega_bar", self.omega_bar),
            ("beta", self.beta),
            ("horizon", self.horizon),
            ("half_width", self.half_width),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }
}

pub(super) fn flow(p: &Air3dParams, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
    let (we, wp) = (u[0], d[0]);
    out[0] = -p.v_e + p.v_p * x[2].cos() + we * x[1];
    out[1] = p.v_p * x[2].sin() - we * x[0];
    out[2] = wp - we;
}

pub(super) fn target(p: &Air3dParams, x: &[f64]) -> f64 {
    x[0].hypot(x[1]) - p.beta
}

pub(super) fn affine_terms(p: &Air3dParams, x: &[f64], g: &[f64], ctrl: &mut [f64], dist: &mut [f64]) -> f64 {
    ctrl[0] = g[0] * x[1] - g[1] * x[0] - g[2];
    dist[0] = g[2];
    g[0] * (-p.v_e + p.v_p * x[2].cos()) + g[1] * p.v_p * x[2].sin()
}
