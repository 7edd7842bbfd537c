//! Joint-coordinate multi-vehicle games built from unicycles
//! `(x, y, heading)' = (v cos heading, v sin heading, w)`.

use super::Air3dParams;

fn unicycle(v: f64, w: f64, pose: &[f64], out: &mut [f64]) {
    out[0] = v * pose[2].cos();
    out[1] = v * pose[2].sin();
    out[2] = w;
}

/// `<g, drift>` of one unicycle moving at speed `v`.
fn unicycle_drift(v: f64, pose: &[f64], g: &[f64]) -> f64 {
    v * (g[0] * pose[2].cos() + g[1] * pose[2].sin())
}

fn planar_distance(a: &[f64], b: &[f64]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

// State layout: pursuer (0..3), evader (3..6). Control w_e, disturbance w_p.

pub(super) fn two_vehicle_flow(p: &Air3dParams, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
    unicycle(p.v_p, d[0], &x[0..3], &mut out[0..3]);
    unicycle(p.v_e, u[0], &x[3..6], &mut out[3..6]);
}

pub(super) fn two_vehicle_target(p: &Air3dParams, x: &[f64]) -> f64 {
    planar_distance(&x[0..2], &x[3..5]) - p.beta
}

pub(super) fn two_vehicle_terms(p: &Air3dParams, x: &[f64], g: &[f64], ctrl: &mut [f64], dist: &mut [f64]) -> f64 {
    ctrl[0] = g[5];
    dist[0] = g[2];
    unicycle_drift(p.v_p, &x[0..3], &g[0..3]) + unicycle_drift(p.v_e, &x[3..6], &g[3..6])
}

// State layout: evader 1 (0..3), evader 2 (3..6), pursuer (6..9).
// Controls (w_e1, w_e2), disturbance w_p.

pub(super) fn three_vehicle_flow(p: &Air3dParams, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
    unicycle(p.v_e, u[0], &x[0..3], &mut out[0..3]);
    unicycle(p.v_e, u[1], &x[3..6], &mut out[3..6]);
    unicycle(p.v_p, d[0], &x[6..9], &mut out[6..9]);
}

/// Minimum pairwise distance between the three vehicles, minus `beta`.
pub(super) fn three_vehicle_target(p: &Air3dParams, x: &[f64]) -> f64 {
    let (e1, e2, pu) = (&x[0..2], &x[3..5], &x[6..8]);
    planar_distance(e1, e2)
        .min(planar_distance(e1, pu))
        .min(planar_distance(e2, pu))
        - p.beta
}

pub(super) fn three_vehicle_terms(p: &Air3dParams, x: &[f64], g: &[f64], ctrl: &mut [f64], dist: &mut [f64]) -> f64 {
    ctrl[0] = g[2];
    ctrl[1] = g[5];
    dist[0] = g[8];
    unicycle_drift(p.v_e, &x[0..3], &g[0..3])
        + unicycle_drift(p.v_e, &x[3..6], &g[3..6])
        + unicycle_drift(p.v_p, &x[6..9], &g[6..9])
}
