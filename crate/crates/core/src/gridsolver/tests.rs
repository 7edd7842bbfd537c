use super::*;
use std::f64::consts::PI;

use crate::systems::{Air3dParams, Obstacle};
use proptest::prelude::*;

fn axes_2d() -> Vec<GridAxis> {
    vec![
        GridAxis { lo: -1.0, hi: 2.0, count: 7, periodic: false },
        GridAxis { lo: 0.0, hi: 1.0, count: 5, periodic: false },
    ]
}

#[test]
fn interpolation_is_exact_at_nodes() {
    let g = ValueGrid::from_fn("t".into(), axes_2d(), 0.0, |x| (3.0 * x[0]).sin() + x[1] * x[1]).unwrap();
    for flat in 0..g.len() {
        assert_eq!(g.interpolate(&g.node(flat)).unwrap(), g.values[flat]);
    }
}

#[test]
fn interpolation_reproduces_linear_fields() {
    let g = ValueGrid::from_fn("t".into(), axes_2d(), 0.0, |x| 0.3 * x[0] - 1.7 * x[1] + 0.2).unwrap();
    for x in [[0.13, 0.77], [-0.99, 0.01], [1.999, 0.5], [2.0, 1.0]] {
        let v = g.interpolate(&x).unwrap();
        assert!((v - (0.3 * x[0] - 1.7 * x[1] + 0.2)).abs() < 1e-12);
        let grad = g.gradient(&x).unwrap();
        assert!((grad[0] - 0.3).abs() < 1e-12 && (grad[1] + 1.7).abs() < 1e-12);
    }
}

#[test]
fn midpoint_is_mean_and_constant_has_zero_gradient() {
    let ax = vec![GridAxis { lo: 0.0, hi: 1.0, count: 3, periodic: false }];
    let mut g = ValueGrid::from_fn("t".into(), ax, 0.0, |_| 0.0).unwrap();
    g.values = vec![1.0, 4.0, -2.0];
    assert_eq!(g.interpolate(&[0.25]).unwrap(), 2.5);
    assert_eq!(g.interpolate(&[0.75]).unwrap(), 1.0);
    g.values = vec![0.7; 3];
    assert_eq!(g.gradient(&[0.3]).unwrap(), vec![0.0]);
}

#[test]
fn out_of_box_queries_are_rejected() {
    let g = ValueGrid::from_fn("t".into(), axes_2d(), 0.0, |x| x[0]).unwrap();
    assert!(matches!(g.interpolate(&[2.1, 0.5]), Err(Error::OutOfDomain { dim: 0, .. })));
    assert!(matches!(g.gradient(&[0.0, -0.2]), Err(Error::OutOfDomain { dim: 1, .. })));
    assert!(matches!(g.interpolate(&[0.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn periodic_axes_wrap() {
    let ax = vec![GridAxis { lo: -PI, hi: PI, count: 32, periodic: true }];
    let g = ValueGrid::from_fn("t".into(), ax, 0.0, |x| x[0].cos()).unwrap();
    for v in [-3.0, 0.4, 3.1] {
        let a = g.interpolate(&[v]).unwrap();
        assert!((a - g.interpolate(&[v + 2.0 * PI]).unwrap()).abs() < 1e-12);
        assert!((a - g.interpolate(&[v - 4.0 * PI]).unwrap()).abs() < 1e-12);
        assert!((a - v.cos()).abs() < 0.01);
    }
    // between the last node and the wrap-around node
    let last = g.axes[0].node(31);
    let mid = 0.5 * (last + PI);
    assert!((g.interpolate(&[mid]).unwrap() - 0.5 * (g.values[31] + g.values[0])).abs() < 1e-12);
}

#[test]
fn central_difference_error_is_second_order() {
    let err_at = |count: usize| {
        let ax = vec![GridAxis { lo: -1.0, hi: 1.0, count, periodic: false }];
        let g = ValueGrid::from_fn("t".into(), ax, 0.0, |x| x[0] * x[0] * x[0]).unwrap();
        let strides = g.strides();
        let mut worst: f64 = 0.0;
        let mut out = [0.0];
        for i in 1..count - 1 {
            g.node_gradient(i, &strides, &mut out);
            let x = g.axes[0].node(i);
            worst = worst.max((out[0] - 3.0 * x * x).abs());
        }
        worst
    };
    let (e1, e2) = (err_at(21), err_at(41));
    // cubic: error is exactly h^2 at every interior node
    assert!((e1 / e2 - 4.0).abs() < 1e-6, "{e1} {e2}");
    let quad = |count: usize| {
        let ax = vec![GridAxis { lo: -1.0, hi: 1.0, count, periodic: false }];
        let g = ValueGrid::from_fn("t".into(), ax, 0.0, |x| x[0] * x[0]).unwrap();
        let mut out = [0.0];
        (1..count - 1)
            .map(|i| {
                g.node_gradient(i, &g.strides(), &mut out);
                (out[0] - 2.0 * g.axes[0].node(i)).abs()
            })
            .fold(0.0f64, f64::max)
    };
    assert!(quad(21) < 1e-12);
}

/// `max_x |V(x, 0) - V*(x)|` for the 1D integrators at spacing `dx`.
fn integrator_error(system: &SystemSpec, dx: f64, exact: impl Fn(f64) -> f64) -> f64 {
    let count = (2.0 / dx).round() as usize + 1;
    let g = solve(system, &[count], &[0.0]).unwrap().remove(0);
    (0..g.len())
        .map(|i| (g.values[i] - exact(g.axes[0].node(i))).abs())
        .fold(0.0, f64::max)
}

fn disturbance_exact(x: f64) -> f64 {
    (x.abs() - 0.5).max(0.0) - 0.25
}

#[test]
fn disturbance_game_matches_closed_form() {
    let sys = SystemSpec::disturbance_integrator();
    let e = integrator_error(&sys, 0.0025, disturbance_exact);
    assert!(e <= 0.02, "{e}");
    let g = solve(&sys, &[801], &[0.0]).unwrap().remove(0);
    assert!((g.interpolate(&[0.6]).unwrap() + 0.15).abs() < 0.02);
}

#[test]
fn control_game_keeps_the_target_function() {
    let sys = SystemSpec::control_integrator();
    let g = solve(&sys, &[801], &[0.0, 0.25]).unwrap();
    for grid in &g {
        let e = (0..grid.len())
            .map(|i| (grid.values[i] - (grid.axes[0].node(i).abs() - 0.25)).abs())
            .fold(0.0, f64::max);
        assert!(e <= 0.02, "{e}");
    }
}

#[test]
fn refinement_strictly_reduces_error() {
    let sys = SystemSpec::disturbance_integrator();
    let errs: Vec<f64> = [0.02, 0.01, 0.005, 0.0025]
        .iter()
        .map(|&dx| integrator_error(&sys, dx, disturbance_exact))
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
    let ctrl = SystemSpec::control_integrator();
    let errs: Vec<f64> = [0.02, 0.01, 0.005, 0.0025]
        .iter()
        .map(|&dx| integrator_error(&ctrl, dx, |x| x.abs() - 0.25))
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] <= w[0], "{errs:?}");
    }
}

fn small_air3d() -> SystemSpec {
    SystemSpec::air3d(Air3dParams::default())
}

#[test]
fn air3d_grids_are_clamped_monotone_and_exact_at_terminal() {
    let sys = small_air3d();
    let times = [1.0, 0.75, 0.5, 0.0];
    let grids = solve(&sys, &[21, 21, 16], &times).unwrap();
    let term = &grids[0];
    for i in 0..term.len() {
        assert_eq!(term.values[i], sys.target_l(&term.node(i)).unwrap());
    }
    for w in grids.windows(2) {
        let (later, earlier) = (&w[0], &w[1]);
        assert!(earlier.time < later.time);
        for i in 0..later.len() {
            let l = sys.target_l(&later.node(i)).unwrap();
            assert!(earlier.values[i] <= l);
            assert!(earlier.values[i] <= later.values[i] + 1e-9, "node {i}");
        }
    }
    // the tube grows: more sub-zero nodes at t = 0 than at T
    let neg = |g: &ValueGrid| g.values.iter().filter(|v| **v <= 0.0).count();
    assert!(neg(&grids[3]) > neg(&grids[0]));
}

#[test]
fn snapshots_follow_request_order() {
    let sys = SystemSpec::disturbance_integrator();
    let g = solve(&sys, &[41], &[0.0, 0.5, 0.25]).unwrap();
    assert_eq!(g.iter().map(|x| x.time).collect::<Vec<_>>(), vec![0.0, 0.5, 0.25]);
    assert!(solve(&sys, &[41], &[0.6]).is_err());
}

#[test]
fn far_obstacle_reduces_to_plain_tube() {
    let plain = small_air3d();
    let far = small_air3d().with_obstacle(Obstacle::Constant(-1e9));
    let a = solve(&plain, &[15, 15, 12], &[0.0, 0.5]).unwrap();
    let b = solve(&far, &[15, 15, 12], &[0.0, 0.5]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        for (u, v) in x.values.iter().zip(&y.values) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}

#[test]
fn obstacle_bounds_the_value_from_below() {
    let sys = SystemSpec::disturbance_integrator().with_obstacle(Obstacle::Constant(0.1));
    for g in solve(&sys, &[81], &[0.0, 0.5]).unwrap() {
        assert!(g.values.iter().all(|v| *v >= 0.1));
    }
}

#[test]
fn dimension_and_resolution_limits() {
    let five = SystemSpec::stationary(5);
    let e = solve(&five, &[3; 5], &[0.0]).unwrap_err();
    assert!(e.to_string().contains("dimension"), "{e}");
    let sys = SystemSpec::disturbance_integrator();
    assert!(matches!(solve(&sys, &[2], &[0.0]), Err(Error::Grid(_))));
    assert!(matches!(solve(&sys, &[5, 5], &[0.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn stationary_system_keeps_terminal_values() {
    let sys = SystemSpec::stationary(2);
    let g = solve(&sys, &[9, 9], &[0.0]).unwrap().remove(0);
    for i in 0..g.len() {
        assert_eq!(g.values[i], sys.target_l(&g.node(i)).unwrap());
    }
}

#[test]
fn grid_files_round_trip() {
    let sys = small_air3d();
    let g = solve(&sys, &[9, 9, 8], &[0.5]).unwrap().remove(0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.grid");
    g.save(&path).unwrap();
    let back = ValueGrid::load(&path).unwrap();
    assert_eq!(back, g);
    assert!(back.matches(&sys));
    assert!(!back.matches(&SystemSpec::disturbance_integrator()));
    let mut bytes = g.to_bytes().unwrap();
    bytes.truncate(bytes.len() - 8);
    assert!(ValueGrid::from_bytes(&bytes).is_err());
}

#[test]
fn grid_matches_domain_of_wider_system() {
    let mut p = Air3dParams::default();
    p.half_width = 1.5;
    let wide = SystemSpec::air3d(p);
    let g = ValueGrid::for_system(&wide, &[5, 5, 4], 1.0, |_| 0.0).unwrap();
    assert_eq!(g.axes[0].lo, -1.5);
    assert!(!g.matches(&small_air3d()));
}

proptest! {
    #[test]
    fn interpolation_stays_within_cell_extremes(x in -1.0f64..2.0, y in 0.0f64..1.0) {
        let g = ValueGrid::from_fn("t".into(), axes_2d(), 0.0, |x| (5.0 * x[0]).sin() * (3.0 * x[1]).cos()).unwrap();
        let v = g.interpolate(&[x, y]).unwrap();
        let (lo, hi) = g.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
    }
}

