use super::*;
use crate::gridsolver::{solve, GridAxis};
use crate::systems::Air3dParams;
use crate::valuenet::init;

struct Constant(usize, f64);

impl ValueSource for Constant {
    fn state_dim(&self) -> usize {
        self.0
    }
    fn value(&self, _: &[f64], _: f64) -> Result<f64> {
        Ok(self.1)
    }
    fn gradient(&self, _: &[f64], _: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

fn air3d() -> SystemSpec {
    SystemSpec::air3d(Air3dParams::default())
}

fn tiny_net(sys: &SystemSpec) -> NetworkSource {
    NetworkSource {
        params: init(1, sys.state_dim() + 1, 2, 8, 30.0).unwrap(),
        map: NormalizationMap::for_system(sys),
        system: sys.name.clone(),
    }
}

#[test]
fn comparison_examples() {
    let sys = air3d();
    let g = ValueGrid::for_system(&sys, &[5, 5, 4], 0.0, |x| x[0] - 0.1).unwrap();
    let same = compare_values(&g.values, &g).unwrap();
    assert_eq!((same.mse, same.volume_error), (0.0, 0.0));
    let shifted: Vec<f64> = g.values.iter().map(|v| v + 0.3).collect();
    assert!((compare_values(&shifted, &g).unwrap().mse - 0.09).abs() < 1e-12);
    let flipped: Vec<f64> = g.values.iter().map(|v| -v).collect();
    assert!(g.values.iter().all(|v| *v != 0.0));
    assert_eq!(compare_values(&flipped, &g).unwrap().volume_error, 100.0);
    assert!(compare_values(&g.values[1..], &g).is_err());
}

#[test]
fn network_comparison_uses_batched_values() {
    let sys = air3d();
    let net = tiny_net(&sys);
    let g = ValueGrid::for_system(&sys, &[4, 4, 4], 0.25, |_| 0.0).unwrap();
    let c = compare(&net, &g).unwrap();
    let direct: f64 = (0..g.len())
        .map(|i| net.value(&g.node(i), 0.25).unwrap().powi(2))
        .sum::<f64>()
        / g.len() as f64;
    assert!((c.mse - direct).abs() < 1e-12);
    assert!((0.0..=100.0).contains(&c.volume_error));
    let mut other = g.clone();
    other.system = "two_vehicle".into();
    assert!(matches!(mse(&net, &other), Err(Error::SystemMismatch(..))));
}

#[test]
fn slice_rows_and_values() {
    let sys = air3d();
    let mut buf = Vec::new();
    export_slice(&Constant(3, 0.4), &sys, &[0.0, 0.0, 1.0], [0, 1], 3, 0.0, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x0,x1,value,in_brt");
    assert_eq!(lines.len(), 10);
    assert!(lines[1..].iter().all(|l| l.ends_with(",0.4,0")));
    for bad in [[0, 0], [0, 3]] {
        assert!(export_slice(&Constant(3, 0.0), &sys, &[0.0; 3], bad, 3, 0.0, Vec::new()).is_err());
    }
}

#[test]
fn slice_of_a_grid_equals_interpolation_at_nodes() {
    let sys = air3d();
    let grids = solve(&sys, &[5, 5, 8], &[0.0]).unwrap();
    let src = GridSource::new(grids.clone()).unwrap();
    let mut buf = Vec::new();
    let theta = grids[0].axes[2].node(2);
    export_slice(&src, &sys, &[0.0, 0.0, theta], [0, 1], 5, 0.0, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(f[2], grids[0].interpolate(&[f[0], f[1], theta]).unwrap());
    }
}

#[test]
fn grid_source_interpolates_in_time() {
    let ax = vec![GridAxis { lo: 0.0, hi: 1.0, count: 3, periodic: false }];
    let a = ValueGrid::from_fn("s".into(), ax.clone(), 0.0, |x| x[0]).unwrap();
    let b = ValueGrid::from_fn("s".into(), ax, 1.0, |x| 3.0 * x[0]).unwrap();
    let src = GridSource::new(vec![b, a]).unwrap();
    assert!((src.value(&[0.5], 0.25).unwrap() - 0.75).abs() < 1e-12);
    assert!((src.gradient(&[0.5], 0.5).unwrap()[0] - 2.0).abs() < 1e-12);
    assert_eq!(src.value(&[0.5], -1.0).unwrap(), 0.5);
    assert_eq!(src.value(&[0.5], 7.0).unwrap(), 1.5);
}

#[test]
fn relative_state_matches_relative_dynamics() {
    // d/dt of the relative state of a joint trajectory equals the Air3D flow
    let p = Air3dParams::default();
    let rel_sys = SystemSpec::air3d(p.clone());
    let joint_sys = SystemSpec::two_vehicle(p);
    let joint = [0.3, -0.2, 2.0, -0.1, 0.15, -0.7];
    let (we, wp) = (1.3, -2.1);
    let f = joint_sys.flow(&joint, &[we], &[wp]).unwrap();
    let rel = relative_state(&joint[3..6], &joint[0..3]);
    let h = 1e-6;
    let step = |s: f64| -> [f64; 3] {
        let y: Vec<f64> = joint.iter().zip(&f).map(|(a, b)| a + s * b).collect();
        relative_state(&y[3..6], &y[0..3])
    };
    let (rp, rm) = (step(h), step(-h));
    let expected = rel_sys.flow(&rel, &[we], &[wp]).unwrap();
    for k in 0..3 {
        assert!(((rp[k] - rm[k]) / (2.0 * h) - expected[k]).abs() < 1e-6, "component {k}");
    }
    assert_eq!(joint_from_relative(&rel)[3..], [0.0; 3]);
}

#[test]
fn pairwise_union_is_min_of_pairs() {
    let sys = air3d();
    let grids = solve(&sys, &[21, 21, 16], &[0.0]).unwrap();
    let src = GridSource::new(grids).unwrap();
    let joint = [0.0, 0.0, 0.0, 0.6, 0.5, 1.0, 0.1, 0.0, 3.0];
    let pairs = pairwise_values(&src, &sys, &joint, 0.0).unwrap();
    let u = pairwise_union_value(&src, &sys, &joint, 0.0).unwrap();
    assert_eq!(u, pairs.iter().cloned().fold(f64::INFINITY, f64::min));
    // e1 and p within beta
    assert!(u <= 0.0);
    // all far apart: relative positions leave the box and fall back to l > 0
    let far = [-5.0, -5.0, PI_HALF, 5.0, 5.0, 0.0, 5.0, -5.0, -PI_HALF];
    assert!(pairwise_union_value(&src, &sys, &far, 0.0).unwrap() > 0.0);
}

const PI_HALF: f64 = std::f64::consts::FRAC_PI_2;

#[test]
fn separated_diverging_vehicles_are_safe_under_the_grid_oracle() {
    let sys = air3d();
    let src = GridSource::new(solve(&sys, &[31, 31, 24], &[0.0]).unwrap()).unwrap();
    // pairwise 0.9 apart, every pair heading away from each other
    let joint = [0.0, 0.0, std::f64::consts::PI, 0.0, 0.9, PI_HALF, 0.9, 0.0, 0.0];
    let v = pairwise_union_value(&src, &sys, &joint, 0.0).unwrap();
    assert!(v > 0.0, "{v}");
}

#[test]
fn projection_places_evader_at_origin() {
    let joint_sys = SystemSpec::two_vehicle(Air3dParams::default());
    let net = tiny_net(&joint_sys);
    let g = ValueGrid::for_system(&air3d(), &[3, 3, 3], 0.5, |_| 0.0).unwrap();
    let v = project_two_vehicle(&net, &g).unwrap();
    for i in 0..g.len() {
        let x = g.node(i);
        let direct = net.value(&joint_from_relative(&x), 0.5).unwrap();
        assert!((v[i] - direct).abs() < 1e-12);
    }
    assert!(project_two_vehicle(&tiny_net(&air3d()), &g).is_err());
}
