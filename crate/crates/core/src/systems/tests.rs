use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn air3d() -> SystemSpec {
    SystemSpec::air3d(Air3dParams::default())
}

fn benchmarks() -> Vec<SystemSpec> {
    let p = Air3dParams::default();
    vec![
        SystemSpec::air3d(p.clone()),
        SystemSpec::two_vehicle(p.clone()),
        SystemSpec::three_vehicle(p),
        SystemSpec::narrow_passage(NarrowPassageParams::default()),
    ]
}

fn random_state(sys: &SystemSpec, rng: &mut impl Rng) -> Vec<f64> {
    sys.domain.iter().map(|iv| rng.random_range(iv.lo..=iv.hi)).collect()
}

fn assert_close(a: &[f64], b: &[f64]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12, "{a:?} != {b:?}");
    }
}

#[test]
fn shipped_systems_validate() {
    for sys in benchmarks() {
        sys.validate().unwrap();
    }
    SystemSpec::control_integrator().validate().unwrap();
    SystemSpec::disturbance_integrator().validate().unwrap();
    SystemSpec::stationary(2).validate().unwrap();
}

#[test]
fn validate_rejects_bad_periodic_width() {
    let mut sys = air3d();
    sys.domain[2] = Interval::new(-1.0, 1.0);
    assert!(matches!(sys.validate(), Err(Error::InvalidSystem { .. })));
}

#[test]
fn air3d_flow_examples() {
    let sys = air3d();
    assert_close(&sys.flow(&[0.0, 0.0, 0.0], &[0.0], &[0.0]).unwrap(), &[0.0, 0.0, 0.0]);
    assert_close(
        &sys.flow(&[0.0, 0.0, FRAC_PI_2], &[0.0], &[1.0]).unwrap(),
        &[-0.75, 0.75, 1.0],
    );
}

#[test]
fn two_vehicle_flow_example() {
    let sys = SystemSpec::two_vehicle(Air3dParams::default());
    let f = sys.flow(&[0.0, 0.0, 0.0, 0.0, 0.0, PI], &[0.0], &[0.0]).unwrap();
    assert_close(&f, &[0.75, 0.0, 0.0, -0.75, 0.0, 0.0]);
}

#[test]
fn flow_rejects_bad_inputs() {
    let sys = air3d();
    assert!(matches!(
        sys.flow(&[0.0, 0.0], &[0.0], &[0.0]),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(matches!(
        sys.flow(&[0.0, 0.0, 0.0], &[3.5], &[0.0]),
        Err(Error::InputOutOfBounds { what: "control", .. })
    ));
    assert!(matches!(
        sys.flow(&[0.0, 0.0, 0.0], &[0.0], &[-4.0]),
        Err(Error::InputOutOfBounds { what: "disturbance", .. })
    ));
}

#[test]
fn air3d_target_examples() {
    let sys = air3d();
    assert!((sys.target_l(&[0.3, 0.4, 1.0]).unwrap() - 0.25).abs() < 1e-15);
    for th in [-3.0, 0.0, 2.0] {
        assert_eq!(sys.target_l(&[0.0, 0.0, th]).unwrap(), -0.25);
    }
}

#[test]
fn three_vehicle_target_is_min_pairwise() {
    let sys = SystemSpec::three_vehicle(Air3dParams::default());
    // triangle with |e1 e2| = 0.5, |e1 p| = 0.6, |e2 p| = 0.2
    let cos_a: f64 = (0.25 + 0.04 - 0.36) / (2.0 * 0.5 * 0.2);
    let a = cos_a.acos();
    let p = [0.5 - 0.2 * cos_a, 0.2 * a.sin()];
    let x = [0.0, 0.0, 0.0, 0.5, 0.0, 0.0, p[0], p[1], 0.0];
    let l = sys.target_l(&x).unwrap();
    assert!((l - (0.2 - 0.25)).abs() < 1e-12, "{l}");
}

#[test]
fn obstacle_absent_for_brt_systems() {
    assert_eq!(air3d().obstacle_g(&[0.0, 0.0, 0.0]).unwrap(), None);
    let constant = air3d().with_obstacle(Obstacle::Constant(-1e9));
    assert_eq!(constant.obstacle_g(&[0.0, 0.0, 0.0]).unwrap(), Some(-1e9));
}

fn passage_state(c1: [f64; 2], c2: [f64; 2]) -> Vec<f64> {
    vec![c1[0], c1[1], 0.0, 3.0, 0.0, c2[0], c2[1], PI, 3.0, 0.0]
}

#[test]
fn narrow_passage_obstacle_examples() {
    let p = NarrowPassageParams::default();
    let sys = SystemSpec::narrow_passage(p.clone());
    // coincident cars far from curbs and from the stranded car
    let g = sys.obstacle_g(&passage_state([-5.0, 0.0], [-5.0, 0.0])).unwrap().unwrap();
    assert!(g > 0.0);
    // lane centres, far apart
    let g = sys.obstacle_g(&passage_state([-6.0, -1.4], [6.0, 1.4])).unwrap().unwrap();
    assert!(g < 0.0);
    // car 2 touching the upper curb, everything else clear
    let y = p.curb_hi - p.footprint_radius;
    let g = sys.obstacle_g(&passage_state([-6.0, -1.4], [6.0, y])).unwrap().unwrap();
    assert!(g.abs() < 1e-12, "{g}");
}

#[test]
fn narrow_passage_target_inside_boxes() {
    let sys = SystemSpec::narrow_passage(NarrowPassageParams::default());
    assert!(sys.target_l(&passage_state([6.0, -1.4], [-6.0, 1.4])).unwrap() < 0.0);
    assert!(sys.target_l(&passage_state([-6.0, -1.4], [-6.0, 1.4])).unwrap() > 0.0);
}

#[test]
fn air3d_hamiltonian_examples() {
    let sys = air3d();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = random_state(&sys, &mut rng);
        // evader term +3|-1|, pursuer term -3|1|
        let h = sys.hamiltonian_analytic(&x, &[0.0, 0.0, 1.0]).unwrap();
        assert!(h.abs() < 1e-15);
        assert_eq!(sys.hamiltonian_bruteforce(&x, &[0.0, 0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(sys.hamiltonian_analytic(&x, &[0.0; 3]).unwrap(), 0.0);
    }
    assert_eq!(sys.hamiltonian_analytic(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(sys.hamiltonian_bruteforce(&[0.0; 3], &[1.0, 0.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn bruteforce_single_control() {
    let sys = SystemSpec::control_integrator();
    for c in [-2.0, -0.5, 0.0, 0.7] {
        assert_eq!(sys.hamiltonian_bruteforce(&[0.1], &[c]).unwrap(), f64::abs(c));
    }
    let sys = SystemSpec::disturbance_integrator();
    assert_eq!(sys.hamiltonian_bruteforce(&[0.1], &[0.7]).unwrap(), -0.7);
}

#[test]
fn analytic_matches_bruteforce_on_benchmarks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for sys in benchmarks() {
        for _ in 0..1000 {
            let x = random_state(&sys, &mut rng);
            let g: Vec<f64> = (0..sys.state_dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = sys.hamiltonian_analytic(&x, &g).unwrap();
            let b = sys.hamiltonian_bruteforce(&x, &g).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{}: {a} vs {b}", sys.name);

            let (u, d) = sys.optimal_inputs(&x, &g).unwrap();
            let f = sys.flow(&x, &u, &d).unwrap();
            let plugged: f64 = g.iter().zip(&f).map(|(p, v)| p * v).sum();
            assert_eq!(plugged, b, "{}", sys.name);
        }
    }
}

#[test]
fn air3d_closed_form_sign_convention() {
    // H = p1(-ve + vp cos x3) + p2 vp sin x3 + w|p1 x2 - p2 x1 - p3| - w|p3|
    let sys = air3d();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x = random_state(&sys, &mut rng);
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let common = p[0] * (-0.75 + 0.75 * x[2].cos()) + p[1] * 0.75 * x[2].sin();
        let c = p[0] * x[1] - p[1] * x[0] - p[2];
        let ours = common + 3.0 * c.abs() - 3.0 * p[2].abs();
        assert!((ours - sys.hamiltonian_bruteforce(&x, &p).unwrap()).abs() < 1e-12);

        // The alternative printing `-w|c| + w p3` coincides with the
        // role-swapped (min over the evader, max over the pursuer) Hamiltonian
        // exactly when p3 >= 0, and not with the avoid game.
        let printed = common - 3.0 * c.abs() + 3.0 * p[2];
        let mut swapped = sys.clone();
        swapped.orientation = Orientation::ReachTarget;
        let h_swapped = swapped.hamiltonian_bruteforce(&x, &p).unwrap();
        if p[2] >= 0.0 {
            assert!((printed - h_swapped).abs() < 1e-12);
        }
        if c.abs() > 1e-3 {
            assert!((printed - ours).abs() > 1e-3);
        }
    }
}

#[test]
fn optimal_inputs_sign_rule_and_ties() {
    let sys = air3d();
    // omega_e coefficient p1 x2 - p2 x1 - p3 = -p3 = 1 > 0 at the origin
    let (u, d) = sys.optimal_inputs(&[0.0, 0.0, 0.3], &[0.0, 0.0, -1.0]).unwrap();
    assert_eq!(u, vec![3.0]);
    // pursuer minimizes p3 * w_p with p3 = -1: picks +3
    assert_eq!(d, vec![3.0]);
    let (u, d) = sys.optimal_inputs(&[0.2, 0.1, 0.3], &[0.0; 3]).unwrap();
    assert_eq!((u, d), (vec![-3.0], vec![-3.0]));
}

#[test]
fn reach_orientation_negates_without_disturbance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let reach = SystemSpec::narrow_passage(NarrowPassageParams::default());
    let mut avoid = reach.clone();
    avoid.orientation = Orientation::AvoidTarget;
    for _ in 0..200 {
        let x = random_state(&reach, &mut rng);
        let g: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let a = reach.hamiltonian_analytic(&x, &g).unwrap();
        let b = avoid.hamiltonian_analytic(&x, &neg).unwrap();
        assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn distance_targets_are_one_lipschitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut systems = benchmarks();
    systems.push(SystemSpec::control_integrator());
    for sys in systems {
        for _ in 0..2000 {
            let x = random_state(&sys, &mut rng);
            let y = random_state(&sys, &mut rng);
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dl = (sys.target_l(&x).unwrap() - sys.target_l(&y).unwrap()).abs();
            assert!(dl <= dist + 1e-9, "{}", sys.name);
        }
    }
}

#[test]
fn wrap_angle_into_half_open_range() {
    for v in [-7.0, -PI, 0.0, PI, 3.5 * PI, 100.0] {
        let w = wrap_angle(v, -PI);
        assert!((-PI..PI).contains(&w), "{v} -> {w}");
        let k = ((v - w) / (2.0 * PI)).round();
        assert!((v - w - 2.0 * PI * k).abs() < 1e-9);
    }
    assert_eq!(wrap_angle(PI, -PI), -PI);
}
