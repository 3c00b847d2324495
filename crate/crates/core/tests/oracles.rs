//! Solver outputs checked against independent computations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pluripot_core::envelope::SolverOptions;
use pluripot_core::lattice::DEFAULT_NODE_CAP;
use pluripot_core::*;

fn disk_mask(h: f64) -> Arc<DomainMask> {
    let dom = make_domain(&DomainParams::UnitDisk {}).unwrap();
    let lat = Lattice::covering(dom.bbox(), h, 1, 2, DEFAULT_NODE_CAP).unwrap();
    classify_nodes(&lat, &dom).unwrap()
}

#[test]
fn harmonic_extension_matches_dense_solve() {
    let mask = disk_mask(0.1);
    let lat = mask.lattice();
    let f = GridFunction::from_fn(&mask, "data", |p| (3.0 * p[0]).exp() * (3.0 * p[1]).cos() + p[0] * p[1]).unwrap();
    let interior = mask.interior_slots();
    let n = interior.len();
    let col = |s: u32| interior.iter().position(|&t| t == s);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (i, &s) in interior.iter().enumerate() {
        a[(i, i)] = 2.0 * lat.axes() as f64;
        for axis in 0..lat.axes() {
            for step in [-1, 1] {
                let t = mask.slot(lat.neighbor(mask.node(s), axis, step).unwrap()).unwrap();
                match col(t) {
                    Some(j) => a[(i, j)] -= 1.0,
                    None => b[i] += f.at(t),
                }
            }
        }
    }
    let x = a.lu().solve(&b).unwrap();
    let u = harmonic_extension(&f, &SolverOptions::default()).unwrap();
    let err = interior.iter().enumerate().map(|(i, &s)| (u.at(s) - x[i]).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "max deviation from the dense solve {err}");
    for &s in mask.boundary_slots() {
        assert_eq!(u.at(s), f.at(s));
    }
}

#[test]
fn jensen_measures_reproduce_pluriharmonic_functions() {
    // A Jensen measure integrates Re z and Im z exactly, so its barycentre is z.
    let mask = disk_mask(0.25);
    let cone = build_cone(&mask, &ConeConfig::default_for(1)).unwrap();
    let phi = GridFunction::from_fn(&mask, "phi", |p| (p[0] - 0.3).abs() - p[1] * p[1]).unwrap();
    let re = GridFunction::from_fn(&mask, "re", |p| p[0]).unwrap();
    let im = GridFunction::from_fn(&mask, "im", |p| p[1]).unwrap();
    let env = psh_envelope(&phi, &cone, &SolverOptions::default().with_tol(1e-12)).unwrap().envelope;
    for &z in mask.interior_slots() {
        let sol = jensen_lp(z, &phi, &cone, &LpOptions::default().with_method(LpMethod::Dense)).unwrap();
        let mu = &sol.measure;
        assert!(mu.weights().iter().all(|&(_, w)| w >= 0.0));
        assert!((mu.total() - 1.0).abs() < 1e-10);
        let p = mask.slot_point(z);
        assert!((mu.integrate(&re).unwrap() - p[0]).abs() < 1e-10);
        assert!((mu.integrate(&im).unwrap() - p[1]).abs() < 1e-10);
        assert!((sol.value - env.at(z)).abs() < 1e-8, "primal {} vs envelope {}", sol.value, env.at(z));
        assert!(check_jensen_inequality(&env, mu, z).unwrap().holds);
    }
}

#[test]
fn boundary_nodes_carry_point_masses() {
    let mask = disk_mask(0.25);
    let cone = build_cone(&mask, &ConeConfig::default_for(1)).unwrap();
    let phi = GridFunction::from_fn(&mask, "phi", |p| p[0] * p[1]).unwrap();
    for &z in mask.boundary_slots() {
        let sol = jensen_lp(z, &phi, &cone, &LpOptions::default()).unwrap();
        assert_eq!(sol.measure.weights(), &[(z, 1.0)]);
    }
}

fn radial_log_error(h: f64, r: f64) -> f64 {
    let mask = disk_mask(h);
    let mut cfg = ConeConfig::default_for(1);
    cfg.radii = vec![1.0, 2.0, 4.0];
    let cone = build_cone(&mask, &cfg).unwrap();
    let radius = |s: u32| {
        let p = mask.slot_point(s);
        p[0].hypot(p[1])
    };
    let k: Vec<u32> = mask.interior_slots().iter().copied().filter(|&s| radius(s) <= r).collect();
    let u = relative_extremal(&k, &cone, &SolverOptions::default()).unwrap();
    let oracle = |s: u32| (radius(s).ln() / r.recip().ln()).max(-1.0);
    mask.interior_slots().iter().map(|&s| (u.at(s) - oracle(s)).abs()).fold(0.0, f64::max)
}

#[test]
fn relative_extremal_of_a_disk_converges_to_radial_log() {
    let coarse = radial_log_error(0.1, 0.5);
    let fine = radial_log_error(0.05, 0.5);
    assert!(fine < 0.75 * coarse, "errors {coarse} -> {fine}");
    // Boundary nodes sit up to one spacing outside the circle.
    assert!(fine < 2.0 * 0.05 / 0.5f64.recip().ln(), "error {fine}");
}

#[test]
fn hartogs_witness_disk_checks_out_independently() {
    let dom = make_domain(&DomainParams::HartogsTriangle {}).unwrap();
    let probe = AnalyticDiskProbe::new(vec![
        vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
    ]);
    let w = disk_probe(&dom, &[probe]).unwrap().witness.expect("the disk ζ ↦ (0, ζ) refutes");
    let inside = |p: &[f64]| {
        let (z, w) = (p[0].hypot(p[1]), p[2].hypot(p[3]));
        z < w && w < 1.0
    };
    let zb = Complex64::new(w.zeta_boundary[0], w.zeta_boundary[1]);
    let zi = Complex64::new(w.zeta_inside[0], w.zeta_inside[1]);
    assert!(zb.norm() < 1.0 && zi.norm() < 1.0);
    assert_eq!(w.probe.eval(zb), w.boundary_point);
    assert_eq!(w.probe.eval(zi), w.inside_point);
    assert!(!inside(&w.boundary_point));
    assert!(inside(&w.inside_point));
    assert!(dom.closure(&w.boundary_point));
}

#[test]
fn disk_classifies_as_hyperconvex_evidence() {
    let dom = make_domain(&DomainParams::UnitDisk {}).unwrap();
    let lat = Lattice::covering(dom.bbox(), 0.05, 1, 2, DEFAULT_NODE_CAP).unwrap();
    let v = classify_domain(&dom, &lat, &ConeConfig::default_for(1), &ClassifyOptions::default()).unwrap();
    assert_eq!(v.verdict, Verdict::EvidencePHyperconvex, "{:?}", v.reasons);
}

#[test]
fn worm_profile_conditions() {
    use std::f64::consts::PI;
    let worm = make_worm_profile(PI.powi(-4)).unwrap();
    assert!((worm.eta(worm.a()) - 1.0).abs() < 1e-12);
    for i in 0..=2000 {
        let x = -1.5 * worm.a() + 3.0 * worm.a() * i as f64 / 2000.0;
        let e = worm.eta(x);
        assert!(e >= 0.0);
        assert_eq!(e, worm.eta(-x));
        assert_eq!(e == 0.0, x.abs() <= 2.0 * PI);
        let fd = (worm.eta(x + 1e-6) - worm.eta(x - 1e-6)) / 2e-6;
        assert!((fd - worm.eta_prime(x)).abs() < 1e-5 * (1.0 + fd.abs()));
    }
    assert!(make_worm_profile(0.0).is_err());
}
