mod common;

use std::sync::Arc;

use awmp::certificate::{wmp_certificate_search, CertificatePhase, CertificateVerdict};
use awmp::grid::{make_grid, GridArray};
use awmp::model::{ControlBox, ControlProblem, Dims, EndpointSet, OcpFunctions, Process};
use awmp::problems::get_problem;
use nalgebra::{DMatrix, DVector};

/// `x1' = u^2`, `x2' = u`, `x1(0) = x1(1) = 0`, `x2(0) = 0`, minimize `x2(1)`.
/// Only `u = 0` is feasible and every multiplier of it has `lambda = 0`.
struct Abnormal;

impl OcpFunctions for Abnormal {
    fn cost(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        x1[1]
    }
    fn cost_grad(&self, _x0: &[f64], _x1: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
    }
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0] * u[0];
        out[1] = u[0];
    }
    fn dynamics_jac(&self, _t: f64, _x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx.iter_mut().for_each(|v| *v = 0.0);
        ju[0] = 2.0 * u[0];
        ju[1] = 1.0;
    }
}

fn abnormal_problem() -> ControlProblem {
    let mut a = DMatrix::zeros(3, 4);
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    a[(2, 2)] = 1.0;
    let endpoint = EndpointSet::affine(a, DVector::zeros(3)).unwrap();
    ControlProblem::new(
        Dims { n: 2, m: 1, m_b: 0, m_g: 0 },
        0.0,
        1.0,
        ControlBox::unbounded(1),
        endpoint,
        Arc::new(Abnormal),
    )
    .unwrap()
}

#[test]
fn abnormal_process_needs_phase_b() {
    let prob = abnormal_problem();
    let grid = make_grid(0.0, 1.0, 10).unwrap();
    let pr = Process::new(grid.clone(), GridArray::zeros(11, 2), GridArray::zeros(10, 1)).unwrap();
    let cert = wmp_certificate_search(&prob, &grid, &pr, 1e-6).unwrap();
    assert!(cert.phase_a_residual > 1e-2, "{}", cert.phase_a_residual);
    assert_eq!(cert.verdict, CertificateVerdict::Holds);
    assert!(matches!(cert.phase, CertificatePhase::B { component: 0, .. }), "{:?}", cert.phase);
    let ms = &cert.multipliers;
    assert_eq!(ms.lambda, 0.0);
    // p_1 is a constant of modulus 1, p_2 vanishes.
    let p1 = ms.p.get(0, 0);
    assert!((p1.abs() - 1.0).abs() < 1e-9);
    for i in 0..=10 {
        assert!((ms.p.get(i, 0) - p1).abs() < 1e-9);
        assert!(ms.p.get(i, 1).abs() < 1e-9);
    }
}

#[test]
fn frozen_floor_matches_oracle() {
    let o = common::linear_example_oracle(50);
    let floor = common::LINEAR_EXAMPLE_FLOOR_N50;
    assert!(o.best_normalized >= floor);
    assert!((o.best_normalized - floor) / floor < 1e-10);
    // The oracle's raw values agree with the hand computation
    // sqrt(0.8 h / (1 + 0.8 h)) for phase A and sqrt(0.8 h) for phase B.
    let h: f64 = 1.0 / 50.0;
    assert!((o.phase_a_raw - (0.8 * h / (1.0 + 0.8 * h)).sqrt()).abs() < 1e-3);
    assert!((o.phase_b_best_raw - (0.8 * h).sqrt()).abs() < 1e-3);
}

#[test]
fn linear_example_matches_oracle() {
    let named = get_problem("paper-linear").unwrap();
    let grid = make_grid(0.0, 1.0, 50).unwrap();
    let pr = named.analytic.as_ref().unwrap().sample_process(&grid).unwrap();
    let cert = wmp_certificate_search(&named.problem, &grid, &pr, 1e-6).unwrap();
    let o = common::linear_example_oracle(50);
    assert!((cert.phase_a_residual - o.phase_a_raw).abs() < 1e-10);
    assert!((cert.residual - o.best_normalized).abs() < 1e-10);
}

#[test]
fn verdicts_ignore_cost_scaling() {
    for (name, n_int) in [("paper-linear", 20), ("exp-tracking", 40)] {
        let named = get_problem(name).unwrap();
        let grid = make_grid(0.0, 1.0, n_int).unwrap();
        let pr = named.analytic.as_ref().unwrap().sample_process(&grid).unwrap();
        let base = wmp_certificate_search(&named.problem, &grid, &pr, 1e-6).unwrap();
        for e in [-3, 2, 5] {
            let scaled = named.problem.with_cost_scale(2f64.powi(e)).unwrap();
            let cert = wmp_certificate_search(&scaled, &grid, &pr, 1e-6).unwrap();
            assert_eq!(cert.verdict.label(), base.verdict.label(), "{name} scale 2^{e}");
            assert!((cert.residual - base.residual).abs() <= 1e-9 * base.residual.max(1e-12), "{name} 2^{e}");
        }
    }
}

#[test]
fn phase_a_matches_enumeration_on_small_grids() {
    let named = get_problem("exp-tracking").unwrap();
    for n_int in 2..=6 {
        let grid = make_grid(0.0, 1.0, n_int).unwrap();
        let pr = named.analytic.as_ref().unwrap().sample_process(&grid).unwrap();
        let cert = wmp_certificate_search(&named.problem, &grid, &pr, 1e-6).unwrap();
        let brute = common::exp_tracking_phase_a_brute_force(n_int, pr.u().as_slice());
        assert!((cert.phase_a_residual - brute).abs() <= 1e-8, "N = {n_int}");
    }
}
