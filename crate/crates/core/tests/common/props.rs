//! Property checks. Each takes generated inputs and returns a proptest
//! verdict so it can run under `proptest!` or a hand-driven `TestRunner`.

use awmp::alm::{solve, SolverConfig};
use awmp::cli::csv_table;
use awmp::grid::{make_grid, GridArray};
use awmp::model::{normal_cone_violation, project_box, BoundState, ControlBox, EndpointSet, MultiplierSet, Process};
use awmp::monitor::{compute_awmp_residuals, normalize_multipliers, split_normal_cone};
use awmp::problems::{analytic_awmp_iterate, get_problem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// A box with up to four components; some bounds may be infinite.
pub fn control_box() -> impl Strategy<Value = ControlBox> {
    prop::collection::vec((-5.0..5.0f64, 0.0..5.0f64, 0u8..4), 1..5).prop_map(|parts| {
        let lo = parts
            .iter()
            .map(|(l, _, f)| if *f == 1 { f64::NEG_INFINITY } else { *l })
            .collect();
        let hi = parts
            .iter()
            .map(|(l, w, f)| if *f == 2 { f64::INFINITY } else { l + w })
            .collect();
        ControlBox::new(lo, hi).unwrap()
    })
}

pub fn box_and_points() -> impl Strategy<Value = (ControlBox, Vec<f64>, Vec<f64>)> {
    control_box().prop_flat_map(|b| {
        let m = b.dim();
        (
            Just(b),
            prop::collection::vec(-10.0..10.0f64, m),
            prop::collection::vec(-10.0..10.0f64, m),
        )
    })
}

pub fn check_box_projection(b: &ControlBox, v: &[f64], w: &[f64]) -> Result<(), TestCaseError> {
    let pv = project_box(v, b).unwrap();
    let pw = project_box(w, b).unwrap();
    prop_assert_eq!(project_box(&pv, b).unwrap(), pv.clone());
    prop_assert!(b.violation(&pv) == 0.0);
    prop_assert!(euclid(&diff(&pv, &pw)) <= euclid(&diff(v, w)) * (1.0 + 1e-15));
    Ok(())
}

/// An endpoint set of every supported kind for `n = 2`.
pub fn endpoint_set() -> impl Strategy<Value = EndpointSet> {
    (0u8..4, prop::collection::vec(-3.0..3.0f64, 8), prop::collection::vec(-3.0..3.0f64, 2)).prop_map(
        |(kind, a, c)| match kind {
            0 => EndpointSet::FixedInitial(a[..2].to_vec()),
            1 => EndpointSet::FixedBoth(a[..2].to_vec(), a[2..4].to_vec()),
            2 => EndpointSet::Free,
            _ => {
                // Diagonal dominance keeps the rows independent.
                let mut m = DMatrix::from_row_slice(2, 4, &a);
                m[(0, 0)] += 10.0;
                m[(1, 1)] += 10.0;
                EndpointSet::affine(m, DVector::from_column_slice(&c)).unwrap()
            }
        },
    )
}

pub fn check_endpoint_projection(set: &EndpointSet, v: &[f64], w: &[f64]) -> Result<(), TestCaseError> {
    let mut pv = v.to_vec();
    set.project_point(&mut pv);
    let mut pw = w.to_vec();
    set.project_point(&mut pw);
    let mut ppv = pv.clone();
    set.project_point(&mut ppv);
    prop_assert!(euclid(&diff(&ppv, &pv)) <= 1e-12 * (1.0 + euclid(&pv)));
    prop_assert!(set.distance(&pv) <= 1e-12 * (1.0 + euclid(&pv)));
    prop_assert!(euclid(&diff(&pv, &pw)) <= euclid(&diff(v, w)) * (1.0 + 1e-12) + 1e-12);
    Ok(())
}

/// Box, a control inside it with some components on bounds, a gradient, and
/// an arbitrary competitor from the normal cone.
pub fn split_case() -> impl Strategy<Value = (ControlBox, Vec<f64>, Vec<f64>, Vec<f64>)> {
    control_box().prop_flat_map(|b| {
        let m = b.dim();
        (
            Just(b),
            prop::collection::vec((0u8..3, 0.0..1.0f64), m),
            prop::collection::vec(-10.0..10.0f64, m),
            prop::collection::vec(0.0..10.0f64, m),
        )
            .prop_map(|(b, place, grad, mag)| {
                let u: Vec<f64> = place
                    .iter()
                    .enumerate()
                    .map(|(j, (where_, s))| {
                        let (lo, hi) = (b.lower()[j], b.upper()[j]);
                        match where_ {
                            0 if lo.is_finite() => lo,
                            1 if hi.is_finite() => hi,
                            _ => {
                                let l = if lo.is_finite() { lo } else { hi.min(0.0) - 5.0 };
                                let r = if hi.is_finite() { hi } else { l + 10.0 };
                                l + s * (r - l)
                            }
                        }
                    })
                    .collect();
                (b, u, grad, mag)
            })
    })
}

pub fn check_split_minimality(b: &ControlBox, u: &[f64], grad: &[f64], mag: &[f64]) -> Result<(), TestCaseError> {
    let (zeta, eta) = split_normal_cone(grad, u, b).unwrap();
    prop_assert_eq!(normal_cone_violation(u, b, &zeta).unwrap(), 0.0);
    for j in 0..u.len() {
        prop_assert_eq!(eta[j], zeta[j] - grad[j]);
    }
    // Any other cone element leaves a residual at least as large.
    let states = b.classify(u, 1e-9);
    let other: Vec<f64> = states
        .iter()
        .zip(mag)
        .map(|(s, v)| match s {
            BoundState::Interior => 0.0,
            BoundState::Lower => -v,
            BoundState::Upper => *v,
            BoundState::Pinned => v - 5.0,
        })
        .collect();
    prop_assert_eq!(normal_cone_violation(u, b, &other).unwrap(), 0.0);
    prop_assert!(euclid(&eta) <= euclid(&diff(&other, grad)));
    Ok(())
}

/// A random process (controls inside the box) and sign-consistent
/// multipliers on a small grid.
pub fn random_iterate(name: &str, n_int: usize, seed: u64) -> (awmp::model::ControlProblem, awmp::grid::TimeGrid, Process, MultiplierSet) {
    let named = get_problem(name).unwrap();
    let prob = named.problem;
    let d = prob.dims();
    let grid = make_grid(0.0, 1.0, n_int).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = |rows: usize, cols: usize, lo: f64, hi: f64| {
        GridArray::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
    };
    let x = gen(n_int + 1, d.n, -2.0, 2.0);
    let mut u = gen(n_int, d.m, -2.0, 2.0);
    for i in 0..n_int {
        prob.control_box().project_in_place(u.row_mut(i));
    }
    let p = gen(n_int + 1, d.n, -3.0, 3.0);
    let q = gen(n_int, d.m_b, -3.0, 3.0);
    let r = gen(n_int, d.m_g, -3.0, 0.0);
    let zeta = gen(n_int, d.m, -1.0, 1.0);
    let lambda = rng.gen_range(0.0..2.0);
    let process = Process::new(grid.clone(), x, u).unwrap();
    let ms = MultiplierSet::new(lambda, p, q, r, zeta).unwrap();
    (prob, grid, process, ms)
}

pub fn iterate_case() -> impl Strategy<Value = (usize, usize, u64)> {
    (0usize..3, 2usize..12, any::<u64>())
}

pub fn check_homogeneity(which: usize, n_int: usize, seed: u64, exp2: i32) -> Result<(), TestCaseError> {
    let name = awmp::problems::PROBLEM_NAMES[which];
    let (prob, grid, process, ms) = random_iterate(name, n_int, seed);
    let c = 2f64.powi(exp2);
    let base = compute_awmp_residuals(&prob, &grid, &process, &ms).unwrap();
    let scaled = compute_awmp_residuals(&prob, &grid, &process, &ms.scaled(c)).unwrap();
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| c * x == *y);
    prop_assert!(same(base.eps.as_slice(), scaled.eps.as_slice()));
    prop_assert!(same(base.eta.as_slice(), scaled.eta.as_slice()));
    prop_assert!(same(base.theta.as_slice(), scaled.theta.as_slice()));
    prop_assert!(same(&base.vartheta, &scaled.vartheta));
    prop_assert!(same(&base.nu, &scaled.nu));
    prop_assert_eq!(c * base.eps_norms.l1, scaled.eps_norms.l1);
    prop_assert_eq!(c * base.eta_norms.l1, scaled.eta_norms.l1);
    prop_assert_eq!(c * base.theta_max, scaled.theta_max);
    Ok(())
}

pub fn check_theta_sign(which: usize, n_int: usize, seed: u64) -> Result<(), TestCaseError> {
    let name = awmp::problems::PROBLEM_NAMES[which];
    let (prob, grid, process, ms) = random_iterate(name, n_int, seed);
    let rep = compute_awmp_residuals(&prob, &grid, &process, &ms).unwrap();
    prop_assert!(rep.theta.as_slice().iter().all(|v| *v <= 0.0));
    prop_assert_eq!(rep.r_sign_violation, 0.0);
    Ok(())
}

pub fn check_normalize_idempotent(which: usize, n_int: usize, seed: u64) -> Result<(), TestCaseError> {
    let name = awmp::problems::PROBLEM_NAMES[which];
    let (_, _, _, ms) = random_iterate(name, n_int, seed);
    let once = normalize_multipliers(&ms).unwrap();
    let twice = normalize_multipliers(&once).unwrap();
    prop_assert!((once.normalization() - 1.0).abs() <= 4.0 * f64::EPSILON);
    prop_assert_eq!(twice, once);
    Ok(())
}

pub fn csv_case() -> impl Strategy<Value = (usize, usize, u64)> {
    (0usize..3, 2usize..9, any::<u64>())
}

/// Two runs with the same inputs give byte-identical tables.
pub fn check_csv_determinism(which: usize, n_int: usize, seed: u64) -> Result<(), TestCaseError> {
    let table = || -> String {
        match which {
            0 => {
                let named = get_problem("paper-linear").unwrap();
                let grid = make_grid(0.0, 1.0, n_int).unwrap();
                let kmax = 1 + (seed % 6) as usize;
                let hist: Vec<_> = (1..=kmax)
                    .map(|k| analytic_awmp_iterate("paper-linear", k, &grid).unwrap())
                    .collect();
                csv_table(&named.problem, &hist).unwrap()
            }
            _ => {
                let name = if which == 1 { "exp-tracking" } else { "trivial-free" };
                let named = get_problem(name).unwrap();
                let cfg = SolverConfig { n_intervals: n_int, seed, max_outer: 8, ..Default::default() };
                let res = solve(&named.problem, &cfg).unwrap();
                csv_table(&res.problem, &res.history).unwrap()
            }
        }
    };
    let a = table();
    let b = table();
    prop_assert_eq!(a.as_bytes(), b.as_bytes());
    Ok(())
}

/// Runs every property for `cases` deterministic cases and returns the
/// name and outcome of each suite.
pub fn run_all(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    fn runner(cases: u32) -> TestRunner {
        TestRunner::new_with_rng(
            Config { cases, failure_persistence: None, ..Config::default() },
            TestRng::deterministic_rng(RngAlgorithm::ChaCha),
        )
    }
    let fmt = |r: Result<(), proptest::test_runner::TestError<_>>| r.map_err(|e| format!("{e:?}"));
    let mut out: Vec<(&'static str, Result<(), String>)> = Vec::new();
    out.push((
        "box projection",
        fmt(runner(cases).run(&box_and_points(), |(b, v, w)| check_box_projection(&b, &v, &w))),
    ));
    out.push((
        "endpoint projection",
        runner(cases)
            .run(
                &(endpoint_set(), prop::collection::vec(-10.0..10.0f64, 4), prop::collection::vec(-10.0..10.0f64, 4)),
                |(s, v, w)| check_endpoint_projection(&s, &v, &w),
            )
            .map_err(|e| format!("{e:?}")),
    ));
    out.push((
        "normal-cone split minimality",
        runner(cases)
            .run(&split_case(), |(b, u, g, m)| check_split_minimality(&b, &u, &g, &m))
            .map_err(|e| format!("{e:?}")),
    ));
    out.push((
        "multiplier homogeneity",
        runner(cases)
            .run(&(iterate_case(), -6i32..7), |((w, n, s), e)| check_homogeneity(w, n, s, e))
            .map_err(|e| format!("{e:?}")),
    ));
    out.push((
        "theta sign",
        runner(cases)
            .run(&iterate_case(), |(w, n, s)| check_theta_sign(w, n, s))
            .map_err(|e| format!("{e:?}")),
    ));
    out.push((
        "normalize idempotence",
        runner(cases)
            .run(&iterate_case(), |(w, n, s)| check_normalize_idempotent(w, n, s))
            .map_err(|e| format!("{e:?}")),
    ));
    out.push((
        "csv determinism",
        runner(cases)
            .run(&csv_case(), |(w, n, s)| check_csv_determinism(w, n, s))
            .map_err(|e| format!("{e:?}")),
    ));
    out
}
