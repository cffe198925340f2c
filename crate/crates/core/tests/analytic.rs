use awmp::alm::{solve, SolveStatus, SolverConfig};
use awmp::grid::make_grid;
use awmp::problems::{analytic_awmp_iterate, get_problem, paper_linear_costate};
use awmp::transcription::transcribe;
use nalgebra::DMatrix;

/// The stationarity residual pairs control `i` with the costate at node
/// `i + 1`, so its L1 norm is the right Riemann sum of `|p|`.
#[test]
fn eta_norm_is_right_riemann_sum() {
    let grid = make_grid(0.0, 1.0, 1000).unwrap();
    for k in 1..=100 {
        let rec = analytic_awmp_iterate("paper-linear", k, &grid).unwrap();
        let h = grid.step();
        let riemann: f64 = (1..=1000).map(|j| h * paper_linear_costate(k, grid.node(j)).abs()).sum();
        let got = rec.awmp.eta_norms.l1;
        assert!((got - riemann).abs() <= 1e-12 * riemann, "k = {k}: {got} vs {riemann}");
    }
}

#[test]
fn eta_norm_converges_at_first_order() {
    for k in [1, 3, 10] {
        let exact = 1.0 / (4.0 * (k as f64 + 1.0));
        let mut prev = f64::INFINITY;
        for n_int in [1000, 2000, 4000, 8000] {
            let grid = make_grid(0.0, 1.0, n_int).unwrap();
            let rec = analytic_awmp_iterate("paper-linear", k, &grid).unwrap();
            let rel = (rec.awmp.eta_norms.l1 - exact).abs() / exact;
            assert!(rel <= 1.01 * (k as f64 + 1.0) * grid.step(), "k = {k}, N = {n_int}: {rel}");
            assert!(rel < prev);
            prev = rel;
        }
    }
}

#[test]
fn iterates_are_exact_where_sampling_allows() {
    let grid = make_grid(0.0, 1.0, 1000).unwrap();
    let mut prev = f64::INFINITY;
    for k in 1..=100 {
        let rec = analytic_awmp_iterate("paper-linear", k, &grid).unwrap();
        let a = &rec.awmp;
        assert_eq!(a.eps.max_abs(), 0.0);
        assert_eq!(a.transversality_norm(), 0.0);
        assert_eq!(a.theta.cols(), 0);
        assert!(a.normalization_gap <= 1e-12);
        assert!(a.eta_norms.l1 < prev);
        prev = a.eta_norms.l1;
    }
    let k1 = analytic_awmp_iterate("paper-linear", 1, &grid).unwrap();
    assert_eq!(k1.multipliers.p.get(1000, 0), -0.5);
    let k9 = analytic_awmp_iterate("paper-linear", 9, &grid).unwrap();
    let q1: Vec<f64> = (0..1000).map(|i| k9.multipliers.q.get(i, 0)).collect();
    assert!((q1.iter().fold(0.0_f64, |a, v| a.max(v.abs())) - 5.0).abs() < 1e-9);
    assert!((q1.iter().map(|v| v.abs() * grid.step()).sum::<f64>() - 0.5).abs() < 1e-12);
    assert!(analytic_awmp_iterate("paper-linear", 0, &grid).is_err());
    assert!(analytic_awmp_iterate("exp-tracking", 1, &grid).is_err());
}

/// The transcribed constraints of the linear example leave exactly one free
/// direction: `x_N = h u1_{N-1}`, `u2_{N-1} = -u1_{N-1} / 2`, everything else
/// zero. Nothing constrains the last state beyond the Euler step, so the
/// transcribed problem is unbounded along it.
#[test]
fn linear_example_constraint_null_space() {
    let named = get_problem("paper-linear").unwrap();
    for n_int in [2, 5, 17] {
        let grid = make_grid(0.0, 1.0, n_int).unwrap();
        let nlp = transcribe(&named.problem, &grid).unwrap();
        let nv = nlp.n_vars();
        let mut cols = Vec::with_capacity(nv);
        for j in 0..nv {
            let mut z = vec![0.0; nv];
            z[j] = 1.0;
            let r = nlp.residuals(&z).unwrap();
            let mut col: Vec<f64> = r.defects.as_slice().to_vec();
            col.extend_from_slice(r.eq.as_slice());
            cols.push(col);
        }
        let rows = cols[0].len();
        let a = DMatrix::from_fn(rows, nv, |i, j| cols[j][i]);
        let svd = a.clone().svd(false, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
        assert_eq!(nv - rank, 1, "N = {n_int}");

        let h = grid.step();
        let sl = n_int + 1;
        let mut v = vec![0.0; nv];
        v[n_int] = h;
        v[sl + 2 * (n_int - 1)] = 1.0;
        v[sl + 2 * (n_int - 1) + 1] = -0.5;
        let av = &a * nalgebra::DVector::from_column_slice(&v);
        assert!(av.amax() < 1e-15);
    }
}

#[test]
fn linear_example_solve_diverges() {
    let named = get_problem("paper-linear").unwrap();
    let res = solve(&named.problem, &SolverConfig::default()).unwrap();
    assert_eq!(res.status, SolveStatus::InnerFailure, "{}", res.diagnostic);
    assert!(res.diagnostic.contains("diverge"));
}

#[test]
fn exp_tracking_solution_is_the_euler_optimum() {
    let named = get_problem("exp-tracking").unwrap();
    for n_int in [50, 100] {
        let cfg = SolverConfig { n_intervals: n_int, ..Default::default() };
        let res = solve(&named.problem, &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::ConvergedAwmp);
        let h = 1.0 / n_int as f64;
        let euler = (1.0 - h).powi(n_int as i32) - 1.0;
        let obj = res.history.last().unwrap().objective;
        assert!((obj - euler).abs() < cfg.tol_feas, "N = {n_int}: {obj} vs {euler}");
    }
}
