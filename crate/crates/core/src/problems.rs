//! Built-in problems with closed-form oracles.

use std::sync::Arc;

use crate::alm::IterateRecord;
use crate::error::{AwmpError, Result};
use crate::grid::{GridArray, TimeGrid};
use crate::model::{ControlBox, ControlProblem, Dims, EndpointSet, MultiplierSet, OcpFunctions, Process};
use crate::monitor::{compute_awmp_residuals, split_normal_cone, MTuple};

pub const PROBLEM_NAMES: [&str; 3] = ["paper-linear", "exp-tracking", "trivial-free"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticKind {
    PaperLinear,
    ExpTracking,
    TrivialFree,
}

/// Closed-form optimal process, objective and (when they exist) multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticBundle {
    pub kind: AnalyticKind,
    pub optimal_objective: f64,
}

impl AnalyticBundle {
    pub fn state(&self, t: f64) -> Vec<f64> {
        match self.kind {
            AnalyticKind::PaperLinear => vec![0.0],
            AnalyticKind::ExpTracking => vec![(-t).exp() - 1.0],
            AnalyticKind::TrivialFree => vec![-t],
        }
    }

    /// Optimal process sampled on the grid: states at nodes, controls at the
    /// left node of each interval.
    pub fn sample_process(&self, grid: &TimeGrid) -> Result<Process> {
        let n_int = grid.intervals();
        let x = GridArray::from_fn(n_int + 1, 1, |i, _| self.state(grid.node(i))[0]);
        let u = match self.kind {
            AnalyticKind::PaperLinear => GridArray::zeros(n_int, 2),
            AnalyticKind::ExpTracking => GridArray::from_fn(n_int, 1, |i, _| -1.0 - x.get(i, 0)),
            AnalyticKind::TrivialFree => GridArray::from_fn(n_int, 1, |_, _| -1.0),
        };
        Process::new(grid.clone(), x, u)
    }

    /// Closed-form multipliers with `lambda = 1`, or `None` when the classical
    /// principle fails at the optimum.
    pub fn sample_multipliers(&self, grid: &TimeGrid) -> Result<Option<MultiplierSet>> {
        let n_int = grid.intervals();
        match self.kind {
            AnalyticKind::PaperLinear => Ok(None),
            AnalyticKind::ExpTracking => {
                let p = GridArray::from_fn(n_int + 1, 1, |i, _| -(grid.node(i) - 1.0).exp());
                let r = GridArray::from_fn(n_int, 1, |i, _| -(grid.node(i) - 1.0).exp());
                let pr = self.sample_process(grid)?;
                let bx = ControlBox::uniform(1, -1.0, 1.0)?;
                let mut zeta = GridArray::zeros(n_int, 1);
                for i in 0..n_int {
                    // grad_u H = p_{i+1} f_u + r g_u = p_{i+1} - r_i
                    let gu = p.get(i + 1, 0) - r.get(i, 0);
                    let (z, _) = split_normal_cone(&[gu], pr.u().row(i), &bx)?;
                    zeta.set(i, 0, z[0]);
                }
                Ok(Some(MultiplierSet::new(1.0, p, GridArray::zeros(n_int, 0), r, zeta)?))
            }
            AnalyticKind::TrivialFree => {
                // p = -1, u = -1 at the lower bound absorbs grad_u H = -1.
                let p = GridArray::from_fn(n_int + 1, 1, |_, _| -1.0);
                let zeta = GridArray::from_fn(n_int, 1, |_, _| -1.0);
                Ok(Some(MultiplierSet::new(
                    1.0,
                    p,
                    GridArray::zeros(n_int, 0),
                    GridArray::zeros(n_int, 0),
                    zeta,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NamedProblem {
    pub name: String,
    pub problem: ControlProblem,
    pub analytic: Option<AnalyticBundle>,
}

struct PaperLinear;

impl OcpFunctions for PaperLinear {
    fn cost(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        x1[0]
    }
    fn cost_grad(&self, _x0: &[f64], _x1: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&[0.0, 1.0]);
    }
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn dynamics_jac(&self, _t: f64, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx[0] = 0.0;
        ju.copy_from_slice(&[1.0, 0.0]);
    }
    fn eq_constraints(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = x[0] + u[0] + 2.0 * u[1];
        out[1] = u[0] + 2.0 * u[1];
    }
    fn eq_jac(&self, _t: f64, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx.copy_from_slice(&[1.0, 0.0]);
        ju.copy_from_slice(&[1.0, 2.0, 1.0, 2.0]);
    }
}

/// `x' = u`, `x(0) = 0`, minimize `x(1)`, `u in [-1, 1]`, `-u - x - 1 <= 0`.
struct ExpTracking;

impl OcpFunctions for ExpTracking {
    fn cost(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        x1[0]
    }
    fn cost_grad(&self, _x0: &[f64], _x1: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&[0.0, 1.0]);
    }
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn dynamics_jac(&self, _t: f64, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx[0] = 0.0;
        ju[0] = 1.0;
    }
    fn ineq_constraints(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -u[0] - x[0] - 1.0;
    }
    fn ineq_jac(&self, _t: f64, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx[0] = -1.0;
        ju[0] = -1.0;
    }
}

/// `x' = u`, minimize `x(1)`, `u in [-1, 1]`.
struct TrivialFree;

impl OcpFunctions for TrivialFree {
    fn cost(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        x1[0]
    }
    fn cost_grad(&self, _x0: &[f64], _x1: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(&[0.0, 1.0]);
    }
    fn dynamics(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn dynamics_jac(&self, _t: f64, _x: &[f64], _u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        jx[0] = 0.0;
        ju[0] = 1.0;
    }
}

pub fn get_problem(name: &str) -> Result<NamedProblem> {
    let (problem, kind, objective) = match name {
        "paper-linear" => (
            ControlProblem::new(
                Dims { n: 1, m: 2, m_b: 2, m_g: 0 },
                0.0,
                1.0,
                ControlBox::unbounded(2),
                EndpointSet::Free,
                Arc::new(PaperLinear),
            )?
            .with_notes(
                "smooth linear data; U = R^2 so every box hypothesis holds; \
                 the only feasible process is the zero process; the bounded-multiplier \
                 hypothesis on the equality multipliers fails",
            ),
            AnalyticKind::PaperLinear,
            0.0,
        ),
        "exp-tracking" => (
            ControlProblem::new(
                Dims { n: 1, m: 1, m_b: 0, m_g: 1 },
                0.0,
                1.0,
                ControlBox::uniform(1, -1.0, 1.0)?,
                EndpointSet::FixedInitial(vec![0.0]),
                Arc::new(ExpTracking),
            )?
            .with_notes(
                "smooth data, compact box, single mixed inequality with grad_u g = -1 \
                 bounded away from zero, so multipliers stay bounded",
            ),
            AnalyticKind::ExpTracking,
            (-1.0f64).exp() - 1.0,
        ),
        "trivial-free" => (
            ControlProblem::new(
                Dims { n: 1, m: 1, m_b: 0, m_g: 0 },
                0.0,
                1.0,
                ControlBox::uniform(1, -1.0, 1.0)?,
                EndpointSet::FixedInitial(vec![0.0]),
                Arc::new(TrivialFree),
            )?
            .with_notes("no mixed constraints; the control box alone is active"),
            AnalyticKind::TrivialFree,
            -1.0,
        ),
        other => {
            return Err(AwmpError::UnknownProblem {
                name: other.to_string(),
                available: PROBLEM_NAMES.join(", "),
            })
        }
    };
    Ok(NamedProblem {
        name: name.to_string(),
        problem,
        analytic: Some(AnalyticBundle {
            kind,
            optimal_objective: objective,
        }),
    })
}

/// Costate of the k-th element of the linear example's sequence: zero up to
/// `k/(k+1)`, then linear down to `-1/2` at `t = 1`.
pub fn paper_linear_costate(k: usize, t: f64) -> f64 {
    let kf = k as f64;
    if t < kf / (kf + 1.0) {
        0.0
    } else {
        -((kf + 1.0) / 2.0) * t + kf / 2.0
    }
}

/// The k-th element of the closed-form sequence for the linear example,
/// sampled on `grid`. The costate is sampled at nodes and `q_1` is its exact
/// backward difference quotient, so the adjoint residual vanishes identically.
pub fn analytic_awmp_iterate(name: &str, k: usize, grid: &TimeGrid) -> Result<IterateRecord> {
    if name != "paper-linear" {
        return Err(AwmpError::InvalidArgument(format!(
            "no closed-form sequence for '{name}'"
        )));
    }
    if k < 1 {
        return Err(AwmpError::InvalidArgument("sequence index k must be >= 1".into()));
    }
    let named = get_problem(name)?;
    let prob = &named.problem;
    if grid.t0() != 0.0 || grid.t1() != 1.0 {
        return Err(AwmpError::InvalidArgument("the linear example lives on [0, 1]".into()));
    }
    let n_int = grid.intervals();
    let h = grid.step();
    let p = GridArray::from_fn(n_int + 1, 1, |i, _| paper_linear_costate(k, grid.node(i)));
    let mut q = GridArray::zeros(n_int, 2);
    for i in 0..n_int {
        let q1 = -(p.get(i + 1, 0) - p.get(i, 0)) / h;
        q.set(i, 0, q1);
        q.set(i, 1, -q1);
    }
    let ms = MultiplierSet::new(
        0.5,
        p,
        q,
        GridArray::zeros(n_int, 0),
        GridArray::zeros(n_int, 2),
    )?;
    let process = Process::new(grid.clone(), GridArray::zeros(n_int + 1, 1), GridArray::zeros(n_int, 2))?;
    let awmp = compute_awmp_residuals(prob, grid, &process, &ms)?;
    Ok(IterateRecord {
        k,
        objective: process.objective(prob)?,
        process,
        multipliers: ms,
        rho: 0.0,
        awmp,
    })
}

/// Limit of the linear example's multiplier tuples: the integrable parts
/// vanish weakly while the endpoint pair of the limit multipliers
/// `(lambda, p) = (1/2, 0)` is `lambda grad l - (p(0), -p(1)) = (0, 1/2)`.
pub fn paper_linear_limit_tuple(grid: &TimeGrid) -> MTuple {
    let n_int = grid.intervals();
    MTuple {
        phi: GridArray::zeros(n_int, 1),
        psi: GridArray::zeros(n_int, 2),
        gamma: vec![0.0],
        xi: vec![0.5],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::feasibility_report;

    #[test]
    fn lookup() {
        let p = get_problem("paper-linear").unwrap();
        assert_eq!(p.problem.dims(), Dims { n: 1, m: 2, m_b: 2, m_g: 0 });
        let e = get_problem("exp-tracking").unwrap();
        let obj = e.analytic.unwrap().optimal_objective;
        assert!((obj + 0.6321206).abs() < 1e-7);
        match get_problem("nonexistent") {
            Err(AwmpError::UnknownProblem { available, .. }) => assert!(available.contains("exp-tracking")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn analytic_processes_are_feasible() {
        let grid = make_grid(0.0, 1.0, 1000).unwrap();
        for name in PROBLEM_NAMES {
            let np = get_problem(name).unwrap();
            let an = np.analytic.as_ref().unwrap();
            let pr = an.sample_process(&grid).unwrap();
            let rep = feasibility_report(&np.problem, &pr).unwrap();
            assert!(rep.dyn_max <= 10.0 / 1000.0, "{name}: {rep:?}");
            assert!(rep.b_max.max(rep.gplus_max).max(rep.box_max).max(rep.endpoint) <= 1e-8);
            assert!((pr.objective(&np.problem).unwrap() - an.optimal_objective).abs() <= 1e-8);
        }
    }

    #[test]
    fn euler_defect_is_first_order() {
        let np = get_problem("exp-tracking").unwrap();
        let an = np.analytic.unwrap();
        let d = |n: usize| {
            let g = make_grid(0.0, 1.0, n).unwrap();
            feasibility_report(&np.problem, &an.sample_process(&g).unwrap()).unwrap().dyn_max
        };
        let ratio = d(100) / d(200);
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn linear_sequence_closed_forms() {
        let grid = make_grid(0.0, 1.0, 1000).unwrap();
        let rec = analytic_awmp_iterate("paper-linear", 1, &grid).unwrap();
        assert_eq!(rec.multipliers.p.get(1000, 0), -0.5);
        assert_eq!(rec.multipliers.lambda + rec.multipliers.p.max_abs(), 1.0);
        let rec = analytic_awmp_iterate("paper-linear", 9, &grid).unwrap();
        let q = &rec.multipliers.q;
        assert!((q.max_abs() - 5.0).abs() < 1e-9);
        let l1: f64 = (0..1000).map(|i| grid.step() * q.get(i, 0).abs()).sum();
        assert!((l1 - 0.5).abs() < 1e-9);
        // the stored sign follows q_1 = -p'
        assert!(q.get(999, 0) > 0.0);
        assert!(analytic_awmp_iterate("paper-linear", 0, &grid).is_err());
        assert!(analytic_awmp_iterate("exp-tracking", 1, &grid).is_err());
    }

    #[test]
    fn closed_form_costate() {
        assert_eq!(paper_linear_costate(1, 0.25), 0.0);
        assert_eq!(paper_linear_costate(1, 1.0), -0.5);
        assert_eq!(paper_linear_costate(3, 0.875), -0.25);
    }
}
