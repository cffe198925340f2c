//! Search for classical weak-maximum-principle multipliers at a fixed process.
//!
//! The principle is linear in `(lambda, p, q, r, zeta)` once the process is
//! fixed, so the search is a sign-constrained least-squares problem. The
//! normalization `lambda + |p| = 1` is not convex; positive homogeneity lets
//! us split it into `lambda = 1` (phase A) and `lambda = 0` with one costate
//! entry pinned to `+-1` (phase B).

use nalgebra::{DMatrix, DVector};

use crate::error::{AwmpError, Result};
use crate::grid::{GridArray, TimeGrid};
use crate::lsq::{sign_constrained_lsq, SignConstraint};
use crate::model::{feasibility_report, slack, BoundState, ControlProblem, Jacobians, MultiplierSet, Process, BOX_ACTIVE_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateConfig {
    pub tol: f64,
    pub floor_factor: f64,
    /// Largest admissible feasibility violation; `None` means `10 h`.
    pub feas_tol: Option<f64>,
    /// Slack at or below which an inequality may carry a multiplier.
    pub active_tol: f64,
    /// Weight of the rows that prefer small normal-cone elements.
    pub zeta_weight: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            floor_factor: 10.0,
            feas_tol: None,
            active_tol: 1e-5,
            zeta_weight: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CertificateVerdict {
    Holds,
    FailsAboveFloor(f64),
    Inconclusive,
}

impl CertificateVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            CertificateVerdict::Holds => "Holds",
            CertificateVerdict::FailsAboveFloor(_) => "FailsAboveFloor",
            CertificateVerdict::Inconclusive => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificatePhase {
    /// `lambda = 1`.
    A,
    /// `lambda = 0`, `p[node][component] = sign`.
    B { node: usize, component: usize, sign: i8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmpCertificate {
    /// Best multipliers, normalized to `lambda + max |p| = 1`.
    pub multipliers: MultiplierSet,
    /// Best residual divided by its phase's scale (see [`phase_scale`]).
    pub residual: f64,
    /// Unscaled residual of the best phase.
    pub raw_residual: f64,
    pub phase: CertificatePhase,
    /// Unscaled phase A residual.
    pub phase_a_residual: f64,
    pub verdict: CertificateVerdict,
}

/// Linear system of the principle at a fixed process.
///
/// Unknowns are packed as `[p (N+1)n, q N m_b, r N m_g, zeta N m]`. Rows are
/// `sqrt(h)` times the adjoint residuals, `sqrt(h)` times the stationarity
/// residuals `zeta - grad_u H`, the transversality rows, and finally small
/// weighted rows on `zeta` that break ties toward the least normal element.
#[derive(Debug, Clone)]
pub struct WmpSystem {
    pub a: DMatrix<f64>,
    /// Right-hand side per unit of `lambda`.
    pub rhs_lambda: DVector<f64>,
    pub signs: Vec<SignConstraint>,
    /// Number of rows that make up the residual.
    pub main_rows: usize,
    /// `max |grad l|` at the process endpoints.
    pub cost_grad_max: f64,
    n_int: usize,
    n: usize,
    m: usize,
    m_b: usize,
    m_g: usize,
}

impl WmpSystem {
    pub fn p_index(&self, node: usize, comp: usize) -> usize {
        node * self.n + comp
    }

    fn q_offset(&self) -> usize {
        (self.n_int + 1) * self.n
    }

    fn r_offset(&self) -> usize {
        self.q_offset() + self.n_int * self.m_b
    }

    fn zeta_offset(&self) -> usize {
        self.r_offset() + self.n_int * self.m_g
    }

    /// Residual of the main rows at `y` for the given `lambda`.
    pub fn residual(&self, y: &[f64], lambda: f64) -> f64 {
        let yv = DVector::from_column_slice(y);
        let r = &self.a * yv - &self.rhs_lambda * lambda;
        r.rows(0, self.main_rows).norm()
    }

    fn unpack(&self, y: &[f64], lambda: f64) -> Result<MultiplierSet> {
        let n_int = self.n_int;
        let p = GridArray::from_vec(n_int + 1, self.n, y[..self.q_offset()].to_vec())?;
        let q = GridArray::from_vec(n_int, self.m_b, y[self.q_offset()..self.r_offset()].to_vec())?;
        let r = GridArray::from_vec(n_int, self.m_g, y[self.r_offset()..self.zeta_offset()].to_vec())?;
        let zeta = GridArray::from_vec(n_int, self.m, y[self.zeta_offset()..].to_vec())?;
        // Clean signed zeros produced by column flips.
        let r = GridArray::from_fn(r.rows(), r.cols(), |i, j| r.get(i, j).min(0.0));
        MultiplierSet::new(lambda, p, q, r, zeta)
    }
}

pub fn build_wmp_system(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    cfg: &CertificateConfig,
) -> Result<WmpSystem> {
    process.check_against(prob)?;
    let d = prob.dims();
    let (n, m, m_b, m_g) = (d.n, d.m, d.m_b, d.m_g);
    let n_int = grid.intervals();
    let h = grid.step();
    let sh = h.sqrt();
    let nv = (n_int + 1) * n + n_int * (m_b + m_g + m);
    let main_rows = n_int * (n + m) + 2 * n;
    let mut sys = WmpSystem {
        a: DMatrix::zeros(main_rows, nv),
        rhs_lambda: DVector::zeros(main_rows),
        signs: vec![SignConstraint::Free; nv],
        main_rows,
        cost_grad_max: 0.0,
        n_int,
        n,
        m,
        m_b,
        m_g,
    };
    let (qo, ro, zo) = (sys.q_offset(), sys.r_offset(), sys.zeta_offset());
    let mut jac = Jacobians::zeros(d);
    let mut g = vec![0.0; m_g];
    let mut zeta_rows = Vec::new();
    for i in 0..n_int {
        let t = grid.node(i);
        let (x, u) = (process.x().row(i), process.u().row(i));
        prob.fill_jacobians(t, x, u, &mut jac);
        // adjoint: -(p_{i+1} - p_i)/h - f_x^T p_{i+1} - b_x^T q_i - g_x^T r_i
        for k in 0..n {
            let row = i * n + k;
            sys.a[(row, i * n + k)] += sh / h;
            sys.a[(row, (i + 1) * n + k)] -= sh / h;
            for l in 0..n {
                sys.a[(row, (i + 1) * n + l)] -= sh * jac.fx[l * n + k];
            }
            for l in 0..m_b {
                sys.a[(row, qo + i * m_b + l)] -= sh * jac.bx[l * n + k];
            }
            for l in 0..m_g {
                sys.a[(row, ro + i * m_g + l)] -= sh * jac.gx[l * n + k];
            }
        }
        // stationarity: zeta_i - f_u^T p_{i+1} - b_u^T q_i - g_u^T r_i
        for k in 0..m {
            let row = n_int * n + i * m + k;
            sys.a[(row, zo + i * m + k)] += sh;
            for l in 0..n {
                sys.a[(row, (i + 1) * n + l)] -= sh * jac.fu[l * m + k];
            }
            for l in 0..m_b {
                sys.a[(row, qo + i * m_b + l)] -= sh * jac.bu[l * m + k];
            }
            for l in 0..m_g {
                sys.a[(row, ro + i * m_g + l)] -= sh * jac.gu[l * m + k];
            }
        }
        if m_g > 0 {
            prob.functions().ineq_constraints(t, x, u, &mut g);
        }
        for (j, gm) in slack(&g).iter().enumerate() {
            sys.signs[ro + i * m_g + j] = if *gm > cfg.active_tol {
                SignConstraint::Zero
            } else {
                SignConstraint::NonPos
            };
        }
        let states = prob.control_box().classify(u, BOX_ACTIVE_TOL);
        for (k, s) in states.iter().enumerate() {
            let col = zo + i * m + k;
            sys.signs[col] = match s {
                BoundState::Interior => SignConstraint::Zero,
                BoundState::Lower => SignConstraint::NonPos,
                BoundState::Upper => SignConstraint::NonNeg,
                BoundState::Pinned => SignConstraint::Free,
            };
            if *s != BoundState::Interior {
                zeta_rows.push(col);
            }
        }
    }
    // transversality: (I - P_N)((p_0, -p_N) - lambda grad l) = 0
    let base = n_int * (n + m);
    let cg = prob.cost_grad(process.x().row(0), process.x().row(n_int))?;
    sys.cost_grad_max = cg.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tcol = |j: usize| {
        let mut e = vec![0.0; 2 * n];
        e[j] = 1.0;
        prob.endpoint().normal_cone_residual(&e)
    };
    let rhs = prob.endpoint().normal_cone_residual(&cg);
    for j in 0..2 * n {
        let col = tcol(j);
        let (var, sign) = if j < n { (j, 1.0) } else { (n_int * n + (j - n), -1.0) };
        for (row, v) in col.iter().enumerate() {
            sys.a[(base + row, var)] += sign * v;
        }
    }
    for (row, v) in rhs.iter().enumerate() {
        sys.rhs_lambda[base + row] = *v;
    }
    // tie-breaking rows on admissible zeta entries
    if !zeta_rows.is_empty() && cfg.zeta_weight > 0.0 {
        let extra = zeta_rows.len();
        let mut a = DMatrix::zeros(main_rows + extra, nv);
        a.rows_mut(0, main_rows).copy_from(&sys.a);
        for (k, col) in zeta_rows.iter().enumerate() {
            a[(main_rows + k, *col)] = cfg.zeta_weight;
        }
        let mut rhs = DVector::zeros(main_rows + extra);
        rhs.rows_mut(0, main_rows).copy_from(&sys.rhs_lambda);
        sys.a = a;
        sys.rhs_lambda = rhs;
    }
    Ok(sys)
}

/// Scale used to compare residuals across phases: `lambda max|grad l| + max|p|`
/// in phase A and `max|p|` in phase B. Both are invariant under rescaling
/// the cost, so verdicts are too.
pub fn phase_scale(lambda: f64, cost_grad_max: f64, p_max: f64) -> f64 {
    let s = lambda * cost_grad_max + p_max;
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

pub fn wmp_certificate_search(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    tol: f64,
) -> Result<WmpCertificate> {
    let cfg = CertificateConfig {
        tol,
        ..Default::default()
    };
    wmp_certificate_search_with(prob, grid, process, &cfg)
}

pub fn wmp_certificate_search_with(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    cfg: &CertificateConfig,
) -> Result<WmpCertificate> {
    if !(cfg.tol > 0.0) {
        return Err(AwmpError::InvalidArgument("certificate tolerance must be positive".into()));
    }
    let feas_tol = cfg.feas_tol.unwrap_or(10.0 * grid.step());
    let feas = feasibility_report(prob, process)?.max_violation();
    if feas > feas_tol {
        return Err(AwmpError::Precondition(format!(
            "process violates feasibility by {feas:e} > {feas_tol:e}"
        )));
    }
    let sys = build_wmp_system(prob, grid, process, cfg)?;

    let sol = sign_constrained_lsq(&sys.a, &sys.rhs_lambda, &sys.signs)?;
    let raw_a = sys.residual(&sol.y, 1.0);
    let ms_a = sys.unpack(&sol.y, 1.0)?;
    let scaled_a = raw_a / phase_scale(1.0, sys.cost_grad_max, ms_a.p.max_abs());
    let mut best = (scaled_a, raw_a, CertificatePhase::A, ms_a);

    if scaled_a > cfg.tol {
        let n = prob.dims().n;
        for node in 0..=grid.intervals() {
            for comp in 0..n {
                let col = sys.p_index(node, comp);
                for sign in [-1i8, 1] {
                    let s = sign as f64;
                    let c = -(sys.a.column(col) * s);
                    let mut signs = sys.signs.clone();
                    signs[col] = SignConstraint::Zero;
                    let sol = sign_constrained_lsq(&sys.a, &c, &signs)?;
                    let mut y = sol.y;
                    y[col] = s;
                    let raw = sys.residual(&y, 0.0);
                    let ms = sys.unpack(&y, 0.0)?;
                    let scaled = raw / phase_scale(0.0, sys.cost_grad_max, ms.p.max_abs());
                    if scaled < best.0 {
                        best = (scaled, raw, CertificatePhase::B { node, component: comp, sign }, ms);
                    }
                }
            }
        }
    }
    let (residual, raw_residual, phase, ms) = best;
    let verdict = if residual <= cfg.tol {
        CertificateVerdict::Holds
    } else if residual > cfg.floor_factor * cfg.tol {
        CertificateVerdict::FailsAboveFloor(residual)
    } else {
        CertificateVerdict::Inconclusive
    };
    let s = ms.normalization();
    let multipliers = if s > 0.0 { ms.scaled(1.0 / s) } else { ms };
    Ok(WmpCertificate {
        multipliers,
        residual,
        raw_residual,
        phase,
        phase_a_residual: raw_a,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::problems::get_problem;

    #[test]
    fn exp_tracking_optimum_holds() {
        let np = get_problem("exp-tracking").unwrap();
        let grid = make_grid(0.0, 1.0, 100).unwrap();
        let pr = np.analytic.as_ref().unwrap().sample_process(&grid).unwrap();
        let cert = wmp_certificate_search(&np.problem, &grid, &pr, 1e-6).unwrap();
        assert_eq!(cert.verdict, CertificateVerdict::Holds);
        assert_eq!(cert.phase, CertificatePhase::A);
        let ms = &cert.multipliers;
        assert!((ms.lambda + ms.p.max_abs() - 1.0).abs() < 1e-12);
        for i in 0..100 {
            let expect = -(grid.node(i) - 1.0).exp() / 2.0;
            assert!((ms.r.get(i, 0) - expect).abs() <= 5e-2, "node {i}: {}", ms.r.get(i, 0));
        }
    }

    #[test]
    fn linear_zero_process_fails() {
        let np = get_problem("paper-linear").unwrap();
        let grid = make_grid(0.0, 1.0, 20).unwrap();
        let pr = np.analytic.as_ref().unwrap().sample_process(&grid).unwrap();
        let cert = wmp_certificate_search(&np.problem, &grid, &pr, 1e-6).unwrap();
        assert!(matches!(cert.verdict, CertificateVerdict::FailsAboveFloor(_)));
    }

    #[test]
    fn infeasible_process_is_rejected() {
        let np = get_problem("exp-tracking").unwrap();
        let grid = make_grid(0.0, 1.0, 10).unwrap();
        let pr = Process::new(grid.clone(), GridArray::from_fn(11, 1, |_, _| 5.0), GridArray::zeros(10, 1)).unwrap();
        assert!(matches!(
            wmp_certificate_search(&np.problem, &grid, &pr, 1e-6),
            Err(AwmpError::Precondition(_))
        ));
    }
}
