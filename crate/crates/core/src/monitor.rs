//! Residuals of the asymptotic weak maximum principle system, multiplier
//! normalization, and the multiplier-combination tuples used by the
//! regularity diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, AwmpError, Result};
use crate::grid::{euclid, grid_norms, GridArray, GridNorms, TimeGrid};
use crate::lsq::{sign_constrained_lsq, SignConstraint};
use crate::model::{
    feasibility_report, slack, BoundState, ControlBox, ControlProblem, FeasibilityResiduals,
    Jacobians, MultiplierSet, Process, BOX_ACTIVE_TOL,
};

/// Slack below which an inequality counts as active.
pub const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AwmpResidualReport {
    /// `|lambda + max |p| - target|`.
    pub normalization_gap: f64,
    /// Adjoint residual per interval.
    pub eps: GridArray,
    /// Control stationarity residual per interval.
    pub eta: GridArray,
    /// Normal-cone element produced by the minimal-norm split.
    pub zeta: GridArray,
    /// Largest distance of the supplied `zeta` from the normal cone.
    pub zeta_violation: f64,
    /// `r * g^-` per interval.
    pub theta: GridArray,
    pub r_sign_violation: f64,
    /// Transversality residual, initial part.
    pub vartheta: Vec<f64>,
    /// Transversality residual, final part.
    pub nu: Vec<f64>,
    pub feasibility: FeasibilityResiduals,
    pub eps_norms: GridNorms,
    pub eta_norms: GridNorms,
    pub theta_max: f64,
}

impl AwmpResidualReport {
    /// Euclidean norm of `(vartheta, nu)`.
    pub fn transversality_norm(&self) -> f64 {
        (euclid(&self.vartheta).powi(2) + euclid(&self.nu).powi(2)).sqrt()
    }
}

/// Splits `grad_u` into `zeta - eta` with `zeta` the projection of `grad_u`
/// onto the box normal cone at `u`; `eta` is then the smallest possible.
pub fn split_normal_cone(grad_u: &[f64], u: &[f64], control_box: &ControlBox) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("split gradient", control_box.dim(), grad_u.len())?;
    check_len("split control", control_box.dim(), u.len())?;
    let excess = control_box.violation(u);
    if excess > BOX_ACTIVE_TOL {
        return Err(AwmpError::Precondition(format!(
            "control lies {excess:e} outside the box"
        )));
    }
    let states = control_box.classify(u, BOX_ACTIVE_TOL);
    let zeta: Vec<f64> = states.iter().zip(grad_u).map(|(s, g)| s.project(*g)).collect();
    let eta = zeta.iter().zip(grad_u).map(|(z, g)| z - g).collect();
    Ok((zeta, eta))
}

pub fn compute_awmp_residuals(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    ms: &MultiplierSet,
) -> Result<AwmpResidualReport> {
    compute_awmp_residuals_with_target(prob, grid, process, ms, 1.0)
}

/// As [`compute_awmp_residuals`] with the normalization gap measured against
/// `target` instead of 1.
pub fn compute_awmp_residuals_with_target(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    ms: &MultiplierSet,
    target: f64,
) -> Result<AwmpResidualReport> {
    process.check_against(prob)?;
    check_len("process grid", grid.intervals(), process.grid().intervals())?;
    ms.check_against(prob, grid)?;
    let d = prob.dims();
    let n_int = grid.intervals();
    let h = grid.step();
    let fns = prob.functions();

    let mut eps = GridArray::zeros(n_int, d.n);
    let mut eta = GridArray::zeros(n_int, d.m);
    let mut zeta = GridArray::zeros(n_int, d.m);
    let mut theta = GridArray::zeros(n_int, d.m_g);
    let mut zeta_violation = 0.0_f64;
    let mut jac = Jacobians::zeros(d);
    let mut gx = vec![0.0; d.n];
    let mut gu = vec![0.0; d.m];
    let mut g = vec![0.0; d.m_g];
    let states_box = prob.control_box();
    for i in 0..n_int {
        let t = grid.node(i);
        let (x, u) = (process.x().row(i), process.u().row(i));
        let (p0, p1) = (ms.p.row(i), ms.p.row(i + 1));
        prob.fill_jacobians(t, x, u, &mut jac);
        jac.hamiltonian_gradient(p1, ms.q.row(i), ms.r.row(i), &mut gx, &mut gu);
        for (k, e) in eps.row_mut(i).iter_mut().enumerate() {
            *e = -(p1[k] - p0[k]) / h - gx[k];
        }
        let (zi, ei) = split_normal_cone(&gu, u, states_box)?;
        zeta.row_mut(i).copy_from_slice(&zi);
        eta.row_mut(i).copy_from_slice(&ei);
        let states = states_box.classify(u, BOX_ACTIVE_TOL);
        let dist = states
            .iter()
            .zip(ms.zeta.row(i))
            .map(|(s, z)| (z - s.project(*z)).powi(2))
            .sum::<f64>()
            .sqrt();
        zeta_violation = zeta_violation.max(dist);
        if d.m_g > 0 {
            fns.ineq_constraints(t, x, u, &mut g);
            let gm = slack(&g);
            for (k, th) in theta.row_mut(i).iter_mut().enumerate() {
                *th = ms.r.get(i, k) * gm[k];
            }
        }
    }

    let (vartheta, nu) = transversality(prob, process, ms)?;
    let r_sign_violation = if ms.r.as_slice().is_empty() {
        0.0
    } else {
        ms.r.max().max(0.0)
    };
    Ok(AwmpResidualReport {
        normalization_gap: (ms.lambda + ms.p.max_abs() - target).abs(),
        eps_norms: grid_norms(grid, &eps)?,
        eta_norms: grid_norms(grid, &eta)?,
        theta_max: theta.max_abs(),
        eps,
        eta,
        zeta,
        zeta_violation,
        theta,
        r_sign_violation,
        vartheta,
        nu,
        feasibility: feasibility_report(prob, process)?,
    })
}

/// `(p_0, -p_N) - lambda grad l`.
fn endpoint_vector(prob: &ControlProblem, process: &Process, ms: &MultiplierSet) -> Result<Vec<f64>> {
    let n = prob.dims().n;
    let n_int = process.grid().intervals();
    let cg = prob.cost_grad(process.x().row(0), process.x().row(n_int))?;
    let mut v = Vec::with_capacity(2 * n);
    for k in 0..n {
        v.push(ms.p.get(0, k) - ms.lambda * cg[k]);
    }
    for k in 0..n {
        v.push(-ms.p.get(n_int, k) - ms.lambda * cg[n + k]);
    }
    Ok(v)
}

fn transversality(prob: &ControlProblem, process: &Process, ms: &MultiplierSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = prob.dims().n;
    let v = endpoint_vector(prob, process, ms)?;
    let res = prob.endpoint().normal_cone_residual(&v);
    Ok((res[..n].to_vec(), res[n..].to_vec()))
}

/// Divides every multiplier by `lambda + max |p|`.
pub fn normalize_multipliers(ms: &MultiplierSet) -> Result<MultiplierSet> {
    let s = ms.normalization();
    if !(s > 0.0) {
        return Err(AwmpError::DegenerateMultipliers);
    }
    if (s - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(ms.clone());
    }
    Ok(ms.scaled(1.0 / s))
}

/// Multiplier combination `(phi, psi, gamma, xi)` of one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct MTuple {
    pub phi: GridArray,
    pub psi: GridArray,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
}

/// `(phi_i, psi_i) = sum q grad b + sum r grad g + (0, -zeta_i)` and the
/// normal-cone part of the endpoint vector.
pub fn extract_m_tuple(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    ms: &MultiplierSet,
) -> Result<MTuple> {
    process.check_against(prob)?;
    ms.check_against(prob, grid)?;
    let d = prob.dims();
    let n_int = grid.intervals();
    let mut phi = GridArray::zeros(n_int, d.n);
    let mut psi = GridArray::zeros(n_int, d.m);
    let mut jac = Jacobians::zeros(d);
    let zero_p = vec![0.0; d.n];
    let mut gx = vec![0.0; d.n];
    let mut gu = vec![0.0; d.m];
    for i in 0..n_int {
        let (x, u) = (process.x().row(i), process.u().row(i));
        prob.fill_jacobians(grid.node(i), x, u, &mut jac);
        jac.hamiltonian_gradient(&zero_p, ms.q.row(i), ms.r.row(i), &mut gx, &mut gu);
        phi.row_mut(i).copy_from_slice(&gx);
        for (k, v) in psi.row_mut(i).iter_mut().enumerate() {
            *v = gu[k] - ms.zeta.get(i, k);
        }
    }
    let n = d.n;
    let v = endpoint_vector(prob, process, ms)?;
    let proj = prob.endpoint().project_onto_normal_cone(&v);
    Ok(MTuple {
        phi,
        psi,
        gamma: proj[..n].to_vec(),
        xi: proj[n..].to_vec(),
    })
}

/// Distance-like residual of `tuple` from the multiplier-combination set at
/// the process with complementarity target `theta_target`.
///
/// Per node a sign-constrained least-squares problem recovers `(q, r, zeta)`;
/// inequality multipliers of inactive constraints are pinned by
/// `r_j = theta_j / g^-_j`. The result is `h * sum_i res_i` plus the
/// distance of `(gamma, xi)` from the endpoint normal cone.
pub fn mdelta_membership_residual(
    prob: &ControlProblem,
    grid: &TimeGrid,
    process: &Process,
    theta_target: &GridArray,
    tuple: &MTuple,
) -> Result<f64> {
    process.check_against(prob)?;
    let d = prob.dims();
    let n_int = grid.intervals();
    theta_target.expect_shape("theta target", n_int, d.m_g)?;
    tuple.phi.expect_shape("phi", n_int, d.n)?;
    tuple.psi.expect_shape("psi", n_int, d.m)?;
    check_len("gamma", d.n, tuple.gamma.len())?;
    check_len("xi", d.n, tuple.xi.len())?;
    let h = grid.step();
    let fns = prob.functions();
    let mut jac = Jacobians::zeros(d);
    let mut g = vec![0.0; d.m_g];
    let rows = d.n + d.m;
    let cols = d.m_b + d.m_g + d.m;
    let mut total = 0.0;
    for i in 0..n_int {
        let t = grid.node(i);
        let (x, u) = (process.x().row(i), process.u().row(i));
        prob.fill_jacobians(t, x, u, &mut jac);
        if d.m_g > 0 {
            fns.ineq_constraints(t, x, u, &mut g);
        }
        let gm = slack(&g);
        let mut a = DMatrix::<f64>::zeros(rows, cols);
        let mut c = DVector::<f64>::zeros(rows);
        for k in 0..d.n {
            c[k] = tuple.phi.get(i, k);
        }
        for k in 0..d.m {
            c[d.n + k] = tuple.psi.get(i, k);
        }
        let mut signs = Vec::with_capacity(cols);
        for j in 0..d.m_b {
            for k in 0..d.n {
                a[(k, j)] = jac.bx[j * d.n + k];
            }
            for k in 0..d.m {
                a[(d.n + k, j)] = jac.bu[j * d.m + k];
            }
            signs.push(SignConstraint::Free);
        }
        let mut extra = 0.0;
        for j in 0..d.m_g {
            let col = d.m_b + j;
            let th = theta_target.get(i, j);
            if gm[j] > ACTIVE_TOL {
                // Complementarity fixes r_j; a positive value is infeasible.
                let rj = (th / gm[j]).min(0.0);
                extra += th.max(0.0);
                for k in 0..d.n {
                    c[k] -= rj * jac.gx[j * d.n + k];
                }
                for k in 0..d.m {
                    c[d.n + k] -= rj * jac.gu[j * d.m + k];
                }
                signs.push(SignConstraint::Zero);
            } else {
                extra += th.abs();
                for k in 0..d.n {
                    a[(k, col)] = jac.gx[j * d.n + k];
                }
                for k in 0..d.m {
                    a[(d.n + k, col)] = jac.gu[j * d.m + k];
                }
                signs.push(SignConstraint::NonPos);
            }
        }
        let states = prob.control_box().classify(u, BOX_ACTIVE_TOL);
        for (k, s) in states.iter().enumerate() {
            let col = d.m_b + d.m_g + k;
            a[(d.n + k, col)] = -1.0;
            signs.push(match s {
                BoundState::Interior => SignConstraint::Zero,
                BoundState::Lower => SignConstraint::NonPos,
                BoundState::Upper => SignConstraint::NonNeg,
                BoundState::Pinned => SignConstraint::Free,
            });
        }
        let sol = sign_constrained_lsq(&a, &c, &signs)?;
        total += h * (sol.residual + extra);
    }
    let mut v = tuple.gamma.clone();
    v.extend_from_slice(&tuple.xi);
    let endpoint = euclid(&prob.endpoint().normal_cone_residual(&v));
    Ok(total + endpoint)
}
