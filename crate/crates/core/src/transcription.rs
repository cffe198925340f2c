//! Explicit-Euler transcription of the control problem into a finite NLP,
//! augmented Lagrangian assembly, and the NLP <-> density multiplier map.
//!
//! Variables are packed as `[x_0, .., x_N, u_0, .., u_{N-1}]`. Internal
//! multipliers follow the NLP convention `L = l + nu.d + beta.b + mu.g` with
//! `mu >= 0`.

use nalgebra::DMatrix;

use crate::error::{check_len, AwmpError, Result};
use crate::grid::{GridArray, TimeGrid};
use crate::model::{
    accumulate_transpose, ControlBox, ControlProblem, Jacobians, MultiplierSet, Process,
};
use crate::monitor::split_normal_cone;

/// Constraint residuals of the transcribed problem at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpResiduals {
    /// `x_{i+1} - x_i - h f(t_i, x_i, u_i)`, one row per interval.
    pub defects: GridArray,
    pub eq: GridArray,
    pub ineq: GridArray,
    /// Distance of `(x_0, x_N)` from the endpoint set.
    pub endpoint: f64,
}

impl NlpResiduals {
    /// Largest raw violation over defects, equalities, positive parts of
    /// inequalities and the endpoint distance.
    pub fn max_violation(&self) -> f64 {
        let gplus = self
            .ineq
            .as_slice()
            .iter()
            .fold(0.0_f64, |a, v| a.max(*v));
        self.defects
            .max_abs()
            .max(self.eq.max_abs())
            .max(gplus)
            .max(self.endpoint)
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteNLP {
    prob: ControlProblem,
    grid: TimeGrid,
    control_box: ControlBox,
    lambda: f64,
    /// Defect multipliers, `N x n`.
    pub nu: GridArray,
    /// Equality multipliers, `N x m_b`.
    pub beta: GridArray,
    /// Inequality multipliers, `N x m_g`, kept nonnegative.
    pub mu: GridArray,
}

pub fn transcribe(prob: &ControlProblem, grid: &TimeGrid) -> Result<DiscreteNLP> {
    DiscreteNLP::new(prob, grid, prob.control_box().clone())
}

impl DiscreteNLP {
    /// Transcription with an explicit control set (for instance a box already
    /// intersected with a trust radius).
    pub fn new(prob: &ControlProblem, grid: &TimeGrid, control_box: ControlBox) -> Result<Self> {
        check_len("control set dimension", prob.dims().m, control_box.dim())?;
        if (grid.t0() - prob.t0()).abs() > 1e-12 || (grid.t1() - prob.t1()).abs() > 1e-12 {
            return Err(AwmpError::InvalidArgument(format!(
                "grid [{}, {}] does not cover the horizon [{}, {}]",
                grid.t0(),
                grid.t1(),
                prob.t0(),
                prob.t1()
            )));
        }
        let d = prob.dims();
        let n_int = grid.intervals();
        Ok(Self {
            prob: prob.clone(),
            grid: grid.clone(),
            control_box,
            lambda: 1.0,
            nu: GridArray::zeros(n_int, d.n),
            beta: GridArray::zeros(n_int, d.m_b),
            mu: GridArray::zeros(n_int, d.m_g),
        })
    }

    pub fn problem(&self) -> &ControlProblem {
        &self.prob
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `(N + 1) n + N m`.
    pub fn n_vars(&self) -> usize {
        let d = self.prob.dims();
        (self.grid.intervals() + 1) * d.n + self.grid.intervals() * d.m
    }

    fn state_len(&self) -> usize {
        (self.grid.intervals() + 1) * self.prob.dims().n
    }

    pub fn pack(&self, process: &Process) -> Result<Vec<f64>> {
        process.check_against(&self.prob)?;
        check_len("process grid", self.grid.intervals(), process.grid().intervals())?;
        let mut z = process.x().as_slice().to_vec();
        z.extend_from_slice(process.u().as_slice());
        Ok(z)
    }

    pub fn unpack(&self, z: &[f64]) -> Result<Process> {
        check_len("NLP variables", self.n_vars(), z.len())?;
        let d = self.prob.dims();
        let n_int = self.grid.intervals();
        let sl = self.state_len();
        let x = GridArray::from_vec(n_int + 1, d.n, z[..sl].to_vec())?;
        let u = GridArray::from_vec(n_int, d.m, z[sl..].to_vec())?;
        Process::new(self.grid.clone(), x, u)
    }

    fn x_row<'a>(&self, z: &'a [f64], i: usize) -> &'a [f64] {
        let n = self.prob.dims().n;
        &z[i * n..(i + 1) * n]
    }

    fn u_row<'a>(&self, z: &'a [f64], i: usize) -> &'a [f64] {
        let m = self.prob.dims().m;
        let off = self.state_len();
        &z[off + i * m..off + (i + 1) * m]
    }

    fn endpoints(&self, z: &[f64]) -> Vec<f64> {
        let mut e = self.x_row(z, 0).to_vec();
        e.extend_from_slice(self.x_row(z, self.grid.intervals()));
        e
    }

    pub fn residuals(&self, z: &[f64]) -> Result<NlpResiduals> {
        check_len("NLP variables", self.n_vars(), z.len())?;
        let d = self.prob.dims();
        let n_int = self.grid.intervals();
        let h = self.grid.step();
        let fns = self.prob.functions();
        let mut defects = GridArray::zeros(n_int, d.n);
        let mut eq = GridArray::zeros(n_int, d.m_b);
        let mut ineq = GridArray::zeros(n_int, d.m_g);
        let mut f = vec![0.0; d.n];
        for i in 0..n_int {
            let t = self.grid.node(i);
            let (x, u, xn) = (self.x_row(z, i), self.u_row(z, i), self.x_row(z, i + 1));
            fns.dynamics(t, x, u, &mut f);
            for (k, dk) in defects.row_mut(i).iter_mut().enumerate() {
                *dk = xn[k] - x[k] - h * f[k];
            }
            if d.m_b > 0 {
                fns.eq_constraints(t, x, u, eq.row_mut(i));
            }
            if d.m_g > 0 {
                fns.ineq_constraints(t, x, u, ineq.row_mut(i));
            }
        }
        let endpoint = self.prob.endpoint().distance(&self.endpoints(z));
        Ok(NlpResiduals {
            defects,
            eq,
            ineq,
            endpoint,
        })
    }

    /// Augmented Lagrangian value; `grad`, when given, receives its gradient.
    pub fn al_value_grad(&self, z: &[f64], rho: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
        check_len("NLP variables", self.n_vars(), z.len())?;
        if let Some(g) = grad.as_deref_mut() {
            check_len("NLP gradient", self.n_vars(), g.len())?;
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let d = self.prob.dims();
        let (n, m) = (d.n, d.m);
        let n_int = self.grid.intervals();
        let h = self.grid.step();
        let fns = self.prob.functions();
        let sl = self.state_len();

        let x0 = self.x_row(z, 0);
        let x1 = self.x_row(z, n_int);
        let mut value = self.lambda * fns.cost(x0, x1);
        if let Some(g) = grad.as_deref_mut() {
            let mut cg = vec![0.0; 2 * n];
            fns.cost_grad(x0, x1, &mut cg);
            for k in 0..n {
                g[k] += self.lambda * cg[k];
                g[n_int * n + k] += self.lambda * cg[n + k];
            }
        }

        let mut jac = Jacobians::zeros(d);
        let mut f = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut bv = vec![0.0; d.m_b];
        let mut wb = vec![0.0; d.m_b];
        let mut gv = vec![0.0; d.m_g];
        let mut wg = vec![0.0; d.m_g];
        let mut gx = vec![0.0; n];
        let mut gu = vec![0.0; m];
        for i in 0..n_int {
            let t = self.grid.node(i);
            let (x, u, xn) = (self.x_row(z, i), self.u_row(z, i), self.x_row(z, i + 1));
            fns.dynamics(t, x, u, &mut f);
            let nu = self.nu.row(i);
            for k in 0..n {
                let dk = xn[k] - x[k] - h * f[k];
                value += nu[k] * dk + 0.5 * rho * dk * dk;
                w[k] = nu[k] + rho * dk;
            }
            if d.m_b > 0 {
                fns.eq_constraints(t, x, u, &mut bv);
                let beta = self.beta.row(i);
                for k in 0..d.m_b {
                    value += beta[k] * bv[k] + 0.5 * rho * bv[k] * bv[k];
                    wb[k] = beta[k] + rho * bv[k];
                }
            }
            if d.m_g > 0 {
                fns.ineq_constraints(t, x, u, &mut gv);
                let mu = self.mu.row(i);
                for k in 0..d.m_g {
                    wg[k] = (mu[k] + rho * gv[k]).max(0.0);
                    value += (wg[k] * wg[k] - mu[k] * mu[k]) / (2.0 * rho);
                }
            }
            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            self.prob.fill_jacobians(t, x, u, &mut jac);
            gx.iter_mut().for_each(|v| *v = 0.0);
            gu.iter_mut().for_each(|v| *v = 0.0);
            accumulate_transpose(&jac.fx, &w, n, n, &mut gx);
            accumulate_transpose(&jac.fu, &w, n, m, &mut gu);
            for k in 0..n {
                gx[k] *= -h;
            }
            for k in 0..m {
                gu[k] *= -h;
            }
            accumulate_transpose(&jac.bx, &wb, d.m_b, n, &mut gx);
            accumulate_transpose(&jac.bu, &wb, d.m_b, m, &mut gu);
            accumulate_transpose(&jac.gx, &wg, d.m_g, n, &mut gx);
            accumulate_transpose(&jac.gu, &wg, d.m_g, m, &mut gu);
            for k in 0..n {
                g[i * n + k] += gx[k] - w[k];
                g[(i + 1) * n + k] += w[k];
            }
            for k in 0..m {
                g[sl + i * m + k] += gu[k];
            }
        }
        Ok(value)
    }

    /// Gauss-Newton model of the augmented Lagrangian Hessian. Penalty terms
    /// contribute `rho J^T J` (exact for affine constraints), second-order
    /// constraint curvature is dropped and the cost Hessian comes from central
    /// differences of the cost gradient.
    pub fn al_hessian(&self, z: &[f64], rho: f64) -> Result<DMatrix<f64>> {
        check_len("NLP variables", self.n_vars(), z.len())?;
        let d = self.prob.dims();
        let (n, m) = (d.n, d.m);
        let n_int = self.grid.intervals();
        let h = self.grid.step();
        let sl = self.state_len();
        let fns = self.prob.functions();
        let nv = self.n_vars();
        let mut hs = DMatrix::zeros(nv, nv);

        let e = self.endpoints(z);
        let eidx: Vec<usize> = (0..n).chain(n_int * n..(n_int + 1) * n).collect();
        let mut gp = vec![0.0; 2 * n];
        let mut gm = vec![0.0; 2 * n];
        for j in 0..2 * n {
            let step = 1e-5 * e[j].abs().max(1.0);
            let mut ep = e.clone();
            ep[j] += step;
            fns.cost_grad(&ep[..n], &ep[n..], &mut gp);
            ep[j] = e[j] - step;
            fns.cost_grad(&ep[..n], &ep[n..], &mut gm);
            for k in 0..2 * n {
                let v = 0.5 * self.lambda * (gp[k] - gm[k]) / (2.0 * step);
                hs[(eidx[k], eidx[j])] += v;
                hs[(eidx[j], eidx[k])] += v;
            }
        }

        let width = 2 * n + m;
        let mut jac = Jacobians::zeros(d);
        let mut gv = vec![0.0; d.m_g];
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n + d.m_b + d.m_g);
        for i in 0..n_int {
            let t = self.grid.node(i);
            let (x, u) = (self.x_row(z, i), self.u_row(z, i));
            self.prob.fill_jacobians(t, x, u, &mut jac);
            rows.clear();
            for k in 0..n {
                let mut r = vec![0.0; width];
                for a in 0..n {
                    r[a] = -h * jac.fx[k * n + a];
                }
                r[k] -= 1.0;
                r[n + k] = 1.0;
                for c in 0..m {
                    r[2 * n + c] = -h * jac.fu[k * m + c];
                }
                rows.push(r);
            }
            for k in 0..d.m_b {
                let mut r = vec![0.0; width];
                r[..n].copy_from_slice(&jac.bx[k * n..(k + 1) * n]);
                r[2 * n..].copy_from_slice(&jac.bu[k * m..(k + 1) * m]);
                rows.push(r);
            }
            if d.m_g > 0 {
                fns.ineq_constraints(t, x, u, &mut gv);
                for k in 0..d.m_g {
                    if self.mu.get(i, k) + rho * gv[k] > 0.0 {
                        let mut r = vec![0.0; width];
                        r[..n].copy_from_slice(&jac.gx[k * n..(k + 1) * n]);
                        r[2 * n..].copy_from_slice(&jac.gu[k * m..(k + 1) * m]);
                        rows.push(r);
                    }
                }
            }
            let loc: Vec<usize> = (i * n..(i + 2) * n).chain(sl + i * m..sl + (i + 1) * m).collect();
            for r in &rows {
                for a in 0..width {
                    if r[a] == 0.0 {
                        continue;
                    }
                    for b in 0..width {
                        hs[(loc[a], loc[b])] += rho * r[a] * r[b];
                    }
                }
            }
        }
        Ok(hs)
    }

    /// Orthonormal basis (`2n` rows) of the directions tangent to the
    /// endpoint set, in `(x_0, x_N)` coordinates.
    pub fn endpoint_tangent_basis(&self) -> DMatrix<f64> {
        let n2 = 2 * self.prob.dims().n;
        let mut t = DMatrix::zeros(n2, n2);
        let mut v = vec![0.0; n2];
        for j in 0..n2 {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[j] = 1.0;
            let pn = self.prob.endpoint().project_onto_normal_cone(&v);
            for k in 0..n2 {
                t[(k, j)] = v[k] - pn[k];
            }
        }
        // `t` is an orthogonal projector; keep the eigenvectors of eigenvalue 1.
        let eig = t.symmetric_eigen();
        let keep: Vec<usize> = (0..n2).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
        eig.eigenvectors.select_columns(&keep)
    }

    /// Projection onto the feasible set of the inner problem: controls onto
    /// the box, endpoints onto `C`.
    pub fn project(&self, z: &mut [f64]) {
        let n = self.prob.dims().n;
        let m = self.prob.dims().m;
        let n_int = self.grid.intervals();
        let mut e = self.endpoints(z);
        self.prob.endpoint().project_point(&mut e);
        z[..n].copy_from_slice(&e[..n]);
        z[n_int * n..(n_int + 1) * n].copy_from_slice(&e[n..]);
        let sl = self.state_len();
        for i in 0..n_int {
            self.control_box
                .project_in_place(&mut z[sl + i * m..sl + (i + 1) * m]);
        }
    }

    /// `z - P(z - grad)`, the unit-step projected gradient.
    pub fn projected_gradient(&self, z: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut trial: Vec<f64> = z.iter().zip(grad).map(|(a, b)| a - b).collect();
        self.project(&mut trial);
        z.iter().zip(&trial).map(|(a, b)| a - b).collect()
    }

    /// First-order multiplier update from the residuals at `z`. Returns whether
    /// any `beta` or `mu` entry reached `cap`.
    pub fn update_multipliers(&mut self, z: &[f64], rho: f64, cap: f64) -> Result<bool> {
        let res = self.residuals(z)?;
        for (v, dv) in self.nu.as_mut_slice().iter_mut().zip(res.defects.as_slice()) {
            *v += rho * dv;
        }
        let mut capped = false;
        for (v, bv) in self.beta.as_mut_slice().iter_mut().zip(res.eq.as_slice()) {
            let raw = *v + rho * bv;
            if raw.abs() >= cap {
                capped = true;
            }
            *v = raw.clamp(-cap, cap);
        }
        for (v, gv) in self.mu.as_mut_slice().iter_mut().zip(res.ineq.as_slice()) {
            let raw = (*v + rho * gv).max(0.0);
            if raw >= cap {
                capped = true;
            }
            *v = raw.min(cap);
        }
        Ok(capped)
    }

    /// Density multipliers for the process packed in `z`:
    /// `p_{i+1} = nu_i`, `q = -beta/h`, `r = -mu/h`, with `p_0` chosen so the
    /// first adjoint residual vanishes and `zeta` from the normal-cone split.
    pub fn lift_multipliers(&self, z: &[f64]) -> Result<MultiplierSet> {
        check_len("NLP variables", self.n_vars(), z.len())?;
        let d = self.prob.dims();
        let n_int = self.grid.intervals();
        let h = self.grid.step();
        let mut p = GridArray::zeros(n_int + 1, d.n);
        for i in 0..n_int {
            p.row_mut(i + 1).copy_from_slice(self.nu.row(i));
        }
        let q = GridArray::from_fn(n_int, d.m_b, |i, j| -self.beta.get(i, j) / h);
        let r = GridArray::from_fn(n_int, d.m_g, |i, j| -self.mu.get(i, j) / h);

        // p_0 = nu_0 + h f_x^T nu_0 - b_x^T beta_0 - g_x^T mu_0
        let mut jac = Jacobians::zeros(d);
        self.prob
            .fill_jacobians(self.grid.node(0), self.x_row(z, 0), self.u_row(z, 0), &mut jac);
        let mut p0 = vec![0.0; d.n];
        accumulate_transpose(&jac.fx, self.nu.row(0), d.n, d.n, &mut p0);
        p0.iter_mut().for_each(|v| *v *= h);
        let neg_beta: Vec<f64> = self.beta.row(0).iter().map(|v| -v).collect();
        let neg_mu: Vec<f64> = self.mu.row(0).iter().map(|v| -v).collect();
        accumulate_transpose(&jac.bx, &neg_beta, d.m_b, d.n, &mut p0);
        accumulate_transpose(&jac.gx, &neg_mu, d.m_g, d.n, &mut p0);
        for (a, b) in p0.iter_mut().zip(self.nu.row(0)) {
            *a += b;
        }
        p.row_mut(0).copy_from_slice(&p0);

        let mut zeta = GridArray::zeros(n_int, d.m);
        let mut gx = vec![0.0; d.n];
        let mut gu = vec![0.0; d.m];
        for i in 0..n_int {
            let (t, x, u) = (self.grid.node(i), self.x_row(z, i), self.u_row(z, i));
            self.prob.fill_jacobians(t, x, u, &mut jac);
            jac.hamiltonian_gradient(p.row(i + 1), q.row(i), r.row(i), &mut gx, &mut gu);
            let (zi, _) = split_normal_cone(&gu, u, &self.control_box)?;
            zeta.row_mut(i).copy_from_slice(&zi);
        }
        MultiplierSet::new(self.lambda, p, q, r, zeta)
    }

    /// Inverse of the lift on `(nu, beta, mu)`.
    pub fn set_from_multipliers(&mut self, ms: &MultiplierSet) -> Result<()> {
        ms.check_against(&self.prob, &self.grid)?;
        let h = self.grid.step();
        let n_int = self.grid.intervals();
        for i in 0..n_int {
            self.nu.row_mut(i).copy_from_slice(ms.p.row(i + 1));
        }
        self.beta = GridArray::from_fn(n_int, self.prob.dims().m_b, |i, j| -h * ms.q.get(i, j));
        self.mu = GridArray::from_fn(n_int, self.prob.dims().m_g, |i, j| -h * ms.r.get(i, j));
        self.lambda = ms.lambda;
        Ok(())
    }
}
