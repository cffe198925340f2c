//! Method of multipliers with a projected Newton inner solver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cq::{assess, CqConfig, CqReport};
use crate::error::{AwmpError, Result};
use crate::grid::TimeGrid;
use crate::model::{ControlProblem, MultiplierSet, Process};
use crate::monitor::{compute_awmp_residuals, AwmpResidualReport};
use crate::transcription::DiscreteNLP;

/// Iterates whose size or objective exceeds this are treated as divergent.
const DIVERGENCE_BOUND: f64 = 1e12;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub n_intervals: usize,
    pub tol_feas: f64,
    pub tol_stat: f64,
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    pub multiplier_cap: f64,
    pub seed: u64,
    /// Radius of the control neighbourhood intersected with the box.
    pub delta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_intervals: 100,
            tol_feas: 1e-6,
            tol_stat: 1e-6,
            rho0: 10.0,
            rho_factor: 10.0,
            max_outer: 100,
            max_inner: 500,
            armijo_c: 1e-4,
            backtrack: 0.5,
            multiplier_cap: 1e8,
            seed: 0,
            delta: f64::INFINITY,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(AwmpError::InvalidArgument(msg.to_string()));
        if self.n_intervals < 2 {
            return bad("grid needs at least 2 intervals");
        }
        if !(self.tol_feas > 0.0 && self.tol_stat > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.rho0 > 0.0) {
            return bad("initial penalty must be positive");
        }
        if !(self.rho_factor > 1.0) {
            return bad("penalty factor must exceed 1");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtracking factor must lie in (0, 1)");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("Armijo constant must lie in (0, 1)");
        }
        if !(self.multiplier_cap > 0.0) {
            return bad("multiplier cap must be positive");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }

    /// Whether a residual report meets the stopping tolerances. The dynamics
    /// defect is compared in raw (unscaled) form.
    pub fn accepts(&self, rep: &AwmpResidualReport, h: f64) -> bool {
        let f = &rep.feasibility;
        let feas = (f.dyn_max * h)
            .max(f.b_max)
            .max(f.gplus_max)
            .max(f.box_max)
            .max(f.endpoint);
        feas <= self.tol_feas
            && rep.eps_norms.l1 <= self.tol_stat
            && rep.eta_norms.l1 <= self.tol_stat
            && rep.transversality_norm() <= self.tol_stat
            && rep.theta_max <= self.tol_stat
    }
}

/// One element of the generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub process: Process,
    /// Lifted multipliers in density convention (`lambda = 1`, unnormalized).
    pub multipliers: MultiplierSet,
    pub rho: f64,
    pub awmp: AwmpResidualReport,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    ConvergedAwmp,
    MaxIterations,
    InnerFailure,
    MultiplierCapHit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::ConvergedAwmp => "ConvergedAwmp",
            SolveStatus::MaxIterations => "MaxIterations",
            SolveStatus::InnerFailure => "InnerFailure",
            SolveStatus::MultiplierCapHit => "MultiplierCapHit",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub history: Vec<IterateRecord>,
    pub status: SolveStatus,
    pub cq: CqReport,
    /// Human-readable reason for the final status.
    pub diagnostic: String,
    /// Problem actually solved (the box may be narrowed by `delta`).
    pub problem: ControlProblem,
    pub grid: TimeGrid,
}

/// Accepted step of the inner solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerStep {
    pub value: f64,
    pub pg_norm: f64,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub z: Vec<f64>,
    pub iterations: usize,
    /// L1 norm of the unit-step projected gradient at `z`.
    pub pg_norm: f64,
    pub converged: bool,
    /// Start point followed by every accepted step.
    pub log: Vec<InnerStep>,
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton direction on the free variables: interior states, controls not
/// held by a binding bound, and endpoint moves tangent to the endpoint set.
fn newton_direction(
    nlp: &DiscreteNLP,
    z: &[f64],
    g: &[f64],
    rho: f64,
    pg: f64,
    basis: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let d = nlp.problem().dims();
    let (n, m) = (d.n, d.m);
    let n_int = nlp.grid().intervals();
    let sl = (n_int + 1) * n;
    let nv = nlp.n_vars();
    let hs = nlp.al_hessian(z, rho)?;
    let ends: Vec<usize> = (0..n).chain(n_int * n..sl).collect();
    let (lo, up) = (nlp.control_box().lower(), nlp.control_box().upper());
    let act_tol = pg.min(1e-6);
    let mut free: Vec<usize> = (n..n_int * n).collect();
    for i in 0..n_int {
        for c in 0..m {
            let k = sl + i * m + c;
            let at_lo = z[k] - lo[c] <= act_tol && g[k] > 0.0;
            let at_up = up[c] - z[k] <= act_tol && g[k] < 0.0;
            if !(at_lo || at_up) {
                free.push(k);
            }
        }
    }
    let (nf, ne) = (free.len(), basis.ncols());
    let nr = nf + ne;
    let mut dir = vec![0.0; nv];
    if nr == 0 {
        return Ok(dir);
    }
    let mut hr = DMatrix::zeros(nr, nr);
    let mut rhs = DVector::zeros(nr);
    for (a, &ia) in free.iter().enumerate() {
        rhs[a] = -g[ia];
        for (b, &ib) in free.iter().enumerate() {
            hr[(a, b)] = hs[(ia, ib)];
        }
    }
    for e in 0..ne {
        let v: Vec<f64> = (0..nv)
            .map(|r| ends.iter().enumerate().map(|(k, &ek)| hs[(r, ek)] * basis[(k, e)]).sum())
            .collect();
        for (a, &ia) in free.iter().enumerate() {
            hr[(a, nf + e)] = v[ia];
            hr[(nf + e, a)] = v[ia];
        }
        for e2 in 0..ne {
            hr[(nf + e2, nf + e)] = ends.iter().enumerate().map(|(k, &ek)| basis[(k, e2)] * v[ek]).sum();
        }
        rhs[nf + e] = -ends.iter().enumerate().map(|(k, &ek)| basis[(k, e)] * g[ek]).sum::<f64>();
    }
    let scale = hr.diagonal().amax().max(1.0);
    let mut tau = 1e-12 * scale;
    let y = loop {
        let mut reg = hr.clone();
        for j in 0..nr {
            reg[(j, j)] += tau;
        }
        if let Some(ch) = reg.cholesky() {
            break ch.solve(&rhs);
        }
        tau *= 100.0;
        if tau > 1e6 * scale {
            return Ok(g.iter().map(|v| -v).collect());
        }
    };
    for (a, &ia) in free.iter().enumerate() {
        dir[ia] = y[a];
    }
    for e in 0..ne {
        for (k, &ek) in ends.iter().enumerate() {
            dir[ek] += basis[(k, e)] * y[nf + e];
        }
    }
    Ok(dir)
}

/// Projected Newton on the augmented Lagrangian: Gauss-Newton steps on the
/// free variables, projection onto the inner feasible set, and monotone
/// Armijo backtracking along the projection arc.
pub fn inner_solve(nlp: &DiscreteNLP, rho: f64, warm_start: &[f64], cfg: &SolverConfig) -> Result<InnerResult> {
    if !(rho > 0.0) {
        return Err(AwmpError::InvalidArgument(format!("penalty must be positive, got {rho}")));
    }
    let nv = nlp.n_vars();
    let mut z = warm_start.to_vec();
    if z.len() != nv {
        return Err(AwmpError::Shape {
            what: "warm start",
            expected: nv,
            got: z.len(),
        });
    }
    nlp.project(&mut z);
    let basis = nlp.endpoint_tangent_basis();
    let tol = cfg.tol_stat / rho.max(1.0);
    let mut g = vec![0.0; nv];
    let mut val = nlp.al_value_grad(&z, rho, Some(&mut g))?;
    let mut pg = l1(&nlp.projected_gradient(&z, &g));
    let mut log = vec![InnerStep { value: val, pg_norm: pg }];
    let mut trial = vec![0.0; nv];
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        if pg <= tol {
            return Ok(InnerResult { z, iterations, pg_norm: pg, converged: true, log });
        }
        if !val.is_finite() {
            return Err(AwmpError::NonFinite("augmented Lagrangian".into()));
        }
        iterations += 1;
        let mut dir = newton_direction(nlp, &z, &g, rho, pg, &basis)?;
        if !(dot(&g, &dir) < 0.0) {
            dir = g.iter().map(|v| -v).collect();
        }
        let mut step = 1.0;
        let mut halvings = 0;
        let mut new_val = loop {
            for k in 0..nv {
                trial[k] = z[k] + step * dir[k];
            }
            nlp.project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&z).map(|(a, b)| a - b).collect();
            let slope = dot(&g, &moved);
            let tv = nlp.al_value_grad(&trial, rho, None)?;
            let noise = 4.0 * f64::EPSILON * val.abs().max(1.0);
            if tv <= val + cfg.armijo_c * slope || (tv <= val && -slope <= noise) {
                break tv;
            }
            halvings += 1;
            if halvings >= MAX_HALVINGS {
                return Err(AwmpError::LineSearch(halvings));
            }
            step *= cfg.backtrack;
        };
        if trial == z {
            // No representable progress is left.
            return Ok(InnerResult { z, iterations, pg_norm: pg, converged: false, log });
        }
        if halvings == 0 {
            // Expand while the model keeps paying off; only happens along
            // directions of negligible curvature.
            let mut wider = vec![0.0; nv];
            for _ in 0..MAX_HALVINGS {
                step *= 2.0;
                for k in 0..nv {
                    wider[k] = z[k] + step * dir[k];
                }
                nlp.project(&mut wider);
                let slope: f64 = g.iter().zip(wider.iter().zip(&z)).map(|(gk, (a, b))| gk * (a - b)).sum();
                let wv = nlp.al_value_grad(&wider, rho, None)?;
                if !(wv < new_val && wv <= val + cfg.armijo_c * slope) {
                    break;
                }
                std::mem::swap(&mut trial, &mut wider);
                new_val = wv;
                if new_val.abs() > DIVERGENCE_BOUND {
                    break;
                }
            }
        }
        std::mem::swap(&mut z, &mut trial);
        val = new_val;
        nlp.al_value_grad(&z, rho, Some(&mut g))?;
        pg = l1(&nlp.projected_gradient(&z, &g));
        log.push(InnerStep { value: val, pg_norm: pg });
        if val.abs() > DIVERGENCE_BOUND || z.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
            return Err(AwmpError::NonFinite(format!(
                "inner iterates diverge (objective {val:e}); the transcribed problem may be unbounded"
            )));
        }
    }
    Ok(InnerResult { z, iterations, pg_norm: pg, converged: pg <= tol, log })
}

/// First-order multiplier update; see [`DiscreteNLP::update_multipliers`].
pub fn update_multipliers(nlp: &mut DiscreteNLP, z: &[f64], rho: f64, cap: f64) -> Result<bool> {
    nlp.update_multipliers(z, rho, cap)
}

fn initial_point(nlp: &DiscreteNLP, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = nlp.problem().dims();
    let n_int = nlp.grid().intervals();
    let sl = (n_int + 1) * d.n;
    let mut z = vec![0.0; nlp.n_vars()];
    for v in z[sl..].iter_mut() {
        *v = rng.gen_range(-0.1..0.1);
    }
    nlp.project(&mut z);
    z
}

pub fn solve(prob: &ControlProblem, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let grid = TimeGrid::new(prob.t0(), prob.t1(), cfg.n_intervals)?;
    let base = DiscreteNLP::new(prob, &grid, prob.control_box().clone())?;
    let start = initial_point(&base, cfg.seed);

    // U_delta: the box intersected with a sup-norm ball around the start control.
    let mut problem = prob.clone();
    if cfg.delta.is_finite() {
        let m = prob.dims().m;
        let sl = (grid.intervals() + 1) * prob.dims().n;
        let center: Vec<f64> = (0..m)
            .map(|j| {
                (0..grid.intervals()).map(|i| start[sl + i * m + j]).sum::<f64>() / grid.intervals() as f64
            })
            .collect();
        problem = problem.with_control_box(prob.control_box().restricted(&center, cfg.delta)?)?;
    }
    let mut nlp = DiscreteNLP::new(&problem, &grid, problem.control_box().clone())?;
    let mut z = start;
    nlp.project(&mut z);

    let h = grid.step();
    let mut rho = cfg.rho0;
    let mut prev_viol = f64::INFINITY;
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut diagnostic = format!("reached max_outer = {}", cfg.max_outer);
    for k in 1..=cfg.max_outer {
        let inner = match inner_solve(&nlp, rho, &z, cfg) {
            Ok(r) => r,
            Err(e) => {
                status = SolveStatus::InnerFailure;
                diagnostic = format!("outer iteration {k}: {e}");
                break;
            }
        };
        z = inner.z;
        let viol = nlp.residuals(&z)?.max_violation();
        let capped = nlp.update_multipliers(&z, rho, cfg.multiplier_cap)?;
        debug_assert!(nlp.mu.as_slice().iter().all(|v| *v >= 0.0));
        let ms = nlp.lift_multipliers(&z)?;
        let process = nlp.unpack(&z)?;
        let awmp = compute_awmp_residuals(&problem, &grid, &process, &ms)?;
        let objective = process.objective(&problem)?;
        let finite = objective.is_finite()
            && viol.is_finite()
            && ms.p.as_slice().iter().chain(ms.q.as_slice()).chain(ms.r.as_slice()).all(|v| v.is_finite());
        history.push(IterateRecord {
            k,
            process,
            multipliers: ms,
            rho,
            awmp,
            objective,
        });
        if !finite {
            status = SolveStatus::InnerFailure;
            diagnostic = format!("outer iteration {k}: non-finite iterate");
            break;
        }
        if cfg.accepts(&history.last().unwrap().awmp, h) {
            status = SolveStatus::ConvergedAwmp;
            diagnostic = format!("residuals below tolerance at outer iteration {k}");
            break;
        }
        if capped {
            status = SolveStatus::MultiplierCapHit;
            diagnostic = format!(
                "outer iteration {k}: a multiplier reached the cap {:e}",
                cfg.multiplier_cap
            );
            break;
        }
        if viol > 0.5 * prev_viol {
            rho *= cfg.rho_factor;
        }
        prev_viol = viol;
    }
    let cq = assess(&problem, &history, &CqConfig::default())?;
    Ok(SolveResult {
        history,
        status,
        cq,
        diagnostic,
        problem,
        grid,
    })
}
