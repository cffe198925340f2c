//! Mayer-form optimal control problems with mixed constraints, processes,
//! multipliers, and pointwise evaluation of the augmented Pontryagin function.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, AwmpError, Result};
use crate::grid::{euclid, GridArray, TimeGrid};

/// Tolerance used to decide whether a control component sits on a bound.
pub const BOX_ACTIVE_TOL: f64 = 1e-9;

/// Problem data evaluated pointwise. Jacobians are written row-major:
/// `jx[i * n + j] = d out_i / d x_j`, `ju[i * m + j] = d out_i / d u_j`.
///
/// Implementations must fill every entry of the output buffers.
pub trait OcpFunctions: Send + Sync {
    fn cost(&self, x0: &[f64], x1: &[f64]) -> f64;

    /// Gradient with respect to `(x0, x1)`, length `2n`.
    fn cost_grad(&self, x0: &[f64], x1: &[f64], grad: &mut [f64]);

    fn dynamics(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);

    fn dynamics_jac(&self, t: f64, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]);

    fn eq_constraints(&self, _t: f64, _x: &[f64], _u: &[f64], _out: &mut [f64]) {}

    fn eq_jac(&self, _t: f64, _x: &[f64], _u: &[f64], _jx: &mut [f64], _ju: &mut [f64]) {}

    fn ineq_constraints(&self, _t: f64, _x: &[f64], _u: &[f64], _out: &mut [f64]) {}

    fn ineq_jac(&self, _t: f64, _x: &[f64], _u: &[f64], _jx: &mut [f64], _ju: &mut [f64]) {}
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub m_b: usize,
    pub m_g: usize,
}

/// Position of a control component relative to its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Interior,
    Lower,
    Upper,
    /// Lower and upper bound coincide.
    Pinned,
}

impl BoundState {
    /// Euclidean projection of a scalar onto this component's normal cone.
    pub fn project(self, v: f64) -> f64 {
        match self {
            BoundState::Interior => 0.0,
            BoundState::Lower => v.min(0.0),
            BoundState::Upper => v.max(0.0),
            BoundState::Pinned => v,
        }
    }
}

/// Time-invariant control box `lower <= u <= upper` (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ControlBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_len("control box bounds", lower.len(), upper.len())?;
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(AwmpError::InvalidArgument(format!(
                    "control box component {j} has lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(m: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; m],
            upper: vec![f64::INFINITY; m],
        }
    }

    pub fn uniform(m: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; m], vec![hi; m])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Intersection with the sup-norm ball of radius `delta` around `center`.
    /// An infinite radius returns the box unchanged.
    pub fn restricted(&self, center: &[f64], delta: f64) -> Result<Self> {
        check_len("restriction center", self.dim(), center.len())?;
        if delta.is_infinite() {
            return Ok(self.clone());
        }
        let lower = self
            .lower
            .iter()
            .zip(center)
            .map(|(lo, c)| lo.max(c - delta))
            .collect();
        let upper = self
            .upper
            .iter()
            .zip(center)
            .map(|(hi, c)| hi.min(c + delta))
            .collect();
        Self::new(lower, upper)
    }

    pub fn project_in_place(&self, v: &mut [f64]) {
        for ((x, lo), hi) in v.iter_mut().zip(&self.lower).zip(&self.upper) {
            *x = x.clamp(*lo, *hi);
        }
    }

    /// Largest distance of a component of `u` outside the box.
    pub fn violation(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .fold(0.0_f64, |acc, ((x, lo), hi)| {
                acc.max(lo - x).max(x - hi)
            })
    }

    pub fn classify(&self, u: &[f64], tol: f64) -> Vec<BoundState> {
        u.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .map(|((x, lo), hi)| {
                let at_lo = (x - lo).abs() <= tol;
                let at_hi = (hi - x).abs() <= tol;
                if hi - lo <= tol {
                    BoundState::Pinned
                } else if at_lo {
                    BoundState::Lower
                } else if at_hi {
                    BoundState::Upper
                } else {
                    BoundState::Interior
                }
            })
            .collect()
    }
}

/// Componentwise clamp of `v` onto the box.
pub fn project_box(v: &[f64], control_box: &ControlBox) -> Result<Vec<f64>> {
    check_len("project_box input", control_box.dim(), v.len())?;
    let mut out = v.to_vec();
    control_box.project_in_place(&mut out);
    Ok(out)
}

/// Euclidean distance from `zeta` to the normal cone of the box at `u`.
pub fn normal_cone_violation(u: &[f64], control_box: &ControlBox, zeta: &[f64]) -> Result<f64> {
    check_len("normal_cone_violation control", control_box.dim(), u.len())?;
    check_len("normal_cone_violation zeta", control_box.dim(), zeta.len())?;
    let excess = control_box.violation(u);
    if excess > BOX_ACTIVE_TOL {
        return Err(AwmpError::Precondition(format!(
            "control lies {excess:e} outside the box"
        )));
    }
    let states = control_box.classify(u, BOX_ACTIVE_TOL);
    let sq: f64 = states
        .iter()
        .zip(zeta)
        .map(|(s, z)| {
            let d = z - s.project(*z);
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

/// Affine endpoint constraint `A z = c` on `z = (x(t0), x(t1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEndpoint {
    a: DMatrix<f64>,
    c: DVector<f64>,
    /// `A^T (A A^T)^{-1}`, used for both projections.
    pinv: DMatrix<f64>,
}

impl AffineEndpoint {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
}

/// Endpoint set `C` for `(x(t0), x(t1))`.
#[derive(Debug, Clone, PartialEq)]
pub enum EndpointSet {
    /// `{a} x R^n`.
    FixedInitial(Vec<f64>),
    /// `{a} x {b}`.
    FixedBoth(Vec<f64>, Vec<f64>),
    /// `R^n x R^n`.
    Free,
    AffineEquality(AffineEndpoint),
}

impl EndpointSet {
    /// Builds `{z : A z = c}`; `A` must have full row rank.
    pub fn affine(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        check_len("affine endpoint rhs", a.nrows(), c.len())?;
        let gram = &a * a.transpose();
        let gram_inv = gram.try_inverse().ok_or_else(|| {
            AwmpError::InvalidArgument("affine endpoint matrix must have full row rank".into())
        })?;
        let pinv = a.transpose() * gram_inv;
        Ok(EndpointSet::AffineEquality(AffineEndpoint { a, c, pinv }))
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            EndpointSet::FixedInitial(a) => check_len("endpoint a", n, a.len()),
            EndpointSet::FixedBoth(a, b) => {
                check_len("endpoint a", n, a.len())?;
                check_len("endpoint b", n, b.len())
            }
            EndpointSet::Free => Ok(()),
            EndpointSet::AffineEquality(aff) => check_len("endpoint A columns", 2 * n, aff.a.ncols()),
        }
    }

    /// Projection of `v` (length `2n`) onto the normal cone, which is a linear
    /// subspace for every supported variant.
    pub fn project_onto_normal_cone(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len() / 2;
        match self {
            EndpointSet::FixedInitial(_) => {
                let mut out = v.to_vec();
                out[n..].iter_mut().for_each(|x| *x = 0.0);
                out
            }
            EndpointSet::FixedBoth(..) => v.to_vec(),
            EndpointSet::Free => vec![0.0; v.len()],
            EndpointSet::AffineEquality(aff) => {
                let vv = DVector::from_column_slice(v);
                let out = &aff.pinv * (&aff.a * vv);
                out.as_slice().to_vec()
            }
        }
    }

    /// `v - proj_N(v)`: the part of `v` that no normal vector explains.
    pub fn normal_cone_residual(&self, v: &[f64]) -> Vec<f64> {
        let proj = self.project_onto_normal_cone(v);
        v.iter().zip(&proj).map(|(a, b)| a - b).collect()
    }

    /// Euclidean projection of `z = (x0, x1)` onto `C`, in place.
    pub fn project_point(&self, z: &mut [f64]) {
        let n = z.len() / 2;
        match self {
            EndpointSet::FixedInitial(a) => z[..n].copy_from_slice(a),
            EndpointSet::FixedBoth(a, b) => {
                z[..n].copy_from_slice(a);
                z[n..].copy_from_slice(b);
            }
            EndpointSet::Free => {}
            EndpointSet::AffineEquality(aff) => {
                let zz = DVector::from_column_slice(z);
                let corr = &aff.pinv * (&aff.a * &zz - &aff.c);
                for (x, d) in z.iter_mut().zip(corr.iter()) {
                    *x -= d;
                }
            }
        }
    }

    pub fn distance(&self, z: &[f64]) -> f64 {
        let mut p = z.to_vec();
        self.project_point(&mut p);
        z.iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Mixed-constrained optimal control problem in Mayer form.
#[derive(Clone)]
pub struct ControlProblem {
    dims: Dims,
    t0: f64,
    t1: f64,
    control_box: ControlBox,
    endpoint: EndpointSet,
    hypothesis_notes: String,
    functions: Arc<dyn OcpFunctions>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("dims", &self.dims)
            .field("t0", &self.t0)
            .field("t1", &self.t1)
            .field("control_box", &self.control_box)
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(
        dims: Dims,
        t0: f64,
        t1: f64,
        control_box: ControlBox,
        endpoint: EndpointSet,
        functions: Arc<dyn OcpFunctions>,
    ) -> Result<Self> {
        if dims.n == 0 || dims.m == 0 {
            return Err(AwmpError::InvalidArgument(
                "state and control dimensions must be positive".into(),
            ));
        }
        if !(t0 < t1) {
            return Err(AwmpError::InvalidArgument(format!(
                "time horizon requires t0 < t1, got [{t0}, {t1}]"
            )));
        }
        check_len("control box dimension", dims.m, control_box.dim())?;
        endpoint.check_dim(dims.n)?;
        Ok(Self {
            dims,
            t0,
            t1,
            control_box,
            endpoint,
            hypothesis_notes: String::new(),
            functions,
        })
    }

    pub fn with_notes(mut self, notes: impl Into<String>) -> Self {
        self.hypothesis_notes = notes.into();
        self
    }

    /// Same problem with the cost multiplied by `c > 0`.
    pub fn with_cost_scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(AwmpError::InvalidArgument(format!(
                "cost scale must be positive, got {c}"
            )));
        }
        let mut out = self.clone();
        out.functions = Arc::new(ScaledCost {
            inner: self.functions.clone(),
            scale: c,
        });
        Ok(out)
    }

    /// Same problem with a different control box.
    pub fn with_control_box(&self, control_box: ControlBox) -> Result<Self> {
        check_len("control box dimension", self.dims.m, control_box.dim())?;
        let mut out = self.clone();
        out.control_box = control_box;
        Ok(out)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn control_box(&self) -> &ControlBox {
        &self.control_box
    }

    pub fn endpoint(&self) -> &EndpointSet {
        &self.endpoint
    }

    pub fn hypothesis_notes(&self) -> &str {
        &self.hypothesis_notes
    }

    pub fn functions(&self) -> &dyn OcpFunctions {
        self.functions.as_ref()
    }

    fn check_point(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_len("state", self.dims.n, x.len())?;
        check_len("control", self.dims.m, u.len())
    }

    pub fn cost(&self, x0: &[f64], x1: &[f64]) -> Result<f64> {
        check_len("initial state", self.dims.n, x0.len())?;
        check_len("final state", self.dims.n, x1.len())?;
        Ok(self.functions.cost(x0, x1))
    }

    pub fn cost_grad(&self, x0: &[f64], x1: &[f64]) -> Result<Vec<f64>> {
        check_len("initial state", self.dims.n, x0.len())?;
        check_len("final state", self.dims.n, x1.len())?;
        let mut g = vec![0.0; 2 * self.dims.n];
        self.functions.cost_grad(x0, x1, &mut g);
        Ok(g)
    }

    pub fn dynamics(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x, u)?;
        let mut out = vec![0.0; self.dims.n];
        self.functions.dynamics(t, x, u, &mut out);
        Ok(out)
    }

    pub fn eq_constraints(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x, u)?;
        let mut out = vec![0.0; self.dims.m_b];
        if self.dims.m_b > 0 {
            self.functions.eq_constraints(t, x, u, &mut out);
        }
        Ok(out)
    }

    pub fn ineq_constraints(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x, u)?;
        let mut out = vec![0.0; self.dims.m_g];
        if self.dims.m_g > 0 {
            self.functions.ineq_constraints(t, x, u, &mut out);
        }
        Ok(out)
    }

    /// All Jacobians at one point.
    pub fn jacobians(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Jacobians> {
        self.check_point(x, u)?;
        let mut jac = Jacobians::zeros(self.dims);
        self.fill_jacobians(t, x, u, &mut jac);
        Ok(jac)
    }

    pub(crate) fn fill_jacobians(&self, t: f64, x: &[f64], u: &[f64], jac: &mut Jacobians) {
        let f = self.functions.as_ref();
        f.dynamics_jac(t, x, u, &mut jac.fx, &mut jac.fu);
        if self.dims.m_b > 0 {
            f.eq_jac(t, x, u, &mut jac.bx, &mut jac.bu);
        }
        if self.dims.m_g > 0 {
            f.ineq_jac(t, x, u, &mut jac.gx, &mut jac.gu);
        }
    }
}

struct ScaledCost {
    inner: Arc<dyn OcpFunctions>,
    scale: f64,
}

impl OcpFunctions for ScaledCost {
    fn cost(&self, x0: &[f64], x1: &[f64]) -> f64 {
        self.scale * self.inner.cost(x0, x1)
    }
    fn cost_grad(&self, x0: &[f64], x1: &[f64], grad: &mut [f64]) {
        self.inner.cost_grad(x0, x1, grad);
        grad.iter_mut().for_each(|g| *g *= self.scale);
    }
    fn dynamics(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.inner.dynamics(t, x, u, out)
    }
    fn dynamics_jac(&self, t: f64, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        self.inner.dynamics_jac(t, x, u, jx, ju)
    }
    fn eq_constraints(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.inner.eq_constraints(t, x, u, out)
    }
    fn eq_jac(&self, t: f64, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        self.inner.eq_jac(t, x, u, jx, ju)
    }
    fn ineq_constraints(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.inner.ineq_constraints(t, x, u, out)
    }
    fn ineq_jac(&self, t: f64, x: &[f64], u: &[f64], jx: &mut [f64], ju: &mut [f64]) {
        self.inner.ineq_jac(t, x, u, jx, ju)
    }
}

/// Row-major Jacobians of `f`, `b`, `g` with respect to `x` and `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub dims: Dims,
    pub fx: Vec<f64>,
    pub fu: Vec<f64>,
    pub bx: Vec<f64>,
    pub bu: Vec<f64>,
    pub gx: Vec<f64>,
    pub gu: Vec<f64>,
}

impl Jacobians {
    pub fn zeros(d: Dims) -> Self {
        Self {
            dims: d,
            fx: vec![0.0; d.n * d.n],
            fu: vec![0.0; d.n * d.m],
            bx: vec![0.0; d.m_b * d.n],
            bu: vec![0.0; d.m_b * d.m],
            gx: vec![0.0; d.m_g * d.n],
            gu: vec![0.0; d.m_g * d.m],
        }
    }

    /// Gradient of `p.f + q.b + r.g` in `(x, u)`, written into the buffers.
    pub fn hamiltonian_gradient(
        &self,
        p: &[f64],
        q: &[f64],
        r: &[f64],
        grad_x: &mut [f64],
        grad_u: &mut [f64],
    ) {
        let Dims { n, m, m_b, m_g } = self.dims;
        grad_x.iter_mut().for_each(|g| *g = 0.0);
        grad_u.iter_mut().for_each(|g| *g = 0.0);
        accumulate_transpose(&self.fx, p, n, n, grad_x);
        accumulate_transpose(&self.fu, p, n, m, grad_u);
        accumulate_transpose(&self.bx, q, m_b, n, grad_x);
        accumulate_transpose(&self.bu, q, m_b, m, grad_u);
        accumulate_transpose(&self.gx, r, m_g, n, grad_x);
        accumulate_transpose(&self.gu, r, m_g, m, grad_u);
    }
}

/// `out += J^T w` for a row-major `rows x cols` matrix `J`.
pub(crate) fn accumulate_transpose(j: &[f64], w: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for (i, wi) in w.iter().enumerate().take(rows) {
        if *wi == 0.0 {
            continue;
        }
        let row = &j[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += wi * a;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Augmented Pontryagin function `p.f + q.b + r.g` at one point.
pub fn eval_hamiltonian(
    prob: &ControlProblem,
    t: f64,
    x: &[f64],
    p: &[f64],
    q: &[f64],
    r: &[f64],
    u: &[f64],
) -> Result<f64> {
    let d = prob.dims();
    check_len("costate", d.n, p.len())?;
    check_len("equality multiplier", d.m_b, q.len())?;
    check_len("inequality multiplier", d.m_g, r.len())?;
    let f = prob.dynamics(t, x, u)?;
    let b = prob.eq_constraints(t, x, u)?;
    let g = prob.ineq_constraints(t, x, u)?;
    Ok(dot(p, &f) + dot(q, &b) + dot(r, &g))
}

/// Gradient of the augmented Pontryagin function in `(x, u)`.
pub fn grad_hamiltonian(
    prob: &ControlProblem,
    t: f64,
    x: &[f64],
    p: &[f64],
    q: &[f64],
    r: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = prob.dims();
    check_len("costate", d.n, p.len())?;
    check_len("equality multiplier", d.m_b, q.len())?;
    check_len("inequality multiplier", d.m_g, r.len())?;
    let jac = prob.jacobians(t, x, u)?;
    let mut gx = vec![0.0; d.n];
    let mut gu = vec![0.0; d.m];
    jac.hamiltonian_gradient(p, q, r, &mut gx, &mut gu);
    Ok((gx, gu))
}

/// Slack `max(-g_j, 0)` of each inequality constraint.
pub fn g_minus(prob: &ControlProblem, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    Ok(slack(&prob.ineq_constraints(t, x, u)?))
}

pub(crate) fn slack(g: &[f64]) -> Vec<f64> {
    g.iter().map(|v| (-v).max(0.0)).collect()
}

/// Violation `max(g_j, 0)` of each inequality constraint.
pub fn g_plus(prob: &ControlProblem, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    Ok(prob
        .ineq_constraints(t, x, u)?
        .iter()
        .map(|v| v.max(0.0))
        .collect())
}

/// Discretized state trajectory (nodes) and piecewise-constant control (intervals).
#[derive(Debug, Clone, PartialEq)]
pub struct Process {
    grid: TimeGrid,
    x: GridArray,
    u: GridArray,
}

impl Process {
    pub fn new(grid: TimeGrid, x: GridArray, u: GridArray) -> Result<Self> {
        let n_int = grid.intervals();
        check_len("process state rows", n_int + 1, x.rows())?;
        check_len("process control rows", n_int, u.rows())?;
        Ok(Self { grid, x, u })
    }

    pub(crate) fn check_against(&self, prob: &ControlProblem) -> Result<()> {
        let d = prob.dims();
        check_len("process state columns", d.n, self.x.cols())?;
        check_len("process control columns", d.m, self.u.cols())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn x(&self) -> &GridArray {
        &self.x
    }

    pub fn u(&self) -> &GridArray {
        &self.u
    }

    pub fn x_mut(&mut self) -> &mut GridArray {
        &mut self.x
    }

    pub fn u_mut(&mut self) -> &mut GridArray {
        &mut self.u
    }

    /// `(x(t0), x(t1))` concatenated.
    pub fn endpoints(&self) -> Vec<f64> {
        let mut z = self.x.row(0).to_vec();
        z.extend_from_slice(self.x.row(self.grid.intervals()));
        z
    }

    pub fn objective(&self, prob: &ControlProblem) -> Result<f64> {
        prob.cost(self.x.row(0), self.x.row(self.grid.intervals()))
    }
}

/// Multipliers `(lambda, p, q, r, zeta)` as grid densities, in the sign
/// convention `r <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub lambda: f64,
    /// Costate at the `N + 1` nodes.
    pub p: GridArray,
    /// Equality multiplier density per interval.
    pub q: GridArray,
    /// Inequality multiplier density per interval.
    pub r: GridArray,
    /// Normal-cone element density per interval.
    pub zeta: GridArray,
}

impl MultiplierSet {
    /// Validated constructor: shapes must match and `lambda >= 0`, `r <= 0`.
    pub fn new(
        lambda: f64,
        p: GridArray,
        q: GridArray,
        r: GridArray,
        zeta: GridArray,
    ) -> Result<Self> {
        let out = Self::from_parts(lambda, p, q, r, zeta)?;
        if out.r.max() > 0.0 {
            return Err(AwmpError::InvalidArgument(
                "inequality multipliers must satisfy r <= 0".into(),
            ));
        }
        Ok(out)
    }

    /// Shape-checked constructor that tolerates sign violations in `r`, for
    /// diagnosing externally supplied multipliers.
    pub fn from_parts(
        lambda: f64,
        p: GridArray,
        q: GridArray,
        r: GridArray,
        zeta: GridArray,
    ) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(AwmpError::InvalidArgument(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        let n_int = q.rows();
        check_len("costate rows", n_int + 1, p.rows())?;
        check_len("inequality multiplier rows", n_int, r.rows())?;
        check_len("normal-cone element rows", n_int, zeta.rows())?;
        Ok(Self {
            lambda,
            p,
            q,
            r,
            zeta,
        })
    }

    pub fn zeros(d: Dims, n_intervals: usize) -> Self {
        Self {
            lambda: 0.0,
            p: GridArray::zeros(n_intervals + 1, d.n),
            q: GridArray::zeros(n_intervals, d.m_b),
            r: GridArray::zeros(n_intervals, d.m_g),
            zeta: GridArray::zeros(n_intervals, d.m),
        }
    }

    pub(crate) fn check_against(&self, prob: &ControlProblem, grid: &TimeGrid) -> Result<()> {
        let d = prob.dims();
        let n_int = grid.intervals();
        self.p.expect_shape("costate", n_int + 1, d.n)?;
        self.q.expect_shape("equality multiplier", n_int, d.m_b)?;
        self.r.expect_shape("inequality multiplier", n_int, d.m_g)?;
        self.zeta.expect_shape("normal-cone element", n_int, d.m)
    }

    /// `lambda + max_i |p_i|_inf`.
    pub fn normalization(&self) -> f64 {
        self.lambda + self.p.max_abs()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lambda: self.lambda * c,
            p: self.p.scaled(c),
            q: self.q.scaled(c),
            r: self.r.scaled(c),
            zeta: self.zeta.scaled(c),
        }
    }
}

/// Violations of dynamics, mixed constraints, control box and endpoint set.
///
/// The dynamics defect is reported in rate form `(x_{i+1} - x_i)/h - f`, so its
/// maximum is first order in `h` for smooth exact solutions; its L1 norm equals
/// the sum of the raw Euler defects.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeasibilityResiduals {
    pub dyn_max: f64,
    pub dyn_l1: f64,
    pub b_max: f64,
    pub b_l1: f64,
    pub gplus_max: f64,
    pub gplus_l1: f64,
    pub box_max: f64,
    pub box_l1: f64,
    pub endpoint: f64,
}

impl FeasibilityResiduals {
    pub fn max_violation(&self) -> f64 {
        self.dyn_max
            .max(self.b_max)
            .max(self.gplus_max)
            .max(self.box_max)
            .max(self.endpoint)
    }
}

pub fn feasibility_report(prob: &ControlProblem, process: &Process) -> Result<FeasibilityResiduals> {
    process.check_against(prob)?;
    let d = prob.dims();
    let grid = process.grid();
    let h = grid.step();
    let mut out = FeasibilityResiduals::default();
    let mut f = vec![0.0; d.n];
    let mut b = vec![0.0; d.m_b];
    let mut g = vec![0.0; d.m_g];
    let mut defect = vec![0.0; d.n];
    let fns = prob.functions();
    for i in 0..grid.intervals() {
        let t = grid.node(i);
        let (x, u) = (process.x().row(i), process.u().row(i));
        let xn = process.x().row(i + 1);
        fns.dynamics(t, x, u, &mut f);
        for k in 0..d.n {
            defect[k] = (xn[k] - x[k]) / h - f[k];
        }
        let dn = euclid(&defect);
        out.dyn_max = out.dyn_max.max(dn);
        out.dyn_l1 += h * dn;
        if d.m_b > 0 {
            fns.eq_constraints(t, x, u, &mut b);
            let bn = euclid(&b);
            out.b_max = out.b_max.max(bn);
            out.b_l1 += h * bn;
        }
        if d.m_g > 0 {
            fns.ineq_constraints(t, x, u, &mut g);
            let gp: Vec<f64> = g.iter().map(|v| v.max(0.0)).collect();
            let gn = euclid(&gp);
            out.gplus_max = out.gplus_max.max(gn);
            out.gplus_l1 += h * gn;
        }
        let bv = prob.control_box().violation(u).max(0.0);
        out.box_max = out.box_max.max(bv);
        out.box_l1 += h * bv;
    }
    out.endpoint = prob.endpoint().distance(&process.endpoints());
    Ok(out)
}
