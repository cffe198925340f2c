//! Dense least squares with per-variable sign constraints, solved by a
//! Lawson-Hanson active-set method extended to free variables.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, AwmpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConstraint {
    Free,
    NonNeg,
    NonPos,
    /// Variable fixed at zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub y: Vec<f64>,
    /// `|A y - c|_2`.
    pub residual: f64,
}

fn min_norm_solve(a: &DMatrix<f64>, c: &DVector<f64>, cols: &[usize]) -> DVector<f64> {
    if cols.is_empty() {
        return DVector::zeros(0);
    }
    let sub = a.select_columns(cols);
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-13).max(f64::MIN_POSITIVE);
    svd.solve(c, eps).unwrap_or_else(|_| DVector::zeros(cols.len()))
}

/// Minimizes `|A y - c|_2` subject to the given sign constraints.
pub fn sign_constrained_lsq(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    signs: &[SignConstraint],
) -> Result<LsqSolution> {
    check_len("least-squares rhs", a.nrows(), c.len())?;
    check_len("least-squares sign pattern", a.ncols(), signs.len())?;
    let nv = a.ncols();
    // Flip nonpositive columns so every constrained variable is nonnegative.
    let mut af = a.clone();
    for (j, s) in signs.iter().enumerate() {
        if *s == SignConstraint::NonPos {
            af.column_mut(j).neg_mut();
        }
    }
    let constrained = |j: usize| matches!(signs[j], SignConstraint::NonNeg | SignConstraint::NonPos);
    let usable: Vec<usize> = (0..nv).filter(|&j| signs[j] != SignConstraint::Zero).collect();

    // Initial passive set: free variables plus constrained ones that come out
    // positive in the unconstrained solve.
    let unc = min_norm_solve(&af, c, &usable);
    let mut passive = vec![false; nv];
    for (k, &j) in usable.iter().enumerate() {
        passive[j] = !constrained(j) || unc[k] > 0.0;
    }

    let scale = af.amax().max(1.0) * c.amax().max(1.0);
    let wtol = 1e-12 * scale;
    let mut y = DVector::<f64>::zeros(nv);
    let max_outer = 3 * nv + 10;
    let mut last_added: Option<usize> = None;
    for _ in 0..max_outer {
        // Inner loop: solve on the passive set and backtrack into feasibility.
        for _ in 0..=nv {
            let cols: Vec<usize> = (0..nv).filter(|&j| passive[j]).collect();
            let z = min_norm_solve(&af, c, &cols);
            let mut alpha = 1.0_f64;
            let mut blocked = false;
            for (k, &j) in cols.iter().enumerate() {
                if constrained(j) && z[k] <= 0.0 {
                    blocked = true;
                    let denom = y[j] - z[k];
                    let a_j = if denom > 0.0 { y[j] / denom } else { 0.0 };
                    alpha = alpha.min(a_j);
                }
            }
            if !blocked {
                y.fill(0.0);
                for (k, &j) in cols.iter().enumerate() {
                    y[j] = z[k];
                }
                break;
            }
            for (k, &j) in cols.iter().enumerate() {
                y[j] += alpha * (z[k] - y[j]);
            }
            for &j in &cols {
                if constrained(j) && y[j] <= 1e-15 * scale {
                    y[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
        let resid = c - &af * &y;
        let w = af.transpose() * resid;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..nv {
            if passive[j] || !constrained(j) {
                continue;
            }
            if w[j] > wtol && best.is_none_or(|(_, b)| w[j] > b) {
                best = Some((j, w[j]));
            }
        }
        match best {
            None => break,
            Some((j, _)) if last_added == Some(j) && !passive[j] => {
                // The variable re-entered and was immediately dropped: stop.
                break;
            }
            Some((j, _)) => {
                passive[j] = true;
                last_added = Some(j);
            }
        }
    }
    let mut out: Vec<f64> = y.iter().copied().collect();
    for (j, s) in signs.iter().enumerate() {
        if *s == SignConstraint::NonPos {
            out[j] = -out[j];
        }
    }
    let ya = DVector::from_column_slice(&out);
    let residual = (a * ya - c).norm();
    if !residual.is_finite() {
        return Err(AwmpError::NonFinite("sign-constrained least squares".into()));
    }
    Ok(LsqSolution { y: out, residual })
}
