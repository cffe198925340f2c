//! Uniform time grids and row-major per-node storage.

use crate::error::{check_len, AwmpError, Result};

/// Uniform partition of `[t0, t1]` into `n_intervals` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    n_intervals: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_intervals: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t0 >= t1 {
            return Err(AwmpError::InvalidArgument(format!(
                "grid requires finite t0 < t1, got [{t0}, {t1}]"
            )));
        }
        if n_intervals < 2 {
            return Err(AwmpError::InvalidArgument(format!(
                "grid requires at least 2 intervals, got {n_intervals}"
            )));
        }
        let h = (t1 - t0) / n_intervals as f64;
        let mut nodes: Vec<f64> = (0..=n_intervals).map(|i| t0 + i as f64 * h).collect();
        nodes[n_intervals] = t1;
        Ok(Self {
            t0,
            t1,
            n_intervals,
            h,
            nodes,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        self.n_intervals
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }
}

/// Convenience wrapper matching the operation name used by the CLI layer.
pub fn make_grid(t0: f64, t1: f64, n_intervals: usize) -> Result<TimeGrid> {
    TimeGrid::new(t0, t1, n_intervals)
}

/// Dense row-major table with one row per node or interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GridArray {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GridArray {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("grid array data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a table by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Largest absolute entry (0 for an empty table).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn expect_shape(&self, what: &'static str, rows: usize, cols: usize) -> Result<()> {
        check_len(what, rows, self.rows)?;
        check_len(what, cols, self.cols)
    }
}

/// Grid norms of an interval-valued field: `(l1, linf, weak_window)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridNorms {
    /// `h * sum_i |v_i|` with the Euclidean norm per row.
    pub l1: f64,
    /// `max_i |v_i|` with the Euclidean norm per row.
    pub linf: f64,
    /// Largest `|h * sum_{i in [a,b)} v_ij|` over windows and components.
    pub weak_window: f64,
}

/// Computes the grid norms of `v` (one row per interval).
///
/// The window maximum uses prefix sums: the largest windowed integral of a
/// component equals the spread `max S - min S` of its running integral `S`.
pub fn grid_norms(grid: &TimeGrid, v: &GridArray) -> Result<GridNorms> {
    check_len("grid_norms rows", grid.intervals(), v.rows())?;
    let h = grid.step();
    let mut l1 = 0.0;
    let mut linf = 0.0_f64;
    for i in 0..v.rows() {
        let norm = euclid(v.row(i));
        l1 += norm;
        linf = linf.max(norm);
    }
    let mut weak = 0.0_f64;
    for j in 0..v.cols() {
        let (mut s, mut lo, mut hi) = (0.0_f64, 0.0_f64, 0.0_f64);
        for i in 0..v.rows() {
            s += h * v.get(i, j);
            lo = lo.min(s);
            hi = hi.max(s);
        }
        weak = weak.max(hi - lo);
    }
    Ok(GridNorms {
        l1: h * l1,
        linf,
        weak_window: weak,
    })
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
