//! Regularity diagnostics along a generated sequence: multiplier growth,
//! per-node envelopes, calibrated ratios, and the resulting verdict.
//!
//! Verdicts are evidence gathered along one sequence. Regularity in the
//! strict sense quantifies over every converging sequence, so a regular
//! verdict here is weaker than the mathematical property.

use crate::alm::IterateRecord;
use crate::certificate::{wmp_certificate_search, WmpCertificate};
use crate::error::{AwmpError, Result};
use crate::grid::{euclid, max_abs};
use crate::model::ControlProblem;
use crate::monitor::extract_m_tuple;

#[derive(Debug, Clone, PartialEq)]
pub struct CqConfig {
    /// Largest growth slope still read as bounded.
    pub slope_tol: f64,
    /// Smallest growth slope read as divergence.
    pub irregular_slope_floor: f64,
    /// Minimum fit window for a divergence claim.
    pub min_irregular_window: usize,
    /// Largest relative growth over the last quarter for a stable envelope.
    pub stability_tol: f64,
    pub ratio_floor: f64,
    pub certificate_tol: f64,
}

impl Default for CqConfig {
    fn default() -> Self {
        Self {
            slope_tol: 0.05,
            irregular_slope_floor: 0.5,
            min_irregular_window: 10,
            stability_tol: 0.01,
            ratio_floor: 1e-12,
            certificate_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularityVerdict {
    RegularByBoundedness,
    RegularByAccq,
    IrregularEvidence,
    Inconclusive,
}

impl RegularityVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            RegularityVerdict::RegularByBoundedness => "RegularByBoundedness",
            RegularityVerdict::RegularByAccq => "RegularByACCQ",
            RegularityVerdict::IrregularEvidence => "IrregularEvidence",
            RegularityVerdict::Inconclusive => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CqReport {
    pub iters: Vec<usize>,
    pub q_linf_by_iter: Vec<f64>,
    pub r_linf_by_iter: Vec<f64>,
    pub q_l1_by_iter: Vec<f64>,
    pub r_l1_by_iter: Vec<f64>,
    pub growth_slope_q: f64,
    pub growth_slope_r: f64,
    /// Points used by the slope fits.
    pub fit_window: usize,
    /// Running-max envelopes of `|q_i|` and `|r_i|` (per node).
    pub k_q: Vec<f64>,
    pub k_r: Vec<f64>,
    /// Running-max envelopes of `|eps_i|`, `|eta_i|`.
    pub c_eps: Vec<f64>,
    pub c_eta: Vec<f64>,
    /// Running-max envelope of `|sum q grad_x b + sum r grad_x g|`.
    pub c_phi: Vec<f64>,
    pub multipliers_envelope_ok: bool,
    pub h8_envelope_ok: bool,
    pub h9_envelope_ok: bool,
    /// Largest calibrated ratio of each iterate.
    pub accq_ratio_by_iter: Vec<f64>,
    /// Ratio sup over nodes and the tail window (see [`tail_start`]).
    pub accq_ratio_sup: f64,
    pub accq_m_estimate: Vec<f64>,
    pub verdict: RegularityVerdict,
    pub evidence: String,
    pub certificate: Option<WmpCertificate>,
}

/// Max-abs entry of row `i`, the per-node magnitude used for multipliers.
fn row_max(a: &crate::grid::GridArray, i: usize) -> f64 {
    max_abs(a.row(i))
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.max(1e-300).ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    let n = lx.len() as f64;
    if lx.len() < 2 {
        return 0.0;
    }
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Relative growth of a nondecreasing sequence over its last quarter.
fn last_quarter_growth(seq: &[f64]) -> f64 {
    if seq.len() < 2 {
        return 0.0;
    }
    let q = (seq.len() / 4).max(1);
    let last = seq[seq.len() - 1];
    let before = seq[seq.len() - 1 - q];
    if last <= before {
        0.0
    } else if before == 0.0 {
        f64::INFINITY
    } else {
        (last - before) / before
    }
}

/// Per-node running maxima of a scalar field over the history, with the L1
/// and Linf norms of the envelope after each iterate.
fn envelope(
    history: &[IterateRecord],
    h: f64,
    field: impl Fn(&IterateRecord, usize) -> f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_int = history[0].process.grid().intervals();
    let mut env = vec![0.0_f64; n_int];
    let mut l1s = Vec::with_capacity(history.len());
    let mut linfs = Vec::with_capacity(history.len());
    for rec in history {
        for (i, e) in env.iter_mut().enumerate() {
            *e = e.max(field(rec, i));
        }
        l1s.push(h * env.iter().sum::<f64>());
        linfs.push(env.iter().fold(0.0_f64, |a, v| a.max(*v)));
    }
    (env, l1s, linfs)
}

fn stable(l1s: &[f64], linfs: &[f64], tol: f64) -> bool {
    last_quarter_growth(l1s) <= tol && last_quarter_growth(linfs) <= tol
}

/// Multiplier norms, growth slopes and envelopes over the history.
pub fn track_bounds(prob: &ControlProblem, history: &[IterateRecord]) -> Result<CqReport> {
    track_bounds_with(prob, history, &CqConfig::default())
}

pub fn track_bounds_with(prob: &ControlProblem, history: &[IterateRecord], cfg: &CqConfig) -> Result<CqReport> {
    if history.len() < 3 {
        return Err(AwmpError::HistoryTooShort {
            needed: 3,
            got: history.len(),
        });
    }
    let grid = history[0].process.grid().clone();
    let h = grid.step();
    let n_int = grid.intervals();
    let norms = |rec: &IterateRecord, r: bool| {
        let a = if r { &rec.multipliers.r } else { &rec.multipliers.q };
        let per: Vec<f64> = (0..n_int).map(|i| row_max(a, i)).collect();
        let linf = per.iter().fold(0.0_f64, |x, v| x.max(*v));
        (linf, h * per.iter().sum::<f64>())
    };
    let iters: Vec<usize> = history.iter().map(|r| r.k).collect();
    let (q_linf, q_l1): (Vec<f64>, Vec<f64>) = history.iter().map(|r| norms(r, false)).unzip();
    let (r_linf, r_l1): (Vec<f64>, Vec<f64>) = history.iter().map(|r| norms(r, true)).unzip();

    let window = history.len().div_ceil(2);
    let start = history.len() - window.max(2);
    let xs: Vec<f64> = iters[start..].iter().map(|k| *k as f64).collect();
    let slope_q = loglog_slope(&xs, &q_linf[start..]);
    let slope_r = loglog_slope(&xs, &r_linf[start..]);

    let (k_q, kq1, kqi) = envelope(history, h, |rec, i| row_max(&rec.multipliers.q, i));
    let (k_r, kr1, kri) = envelope(history, h, |rec, i| row_max(&rec.multipliers.r, i));
    let (c_eps, ce1, cei) = envelope(history, h, |rec, i| euclid(rec.awmp.eps.row(i)));
    let (c_eta, cn1, cni) = envelope(history, h, |rec, i| euclid(rec.awmp.eta.row(i)));
    let mut phis = Vec::with_capacity(history.len());
    for rec in history {
        let t = extract_m_tuple(prob, &grid, &rec.process, &rec.multipliers)?;
        phis.push(t.phi);
    }
    let (c_phi, cp1, cpi) = {
        let mut env = vec![0.0_f64; n_int];
        let mut l1s = Vec::new();
        let mut linfs = Vec::new();
        for phi in &phis {
            for (i, e) in env.iter_mut().enumerate() {
                *e = e.max(euclid(phi.row(i)));
            }
            l1s.push(h * env.iter().sum::<f64>());
            linfs.push(env.iter().fold(0.0_f64, |a, v| a.max(*v)));
        }
        (env, l1s, linfs)
    };
    let tol = cfg.stability_tol;
    Ok(CqReport {
        iters,
        q_linf_by_iter: q_linf,
        r_linf_by_iter: r_linf,
        q_l1_by_iter: q_l1,
        r_l1_by_iter: r_l1,
        growth_slope_q: slope_q,
        growth_slope_r: slope_r,
        fit_window: history.len() - start,
        k_q,
        k_r,
        c_eps,
        c_eta,
        c_phi,
        multipliers_envelope_ok: stable(&kq1, &kqi, tol) && stable(&kr1, &kri, tol),
        h8_envelope_ok: stable(&ce1, &cei, tol) && stable(&cn1, &cni, tol),
        h9_envelope_ok: stable(&cp1, &cpi, tol),
        accq_ratio_by_iter: Vec::new(),
        accq_ratio_sup: 0.0,
        accq_m_estimate: Vec::new(),
        verdict: RegularityVerdict::Inconclusive,
        evidence: String::new(),
        certificate: None,
    })
}

/// Calibrated ratio `|(q_i, r_i)| / max(|psi_i|, floor)` of one iterate, per
/// node; both-vanishing nodes give 0.
pub fn accq_node_ratios(prob: &ControlProblem, rec: &IterateRecord, floor: f64) -> Result<Vec<f64>> {
    let grid = rec.process.grid();
    let tup = extract_m_tuple(prob, grid, &rec.process, &rec.multipliers)?;
    let ms = &rec.multipliers;
    Ok((0..grid.intervals())
        .map(|i| {
            let qr = (euclid(ms.q.row(i)).powi(2) + euclid(ms.r.row(i)).powi(2)).sqrt();
            let psi = euclid(tup.psi.row(i));
            if psi <= floor && qr <= floor {
                0.0
            } else {
                qr / psi.max(floor)
            }
        })
        .collect())
}

/// First history index of the tail window: the last quarter of the
/// iterates plus the one before it, the points the stability test compares.
pub fn tail_start(len: usize) -> usize {
    len.saturating_sub((len / 4).max(1) + 1)
}

/// `(sup over nodes of the tail window, per-node max over the tail window,
/// per-iterate sup over nodes)`.
///
/// The calibration bound only concerns iterates approaching the reference
/// process, so `M` is estimated on the tail window ([`tail_start`]); the
/// per-iterate sups cover the whole history.
pub fn accq_ratio(prob: &ControlProblem, history: &[IterateRecord]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    accq_ratio_with(prob, history, CqConfig::default().ratio_floor)
}

pub fn accq_ratio_with(
    prob: &ControlProblem,
    history: &[IterateRecord],
    floor: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let Some(first) = history.first() else {
        return Err(AwmpError::HistoryTooShort { needed: 1, got: 0 });
    };
    let tail = tail_start(history.len());
    let mut m_est = vec![0.0_f64; first.process.grid().intervals()];
    let mut by_iter = Vec::with_capacity(history.len());
    for (j, rec) in history.iter().enumerate() {
        let ratios = accq_node_ratios(prob, rec, floor)?;
        let mut sup = 0.0_f64;
        for (m, r) in m_est.iter_mut().zip(&ratios) {
            if j >= tail {
                *m = m.max(*r);
            }
            sup = sup.max(*r);
        }
        by_iter.push(sup);
    }
    let sup = m_est.iter().fold(0.0_f64, |a, v| a.max(*v));
    Ok((sup, m_est, by_iter))
}

/// Final verdict; regular verdicts attach a certificate search at the last
/// iterate.
pub fn regularity_verdict(
    prob: &ControlProblem,
    mut report: CqReport,
    history: &[IterateRecord],
    cfg: &CqConfig,
) -> Result<CqReport> {
    if history.len() < 3 {
        report.verdict = RegularityVerdict::Inconclusive;
        report.evidence = format!("history of {} iterates is too short", history.len());
        return Ok(report);
    }
    let slopes_ok = report.growth_slope_q <= cfg.slope_tol && report.growth_slope_r <= cfg.slope_tol;
    let envelopes_ok = report.multipliers_envelope_ok && report.h8_envelope_ok && report.h9_envelope_ok;
    let running: Vec<f64> = report
        .accq_ratio_by_iter
        .iter()
        .scan(0.0_f64, |acc, v| {
            *acc = acc.max(*v);
            Some(*acc)
        })
        .collect();
    let accq_growth = last_quarter_growth(&running);
    let max_slope = report.growth_slope_q.max(report.growth_slope_r);
    report.verdict = if slopes_ok && envelopes_ok {
        RegularityVerdict::RegularByBoundedness
    } else if !running.is_empty() && accq_growth <= cfg.stability_tol {
        RegularityVerdict::RegularByAccq
    } else if max_slope >= cfg.irregular_slope_floor && report.fit_window >= cfg.min_irregular_window {
        RegularityVerdict::IrregularEvidence
    } else {
        RegularityVerdict::Inconclusive
    };
    report.evidence = format!(
        "slope_q={:.4} slope_r={:.4} window={} envelopes(q,r)={} h8={} h9={} accq_sup={:.6e} accq_growth={:.4e}",
        report.growth_slope_q,
        report.growth_slope_r,
        report.fit_window,
        report.multipliers_envelope_ok,
        report.h8_envelope_ok,
        report.h9_envelope_ok,
        report.accq_ratio_sup,
        accq_growth
    );
    if matches!(
        report.verdict,
        RegularityVerdict::RegularByBoundedness | RegularityVerdict::RegularByAccq
    ) {
        let last = history.last().unwrap();
        let grid = last.process.grid();
        report.certificate = Some(wmp_certificate_search(prob, grid, &last.process, cfg.certificate_tol)?);
    }
    Ok(report)
}

/// Full pipeline: bounds, ratios, verdict. Short histories yield an
/// inconclusive report instead of an error.
pub fn assess(prob: &ControlProblem, history: &[IterateRecord], cfg: &CqConfig) -> Result<CqReport> {
    let mut report = match track_bounds_with(prob, history, cfg) {
        Ok(r) => r,
        Err(AwmpError::HistoryTooShort { .. }) => CqReport {
            iters: history.iter().map(|r| r.k).collect(),
            q_linf_by_iter: Vec::new(),
            r_linf_by_iter: Vec::new(),
            q_l1_by_iter: Vec::new(),
            r_l1_by_iter: Vec::new(),
            growth_slope_q: 0.0,
            growth_slope_r: 0.0,
            fit_window: 0,
            k_q: Vec::new(),
            k_r: Vec::new(),
            c_eps: Vec::new(),
            c_eta: Vec::new(),
            c_phi: Vec::new(),
            multipliers_envelope_ok: false,
            h8_envelope_ok: false,
            h9_envelope_ok: false,
            accq_ratio_by_iter: Vec::new(),
            accq_ratio_sup: 0.0,
            accq_m_estimate: Vec::new(),
            verdict: RegularityVerdict::Inconclusive,
            evidence: String::new(),
            certificate: None,
        },
        Err(e) => return Err(e),
    };
    if !history.is_empty() {
        let (sup, m_est, by_iter) = accq_ratio_with(prob, history, cfg.ratio_floor)?;
        report.accq_ratio_sup = sup;
        report.accq_m_estimate = m_est;
        report.accq_ratio_by_iter = by_iter;
    }
    regularity_verdict(prob, report, history, cfg)
}
