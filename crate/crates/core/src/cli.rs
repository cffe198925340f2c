//! Command-line driver.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::Parser;

use crate::alm::{solve, IterateRecord, SolveStatus, SolverConfig};
use crate::certificate::wmp_certificate_search;
use crate::cq::{accq_node_ratios, assess, CqConfig, CqReport};
use crate::error::{AwmpError, Result};
use crate::grid::{max_abs, TimeGrid};
use crate::model::ControlProblem;
use crate::problems::{analytic_awmp_iterate, get_problem};

pub const CSV_HEADER: &str = "iter,rho,obj,feas_dyn_max,feas_b_max,feas_gplus_max,eps_l1,eps_weak,eta_l1,eta_weak,theta_max,transv_norm,norm_gap,q_inf,q_l1,r_inf,r_l1,accq_ratio";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    VerifyAnalytic,
    CertificateOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::VerifyAnalytic => "verify-analytic",
            Mode::CertificateOnly => "certificate-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "solve" => Ok(Mode::Solve),
            "verify-analytic" => Ok(Mode::VerifyAnalytic),
            "certificate-only" => Ok(Mode::CertificateOnly),
            other => Err(AwmpError::InvalidArgument(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub mode: Mode,
    pub grid: usize,
    pub tol: f64,
    pub rho0: f64,
    pub rho_factor: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub kmax: usize,
    pub seed: u64,
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            problem: "exp-tracking".into(),
            mode: Mode::Solve,
            grid: s.n_intervals,
            tol: s.tol_stat,
            rho0: s.rho0,
            rho_factor: s.rho_factor,
            max_outer: s.max_outer,
            max_inner: s.max_inner,
            kmax: 100,
            seed: s.seed,
            csv: None,
            summary: None,
        }
    }
}

impl RunConfig {
    /// Line-oriented `key=value` text; keys are the flag names.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "problem={}", self.problem);
        let _ = writeln!(s, "mode={}", self.mode.as_str());
        let _ = writeln!(s, "grid={}", self.grid);
        let _ = writeln!(s, "tol={}", self.tol);
        let _ = writeln!(s, "rho0={}", self.rho0);
        let _ = writeln!(s, "rho-factor={}", self.rho_factor);
        let _ = writeln!(s, "max-outer={}", self.max_outer);
        let _ = writeln!(s, "max-inner={}", self.max_inner);
        let _ = writeln!(s, "kmax={}", self.kmax);
        let _ = writeln!(s, "seed={}", self.seed);
        if let Some(p) = &self.csv {
            let _ = writeln!(s, "csv={}", p.display());
        }
        if let Some(p) = &self.summary {
            let _ = writeln!(s, "summary={}", p.display());
        }
        s
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; underscores in keys are accepted for dashes.
    pub fn apply_file_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AwmpError::InvalidArgument(format!("config line {}: expected key=value", lineno + 1))
            })?;
            self.set(&key.trim().replace('_', "-"), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_file_str(text)?;
        Ok(c)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| AwmpError::InvalidArgument(format!("bad value '{v}' for {key}")))
        }
        match key {
            "problem" => self.problem = value.to_string(),
            "mode" => self.mode = Mode::parse(value)?,
            "grid" => self.grid = num(key, value)?,
            "tol" => self.tol = num(key, value)?,
            "rho0" => self.rho0 = num(key, value)?,
            "rho-factor" => self.rho_factor = num(key, value)?,
            "max-outer" => self.max_outer = num(key, value)?,
            "max-inner" => self.max_inner = num(key, value)?,
            "kmax" => self.kmax = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "csv" => self.csv = Some(PathBuf::from(value)),
            "summary" => self.summary = Some(PathBuf::from(value)),
            other => return Err(AwmpError::InvalidArgument(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            n_intervals: self.grid,
            tol_feas: self.tol,
            tol_stat: self.tol,
            rho0: self.rho0,
            rho_factor: self.rho_factor,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "awmp", about = "Method-of-multipliers solves and maximum-principle diagnostics")]
struct Flags {
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long = "rho-factor")]
    rho_factor: Option<f64>,
    #[arg(long = "max-outer")]
    max_outer: Option<usize>,
    #[arg(long = "max-inner")]
    max_inner: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(flags: Flags) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path)
            .map_err(|e| AwmpError::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        c.apply_file_str(&text)?;
    }
    if let Some(v) = flags.problem {
        c.problem = v;
    }
    if let Some(v) = flags.mode {
        c.mode = Mode::parse(&v)?;
    }
    macro_rules! over {
        ($($f:ident),*) => { $( if let Some(v) = flags.$f { c.$f = v; } )* };
    }
    over!(grid, tol, rho0, rho_factor, max_outer, max_inner, kmax, seed);
    if flags.csv.is_some() {
        c.csv = flags.csv;
    }
    if flags.summary.is_some() {
        c.summary = flags.summary;
    }
    Ok(c)
}

fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// `(q_inf, q_l1, r_inf, r_l1)` with the max-abs magnitude per node.
pub fn multiplier_norms(rec: &IterateRecord) -> (f64, f64, f64, f64) {
    let grid = rec.process.grid();
    let h = grid.step();
    let per = |a: &crate::grid::GridArray| -> (f64, f64) {
        let v: Vec<f64> = (0..grid.intervals()).map(|i| max_abs(a.row(i))).collect();
        (v.iter().fold(0.0_f64, |x, y| x.max(*y)), h * v.iter().sum::<f64>())
    };
    let (qi, q1) = per(&rec.multipliers.q);
    let (ri, r1) = per(&rec.multipliers.r);
    (qi, q1, ri, r1)
}

pub fn csv_row(prob: &ControlProblem, rec: &IterateRecord) -> Result<String> {
    let a = &rec.awmp;
    let (qi, q1, ri, r1) = multiplier_norms(rec);
    let accq = accq_node_ratios(prob, rec, CqConfig::default().ratio_floor)?
        .into_iter()
        .fold(0.0_f64, f64::max);
    let cols = [
        rec.rho,
        rec.objective,
        a.feasibility.dyn_max,
        a.feasibility.b_max,
        a.feasibility.gplus_max,
        a.eps_norms.l1,
        a.eps_norms.weak_window,
        a.eta_norms.l1,
        a.eta_norms.weak_window,
        a.theta_max,
        a.transversality_norm(),
        a.normalization_gap,
        qi,
        q1,
        ri,
        r1,
        accq,
    ];
    let mut s = rec.k.to_string();
    for c in cols {
        s.push(',');
        s.push_str(&fmt_num(c));
    }
    Ok(s)
}

pub fn csv_table(prob: &ControlProblem, history: &[IterateRecord]) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for rec in history {
        out.push_str(&csv_row(prob, rec)?);
        out.push('\n');
    }
    Ok(out)
}

fn summary_lines(cfg: &RunConfig, history: &[IterateRecord], cq: &CqReport) -> Vec<(String, String)> {
    let mut kv: Vec<(String, String)> = vec![
        ("problem".into(), cfg.problem.clone()),
        ("mode".into(), cfg.mode.as_str().into()),
        ("grid".into(), cfg.grid.to_string()),
        ("iterations".into(), history.len().to_string()),
    ];
    if let Some(last) = history.last() {
        let a = &last.awmp;
        kv.push(("final_iter".into(), last.k.to_string()));
        kv.push(("final_obj".into(), fmt_num(last.objective)));
        kv.push(("final_feas_dyn_max".into(), fmt_num(a.feasibility.dyn_max)));
        kv.push(("final_eps_l1".into(), fmt_num(a.eps_norms.l1)));
        kv.push(("final_eta_l1".into(), fmt_num(a.eta_norms.l1)));
        kv.push(("final_theta_max".into(), fmt_num(a.theta_max)));
        kv.push(("final_transv_norm".into(), fmt_num(a.transversality_norm())));
        kv.push(("final_norm_gap".into(), fmt_num(a.normalization_gap)));
    }
    kv.push(("accq_ratio_sup".into(), fmt_num(cq.accq_ratio_sup)));
    kv.push(("growth_slope_q".into(), fmt_num(cq.growth_slope_q)));
    kv.push(("growth_slope_r".into(), fmt_num(cq.growth_slope_r)));
    kv.push(("h8_envelope_ok".into(), cq.h8_envelope_ok.to_string()));
    kv.push(("h9_envelope_ok".into(), cq.h9_envelope_ok.to_string()));
    kv.push(("verdict".into(), cq.verdict.as_str().into()));
    kv.push((
        "certificate".into(),
        cq.certificate
            .as_ref()
            .map_or("none".to_string(), |c| c.verdict.label().to_string()),
    ));
    kv
}

fn render(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn emit(path: &Option<PathBuf>, text: &str, to_stdout: bool) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| AwmpError::InvalidArgument(format!("cannot write {}: {e}", p.display()))),
        None => {
            if to_stdout {
                print!("{text}");
            }
            Ok(())
        }
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run_main(argv: &[String]) -> i32 {
    let flags = match Flags::try_parse_from(argv) {
        Ok(f) => f,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match build_config(flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Executes a parsed configuration; returns 0 on success and 2 when a solve
/// does not converge.
pub fn run(cfg: &RunConfig) -> Result<i32> {
    let named = get_problem(&cfg.problem)?;
    let prob = &named.problem;
    match cfg.mode {
        Mode::Solve => {
            let scfg = cfg.solver_config();
            let res = solve(prob, &scfg)?;
            emit(&cfg.csv, &csv_table(&res.problem, &res.history)?, false)?;
            let mut kv = vec![("status".to_string(), res.status.as_str().to_string())];
            kv.extend(summary_lines(cfg, &res.history, &res.cq));
            kv.push(("diagnostic".into(), res.diagnostic.clone()));
            emit(&cfg.summary, &render(&kv), true)?;
            Ok(if res.status == SolveStatus::ConvergedAwmp { 0 } else { 2 })
        }
        Mode::VerifyAnalytic => {
            if cfg.kmax < 1 {
                return Err(AwmpError::InvalidArgument("kmax must be >= 1".into()));
            }
            let grid = TimeGrid::new(prob.t0(), prob.t1(), cfg.grid)?;
            let history = (1..=cfg.kmax)
                .map(|k| analytic_awmp_iterate(&cfg.problem, k, &grid))
                .collect::<Result<Vec<_>>>()?;
            let cq = assess(prob, &history, &CqConfig::default())?;
            emit(&cfg.csv, &csv_table(prob, &history)?, false)?;
            emit(&cfg.summary, &render(&summary_lines(cfg, &history, &cq)), true)?;
            Ok(0)
        }
        Mode::CertificateOnly => {
            let grid = TimeGrid::new(prob.t0(), prob.t1(), cfg.grid)?;
            let an = named.analytic.as_ref().ok_or_else(|| {
                AwmpError::InvalidArgument(format!("no reference process for '{}'", cfg.problem))
            })?;
            let process = an.sample_process(&grid)?;
            let cert = wmp_certificate_search(prob, &grid, &process, cfg.tol)?;
            let kv = vec![
                ("problem".to_string(), cfg.problem.clone()),
                ("mode".into(), cfg.mode.as_str().into()),
                ("grid".into(), cfg.grid.to_string()),
                ("certificate".into(), cert.verdict.label().into()),
                ("certificate_residual".into(), fmt_num(cert.residual)),
                ("certificate_raw_residual".into(), fmt_num(cert.raw_residual)),
                ("certificate_phase".into(), format!("{:?}", cert.phase)),
            ];
            emit(&cfg.summary, &render(&kv), true)?;
            Ok(0)
        }
    }
}
