//! Convergence sweeps over step sizes with machine-readable output.
//!
//! A sweep fixes a problem, a scheme, a grid resolution and a tolerance,
//! integrates once per step size, measures the endpoint error against a
//! reference solution, and collects one record per run. The reference is
//! either the closed-form solution (available for the semilinear problem) or
//! a self-convergence run of the same scheme at one eighth of the smallest
//! step with inner tolerance 1e-14. Rows of a sweep are independent solves
//! and run in parallel; everything except wall time is deterministic.

use anyhow::{anyhow, bail, Context, Result};
use phikrylov::problems::{exact_solution, make_problem};
use phikrylov::{integrate, EpirkScheme, OdeProblem};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

/// Reference-solution strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Closed-form solution; only some problems provide one.
    Exact,
    /// Same scheme at `min(h) / 8` with inner tolerance 1e-14.
    SelfConverged,
}

impl FromStr for Reference {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Reference::Exact),
            "self" => Ok(Reference::SelfConverged),
            other => bail!("unknown reference '{}' (expected exact or self)", other),
        }
    }
}

/// Everything one sweep needs.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub problem: String,
    pub scheme: EpirkScheme,
    pub n: usize,
    pub h_list: Vec<f64>,
    pub tol: f64,
    /// `None` picks the exact solution when the problem has one and
    /// self-convergence otherwise.
    pub reference: Option<Reference>,
    /// Overrides the problem's default end time.
    pub t_end: Option<f64>,
    /// Worker-thread cap for the sweep rows; `None` uses all cores.
    pub threads: Option<usize>,
}

/// One (problem, scheme, h) measurement.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub problem: String,
    pub scheme: String,
    pub n: usize,
    pub h: f64,
    pub tol: f64,
    /// Discrete maximum-norm endpoint error against the reference; NaN when
    /// the integration failed.
    pub error: f64,
    pub wall_s: f64,
    pub substeps: usize,
    pub matvecs: usize,
    pub avg_m: f64,
}

fn build_problem(cfg: &SweepConfig) -> Result<OdeProblem> {
    let mut prob = make_problem(&cfg.problem, cfg.n)?;
    if let Some(t_end) = cfg.t_end {
        if !(t_end > prob.t_span.0) {
            bail!("end time {} does not lie after the start time", t_end);
        }
        prob.t_span.1 = t_end;
    }
    Ok(prob)
}

fn reference_endpoint(cfg: &SweepConfig) -> Result<Vec<f64>> {
    let prob = build_problem(cfg)?;
    let choice = cfg.reference.unwrap_or({
        if exact_solution(&cfg.problem, cfg.n, prob.t_span.1).is_some() {
            Reference::Exact
        } else {
            Reference::SelfConverged
        }
    });
    match choice {
        Reference::Exact => exact_solution(&cfg.problem, cfg.n, prob.t_span.1)
            .ok_or_else(|| anyhow!("problem '{}' has no exact solution", cfg.problem)),
        Reference::SelfConverged => {
            let h_min = cfg.h_list.iter().cloned().fold(f64::INFINITY, f64::min);
            let h_ref = h_min / 8.0;
            let out = integrate(cfg.scheme, &prob, h_ref, 1e-14)
                .context("reference integration failed")?;
            Ok(out.endpoint[..prob.observable_dim].to_vec())
        }
    }
}

/// Runs the sweep. Returns the records in input order together with a flag
/// that is true when at least one row failed (its record carries a NaN
/// error and the sweep continues).
pub fn run_sweep(cfg: &SweepConfig) -> Result<(Vec<RunRecord>, bool)> {
    if cfg.h_list.is_empty() {
        bail!("empty step-size list");
    }
    if !(cfg.tol > 0.0) {
        bail!("tolerance must be positive");
    }
    // Fail early on bad ids and compute the shared reference.
    let reference = reference_endpoint(cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .context("worker pool")?;

    let records: Vec<RunRecord> = pool.install(|| {
        use rayon::prelude::*;
        cfg.h_list
            .par_iter()
            .map(|&h| one_row(cfg, h, &reference))
            .collect()
    });
    let failed = records.iter().any(|r| r.error.is_nan());
    Ok((records, failed))
}

fn one_row(cfg: &SweepConfig, h: f64, reference: &[f64]) -> RunRecord {
    let mut record = RunRecord {
        problem: cfg.problem.clone(),
        scheme: cfg.scheme.id().to_string(),
        n: cfg.n,
        h,
        tol: cfg.tol,
        error: f64::NAN,
        wall_s: 0.0,
        substeps: 0,
        matvecs: 0,
        avg_m: 0.0,
    };
    let prob = match build_problem(cfg) {
        Ok(p) => p,
        Err(err) => {
            eprintln!("row h = {}: {}", h, err);
            return record;
        }
    };
    let started = Instant::now();
    match integrate(cfg.scheme, &prob, h, cfg.tol) {
        Ok(out) => {
            record.wall_s = started.elapsed().as_secs_f64();
            let mut err = 0.0f64;
            for i in 0..prob.observable_dim.min(reference.len()) {
                err = err.max((out.endpoint[i] - reference[i]).abs());
            }
            record.error = err;
            record.substeps = out.stats.substeps;
            record.matvecs = out.stats.matvecs;
            record.avg_m = out.stats.avg_krylov_dim();
        }
        Err(err) => {
            record.wall_s = started.elapsed().as_secs_f64();
            eprintln!("row h = {} failed: {}", h, err);
        }
    }
    record
}

pub const CSV_HEADER: &str = "problem,scheme,n,h,tol,error,wall_s,substeps,matvecs,avg_m";

/// Writes records as CSV with full (17 significant digit) precision, one row
/// per record in input order.
pub fn write_csv<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    writeln!(out, "{}", CSV_HEADER)?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e}",
            r.problem, r.scheme, r.n, r.h, r.tol, r.error, r.wall_s, r.substeps, r.matvecs, r.avg_m
        )?;
    }
    Ok(())
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        bail!("refusing to write an empty sweep");
    }
    let file =
        std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    write_csv(records, std::io::BufWriter::new(file))
}
