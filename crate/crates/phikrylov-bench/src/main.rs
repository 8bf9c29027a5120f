//! Command-line convergence benchmark.
//!
//! Runs one sweep over a comma-separated step-size list and writes a CSV with
//! one row per step size. Exit code 0 on a full sweep, 2 when at least one
//! row failed. `PHIKRYLOV_THREADS` caps the worker threads.

use clap::Parser;
use phikrylov::EpirkScheme;
use phikrylov_bench::{emit_csv, run_sweep, Reference, SweepConfig};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(
    name = "bench",
    about = "Convergence sweeps for the exponential integrators",
    long_about = None
)]
struct Args {
    /// Problem id: allen-cahn, adr, brusselator, gray-scott, semilinear.
    #[arg(long)]
    problem: String,

    /// Scheme id: epirk4s3, epirk4s3a, epirk5p1, exprb5s3.
    #[arg(long)]
    scheme: EpirkSchemeArg,

    /// Grid points per dimension (defaults: 200 for semilinear, 100 otherwise).
    #[arg(long)]
    n: Option<usize>,

    /// Comma-separated list of step sizes, e.g. 0.01,0.005,0.0025.
    #[arg(long, value_delimiter = ',', required = true)]
    h: Vec<f64>,

    /// Inner solver tolerance.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// Reference solution: "exact" (closed form) or "self" (same scheme at
    /// min(h)/8, tolerance 1e-14). Default: exact when available, else self.
    #[arg(long)]
    reference: Option<Reference>,

    /// Override the problem's end time.
    #[arg(long)]
    tend: Option<f64>,
}

#[derive(Clone, Debug)]
struct EpirkSchemeArg(EpirkScheme);

impl std::str::FromStr for EpirkSchemeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.parse::<EpirkScheme>()
            .map(EpirkSchemeArg)
            .map_err(|e| e.to_string())
    }
}

fn main() {
    let args = Args::parse();
    let threads = std::env::var("PHIKRYLOV_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0);
    let n = args.n.unwrap_or(match args.problem.as_str() {
        "semilinear" => 200,
        _ => 100,
    });
    let cfg = SweepConfig {
        problem: args.problem,
        scheme: args.scheme.0,
        n,
        h_list: args.h,
        tol: args.tol,
        reference: args.reference,
        t_end: args.tend,
        threads,
    };
    match run_sweep(&cfg).and_then(|(records, failed)| {
        emit_csv(&records, &args.out)?;
        Ok((records, failed))
    }) {
        Ok((records, failed)) => {
            eprintln!(
                "wrote {} rows to {}",
                records.len(),
                args.out.display()
            );
            if failed {
                eprintln!("at least one row failed; see messages above");
                std::process::exit(2);
            }
        }
        Err(err) => {
            eprintln!("bench: {:#}", err);
            std::process::exit(2);
        }
    }
}
