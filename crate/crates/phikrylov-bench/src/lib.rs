//! Benchmark harness for the exponential integrators: step-size sweeps with
//! reference-solution errors, emitted as CSV for precision diagrams.

pub mod sweep;

pub use sweep::{emit_csv, run_sweep, write_csv, Reference, RunRecord, SweepConfig, CSV_HEADER};
