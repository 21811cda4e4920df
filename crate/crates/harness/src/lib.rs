//! Evaluation harness: replays simulated or logged sensor streams through
//! the filter variants, scores them against truth and writes reports,
//! foot-noise sweeps and diagnostic traces.

pub mod config;
pub mod eval;
pub mod scenarios;

pub use config::FilterConfig;
pub use eval::{
    calibrate_velocity_noise, emit_traces, noise_sweep, run_eval, run_filter, score, EvalReport, HarnessError, Rmse,
    RunOutput, SweepRow, TraceRow,
};
