//! Experiment harness: workloads, runs and their CSV form, the functional
//! oracle, bound validators and parameter sweeps.

mod bounds;
mod experiment;
mod oracle;
mod stats;
mod sweep;
mod workload;

pub use bounds::{
    cache_bound, partition_bound, simulate_slot_chain, slot_rho, validate_bounds, BoundCheck, BoundParams,
    BoundsOptions, BoundsReport, MarkovReport,
};
pub use experiment::{
    csv_header, csv_row, run_experiment, run_experiment_on, run_experiment_with, sig6, to_csv, ExperimentRecord, RunOptions,
};
pub use oracle::{run_oracle_check, run_oracle_check_with_fault, run_oracle_sequence, Divergence, OracleReport};
pub use stats::{chi_square_two_sample, chi_square_uniform, histogram, pair_histogram, ChiSquare};
pub use sweep::{run_sweep, Axis, SweepPoint, SweepResult, NU_GRID};
pub use workload::{payload_for, Request, Workload, WorkloadKind};
