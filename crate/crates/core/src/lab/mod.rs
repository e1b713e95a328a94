//! Experiment orchestration: configs, the rigidity-gap pipeline,
//! perturbation scans, refinement studies and structured output.

mod config;
mod output;
mod perturbation;
mod pipeline;
mod refine;
mod scan;

pub use config::{ExperimentConfig, HSpec, RunSettings, DEFAULT_GAP_TOLERANCE, MAX_NODES};
pub use output::{
    csv_row, emit_outputs, emit_refinement, emit_scan, format_float, from_json_str, to_json_string, OutputPaths,
    CSV_HEADER,
};
pub use perturbation::{smooth_perturbation, MAX_LEVEL};
pub use pipeline::{
    run_rigidity, run_rigidity_detailed, MinimizerSummary, RigidityReport, RigidityRun, SpectrumSection,
    SpectrumSummary, Stage, Timing, TransversalitySummary, Verdict, VerdictReport,
};
pub use refine::{
    continuum_lambda1, identity_test_pairs, run_refinement_study, ObservedOrders, RefinementChecks,
    RefinementLevel, RefinementTable, ROUNDOFF_FLOOR,
};
pub use scan::{run_perturbation_scan, MultiplicityCount, Range, ScanReport, ScanStatistics, ScanTrial};
