//! Orchestration of the design flow: spec files, grid sampling and dataset
//! generation, the conventional baseline, the end-to-end pipeline and
//! reporting.

mod baseline;
mod pipeline;
mod report;
mod sampling;
mod spec_file;

pub use baseline::{conventional_design, required_capacitance_uf, required_inductance_uh, ConventionalDesign};
pub use pipeline::{
    engine_evaluator, run_pipeline, search_space, tightened, PipelineConfig, PipelineOutput, SurrogateEvaluator,
};
pub use report::{
    constraint_rows, evaluate_with, load_sweep, read_sweep_csv, svg_from_sweep_csv, sweep_svg, write_sweep_csv,
    BaselineSummary, ConstraintRow, DesignReport, ReportFiles, SweepPoint, REPORT_SCHEMA, SWEEP_POINTS,
};
pub use sampling::{generate_dataset, sample_grid, GridPoint, GridSample, SamplingPlan};
pub use spec_file::{Constraints, Operating, PipelineSection, Ranges, SpecFile, TrainingSection};
