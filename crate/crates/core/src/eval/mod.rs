//! Evaluation: threshold oracle, pseudo-healthy scoring, statistics, reports.

mod figures;
mod metrics;
mod pseudo;
mod report;
mod wilcoxon;

pub use figures::{sample_grid, save_png, Exemplar};
pub use metrics::{dsc, fat_fraction_marker, level_value, optimal_two_threshold, quantize, segment, Thresholds};
pub use pseudo::{pseudo_healthy_eval, IdentityHealer, OracleHealer, PseudoHealthy, SliceEval, Source};
pub use report::{
    aggregate_and_report, method_of, missing_cells, render_text, to_csv, EvalRecord, GridSpec, PatientScore, ReportRow,
    ReportTable, Stat, CSV_HEADER, DATA_SETS,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N};

/// Default intensity quantization of the threshold search.
pub const DEFAULT_LEVELS: usize = 256;
