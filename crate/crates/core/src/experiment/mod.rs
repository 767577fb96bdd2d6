//! Config-driven experiments: runs, sweeps, ablations and reports.

mod config;
mod report;
mod runner;

pub use config::{
    EncoderSection, EvalSection, ExperimentConfig, Method, SweepParam, SweepSpec, TrainSection, TranslationSection,
};
pub use report::{cmd_report, collect_rows, metrics_csv, read_metrics_csv, render_report, MetricsRow};
pub use runner::{
    cmd_ablate_ppp, cmd_distill, cmd_dump_features, cmd_gen_data, cmd_run, cmd_sweep, exit_code, resolve_data,
    run_arm, spearman, synthetic_sets, AblationOutcome, AblationPair, ArmResult, KSummary, MetricsReport,
    PreparedData, SeedOutcome, SeedRecord, SweepCell, SweepOutcome, SyntheticSummary, CHECKPOINT_FILE, FEATURES_FILE,
    EXIT_EMPTY_REPORT, EXIT_PARTIAL, HISTORY_CSV, METRICS_CSV, METRICS_JSON, REPORT_CSV, REPORT_TXT,
};
