//! Experiment front end: configs, synthetic data, metric files and
//! cross-run summaries.

mod config;
mod experiment;
mod selftest;
mod summarize;
mod synthetic;

pub use config::{load_config, parse_config, DataSource, ExperimentConfig, Method, MmdSection, SplitConfig};
pub use experiment::{
    config_hash, load_examples, metrics_columns, prepare_split, render_messages_jsonl, render_metrics_csv,
    rounds_to_90pct_final, run_experiment, run_on_split, summarize_reports, ExperimentOutput, Summary,
    FORMAT_VERSION, MESSAGES_FILE, METRICS_FILE, POOLED, SUMMARY_FILE,
};
pub use selftest::{
    composite_error, gradcheck_seed, gradcheck_suite, selftest, CheckResult, GradcheckCase, GRADCHECK_TOLERANCE,
};
pub use summarize::{parse_metrics_csv, read_metrics_csv, summarize, Comparison, DeviceComparison, RunCurves};
pub use synthetic::{generate_synthetic, SyntheticDevice, SyntheticSpec};
