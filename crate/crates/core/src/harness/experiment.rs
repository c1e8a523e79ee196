use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig, Method};
use super::synthetic::generate_synthetic;
use crate::error::{Error, Result};
use crate::federation::{pair_key, run_baseline, run_hhhfl, LogEntry, RoundReport};
use crate::ingest::{
    balance_classes, default_configs, ingest_files, read_cache, split_dataset, DatasetSplit, DeviceKind,
    IngestSummary, LabeledExample,
};
use crate::mmd::device_pairs;

pub const FORMAT_VERSION: u32 = 1;
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MESSAGES_FILE: &str = "messages.jsonl";

/// Lowercase hex SHA-256 of the canonical config.
pub fn config_hash(config: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config.canonical_toml().as_bytes()))
}

/// First round whose accuracy reaches 90% of the final accuracy.
pub fn rounds_to_90pct_final(curve: &[f64]) -> Option<u32> {
    let last = *curve.last()?;
    curve
        .iter()
        .position(|&a| a >= 0.9 * last)
        .map(|i| i as u32 + 1)
}

/// Examples for the configured devices, plus ingestion counts for raw files.
pub fn load_examples(config: &ExperimentConfig) -> Result<(Vec<LabeledExample>, Option<IngestSummary>)> {
    let devices = config.sorted_devices();
    let (examples, summary) = match &config.data {
        DataSource::Synthetic { .. } => {
            let spec = config.data.synthetic_spec(&devices).expect("synthetic source");
            let data = generate_synthetic(&spec, config.seed)?;
            (data.into_values().flatten().collect(), None)
        }
        DataSource::Mindbigdata { paths, balance_classes: balance } => {
            let configs = default_configs()
                .into_iter()
                .filter(|(d, _)| devices.contains(d))
                .collect();
            let (mut exs, summary) = ingest_files(paths, &configs)?;
            if *balance {
                exs = balance_classes(exs, config.seed);
            }
            (exs, Some(summary))
        }
        DataSource::Cache { path } => {
            let exs: Vec<LabeledExample> = read_cache(path)?
                .into_iter()
                .filter(|e| devices.contains(&e.device))
                .collect();
            (exs, None)
        }
    };
    for d in &devices {
        if !examples.iter().any(|e| e.device == *d) {
            let detail = summary
                .as_ref()
                .map(|s| {
                    format!(
                        " ({} lines rejected, {} records, {} incomplete and {} inconsistent events dropped)",
                        s.lines_rejected,
                        s.records,
                        s.assemble.dropped_incomplete,
                        s.assemble.dropped_inconsistent
                    )
                })
                .unwrap_or_default();
            return Err(Error::Data(format!("no usable {d} events{detail}")));
        }
    }
    Ok((examples, summary))
}

pub fn prepare_split(config: &ExperimentConfig) -> Result<(DatasetSplit, Option<IngestSummary>)> {
    let (examples, summary) = load_examples(config)?;
    let split = split_dataset(
        examples,
        config.split.clients_per_device,
        config.split.test_fraction,
        config.seed,
    )
    .map_err(|e| match e {
        Error::Config(m) => Error::Data(m),
        other => other,
    })?;
    Ok((split, summary))
}

/// Runs the configured method on an already prepared split.
pub fn run_on_split(
    config: &ExperimentConfig,
    split: &DatasetSplit,
    log_messages: bool,
    observe: impl FnMut(&RoundReport),
) -> Result<(Vec<RoundReport>, Vec<LogEntry>)> {
    config.validate()?;
    let devices = config.sorted_devices();
    match config.method {
        Method::Baseline => run_baseline(
            devices[0],
            split,
            &config.arch,
            config.mmd.kernel,
            &config.hyper,
            config.seed,
            log_messages,
            observe,
        ),
        Method::Hhhfl => run_hhhfl(
            &split.restrict(&devices),
            &config.arch,
            config.mmd_config()?,
            &config.hyper,
            config.seed,
            log_messages,
            observe,
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: u32,
    pub method: Method,
    pub devices: Vec<DeviceKind>,
    pub seed: u64,
    pub config_sha256: String,
    pub rounds: u32,
    /// Keyed by device, plus "pooled" when more than one device is trained.
    pub final_accuracy: BTreeMap<String, f64>,
    pub best_accuracy: BTreeMap<String, f64>,
    pub best_round: BTreeMap<String, u32>,
    pub rounds_to_90pct_final: BTreeMap<String, u32>,
    pub final_pairwise_mmd2: BTreeMap<String, f64>,
}

pub const POOLED: &str = "pooled";

/// Accuracy curve per column key ("MW", ..., "pooled").
fn curves(config: &ExperimentConfig, reports: &[RoundReport]) -> BTreeMap<String, Vec<f64>> {
    let devices = config.sorted_devices();
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for d in &devices {
            out.entry(d.to_string())
                .or_default()
                .push(r.metrics.per_device_accuracy.get(d).copied().unwrap_or(f64::NAN));
        }
        if devices.len() > 1 {
            out.entry(POOLED.into()).or_default().push(r.metrics.pooled_accuracy);
        }
    }
    out
}

pub fn summarize_reports(config: &ExperimentConfig, reports: &[RoundReport]) -> Summary {
    let mut s = Summary {
        format_version: FORMAT_VERSION,
        method: config.method,
        devices: config.sorted_devices(),
        seed: config.seed,
        config_sha256: config_hash(config),
        rounds: reports.len() as u32,
        final_accuracy: BTreeMap::new(),
        best_accuracy: BTreeMap::new(),
        best_round: BTreeMap::new(),
        rounds_to_90pct_final: BTreeMap::new(),
        final_pairwise_mmd2: reports
            .last()
            .map(|r| r.metrics.pairwise_mmd2.clone())
            .unwrap_or_default(),
    };
    for (key, curve) in curves(config, reports) {
        let Some(&last) = curve.last() else { continue };
        // earliest round wins ties
        let (bi, best) = curve
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &a)| if a > acc.1 { (i, a) } else { acc });
        s.final_accuracy.insert(key.clone(), last);
        s.best_accuracy.insert(key.clone(), best);
        s.best_round.insert(key.clone(), bi as u32 + 1);
        if let Some(r) = rounds_to_90pct_final(&curve) {
            s.rounds_to_90pct_final.insert(key, r);
        }
    }
    s
}

/// CSV column names for a config, in output order.
pub fn metrics_columns(config: &ExperimentConfig) -> Vec<String> {
    let devices = config.sorted_devices();
    let mut cols = vec!["round".to_string()];
    cols.extend(devices.iter().map(|d| format!("acc_{d}")));
    if devices.len() > 1 {
        cols.push(format!("acc_{POOLED}"));
    }
    cols.push("train_loss".into());
    if config.method == Method::Hhhfl {
        cols.extend(device_pairs(&devices).iter().map(|p| format!("mmd2_{}_{}", p.first(), p.second())));
    }
    cols.push("duration_ms".into());
    cols
}

/// The metrics CSV: `#` provenance lines, a header row, one row per round.
pub fn render_metrics_csv(config: &ExperimentConfig, reports: &[RoundReport]) -> Result<String> {
    let devices = config.sorted_devices();
    let mut head = String::new();
    head.push_str(&format!("# hhhfl metrics format {FORMAT_VERSION}\n"));
    head.push_str(&format!("# config_sha256 {}\n", config_hash(config)));
    head.push_str(&format!("# seed {}\n", config.seed));
    head.push_str(&format!("# method {}\n", config.method));
    head.push_str(&format!(
        "# devices {}\n",
        devices.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(",")
    ));

    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(format!("metrics csv: {e}"));
    w.write_record(metrics_columns(config)).map_err(ser)?;
    let pairs = device_pairs(&devices);
    for r in reports {
        let m = &r.metrics;
        let mut row = vec![m.round.to_string()];
        for d in &devices {
            row.push(fmt_f64(m.per_device_accuracy.get(d).copied()));
        }
        if devices.len() > 1 {
            row.push(fmt_f64(Some(m.pooled_accuracy)));
        }
        row.push(fmt_f64(Some(m.mean_train_loss)));
        if config.method == Method::Hhhfl {
            for p in &pairs {
                row.push(fmt_f64(m.pairwise_mmd2.get(&pair_key(p)).copied()));
            }
        }
        row.push(if config.timing { format!("{:.3}", r.duration_ms) } else { String::new() });
        w.write_record(&row).map_err(ser)?;
    }
    let body = w.into_inner().map_err(|e| Error::Serialization(format!("metrics csv: {e}")))?;
    head.push_str(std::str::from_utf8(&body).expect("csv of ascii fields"));
    Ok(head)
}

fn fmt_f64(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

pub fn render_messages_jsonl(log: &[LogEntry]) -> String {
    let mut s = String::new();
    for e in log {
        s.push_str(&serde_json::to_string(e).expect("log entries are plain data"));
        s.push('\n');
    }
    s
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub reports: Vec<RoundReport>,
    pub summary: Summary,
    pub log: Vec<LogEntry>,
    pub ingest: Option<IngestSummary>,
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Data -> split -> federation -> metrics.csv, summary.json and, when
/// logging, messages.jsonl in `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    log_messages: bool,
    observe: impl FnMut(&RoundReport),
) -> Result<ExperimentOutput> {
    config.validate()?;
    let (split, ingest) = prepare_split(config)?;
    let (reports, log) = run_on_split(config, &split, log_messages, observe)?;
    let summary = summarize_reports(config, &reports);

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    let metrics = out_dir.join(METRICS_FILE);
    write_file(&metrics, &render_metrics_csv(config, &reports)?)?;
    files.push(metrics);
    let summary_path = out_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(&summary).expect("summary is plain data");
    json.push('\n');
    write_file(&summary_path, &json)?;
    files.push(summary_path);
    if log_messages {
        let p = out_dir.join(MESSAGES_FILE);
        write_file(&p, &render_messages_jsonl(&log))?;
        files.push(p);
    }
    Ok(ExperimentOutput {
        reports,
        summary,
        log,
        ingest,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    fn small(method: &str, devices: &str) -> ExperimentConfig {
        parse_config(&format!(
            "method = \"{method}\"\ndevices = [{devices}]\nseed = 5\n\
             [data]\nsource = \"synthetic\"\nexamples_per_class = 12\n\
             [hyper]\nrounds = 3\nbatch_size = 8\nexchange_size = 4\n\
             [arch]\nconv_channels = 2\nkernel_width = 8\nstride = 8\n"
        ))
        .unwrap()
    }

    #[test]
    fn ninety_percent_rule() {
        assert_eq!(rounds_to_90pct_final(&[0.1, 0.5, 0.85, 0.9]), Some(3));
        assert_eq!(rounds_to_90pct_final(&[0.9]), Some(1));
        assert_eq!(rounds_to_90pct_final(&[]), None);
    }

    #[test]
    fn two_device_run_writes_one_row_per_round() {
        let c = small("hhhfl", "\"MU\", \"EP\"");
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, dir.path(), true, |_| {}).unwrap();
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "round,acc_EP,acc_MU,acc_pooled,train_loss,mmd2_EP_MU,duration_ms");
        assert_eq!(rows.len(), 1 + 3);
        assert!(rows[1].ends_with(','));
        assert!(csv.contains(&format!("# config_sha256 {}", config_hash(&c))));
        assert_eq!(out.summary.final_accuracy.len(), 3);
        assert!(dir.path().join(MESSAGES_FILE).exists());
    }

    #[test]
    fn baseline_summary_has_only_its_device() {
        let c = small("baseline", "\"MU\"");
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&c, dir.path(), false, |_| {}).unwrap();
        let keys: Vec<&String> = out.summary.final_accuracy.keys().collect();
        assert_eq!(keys, vec!["MU"]);
        assert!(out.summary.final_pairwise_mmd2.is_empty());
        assert!(!dir.path().join(MESSAGES_FILE).exists());
    }

    #[test]
    fn timing_fills_duration() {
        let mut c = small("baseline", "\"EP\"");
        c.timing = true;
        c.hyper.rounds = 1;
        let dir = tempfile::tempdir().unwrap();
        run_experiment(&c, dir.path(), false, |_| {}).unwrap();
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(!csv.lines().last().unwrap().ends_with(','));
    }

    #[test]
    fn missing_device_data_is_a_data_error() {
        let mut c = small("hhhfl", "\"MU\", \"EP\"");
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("only_mu.bin");
        let exs: Vec<LabeledExample> = load_examples(&c)
            .unwrap()
            .0
            .into_iter()
            .filter(|e| e.device == DeviceKind::MU)
            .collect();
        crate::ingest::write_cache(&cache, &exs).unwrap();
        c.data = DataSource::Cache { path: cache };
        assert!(matches!(run_experiment(&c, dir.path(), false, |_| {}), Err(Error::Data(m)) if m.contains("EP")));
    }
}
