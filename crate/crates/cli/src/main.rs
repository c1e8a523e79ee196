use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hhhfl::harness::{
    gradcheck_suite, load_config, read_metrics_csv, run_experiment, selftest, summarize, DataSource,
    GRADCHECK_TOLERANCE,
};
use hhhfl::ingest::{balance_classes, default_configs, ingest_files, write_cache, DeviceKind};
use hhhfl::numerics::DEFAULT_EPS;
use hhhfl::{Error, Result};

/// Heterogeneous-device federated learning simulator.
#[derive(Parser)]
#[command(name = "hhhfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw MindBigData files into a dataset cache.
    Ingest(IngestArgs),
    /// Run one experiment and write metrics.csv and summary.json.
    Run(RunArgs),
    /// Compare metrics CSVs of several runs.
    Summarize(SummarizeArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the built-in property checks.
    Selftest,
}

#[derive(Args)]
struct IngestArgs {
    /// MindBigData text files.
    files: Vec<PathBuf>,
    /// Take files, devices and class balancing from a config's data section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
    /// Keep only these devices (default: all).
    #[arg(long, value_delimiter = ',')]
    devices: Vec<DeviceKind>,
    #[arg(long)]
    balance_classes: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's output_dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write messages.jsonl with the shape of every message.
    #[arg(long)]
    log_messages: bool,
    /// Fill the duration_ms column.
    #[arg(long)]
    timing: bool,
    /// No per-round progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(required = true)]
    csvs: Vec<PathBuf>,
    /// Also write the comparison as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn ingest(args: IngestArgs) -> Result<ExitCode> {
    let mut files = args.files;
    let mut devices = args.devices;
    let mut balance = args.balance_classes;
    let mut seed = args.seed;
    if let Some(path) = &args.config {
        let config = load_config(path)?;
        match config.data {
            DataSource::Mindbigdata {
                paths,
                balance_classes,
            } => {
                files.extend(paths);
                balance |= balance_classes;
            }
            _ => return Err(Error::Config(format!("{}: data.source is not mindbigdata", path.display()))),
        }
        if devices.is_empty() {
            devices = config.devices;
        }
        seed = config.seed;
    }
    if files.is_empty() {
        return Err(Error::Config("no input files".into()));
    }
    if devices.is_empty() {
        devices = DeviceKind::ALL.to_vec();
    }
    let configs = default_configs()
        .into_iter()
        .filter(|(d, _)| devices.contains(d))
        .collect::<BTreeMap<_, _>>();
    let (mut examples, s) = ingest_files(&files, &configs)?;
    if balance {
        examples = balance_classes(examples, seed);
    }
    eprintln!(
        "{} records, {} lines rejected, events dropped: {} incomplete, {} inconsistent, {} unknown channel, {} failed preprocessing",
        s.records,
        s.lines_rejected,
        s.assemble.dropped_incomplete,
        s.assemble.dropped_inconsistent,
        s.assemble.dropped_unknown_channel,
        s.events_rejected
    );
    for d in &devices {
        let n = examples.iter().filter(|e| e.device == *d).count();
        println!("{d}\t{n}");
    }
    if examples.is_empty() {
        return Err(Error::Data("no usable events".into()));
    }
    write_cache(&args.out, &examples)?;
    Ok(ExitCode::SUCCESS)
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.timing |= args.timing;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let rounds = config.hyper.rounds;
    let quiet = args.quiet;
    let result = run_experiment(&config, &out, args.log_messages, |r| {
        if !quiet {
            eprintln!(
                "round {}/{rounds}  pooled acc {:.4}  train loss {:.4}",
                r.metrics.round, r.metrics.pooled_accuracy, r.metrics.mean_train_loss
            );
        }
    })?;
    for f in &result.files {
        println!("{}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize_cmd(args: SummarizeArgs) -> Result<ExitCode> {
    let runs = args
        .csvs
        .iter()
        .map(|p| read_metrics_csv(p))
        .collect::<Result<Vec<_>>>()?;
    let table = summarize(&runs)?;
    if args.json {
        print!("{}", table.to_json());
    } else {
        print!("{}", table.to_text());
    }
    if let Some(path) = &args.out {
        write(path, &table.to_json())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let cases = gradcheck_suite(args.seeds, args.eps)?;
    let mut worst = 0.0f64;
    println!("seed\tdense\tconv1d\tproj+cls\tce+mmd");
    for c in &cases {
        println!(
            "{}\t{:.2e}\t{:.2e}\t{:.2e}\t{:.2e}",
            c.seed, c.dense, c.conv1d, c.projector_classifier, c.ce_mmd
        );
        worst = worst.max(c.max());
    }
    let ok = worst < GRADCHECK_TOLERANCE;
    println!("max relative error {worst:.2e} ({})", if ok { "ok" } else { "FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn selftest_cmd() -> Result<ExitCode> {
    let mut ok = true;
    for c in selftest()? {
        println!("{:<5} {:<12} {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Selftest => selftest_cmd(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
