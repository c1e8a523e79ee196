use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hhhfl::ingest::{DeviceConfig, DeviceKind};

fn hhhfl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hhhfl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
[data]
source = \"synthetic\"
examples_per_class = 12

[hyper]
rounds = 4
batch_size = 8
exchange_size = 4
";

fn config(dir: &Path, name: &str, head: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, format!("{head}\n{SMALL}")).unwrap();
    p
}

fn data_rows(csv: &Path) -> usize {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

#[test]
fn run_writes_metrics_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.toml", "method = \"hhhfl\"\ndevices = [\"MU\", \"MW\"]\nseed = 4");
    let o = hhhfl(&["run", "--config", cfg.to_str().unwrap(), "--out", "res", "-q"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(data_rows(&dir.path().join("res/metrics.csv")), 4);
    let summary = fs::read_to_string(dir.path().join("res/summary.json")).unwrap();
    assert!(summary.contains("\"pooled\""));
    assert!(!dir.path().join("res/messages.jsonl").exists());
}

#[test]
fn seed_flag_overrides_config_and_runs_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "c.toml", "method = \"baseline\"\ndevices = [\"EP\"]\nseed = 4");
    let c = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        assert_eq!(code(&hhhfl(&["run", "--config", c, "--out", out, "-q", "--log-messages"], dir.path())), 0);
    }
    assert_eq!(code(&hhhfl(&["run", "--config", c, "--out", "s", "-q", "--seed", "9"], dir.path())), 0);
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/metrics.csv"), read("b/metrics.csv"));
    assert_eq!(read("a/summary.json"), read("b/summary.json"));
    assert_eq!(read("a/messages.jsonl"), read("b/messages.jsonl"));
    let s = String::from_utf8(read("s/metrics.csv")).unwrap();
    assert!(s.contains("# seed 9"));
    let summary = String::from_utf8(read("a/summary.json")).unwrap();
    assert!(summary.contains("\"EP\"") && !summary.contains("pooled"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_combo = config(dir.path(), "a.toml", "method = \"baseline\"\ndevices = [\"MU\", \"MW\"]\nseed = 1");
    let o = hhhfl(&["run", "--config", bad_combo.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);

    let typo = dir.path().join("b.toml");
    fs::write(&typo, "method = \"hhhfl\"\ndevices = [\"MU\", \"MW\"]\nseed = 1\n[hyper]\nlerning_rate = 0.1\n").unwrap();
    let o = hhhfl(&["run", "--config", typo.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hyper.lerning_rate"), "{}", stderr(&o));

    let o = hhhfl(&["run", "--config", "missing.toml"], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(code(&hhhfl(&["run"], dir.path())), 2);
}

/// A MindBigData file with `events` complete events per device.
fn mindbigdata_file(path: &Path, events: usize) {
    let mut text = String::new();
    let mut id = 0u64;
    for (k, d) in DeviceKind::ALL.iter().enumerate() {
        let cfg = DeviceConfig::default_for(*d);
        let len = (cfg.sampling_rate_hz * 2) as usize;
        for e in 0..events {
            let event = (k * 1000 + e) as u64;
            let code = if e % 2 == 0 { -1 } else { (e % 10) as i8 };
            for (c, ch) in cfg.channel_names.iter().enumerate() {
                let samples: Vec<String> = (0..len)
                    .map(|i| format!("{:.2}", 4000.0 + ((i * (c + 1) + e) as f64 * 0.1).sin() * 20.0))
                    .collect();
                let _ = writeln!(text, "{id}\t{event}\t{d}\t{ch}\t{code}\t{len}\t{}", samples.join(","));
                id += 1;
            }
        }
    }
    text.push_str("garbage line\n");
    fs::write(path, text).unwrap();
}

#[test]
fn ingest_then_run_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    mindbigdata_file(&raw, 8);
    let o = hhhfl(&["ingest", "raw.txt", "--out", "data.bin"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("EP\t8"), "{stdout}");
    assert!(stderr(&o).contains("1 lines rejected"));

    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "method = \"hhhfl\"\ndevices = [\"EP\", \"MU\"]\nseed = 2\n[data]\nsource = \"cache\"\npath = \"data.bin\"\n\
         [hyper]\nrounds = 2\nbatch_size = 4\n[split]\nclients_per_device = 2\n",
    )
    .unwrap();
    let o = hhhfl(&["run", "--config", "c.toml", "--out", "r", "-q"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(data_rows(&dir.path().join("r/metrics.csv")), 2);
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.txt"), "not\ta\tmindbigdata\tline\n").unwrap();
    let o = hhhfl(&["ingest", "junk.txt", "--out", "x.bin"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "method = \"hhhfl\"\ndevices = [\"EP\", \"MU\"]\nseed = 2\n[data]\nsource = \"mindbigdata\"\npaths = [\"junk.txt\"]\n",
    )
    .unwrap();
    let o = hhhfl(&["run", "--config", "c.toml", "-q"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("no usable"));

    let o = hhhfl(&["run", "--config", "c.toml", "-q"], Path::new("/"));
    assert_eq!(code(&o), 2);
}

#[test]
fn summarize_compares_runs() {
    let dir = tempfile::tempdir().unwrap();
    let b = config(dir.path(), "b.toml", "method = \"baseline\"\ndevices = [\"MW\"]\nseed = 1");
    let h = config(dir.path(), "h.toml", "method = \"hhhfl\"\ndevices = [\"MW\", \"EP\"]\nseed = 1");
    assert_eq!(code(&hhhfl(&["run", "--config", b.to_str().unwrap(), "--out", "b", "-q"], dir.path())), 0);
    assert_eq!(code(&hhhfl(&["run", "--config", h.to_str().unwrap(), "--out", "h", "-q"], dir.path())), 0);

    let o = hhhfl(&["summarize", "h/metrics.csv", "b/metrics.csv", "--out", "cmp.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("MW") && header.find("baseline") < header.find("MW+EP"), "{text}");
    let again = hhhfl(&["summarize", "b/metrics.csv", "h/metrics.csv"], dir.path());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
    let json = fs::read_to_string(dir.path().join("cmp.json")).unwrap();
    assert!(json.contains("\"columns\""));

    fs::write(dir.path().join("bad.csv"), "# method baseline\n# devices MW\nround,acc_MW\n1,0.5\n2,oops\n").unwrap();
    let o = hhhfl(&["summarize", "bad.csv"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}

#[test]
fn gradcheck_and_selftest_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = hhhfl(&["gradcheck", "--seeds", "3"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("(ok)"));
    let o = hhhfl(&["gradcheck", "--eps", "0.5"], dir.path());
    assert_eq!(code(&o), 2);
    let o = hhhfl(&["selftest"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
