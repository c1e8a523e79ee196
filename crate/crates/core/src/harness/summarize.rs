use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::experiment::{rounds_to_90pct_final, POOLED};
use crate::error::{Error, Result};
use crate::ingest::DeviceKind;

/// One metrics CSV, read back.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCurves {
    pub path: String,
    pub method: String,
    pub devices: Vec<DeviceKind>,
    /// Accuracy per round, keyed by device name or "pooled".
    pub accuracy: BTreeMap<String, Vec<f64>>,
}

impl RunCurves {
    /// Column label: "baseline" or the trained devices joined with "+".
    pub fn label(&self) -> String {
        if self.method == "baseline" {
            "baseline".into()
        } else {
            self.devices.iter().map(|d| d.as_str()).collect::<Vec<_>>().join("+")
        }
    }
}

fn table_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Table {
        path: path.into(),
        line,
        message: message.into(),
    }
}

/// Parses a metrics CSV written by `run`.
pub fn parse_metrics_csv(path: &str, text: &str) -> Result<RunCurves> {
    let mut method = None;
    let mut devices = None;
    let mut header: Option<(usize, Vec<String>)> = None;
    let mut accuracy: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut rows = 0u32;

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let mut parts = rest.trim().splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("method"), Some(m)) => method = Some(m.trim().to_string()),
                (Some("devices"), Some(list)) => {
                    let ds = list
                        .split(',')
                        .map(|s| s.trim().parse::<DeviceKind>())
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| table_err(path, line_no, e.to_string()))?;
                    devices = Some(ds);
                }
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let Some((_, cols)) = &header else {
            if fields.first() != Some(&"round") {
                return Err(table_err(path, line_no, "expected a header row starting with `round`"));
            }
            header = Some((line_no, fields.iter().map(|s| s.to_string()).collect()));
            continue;
        };
        if fields.len() != cols.len() {
            return Err(table_err(
                path,
                line_no,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let round: u32 = fields[0]
            .parse()
            .map_err(|_| table_err(path, line_no, format!("bad round number {:?}", fields[0])))?;
        rows += 1;
        if round != rows {
            return Err(table_err(path, line_no, format!("expected round {rows}, found {round}")));
        }
        for (col, field) in cols.iter().zip(&fields) {
            if let Some(key) = col.strip_prefix("acc_") {
                let v: f64 = field
                    .parse()
                    .ok()
                    .filter(|v: &f64| (0.0..=1.0).contains(v))
                    .ok_or_else(|| table_err(path, line_no, format!("{col}: bad accuracy {field:?}")))?;
                accuracy.entry(key.to_string()).or_default().push(v);
            }
        }
    }

    let eof = text.lines().count().max(1);
    let method = method.ok_or_else(|| table_err(path, eof, "missing `# method` provenance line"))?;
    let devices = devices.ok_or_else(|| table_err(path, eof, "missing `# devices` provenance line"))?;
    if header.is_none() {
        return Err(table_err(path, eof, "no header row"));
    }
    if rows == 0 {
        return Err(table_err(path, eof, "no data rows"));
    }
    for d in &devices {
        if !accuracy.contains_key(d.as_str()) {
            return Err(table_err(path, eof, format!("no acc_{d} column")));
        }
    }
    Ok(RunCurves {
        path: path.into(),
        method,
        devices,
        accuracy,
    })
}

pub fn read_metrics_csv(path: &Path) -> Result<RunCurves> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&path.display().to_string(), &text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceComparison {
    pub final_accuracy: Vec<Option<f64>>,
    pub best_accuracy: Vec<Option<f64>>,
    pub rounds_to_90pct_final: Vec<Option<u32>>,
}

/// Per-device comparison across runs; column `i` of every row is `columns[i]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub sources: Vec<String>,
    pub devices: BTreeMap<String, DeviceComparison>,
}

/// Builds the comparison. Columns are ordered baseline first, then by
/// number of devices and device order, so input order does not matter.
pub fn summarize(runs: &[RunCurves]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::Precondition("summarize needs at least one metrics CSV".into()));
    }
    let mut order: Vec<&RunCurves> = runs.iter().collect();
    order.sort_by(|a, b| {
        (a.method != "baseline", a.devices.len(), &a.devices, &a.path)
            .cmp(&(b.method != "baseline", b.devices.len(), &b.devices, &b.path))
    });
    let mut keys: Vec<String> = Vec::new();
    for d in DeviceKind::ALL {
        if order.iter().any(|r| r.accuracy.contains_key(d.as_str())) {
            keys.push(d.to_string());
        }
    }
    if order.iter().any(|r| r.accuracy.contains_key(POOLED)) {
        keys.push(POOLED.into());
    }

    let mut devices = BTreeMap::new();
    for key in keys {
        let mut row = DeviceComparison {
            final_accuracy: Vec::new(),
            best_accuracy: Vec::new(),
            rounds_to_90pct_final: Vec::new(),
        };
        for r in &order {
            let curve = r.accuracy.get(&key);
            row.final_accuracy.push(curve.and_then(|c| c.last().copied()));
            row.best_accuracy
                .push(curve.map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)));
            row.rounds_to_90pct_final
                .push(curve.and_then(|c| rounds_to_90pct_final(c)));
        }
        devices.insert(key, row);
    }
    Ok(Comparison {
        columns: order.iter().map(|r| r.label()).collect(),
        sources: order.iter().map(|r| r.path.clone()).collect(),
        devices,
    })
}

impl Comparison {
    /// Fixed-width text, one block per device in MW, EP, MU order, pooled last.
    pub fn to_text(&self) -> String {
        let width = self.columns.iter().map(String::len).max().unwrap_or(0).max(8) + 2;
        let mut out = String::new();
        let keys = DeviceKind::ALL
            .iter()
            .map(|d| d.as_str())
            .chain([POOLED])
            .filter(|k| self.devices.contains_key(*k));
        for key in keys {
            let row = &self.devices[key];
            let _ = write!(out, "{key:<24}");
            for c in &self.columns {
                let _ = write!(out, "{c:>width$}");
            }
            out.push('\n');
            let acc = |v: &Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let mut line = |name: &str, cells: Vec<String>| {
                let _ = write!(out, "  {name:<22}");
                for c in cells {
                    let _ = write!(out, "{c:>width$}");
                }
                out.push('\n');
            };
            line("final_accuracy", row.final_accuracy.iter().map(acc).collect());
            line("best_accuracy", row.best_accuracy.iter().map(acc).collect());
            line(
                "rounds_to_90pct_final",
                row.rounds_to_90pct_final
                    .iter()
                    .map(|v| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into()))
                    .collect(),
            );
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("comparison is plain data");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(method: &str, devices: &str, header: &str, rows: &[&str]) -> String {
        let mut s = format!("# hhhfl metrics format 1\n# method {method}\n# devices {devices}\n{header}\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn baseline_mw() -> RunCurves {
        parse_metrics_csv(
            "b.csv",
            &csv(
                "baseline",
                "MW",
                "round,acc_MW,train_loss,duration_ms",
                &["1,0.5,0.7,", "2,0.8,0.5,", "3,0.75,0.4,"],
            ),
        )
        .unwrap()
    }

    #[test]
    fn single_baseline_one_column() {
        let c = summarize(&[baseline_mw()]).unwrap();
        assert_eq!(c.columns, vec!["baseline"]);
        let mw = &c.devices["MW"];
        assert_eq!(mw.final_accuracy, vec![Some(0.75)]);
        assert_eq!(mw.best_accuracy, vec![Some(0.8)]);
        assert_eq!(mw.rounds_to_90pct_final, vec![Some(2)]);
        assert!(c.to_text().contains("baseline"));
    }

    #[test]
    fn columns_ordered_independent_of_input() {
        let pair = parse_metrics_csv(
            "p.csv",
            &csv(
                "hhhfl",
                "MW,MU",
                "round,acc_MW,acc_MU,acc_pooled,train_loss,mmd2_MW_MU,duration_ms",
                &["1,0.6,0.7,0.65,0.6,0.1,"],
            ),
        )
        .unwrap();
        let a = summarize(&[pair.clone(), baseline_mw()]).unwrap();
        let b = summarize(&[baseline_mw(), pair]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.columns, vec!["baseline", "MW+MU"]);
        assert_eq!(a.devices["MU"].final_accuracy, vec![None, Some(0.7)]);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = csv("baseline", "MW", "round,acc_MW,train_loss,duration_ms", &["1,0.5,0.7,", "2,zzz,0.5,"]);
        match parse_metrics_csv("x.csv", &text) {
            Err(Error::Table { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let text = csv("baseline", "MW", "round,acc_MW,train_loss,duration_ms", &["1,0.5,0.7"]);
        assert!(matches!(parse_metrics_csv("x.csv", &text), Err(Error::Table { line: 5, .. })));
        assert!(parse_metrics_csv("x.csv", "round,acc_MW\n1,0.5\n").is_err());
    }
}
