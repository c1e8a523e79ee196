use std::fmt::Write as _;
use std::io::BufRead;

use super::device::DeviceKind;
use crate::error::{Error, ParseErrorKind, Result};

/// One line of a MindBigData file: a single channel of a single event.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecord {
    pub record_id: u64,
    pub event_id: u64,
    pub device: DeviceKind,
    pub channel: String,
    /// Digit shown (0..=9) or -1 for no stimulus.
    pub code: i8,
    pub samples: Vec<f64>,
}

fn parse_int<T: std::str::FromStr>(field: &'static str, raw: &str) -> std::result::Result<T, ParseErrorKind> {
    raw.trim().parse().map_err(|_| ParseErrorKind::BadInteger {
        field,
        value: raw.to_string(),
    })
}

/// Parses `id \t event \t device \t channel \t code \t size \t v1,v2,...`.
///
/// `line_no` only labels the error. A trailing `\r` is ignored.
pub fn parse_mindbigdata_line(line: &str, line_no: usize) -> Result<EegRecord> {
    parse_fields(line).map_err(|kind| Error::Parse { line: line_no, kind })
}

fn parse_fields(line: &str) -> std::result::Result<EegRecord, ParseErrorKind> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.trim().is_empty() {
        return Err(ParseErrorKind::Empty);
    }
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 7 {
        return Err(ParseErrorKind::FieldCount(fields.len()));
    }
    let record_id = parse_int("id", fields[0])?;
    let event_id = parse_int("event", fields[1])?;
    let device = match fields[2].trim() {
        "MW" => DeviceKind::MW,
        "EP" => DeviceKind::EP,
        "MU" => DeviceKind::MU,
        other => return Err(ParseErrorKind::UnknownDevice(other.to_string())),
    };
    let channel = fields[3].trim().to_string();
    let code: i64 = parse_int("code", fields[4])?;
    if !(-1..=9).contains(&code) {
        return Err(ParseErrorKind::CodeOutOfRange(code));
    }
    let size: usize = parse_int("size", fields[5])?;
    let data = fields[6].trim();
    let samples = if data.is_empty() {
        Vec::new()
    } else {
        data.split(',')
            .enumerate()
            .map(|(i, raw)| match raw.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(ParseErrorKind::BadSample {
                    index: i,
                    value: raw.to_string(),
                }),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?
    };
    if samples.len() != size {
        return Err(ParseErrorKind::SizeMismatch {
            declared: size,
            actual: samples.len(),
        });
    }
    Ok(EegRecord {
        record_id,
        event_id,
        device,
        channel,
        code: code as i8,
        samples,
    })
}

impl EegRecord {
    /// Canonical line form; samples use Rust's shortest round-trip decimal rendering.
    pub fn to_line(&self) -> String {
        let mut out = format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t",
            self.record_id,
            self.event_id,
            self.device,
            self.channel,
            self.code,
            self.samples.len()
        );
        for (i, s) in self.samples.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{s}").expect("writing to a String cannot fail");
        }
        out
    }
}

/// Records parsed from a stream, with rejected lines kept as typed errors.
#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub records: Vec<EegRecord>,
    pub errors: Vec<Error>,
}

/// Parses every line of `reader`, skipping blank lines and collecting
/// per-line errors instead of stopping.
pub fn parse_reader<R: BufRead>(mut reader: R) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<stream>", e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        let Ok(line) = std::str::from_utf8(&buf) else {
            out.errors.push(Error::Parse {
                line: line_no,
                kind: ParseErrorKind::InvalidUtf8,
            });
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_mindbigdata_line(line, line_no) {
            Ok(r) => out.records.push(r),
            Err(e) => out.errors.push(e),
        }
    }
    Ok(out)
}

pub fn parse_file(path: &std::path::Path) -> Result<ParseOutcome> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_example_line() {
        let r = parse_mindbigdata_line("1\t10\tMW\tFP1\t5\t3\t1.0,2.0,3.0", 1).unwrap();
        assert_eq!(r.record_id, 1);
        assert_eq!(r.event_id, 10);
        assert_eq!(r.device, DeviceKind::MW);
        assert_eq!(r.channel, "FP1");
        assert_eq!(r.code, 5);
        assert_eq!(r.samples, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn unknown_device() {
        let e = parse_mindbigdata_line("1\t10\tXX\tFP1\t5\t3\t1,2,3", 4).unwrap_err();
        assert!(matches!(
            e,
            Error::Parse { line: 4, kind: ParseErrorKind::UnknownDevice(ref d) } if d == "XX"
        ));
    }

    #[test]
    fn size_mismatch() {
        let e = parse_mindbigdata_line("1\t10\tMW\tFP1\t5\t4\t1,2,3", 1).unwrap_err();
        assert!(matches!(
            e,
            Error::Parse {
                kind: ParseErrorKind::SizeMismatch { declared: 4, actual: 3 },
                ..
            }
        ));
    }

    #[test]
    fn tolerates_spaces_and_crlf() {
        let r = parse_mindbigdata_line("7\t8\tMU\tTP9\t-1\t2\t 1.5 , -2\r", 1).unwrap();
        assert_eq!(r.samples, vec![1.5, -2.0]);
        assert_eq!(r.code, -1);
    }

    #[test]
    fn rejects_bad_code_and_nonfinite() {
        assert!(matches!(
            parse_mindbigdata_line("1\t1\tMW\tFP1\t10\t1\t1", 1),
            Err(Error::Parse { kind: ParseErrorKind::CodeOutOfRange(10), .. })
        ));
        assert!(matches!(
            parse_mindbigdata_line("1\t1\tMW\tFP1\t1\t2\t1,NaN", 1),
            Err(Error::Parse { kind: ParseErrorKind::BadSample { index: 1, .. }, .. })
        ));
        assert!(matches!(
            parse_mindbigdata_line("1\t1\tMW\tFP1\t1\t1", 1),
            Err(Error::Parse { kind: ParseErrorKind::FieldCount(6), .. })
        ));
    }

    #[test]
    fn reader_counts_errors_and_skips_blank_lines() {
        let text = "1\t10\tMW\tFP1\t5\t1\t1\n\nbogus\n2\t10\tMW\tFP1\t5\t1\t2\r\n";
        let out = parse_reader(text.as_bytes()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.errors.len(), 1);
        assert!(matches!(out.errors[0], Error::Parse { line: 3, .. }));
    }
}
