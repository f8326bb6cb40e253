//! Two-column `time,value` CSV for sample paths.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sde::SamplePath;

/// Shortest formatting that still round-trips every double (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `path` as CSV; each entry of `comments` becomes a leading `# ` line.
pub fn write_path_csv<W: Write>(mut out: W, path: &SamplePath, comments: &[String]) -> Result<()> {
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    writeln!(out, "time,value")?;
    for (j, v) in path.values().iter().enumerate() {
        writeln!(out, "{},{}", fmt_f64(j as f64 * path.h()), fmt_f64(*v))?;
    }
    out.flush()?;
    Ok(())
}

/// Read a `time,value` CSV. The time column is checked for monotonicity only;
/// the sampling step is the user-declared `h`.
pub fn read_path_csv<R: Read>(input: R, h: f64) -> Result<SamplePath> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names != ["time", "value"] {
        let line = headers.position().map_or(1, |p| p.line());
        return Err(Error::Data {
            line,
            message: format!("expected header `time,value`, found `{}`", names.join(",")),
        });
    }
    let mut values = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::Data { line, message: format!("expected 2 fields, found {}", record.len()) });
        }
        let t = parse_field(&record[0], line, "time")?;
        let v = parse_field(&record[1], line, "value")?;
        if t <= last_t {
            return Err(Error::Data { line, message: format!("time {t} is not increasing") });
        }
        last_t = t;
        values.push(v);
    }
    if values.len() < 2 {
        return Err(Error::Data { line: 0, message: format!("need at least 2 observations, found {}", values.len()) });
    }
    SamplePath::new(h, values)
}

fn parse_field(s: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Data { line, message: format!("cannot parse {what} field {s:?}") })?;
    if !v.is_finite() {
        return Err(Error::Data { line, message: format!("non-finite {what} field {s:?}") });
    }
    Ok(v)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        return Error::Io(std::io::Error::other(e.to_string()));
    }
    let line = e.position().map_or(fallback_line, |p| p.line());
    Error::Data { line, message: e.to_string() }
}
