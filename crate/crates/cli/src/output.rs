//! CSV and JSON writers, and the scenario CSV reader of `reduce`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<PathBuf, CliError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Reads a numeric CSV into rows of equal length.
pub fn read_matrix(path: &Path, header: bool) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::csv(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::csv(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| CliError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("column {} is not a number: {field:?}", col + 1)))
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(format!(
                    "expected {} fields, found {}",
                    first.len(),
                    row.len()
                )));
            }
        }
        if let Some(col) = row.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(format!("column {} is not finite", col + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, std::f64::consts::PI] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::NAN), "NaN");
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn ragged_rows_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "a,b\n1,2\n3,4\n5\n").unwrap();
        let err = read_matrix(&p, true).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 4, .. }), "{err}");
        fs::write(&p, "1,2\n3,x\n").unwrap();
        let err = read_matrix(&p, false).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        fs::write(&p, "1, 2\n\n3,4\n").unwrap();
        assert_eq!(read_matrix(&p, false).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
