use std::fs::File;
use std::path::Path;

use boostwood_core::Error;

use crate::error::CliResult;

/// Reads feature rows from a CSV file. With a header, every name in
/// `feature_names` must be present and columns are picked by name; other
/// columns are ignored. Without a header the file must have exactly
/// `feature_names.len()` columns.
pub fn read_features(path: &Path, has_header: bool, feature_names: &[String]) -> CliResult<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let d = feature_names.len();
    let columns: Vec<usize> = if has_header {
        let headers = reader.headers().map_err(Error::from)?.clone();
        feature_names
            .iter()
            .map(|name| {
                headers.iter().position(|h| h == name).ok_or_else(|| {
                    Error::InvalidData(format!("query has no column named {name:?}"))
                })
            })
            .collect::<Result<_, _>>()?
    } else {
        (0..d).collect()
    };

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let line = r + 1 + usize::from(has_header);
        if !has_header && record.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: record.len(),
            }
            .into());
        }
        let row = columns
            .iter()
            .zip(feature_names)
            .map(|(&c, name)| {
                let cell = record.get(c).unwrap_or("");
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonNumeric {
                        row: line,
                        column: name.clone(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyData.into());
    }
    Ok(rows)
}
