//! Datasets, CSV ingestion and k-fold partitioning.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// A dense numeric regression dataset: `n` rows of `d` features plus a response.
///
/// Features are stored row-major. Datasets are immutable once built; boosting
/// stages that need a different response use [`Dataset::with_response`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    response: Vec<f64>,
    n: usize,
    d: usize,
    feature_names: Vec<String>,
    target_name: String,
}

impl Dataset {
    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>, response: Vec<f64>) -> Result<Self> {
        let d = rows.first().map(Vec::len).ok_or(Error::EmptyData)?;
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::InvalidData(format!(
                "row {bad} has {} features, expected {d}",
                rows[bad].len()
            )));
        }
        let features = rows.into_iter().flatten().collect();
        Self::from_flat(features, d, response)
    }

    /// Builds a dataset from a row-major feature buffer with `d` columns.
    pub fn from_flat(features: Vec<f64>, d: usize, response: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidData("dataset needs at least one feature".into()));
        }
        let n = response.len();
        if n == 0 {
            return Err(Error::EmptyData);
        }
        if features.len() != n * d {
            return Err(Error::InvalidData(format!(
                "{} feature values for {n} responses and {d} columns",
                features.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at row {row}")));
        }
        Ok(Dataset {
            features,
            response,
            n,
            d,
            feature_names: (1..=d).map(|j| format!("x{j}")).collect(),
            target_name: "y".to_string(),
        })
    }

    pub fn with_names(mut self, feature_names: Vec<String>, target_name: String) -> Result<Self> {
        if feature_names.len() != self.d {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                self.d
            )));
        }
        self.feature_names = feature_names;
        self.target_name = target_name;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d)
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Same features, new response (used for residual stages).
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        if response.len() != self.n {
            return Err(Error::InvalidData(format!(
                "{} responses for {} rows",
                response.len(),
                self.n
            )));
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at row {row}")));
        }
        Ok(Dataset {
            response,
            ..self.clone()
        })
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut response = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidData(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            response.push(self.response[i]);
        }
        Ok(Dataset {
            features,
            response,
            n: indices.len(),
            d: self.d,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        })
    }

    /// Writes the dataset as CSV with a header row; the response is the last column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
        let mut header = self.feature_names.join(",");
        header.push(',');
        header.push_str(&self.target_name);
        writeln!(out, "{header}").map_err(io_err)?;
        for (row, y) in self.rows().zip(&self.response) {
            let mut line = String::new();
            for v in row {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&format!("{y:?}"));
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Which CSV column holds the response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
}

impl TargetColumn {
    /// Interprets a command-line value: header names win, otherwise a
    /// zero-based column index is accepted.
    pub fn from_arg(s: &str) -> Self {
        TargetColumn::Name(s.to_string())
    }

    fn resolve(&self, headers: Option<&csv::StringRecord>, width: usize) -> Result<usize> {
        match self {
            TargetColumn::Index(j) if *j < width => Ok(*j),
            TargetColumn::Index(j) => Err(Error::MissingTarget(j.to_string())),
            TargetColumn::Name(name) => {
                if let Some(pos) = headers.and_then(|h| h.iter().position(|c| c == name)) {
                    return Ok(pos);
                }
                match name.parse::<usize>() {
                    Ok(j) if j < width => Ok(j),
                    _ => Err(Error::MissingTarget(name.clone())),
                }
            }
        }
    }
}

/// Reads a numeric CSV file. The target column becomes the response and every
/// other column a feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = if has_header {
        Some(reader.headers()?.clone())
    } else {
        None
    };

    let mut target_idx = None;
    let mut width = 0;
    let mut features = Vec::new();
    let mut response = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let t = match target_idx {
            Some(t) => t,
            None => {
                width = record.len();
                if width < 2 {
                    return Err(Error::InvalidData(
                        "need a target column and at least one feature".into(),
                    ));
                }
                let t = target.resolve(headers.as_ref(), width)?;
                target_idx = Some(t);
                t
            }
        };
        for (j, cell) in record.iter().enumerate() {
            let column = headers
                .as_ref()
                .and_then(|h| h.get(j))
                .map_or_else(|| j.to_string(), str::to_string);
            let value: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: line,
                column: column.clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumeric {
                    row: line,
                    column,
                    value: cell.to_string(),
                });
            }
            if j == t {
                response.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let t = match target_idx {
        Some(t) => t,
        None => {
            // Header-only files still get a target check before reporting emptiness.
            if let Some(h) = &headers {
                target.resolve(Some(h), h.len())?;
            }
            return Err(Error::EmptyData);
        }
    };
    let data = Dataset::from_flat(features, width - 1, response)?;
    match headers {
        Some(h) => {
            let names = h
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != t)
                .map(|(_, c)| c.to_string())
                .collect();
            data.with_names(names, h[t].to_string())
        }
        None => Ok(data),
    }
}

/// Assignment of `n` rows to `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    assignments: Vec<usize>,
    k: usize,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// Held-out rows of `fold`, ascending.
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    /// Training rows of `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Shuffles rows with a seeded stream and deals them round-robin into `k` folds,
/// so fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::config("fold count must be positive"));
    }
    if k > n {
        return Err(Error::config(format!("{k} folds for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0xF01D));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan { assignments, k })
}
