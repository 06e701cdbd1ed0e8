//! Tabular data representation: CSV ingestion, mean-centering, subsampling,
//! and train/test splitting.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randgen::Seed;

/// Response family of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Gaussian => write!(f, "gaussian"),
            Family::Binomial => write!(f, "binomial"),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" => Ok(Family::Binomial),
            other => Err(Error::invalid(format!(
                "unknown family '{other}' (expected gaussian or binomial)"
            ))),
        }
    }
}

/// An immutable design matrix plus response. Rows are observations.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    family: Family,
    centered: bool,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, family: Family) -> Result<Self> {
        Self::with_names(x, y, family, None)
    }

    pub fn with_names(
        x: Array2<f64>,
        y: Array1<f64>,
        family: Family,
        column_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, p) = x.dim();
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(Error::invalid("need at least 1 predictor column"));
        }
        if y.len() != n {
            return Err(Error::invalid(format!(
                "response length {} does not match {} rows",
                y.len(),
                n
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite design entry {v}")));
        }
        if family == Family::Binomial {
            if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!(
                    "binomial response must be 0 or 1, got {v}"
                )));
            }
        } else if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite response entry {v}")));
        }
        if let Some(names) = &column_names {
            if names.len() != p {
                return Err(Error::invalid(format!(
                    "{} column names for {} columns",
                    names.len(),
                    p
                )));
            }
        }
        Ok(Dataset {
            x,
            y,
            family,
            centered: false,
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// Name of column `j`, defaulting to `x{j+1}`.
    pub fn column_name(&self, j: usize) -> String {
        match &self.column_names {
            Some(names) => names[j].clone(),
            None => format!("x{}", j + 1),
        }
    }

    /// Column means of the design matrix.
    pub fn column_means(&self) -> Array1<f64> {
        self.x.mean_axis(Axis(0)).expect("n >= 2")
    }

    /// Subtract column means from the design matrix (and, for a gaussian
    /// response, the response mean). Idempotent; binomial responses are left
    /// untouched.
    pub fn center(&self) -> Dataset {
        let mut x = self.x.clone();
        let means = self.column_means();
        for (mut col, m) in x.axis_iter_mut(Axis(1)).zip(means.iter()) {
            col.mapv_inplace(|v| v - m);
        }
        let y = match self.family {
            Family::Gaussian => {
                let m = self.y.mean().expect("n >= 2");
                self.y.mapv(|v| v - m)
            }
            Family::Binomial => self.y.clone(),
        };
        Dataset {
            x,
            y,
            family: self.family,
            centered: true,
            column_names: self.column_names.clone(),
        }
    }

    /// Divide each design column by its sample standard deviation. Off by
    /// default everywhere; exposed as an opt-in flag for real data whose
    /// columns live on wildly different scales.
    pub fn scale_columns(&self) -> Result<Dataset> {
        let n = self.n() as f64;
        let mut x = self.x.clone();
        for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
            let mean = col.mean().expect("n >= 2");
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if sd <= 0.0 {
                return Err(Error::invalid(format!(
                    "cannot scale constant column {}",
                    j + 1
                )));
            }
            col.mapv_inplace(|v| v / sd);
        }
        Ok(Dataset {
            x,
            y: self.y.clone(),
            family: self.family,
            centered: false,
            column_names: self.column_names.clone(),
        })
    }

    /// Rows at `indices`, in the given order. Centering state is reset since
    /// row subsets shift the column means.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let x = self.x.select(Axis(0), indices);
        let y = self.y.select(Axis(0), indices);
        Dataset {
            x,
            y,
            family: self.family,
            centered: false,
            column_names: self.column_names.clone(),
        }
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Dataset {
        let x = self.x.select(Axis(1), indices);
        let names = self
            .column_names
            .as_ref()
            .map(|names| indices.iter().map(|&j| names[j].clone()).collect());
        Dataset {
            x,
            y: self.y.clone(),
            family: self.family,
            centered: self.centered,
            column_names: names,
        }
    }

    /// Draw `floor(n/2)` distinct rows uniformly without replacement.
    /// Deterministic given the seed; the result is not centered.
    pub fn subsample(&self, seed: Seed) -> Result<Dataset> {
        let n = self.n();
        if n < 4 {
            return Err(Error::invalid(format!(
                "subsampling needs at least 4 rows, got {n}"
            )));
        }
        let half = n / 2;
        let mut rng = seed.rng();
        let mut picked = rand::seq::index::sample(&mut rng, n, half).into_vec();
        picked.sort_unstable();
        Ok(self.select_rows(&picked))
    }

    /// Disjoint train/test row partition covering all rows.
    pub fn train_test_split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
        spec.validate()?;
        let n = self.n();
        let n_train = (spec.train_fraction * n as f64).round() as usize;
        if n_train < 2 || n - n_train < 1 {
            return Err(Error::invalid(format!(
                "degenerate split: {n_train} train / {} test rows",
                n - n_train
            )));
        }
        let mut rng = spec.seed.rng();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut train: Vec<usize> = order[..n_train].to_vec();
        let mut test: Vec<usize> = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.select_rows(&train), self.select_rows(&test)))
    }
}

/// Parameters of a train/test split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: Seed,
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train fraction must lie in (0,1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Reference to a CSV column, either by header name or 1-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Parse a user-supplied reference: digits mean a 1-based index,
    /// anything else a header name.
    pub fn parse(s: &str) -> ColumnRef {
        match s.parse::<usize>() {
            Ok(i) if i >= 1 => ColumnRef::Index(i),
            _ => ColumnRef::Name(s.to_string()),
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Name(s) => write!(f, "{s}"),
            ColumnRef::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Parsed-but-untyped CSV contents: rectangular rows plus an optional
/// header, autodetected by a non-numeric first line.
struct RawTable {
    rows: Vec<Vec<String>>,
    header: Option<Vec<String>>,
    width: usize,
    header_offset: usize,
}

fn read_raw_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
        rows.push(record.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{}: empty file", path.display())));
    }

    let has_header = rows[0].iter().any(|cell| cell.parse::<f64>().is_err());
    let header: Option<Vec<String>> = if has_header {
        Some(rows.remove(0))
    } else {
        None
    };
    if rows.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no data rows below header",
            path.display()
        )));
    }

    let width = rows[0].len();
    let header_offset = if has_header { 1 } else { 0 };
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::invalid(format!(
                "{}: ragged row {} has {} fields, expected {}",
                path.display(),
                i + 1 + header_offset,
                row.len(),
                width
            )));
        }
    }
    Ok(RawTable {
        rows,
        header,
        width,
        header_offset,
    })
}

fn parse_cell(table: &RawTable, path: &Path, i: usize, j: usize) -> Result<f64> {
    let cell = &table.rows[i][j];
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1 + table.header_offset,
            column: j + 1,
            message: format!("cell '{cell}' is not a finite number"),
        })
}

/// Load a comma-separated file. A header row is autodetected by a
/// non-numeric first line. All non-response cells must parse as finite reals.
pub fn load_csv(path: &Path, response: &ColumnRef, family: Family) -> Result<Dataset> {
    let table = read_raw_table(path)?;
    let rows = &table.rows;
    let header = &table.header;
    let width = table.width;
    let header_offset = table.header_offset;
    if width < 2 {
        return Err(Error::invalid(format!(
            "{}: need at least two columns (predictor + response)",
            path.display()
        )));
    }

    let response_idx = match response {
        ColumnRef::Index(i) => {
            if *i < 1 || *i > width {
                return Err(Error::invalid(format!(
                    "response column {i} out of range 1..={width}"
                )));
            }
            *i - 1
        }
        ColumnRef::Name(name) => match &header {
            Some(h) => h.iter().position(|c| c == name).ok_or_else(|| {
                Error::invalid(format!(
                    "response column '{name}' not found in header [{}]",
                    h.join(", ")
                ))
            })?,
            None => {
                return Err(Error::invalid(format!(
                    "response column '{name}' requested but the file has no header"
                )))
            }
        },
    };

    let n = rows.len();
    let p = width - 1;
    let mut x = Array2::<f64>::zeros((n, p));
    let mut y = Array1::<f64>::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut jj = 0;
        for (j, cell) in row.iter().enumerate() {
            let value = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            let value = match value {
                Some(v) => v,
                None => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row: i + 1 + header_offset,
                        column: j + 1,
                        message: format!("cell '{cell}' is not a finite number"),
                    })
                }
            };
            if j == response_idx {
                if family == Family::Binomial && value != 0.0 && value != 1.0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row: i + 1 + header_offset,
                        column: j + 1,
                        message: format!("binomial response must be 0 or 1, got {cell}"),
                    });
                }
                y[i] = value;
            } else {
                x[[i, jj]] = value;
                jj += 1;
            }
        }
    }

    let names = header.as_ref().map(|h| {
        h.iter()
            .enumerate()
            .filter(|(j, _)| *j != response_idx)
            .map(|(_, c)| c.clone())
            .collect::<Vec<_>>()
    });
    Dataset::with_names(x, y, family, names)
}

/// Load a design-only CSV: every column becomes a predictor and the
/// response slot is a zero placeholder. For pipelines that regenerate
/// responses on a real design matrix.
pub fn load_design_csv(path: &Path) -> Result<Dataset> {
    let table = read_raw_table(path)?;
    let n = table.rows.len();
    let p = table.width;
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            x[[i, j]] = parse_cell(&table, path, i, j)?;
        }
    }
    Dataset::with_names(x, Array1::zeros(n), Family::Gaussian, table.header)
}

/// Write a dataset as CSV with a header row; the response column is last.
/// Values use the shortest round-trip decimal representation.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header: Vec<String> = (0..d.p()).map(|j| d.column_name(j)).collect();
    header.push("y".to_string());
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
    for i in 0..d.n() {
        let mut fields: Vec<String> = (0..d.p()).map(|j| format!("{}", d.x()[[i, j]])).collect();
        fields.push(format!("{}", d.y()[i]));
        writeln!(w, "{}", fields.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
