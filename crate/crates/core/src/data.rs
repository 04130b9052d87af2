//! Two-sample data, sparse unit directions, and delimited-table I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RandomSource;

/// Tolerance on `‖z‖₂ = 1` for [`SelectionVector`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Samples from the two groups; rows are observations.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSampleData {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl TwoSampleData {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || y.nrows() == 0 {
            return invalid("both groups need at least one sample");
        }
        if x.ncols() == 0 {
            return invalid("samples need at least one variable");
        }
        if x.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch {
                context: "column count of Y vs X".into(),
                expected: x.ncols(),
                found: y.ncols(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return invalid("sample entries must be finite");
        }
        Ok(Self { x, y })
    }

    /// Builds from row vectors; convenient in tests and generators.
    pub fn from_rows(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows_to_matrix(x)?, rows_to_matrix(y)?)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Number of group-1 samples.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of group-2 samples.
    pub fn m(&self) -> usize {
        self.y.nrows()
    }

    /// Number of variables.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// The same samples with the groups exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }

    /// Both groups stacked, X rows first.
    pub fn pooled(&self) -> DMatrix<f64> {
        let (n, m, dim) = (self.n(), self.m(), self.dim());
        DMatrix::from_fn(n + m, dim, |i, k| {
            if i < n {
                self.x[(i, k)]
            } else {
                self.y[(i - n, k)]
            }
        })
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.dim()) {
            return invalid(format!("column {bad} out of range for D = {}", self.dim()));
        }
        Self::new(self.x.select_columns(cols), self.y.select_columns(cols))
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::DimensionMismatch {
                context: format!("row {i} width"),
                expected: width,
                found: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// A unit-norm direction with at most `budget` nonzero entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionVector {
    z: Vec<f64>,
    support: Vec<usize>,
    budget: usize,
}

impl SelectionVector {
    pub fn new(z: Vec<f64>, budget: usize) -> Result<Self> {
        if budget == 0 {
            return invalid("budget d must be at least 1");
        }
        if z.is_empty() {
            return invalid("selection vector is empty");
        }
        if z.iter().any(|v| !v.is_finite()) {
            return invalid("selection vector has non-finite entries");
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return invalid(format!("selection vector has norm {norm}, expected 1"));
        }
        let support: Vec<usize> = (0..z.len()).filter(|&k| z[k] != 0.0).collect();
        if support.len() > budget {
            return invalid(format!(
                "selection vector has {} nonzeros, budget is {budget}",
                support.len()
            ));
        }
        Ok(Self { z, support, budget })
    }

    /// Normalizes `values` onto `support` inside a length-`dim` vector.
    pub fn from_support(dim: usize, support: &[usize], values: &[f64], budget: usize) -> Result<Self> {
        if support.len() != values.len() {
            return invalid("support and values differ in length");
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return invalid("cannot normalize a zero vector");
        }
        let mut z = vec![0.0; dim];
        for (&k, &v) in support.iter().zip(values) {
            if k >= dim {
                return invalid(format!("support index {k} out of range for D = {dim}"));
            }
            z[k] = v / norm;
        }
        Self::new(z, budget)
    }

    /// Equal weights on the first `d` coordinates.
    pub fn leading_uniform(dim: usize, d: usize) -> Result<Self> {
        if d == 0 || d > dim {
            return invalid(format!("need 1 <= d <= D, got d = {d}, D = {dim}"));
        }
        let support: Vec<usize> = (0..d).collect();
        Self::from_support(dim, &support, &vec![1.0; d], d)
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.z)
    }

    /// Indices of nonzero entries, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn negated(&self) -> Self {
        Self {
            z: self.z.iter().map(|v| -v).collect(),
            support: self.support.clone(),
            budget: self.budget,
        }
    }
}

/// Reads one comma-delimited numeric table. A first row that does not parse
/// as numbers is treated as a header and skipped.
pub fn read_table(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_table(&text, path)
}

fn parse_table(text: &str, path: &Path) -> Result<DMatrix<f64>> {
    let owned = || PathBuf::from(path);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if first {
            first = false;
            if cells.iter().any(|c| c.parse::<f64>().is_err()) {
                continue;
            }
        }
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        path: owned(),
                        row: line_no + 1,
                        col: col + 1,
                        cell: (*cell).to_string(),
                    })
                }
            }
        }
        if let Some(prev) = rows.first() {
            if prev.len() != row.len() {
                return Err(Error::RaggedRow {
                    path: owned(),
                    row: line_no + 1,
                    expected: prev.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile { path: owned() });
    }
    rows_to_matrix(&rows)
}

/// Writes a matrix in the format read by [`read_table`]. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_table(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads group samples from two table files.
pub fn load_two_sample(path_x: &Path, path_y: &Path) -> Result<TwoSampleData> {
    let x = read_table(path_x)?;
    let y = read_table(path_y)?;
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{} has {} columns but {} has {}",
                path_y.display(),
                y.ncols(),
                path_x.display(),
                x.ncols()
            ),
            expected: x.ncols(),
            found: y.ncols(),
        });
    }
    TwoSampleData::new(x, y)
}

/// Row indices chosen for the training and test parts of each group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub x_train: Vec<usize>,
    pub x_test: Vec<usize>,
    pub y_train: Vec<usize>,
    pub y_test: Vec<usize>,
}

fn split_sizes(total: usize, fraction: f64, group: &str) -> Result<usize> {
    let train = (fraction * total as f64).floor() as usize;
    if train == 0 || train >= total {
        return invalid(format!(
            "train fraction {fraction} leaves an empty part for group {group} of size {total}"
        ));
    }
    Ok(train)
}

/// Uniformly shuffles the rows of each group and cuts them at
/// `⌊train_fraction · size⌋`.
pub fn split_indices(n: usize, m: usize, train_fraction: f64, rng: &RandomSource) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return invalid(format!("train fraction must lie in (0, 1), got {train_fraction}"));
    }
    let n_tr = split_sizes(n, train_fraction, "X")?;
    let m_tr = split_sizes(m, train_fraction, "Y")?;
    let mut r = rng.rng();
    let mut xi: Vec<usize> = (0..n).collect();
    let mut yi: Vec<usize> = (0..m).collect();
    xi.shuffle(&mut r);
    yi.shuffle(&mut r);
    let x_test = xi.split_off(n_tr);
    let y_test = yi.split_off(m_tr);
    Ok(SplitIndices {
        x_train: xi,
        x_test,
        y_train: yi,
        y_test,
    })
}

/// Disjoint train/test partition of both groups.
pub fn split_train_test(
    data: &TwoSampleData,
    train_fraction: f64,
    rng: &RandomSource,
) -> Result<(TwoSampleData, TwoSampleData)> {
    let idx = split_indices(data.n(), data.m(), train_fraction, rng)?;
    let train = TwoSampleData::new(data.x.select_rows(&idx.x_train), data.y.select_rows(&idx.y_train))?;
    let test = TwoSampleData::new(data.x.select_rows(&idx.x_test), data.y.select_rows(&idx.y_test))?;
    Ok((train, test))
}
