//! Plain-text dump of a quadratic selection instance:
//!
//! ```text
//! # quad-instance
//! D d
//! <D rows of A, whitespace separated>
//! <t on one line>
//! ```
//!
//! `A` is written unshifted. Lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::QuadProblem;
use crate::error::{invalid, Error, Result};

pub fn write_instance(path: &Path, qp: &QuadProblem, d: usize) -> Result<()> {
    let dim = qp.dim();
    let a = qp.unshifted_a();
    let mut out = String::from("# quad-instance\n");
    let _ = writeln!(out, "{dim} {d}");
    for i in 0..dim {
        let row: Vec<String> = (0..dim).map(|j| format!("{:e}", a[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    let t: Vec<String> = qp.t().iter().map(|v| format!("{v:e}")).collect();
    let _ = writeln!(out, "{}", t.join(" "));
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_instance(path: &Path) -> Result<(QuadProblem, usize)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let parse_row = |line: Option<&str>, what: &str| -> Result<Vec<f64>> {
        let line = line.ok_or_else(|| Error::InvalidInput(format!("{}: missing {what}", path.display())))?;
        line.split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("{}: bad number {s:?} in {what}", path.display()))))
            .collect()
    };
    let header = parse_row(lines.next(), "header")?;
    if header.len() != 2 || header.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return invalid(format!("{}: header must be 'D d'", path.display()));
    }
    let (dim, d) = (header[0] as usize, header[1] as usize);
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let row = parse_row(lines.next(), "matrix row")?;
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("{} matrix row {}", path.display(), i + 1),
                expected: dim,
                found: row.len(),
            });
        }
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let t = parse_row(lines.next(), "linear term")?;
    if t.len() != dim {
        return Err(Error::DimensionMismatch {
            context: format!("{} linear term", path.display()),
            expected: dim,
            found: t.len(),
        });
    }
    Ok((QuadProblem::new(a, DVector::from_vec(t))?, d))
}
