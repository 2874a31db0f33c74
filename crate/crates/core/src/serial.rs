//! Row-major nested-array matrix encoding shared by problem dumps, configs
//! and reports.

use std::fmt;

use nalgebra::DMatrix;
use serde::de::{Error as DeError, SeqAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A dense matrix that (de)serializes as `[[row0...], [row1...], ...]`.
///
/// A bare number is accepted on input as a 1x1 matrix; output is always
/// nested.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix(pub DMatrix<f64>);

impl From<DMatrix<f64>> for RowMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        RowMatrix(m)
    }
}

impl From<RowMatrix> for DMatrix<f64> {
    fn from(m: RowMatrix) -> Self {
        m.0
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(format!(
            "ragged matrix: row {i} has {} entries, row 0 has {ncols}",
            r.len()
        ));
    }
    if let Some(bad) = rows.iter().flatten().find(|v| !v.is_finite()) {
        return Err(format!("non-finite matrix entry {bad}"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl Serialize for RowMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        to_rows(&self.0).serialize(s)
    }
}

struct MatrixVisitor;

impl<'de> Visitor<'de> for MatrixVisitor {
    type Value = RowMatrix;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a matrix as nested arrays of numbers (row-major) or a number")
    }

    fn visit_f64<E: DeError>(self, v: f64) -> Result<RowMatrix, E> {
        Ok(RowMatrix(DMatrix::from_element(1, 1, v)))
    }

    fn visit_i64<E: DeError>(self, v: i64) -> Result<RowMatrix, E> {
        self.visit_f64(v as f64)
    }

    fn visit_u64<E: DeError>(self, v: u64) -> Result<RowMatrix, E> {
        self.visit_f64(v as f64)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<RowMatrix, A::Error> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        while let Some(row) = seq.next_element()? {
            rows.push(row);
        }
        from_rows(&rows).map(RowMatrix).map_err(A::Error::custom)
    }
}

impl<'de> Deserialize<'de> for RowMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(MatrixVisitor)
    }
}
