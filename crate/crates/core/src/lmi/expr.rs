//! Affine matrix expressions `C + sum_k x_k G_k` over the scalar decision
//! entries `x_k` of an [`SdpProblem`](super::SdpProblem).

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{dim_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: DMatrix<f64>,
    /// Scalar decision index -> coefficient matrix. Never holds all-zero
    /// matrices.
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        AffineExpr {
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    pub(crate) fn from_parts(constant: DMatrix<f64>, terms: BTreeMap<usize, DMatrix<f64>>) -> Self {
        let mut e = AffineExpr { constant, terms };
        e.prune();
        e
    }

    fn prune(&mut self) {
        self.terms.retain(|_, g| g.iter().any(|v| *v != 0.0));
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(k, g)| (*k, g))
    }

    /// True when no decision variable appears.
    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        let terms = self.terms.iter().map(|(k, g)| (*k, f(g))).collect();
        Self::from_parts(f(&self.constant), terms)
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    /// `left * self`.
    pub fn lmul(&self, left: &DMatrix<f64>) -> Self {
        assert_eq!(left.ncols(), self.nrows(), "lmul shape mismatch");
        self.map(|m| left * m)
    }

    /// `self * right`.
    pub fn rmul(&self, right: &DMatrix<f64>) -> Self {
        assert_eq!(self.ncols(), right.nrows(), "rmul shape mismatch");
        self.map(|m| m * right)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `self + self^T`.
    pub fn sym_part2(&self) -> Self {
        self + &self.transpose()
    }

    /// Trace as a 1x1 expression.
    pub fn trace(&self) -> Self {
        assert_eq!(self.nrows(), self.ncols(), "trace of non-square expression");
        self.map(|m| DMatrix::from_element(1, 1, m.trace()))
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, g) in &self.terms {
            out += g * x[*k];
        }
        out
    }

    /// Largest scalar index referenced, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    /// Assembles a block expression; see [`crate::linalg::block`] for the
    /// shape rules.
    pub fn block(rows: &[&[&AffineExpr]]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.len());
        let heights: Vec<usize> = rows
            .iter()
            .map(|r| r.first().map_or(0, |b| b.nrows()))
            .collect();
        let widths: Vec<usize> = (0..ncols).map(|j| rows[0][j].ncols()).collect();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return dim_err(format!(
                    "block row {i} has {} blocks, expected {ncols}",
                    r.len()
                ));
            }
            for (j, b) in r.iter().enumerate() {
                if b.shape() != (heights[i], widths[j]) {
                    return dim_err(format!(
                        "expression block ({i},{j}) is {}x{}, expected {}x{}",
                        b.nrows(),
                        b.ncols(),
                        heights[i],
                        widths[j]
                    ));
                }
            }
        }
        let (nr, nc) = (heights.iter().sum(), widths.iter().sum());
        let mut constant = DMatrix::zeros(nr, nc);
        let mut terms: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        let mut r0 = 0;
        for (i, r) in rows.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in r.iter().enumerate() {
                let size = (heights[i], widths[j]);
                constant.view_mut((r0, c0), size).copy_from(&b.constant);
                for (k, g) in &b.terms {
                    terms
                        .entry(*k)
                        .or_insert_with(|| DMatrix::zeros(nr, nc))
                        .view_mut((r0, c0), size)
                        .copy_from(g);
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        Ok(Self::from_parts(constant, terms))
    }

    /// Largest entrywise asymmetry over the constant and every coefficient.
    pub fn asymmetry(&self) -> f64 {
        std::iter::once(&self.constant)
            .chain(self.terms.values())
            .map(crate::linalg::asymmetry)
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry over the constant and every coefficient.
    pub fn magnitude(&self) -> f64 {
        std::iter::once(&self.constant)
            .chain(self.terms.values())
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }
}

impl From<DMatrix<f64>> for AffineExpr {
    fn from(m: DMatrix<f64>) -> Self {
        AffineExpr::constant(m)
    }
}

impl From<&DMatrix<f64>> for AffineExpr {
    fn from(m: &DMatrix<f64>) -> Self {
        AffineExpr::constant(m.clone())
    }
}

impl Add for &AffineExpr {
    type Output = AffineExpr;

    fn add(self, rhs: &AffineExpr) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        let mut terms = self.terms.clone();
        for (k, g) in &rhs.terms {
            terms
                .entry(*k)
                .and_modify(|t| *t += g)
                .or_insert_with(|| g.clone());
        }
        AffineExpr::from_parts(&self.constant + &rhs.constant, terms)
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;

    fn add(self, rhs: AffineExpr) -> AffineExpr {
        &self + &rhs
    }
}

impl Neg for &AffineExpr {
    type Output = AffineExpr;

    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;

    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}

impl Sub for &AffineExpr {
    type Output = AffineExpr;

    fn sub(self, rhs: &AffineExpr) -> AffineExpr {
        self + &(-rhs)
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;

    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        &self - &rhs
    }
}

impl Mul<f64> for &AffineExpr {
    type Output = AffineExpr;

    fn mul(self, s: f64) -> AffineExpr {
        self.scale(s)
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;

    fn mul(self, s: f64) -> AffineExpr {
        self.scale(s)
    }
}

/// `scalar * matrix` where `scalar` is a 1x1 expression.
pub fn scalar_times(scalar: &AffineExpr, m: &DMatrix<f64>) -> AffineExpr {
    assert_eq!(
        scalar.shape(),
        (1, 1),
        "scalar_times needs a 1x1 expression"
    );
    scalar.map(|s| m * s[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(k: usize, r: usize, c: usize, i: usize, j: usize) -> AffineExpr {
        let mut g = DMatrix::zeros(r, c);
        g[(i, j)] = 1.0;
        AffineExpr::from_parts(DMatrix::zeros(r, c), BTreeMap::from([(k, g)]))
    }

    #[test]
    fn arithmetic_and_eval() {
        let x = var(0, 2, 2, 0, 1);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let e = &x.lmul(&a) + &AffineExpr::identity(2);
        let v = e.eval(&[5.0]);
        let mut xv = DMatrix::zeros(2, 2);
        xv[(0, 1)] = 5.0;
        assert_eq!(v, &a * &xv + DMatrix::identity(2, 2));
        assert!((&x - &x).is_constant());
    }

    #[test]
    fn blocks_place_terms() {
        let x = var(3, 1, 1, 0, 0);
        let z = AffineExpr::zeros(1, 1);
        let b = AffineExpr::block(&[&[&x, &z], &[&z, &x]]).unwrap();
        assert_eq!(
            b.eval(&[0.0, 0.0, 0.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0])
        );
        assert!(AffineExpr::block(&[&[&x, &AffineExpr::zeros(2, 1)]]).is_err());
    }

    #[test]
    fn trace_is_linear_functional() {
        let x = var(0, 2, 2, 0, 0) + var(1, 2, 2, 1, 1);
        let t = x.trace();
        assert_eq!(t.eval(&[2.0, 3.0])[(0, 0)], 5.0);
    }
}
