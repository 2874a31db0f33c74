//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};

/// Entrywise asymmetry tolerance.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = 1e-9;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(0);
    }
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn require_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return dim_err(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(m.nrows())
}

pub fn require_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    require_square(m, what)?;
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(Error::NotSymmetric {
            what: what.into(),
            asymmetry: asym,
        });
    }
    Ok(())
}

/// Symmetric, with min eigenvalue >= -`PSD_TOL`.
pub fn require_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    require_symmetric(m, what)?;
    let lo = min_eig(m);
    if lo < -PSD_TOL {
        return Err(Error::NotPositiveSemidefinite {
            what: what.into(),
            min_eig: lo,
        });
    }
    Ok(())
}

/// Symmetric with strictly positive spectrum.
pub fn require_pd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    require_symmetric(m, what)?;
    if m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("{what} is empty")));
    }
    let lo = min_eig(m);
    if lo.is_nan() || lo <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: what.into(),
            min_eig: lo,
        });
    }
    Ok(())
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    require_square(m, what)?;
    m.clone().try_inverse().ok_or_else(|| Error::Singular {
        what: what.into(),
        hint: None,
    })
}

/// 2-norm condition number; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.max();
    let lo = sv.min();
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let cutoff = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(cutoff).expect("u and v were requested")
}

/// Assembles a dense block matrix. Every block in a row shares its row count
/// and every block in a column shares its column count.
pub fn block(rows: &[&[&DMatrix<f64>]]) -> Result<DMatrix<f64>> {
    let heights: Vec<usize> = rows
        .iter()
        .map(|r| r.first().map_or(0, |b| b.nrows()))
        .collect();
    let ncols = rows.first().map_or(0, |r| r.len());
    let widths: Vec<usize> = (0..ncols).map(|j| rows[0][j].ncols()).collect();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return dim_err(format!(
                "block row {i} has {} blocks, expected {ncols}",
                r.len()
            ));
        }
        for (j, b) in r.iter().enumerate() {
            if b.nrows() != heights[i] || b.ncols() != widths[j] {
                return dim_err(format!(
                    "block ({i},{j}) is {}x{}, expected {}x{}",
                    b.nrows(),
                    b.ncols(),
                    heights[i],
                    widths[j]
                ));
            }
        }
    }
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, r) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in r.iter().enumerate() {
            out.view_mut((r0, c0), (heights[i], widths[j]))
                .copy_from(*b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    Ok(out)
}

/// Largest entrywise difference relative to `1 + max|reference|`.
pub fn rel_diff(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    if a.shape() != reference.shape() {
        return f64::INFINITY;
    }
    if a.is_empty() {
        return 0.0;
    }
    (a - reference).amax() / (1.0 + reference.amax())
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(values))
}
