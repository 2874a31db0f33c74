//! Ellipsoids `{x : (x - c)ᵀ R (x - c) ≤ 1}` with PSD shape `R`: membership,
//! containment, projection onto leading coordinates, the trace volume bound,
//! and boundary sampling.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::lmi::{sdp_solve, AffineExpr, SdpProblem};

/// Slack allowed in point membership.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: DMatrix<f64>,
    center: DVector<f64>,
}

impl Ellipsoid {
    /// Validates symmetry (1e-12) and PSD-ness (-1e-9); the stored shape is
    /// the symmetrized input.
    pub fn new(shape: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        linalg::require_psd(&shape, "ellipsoid shape")?;
        if center.len() != shape.nrows() {
            return dim_err(format!(
                "ellipsoid center has length {}, shape is {}x{}",
                center.len(),
                shape.nrows(),
                shape.ncols()
            ));
        }
        Ok(Ellipsoid {
            shape: linalg::symmetrize(&shape),
            center,
        })
    }

    pub fn centered(shape: DMatrix<f64>) -> Result<Self> {
        let n = shape.nrows();
        Self::new(shape, DVector::zeros(n))
    }

    /// Euclidean ball of the given radius around the origin.
    pub fn ball(dim: usize, radius: f64) -> Self {
        let shape = DMatrix::identity(dim, dim) / (radius * radius);
        Ellipsoid {
            shape,
            center: DVector::zeros(dim),
        }
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn is_centered(&self) -> bool {
        self.center.iter().all(|v| *v == 0.0)
    }

    /// `(x - c)ᵀ R (x - c)`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return dim_err(format!(
                "point has length {}, ellipsoid dimension is {}",
                x.len(),
                self.dim()
            ));
        }
        let d = x - &self.center;
        Ok(d.dot(&(&self.shape * &d)))
    }

    /// Semi-axes scaled by `s`, i.e. shape divided by `s²`.
    pub fn scaled(&self, s: f64) -> Self {
        Ellipsoid {
            shape: &self.shape / (s * s),
            center: self.center.clone(),
        }
    }

    /// Projection onto the leading `k` coordinates.
    pub fn project(&self, k: usize) -> Result<(Ellipsoid, bool)> {
        let p = project(&self.shape, k)?;
        let center = self.center.rows(0, k).into_owned();
        Ok((
            Ellipsoid {
                shape: p.shape,
                center,
            },
            p.lower_bound,
        ))
    }
}

/// Point-in-set test with `MEMBERSHIP_TOL` slack.
pub fn membership(x: &DVector<f64>, e: &Ellipsoid) -> Result<bool> {
    Ok(e.quadratic_form(x)? <= 1.0 + MEMBERSHIP_TOL)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    pub contained: bool,
    /// S-procedure multiplier; `Some` only when contained.
    pub tau: Option<f64>,
    /// Largest eigenvalue of the S-procedure matrix at the best multiplier
    /// found (≤ tolerance iff contained).
    pub max_eig: f64,
}

fn check_pair(inner: &Ellipsoid, outer: &Ellipsoid) -> Result<()> {
    if inner.dim() != outer.dim() {
        return dim_err(format!(
            "inner dimension {} vs outer dimension {}",
            inner.dim(),
            outer.dim()
        ));
    }
    if !inner.is_centered() {
        return Err(Error::InvalidArgument(
            "containment test needs a centered inner ellipsoid".into(),
        ));
    }
    linalg::require_pd(inner.shape(), "inner ellipsoid shape")
}

/// `[[R, -R c], [-cᵀR, cᵀRc - 1]]` for the outer set.
fn outer_form(outer: &Ellipsoid) -> DMatrix<f64> {
    let n = outer.dim();
    let r = outer.shape();
    let rc = r * outer.center();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(r);
    for i in 0..n {
        m[(i, n)] = -rc[i];
        m[(n, i)] = -rc[i];
    }
    m[(n, n)] = outer.center().dot(&rc) - 1.0;
    m
}

/// `[[Q, 0], [0, -1]]` for the inner set.
fn inner_form(inner: &Ellipsoid) -> DMatrix<f64> {
    let n = inner.dim();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(inner.shape());
    m[(n, n)] = -1.0;
    m
}

fn containment_tol(inner: &Ellipsoid, outer: &Ellipsoid) -> f64 {
    let c = outer.center();
    1e-9 * (1.0 + inner.shape().amax() + outer.shape().amax() * (1.0 + c.dot(c)))
}

fn verdict(inner: &Ellipsoid, outer: &Ellipsoid, tau: f64, tol: f64) -> Containment {
    let g = outer_form(outer) - inner_form(inner) * tau;
    let max_eig = linalg::max_eig(&g);
    let contained = max_eig <= tol;
    Containment {
        contained,
        tau: contained.then_some(tau),
        max_eig,
    }
}

/// Exact (lossless S-procedure) test of `inner ⊆ outer`: contained iff some
/// `τ ≥ 0` makes `[[R, -Rc], [-cᵀR, cᵀRc - 1]] - τ [[Q, 0], [0, -1]] ⪯ 0`.
///
/// The multiplier comes from an SDP minimizing the largest eigenvalue of that
/// matrix; the verdict is an eigenvalue check at the returned `τ`.
pub fn contains(inner: &Ellipsoid, outer: &Ellipsoid) -> Result<Containment> {
    check_pair(inner, outer)?;
    let n = inner.dim();
    let mut p = SdpProblem::new();
    let tau = p.add_scalar("tau")?;
    let t = p.add_scalar("t")?;
    p.require_psd("tau >= 0", tau.clone())?;
    let g = &AffineExpr::constant(outer_form(outer))
        - &crate::lmi::scalar_times(&tau, &inner_form(inner));
    let eps = crate::lmi::scalar_times(&t, &DMatrix::identity(n + 1, n + 1));
    p.require_psd("t I - G(tau)", &eps - &g)?;
    p.minimize(t)?;
    let sol = sdp_solve(&p);
    let tol = containment_tol(inner, outer);
    if !sol.is_usable() {
        // The epigraph problem is always strictly feasible; fall back to the
        // scalar search rather than guess.
        return contains_by_search(inner, outer);
    }
    let tau = sol.scalar("tau")?.max(0.0);
    let v = verdict(inner, outer, tau, tol);
    if v.contained {
        return Ok(v);
    }
    // Refine: the solver's τ is only accurate to its tolerance.
    let s = contains_by_search(inner, outer)?;
    Ok(if s.max_eig < v.max_eig { s } else { v })
}

/// Backend-free version of [`contains`]: golden-section search of the convex
/// function `τ ↦ λ_max(G(τ))` on `[0, max(0, 1 - cᵀRc)]`.
pub fn contains_by_search(inner: &Ellipsoid, outer: &Ellipsoid) -> Result<Containment> {
    check_pair(inner, outer)?;
    let base = outer_form(outer);
    let qf = inner_form(inner);
    let f = |tau: f64| linalg::max_eig(&(&base - &qf * tau));
    let c = outer.center();
    let hi = (1.0 - c.dot(&(outer.shape() * c))).max(0.0);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    let mut best = 0.5 * (a + b);
    for cand in [0.0, hi, x1, x2] {
        if f(cand) < f(best) {
            best = cand;
        }
    }
    Ok(verdict(inner, outer, best, containment_tol(inner, outer)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub shape: DMatrix<f64>,
    /// Set when the trailing block was singular and a pseudo-inverse was used.
    pub lower_bound: bool,
}

/// Shape of the projection of `{x : xᵀPx ≤ 1}` onto the leading `k`
/// coordinates: the Schur complement `P₁₁ - P₁₂ P₂₂⁻¹ P₂₁`.
///
/// `k = n` returns `P` itself.
pub fn project(p: &DMatrix<f64>, k: usize) -> Result<Projection> {
    linalg::require_symmetric(p, "projected matrix")?;
    let n = p.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "projection size {k} must lie in 1..={n}"
        )));
    }
    let p = linalg::symmetrize(p);
    if k == n {
        return Ok(Projection {
            shape: p,
            lower_bound: false,
        });
    }
    let m = n - k;
    let p11 = p.view((0, 0), (k, k));
    let p12 = p.view((0, k), (k, m));
    let p22 = p.view((k, k), (m, m)).into_owned();
    let (inv, lower_bound) = match p22.clone().cholesky() {
        Some(ch) if linalg::condition_number(&p22) < 1e12 => (ch.inverse(), false),
        _ => (linalg::pseudo_inverse(&p22), true),
    };
    let shape = p11 - p12 * inv * p12.transpose();
    Ok(Projection {
        shape: linalg::symmetrize(&shape),
        lower_bound,
    })
}

/// `Tr[R]^(n/2) / n^(n/2)`, an upper bound on `det[R]^(1/2)` for PD `R`.
pub fn trace_volume_bound(r: &DMatrix<f64>) -> Result<f64> {
    linalg::require_pd(r, "volume-bound matrix")?;
    let n = r.nrows() as f64;
    Ok((r.trace() / n).powf(n / 2.0))
}

/// `count` points on the boundary of a 2-D ellipsoid at uniformly spaced
/// angles, mapped through the inverse Cholesky factor of the shape.
pub fn boundary_points(e: &Ellipsoid, count: usize) -> Result<Vec<DVector<f64>>> {
    if e.dim() != 2 {
        return dim_err(format!(
            "boundary sampling needs a 2-D ellipsoid, got dimension {}",
            e.dim()
        ));
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "point count must be positive".into(),
        ));
    }
    let chol = e
        .shape()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            what: "ellipsoid shape".into(),
            min_eig: linalg::min_eig(e.shape()),
        })?;
    // R = L Lᵀ, x = c + L⁻ᵀ u with |u| = 1.
    let lt = chol.l().transpose();
    let pts = (0..count)
        .map(|i| {
            let theta = 2.0 * PI * i as f64 / count as f64;
            let u = DVector::from_row_slice(&[theta.cos(), theta.sin()]);
            let y = lt
                .solve_upper_triangular(&u)
                .expect("Cholesky factor is nonsingular");
            e.center() + y
        })
        .collect();
    Ok(pts)
}
