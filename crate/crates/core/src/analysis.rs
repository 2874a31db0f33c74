//! Safety verification of the primary-only loop and assessment of the
//! largest tolerable attack.
//!
//! The S-procedure multipliers make the conditions bilinear, so `α` (and `β`
//! when `R_a` is a decision variable) are fixed per solve and swept over a
//! [`ScalarGrid`].

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DMatrix;

use crate::ellipsoid::{self, Ellipsoid};
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::lmi::{
    build_containment_q, build_e1, build_f, build_s, scalar_times, sdp_solve, AffineExpr,
    SdpProblem, SdpSolution, SdpStatus, FEASIBILITY_TOL,
};
use crate::sysmodel::ClosedLoop;

/// Floor on the smallest eigenvalue of `Q` and of a variable `R_a`.
pub const PD_FLOOR: f64 = 1e-8;

/// Values tried for the fixed multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    alphas: Vec<f64>,
    betas: Vec<f64>,
    deltas: Vec<f64>,
}

fn clean(name: &str, mut v: Vec<f64>) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} grid is empty")));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{name} grid holds {bad}, expected finite nonnegative values"
        )));
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v.dedup();
    Ok(v)
}

impl ScalarGrid {
    /// Sorts and deduplicates each list.
    pub fn new(alphas: Vec<f64>, betas: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        Ok(ScalarGrid {
            alphas: clean("alpha", alphas)?,
            betas: clean("beta", betas)?,
            deltas: clean("delta", deltas)?,
        })
    }

    /// One point per scalar.
    pub fn single(alpha: f64, beta: f64, delta: f64) -> Result<Self> {
        Self::new(vec![alpha], vec![beta], vec![delta])
    }

    /// The sixteen values `2^(-6 + 2k/3)`, `k = 0..15`.
    pub fn log_spaced() -> Vec<f64> {
        (0..16)
            .map(|k| 2f64.powf(-6.0 + 2.0 * k as f64 / 3.0))
            .collect()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Multipliers worth trying for containment in `safe`. For a centered
    /// safe set a larger `δ ≤ 1` only relaxes the condition, so the largest
    /// such value is enough.
    pub(crate) fn deltas_for(&self, safe: &Ellipsoid) -> Vec<f64> {
        if safe.is_centered() {
            if let Some(d) = self.deltas.iter().rev().find(|d| **d <= 1.0) {
                return vec![*d];
            }
        }
        self.deltas.clone()
    }
}

impl Default for ScalarGrid {
    fn default() -> Self {
        let v = Self::log_spaced();
        ScalarGrid {
            alphas: v.clone(),
            betas: v,
            deltas: vec![0.5, 0.9, 0.99, 1.0],
        }
    }
}

/// Proof object for invariance of `{ζ₁ : ζ₁ᵀQζ₁ ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub q: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Containment multiplier imposed in the solve, if any.
    pub delta: Option<f64>,
    /// Attack shape the certificate holds for.
    pub r_a: DMatrix<f64>,
    /// `ℰ_Q ⊆ safe`, rechecked by the exact containment test.
    pub contained: bool,
    /// Multiplier returned by that test.
    pub tau: Option<f64>,
    /// `Tr[R_a]` when `R_a` was optimized.
    pub objective: Option<f64>,
}

impl Certificate {
    pub fn invariant_set(&self) -> Result<Ellipsoid> {
        Ellipsoid::centered(self.q.clone())
    }

    /// Smallest eigenvalue of `−E₁ − αF − βS` at the certificate values.
    pub fn lmi_residual(&self, cl: &ClosedLoop) -> Result<f64> {
        let m = invariance_matrix(&cl.a1, &cl.b1, &self.q, &self.r_a, self.alpha, self.beta)?;
        Ok(linalg::min_eig(&m))
    }

    /// Solver-free recheck: `Q ≻ 0`, the invariance LMI to `1e-7`, and, when
    /// the certificate claims containment, the containment test.
    pub fn recheck(&self, cl: &ClosedLoop, safe: Option<&Ellipsoid>) -> Result<()> {
        let min_q = linalg::min_eig(&self.q);
        if min_q <= 0.0 {
            return Err(Error::CertificateRefused(format!(
                "Q is not positive definite (min eigenvalue {min_q:.3e})"
            )));
        }
        let residual = self.lmi_residual(cl)?;
        if residual < -FEASIBILITY_TOL {
            return Err(Error::CertificateRefused(format!(
                "invariance LMI violated (min eigenvalue {residual:.3e})"
            )));
        }
        if let (true, Some(safe)) = (self.contained, safe) {
            let c = ellipsoid::contains_by_search(&self.invariant_set()?, safe)?;
            if !c.contained {
                return Err(Error::CertificateRefused(format!(
                    "invariant set leaves the safe set (max eigenvalue {:.3e})",
                    c.max_eig
                )));
            }
        }
        Ok(())
    }
}

/// Bound on the normalized residual below which a solver point is treated
/// as degenerate rather than feasible.
pub const NORMALIZED_TOL: f64 = 1e-6;

fn inv_sqrt(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(m));
    if eig.eigenvalues.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Smallest eigenvalue of `T(−E₁ − αF − βS)T` with
/// `T = diag(Q^{-1/2}, 1, R_a^{-1/2})`: the invariance residual measured in
/// the certificate's own coordinates. `-inf` when `Q` or `R_a` is not
/// positive definite.
pub fn normalized_residual(
    a1: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_a: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let m = invariance_matrix(a1, b1, q, r_a, alpha, beta)?;
    let (Some(tq), Some(tr)) = (inv_sqrt(q), inv_sqrt(r_a)) else {
        return Ok(f64::NEG_INFINITY);
    };
    let one = DMatrix::from_element(1, 1, 1.0);
    let (n, na) = (q.nrows(), r_a.nrows());
    let t = linalg::block(&[
        &[&tq, &DMatrix::zeros(n, 1), &DMatrix::zeros(n, na)],
        &[&DMatrix::zeros(1, n), &one, &DMatrix::zeros(1, na)],
        &[&DMatrix::zeros(na, n), &DMatrix::zeros(na, 1), &tr],
    ])?;
    Ok(linalg::min_eig(&(&t * m * &t)))
}

/// `−E₁ − αF − βS` at numeric values.
pub fn invariance_matrix(
    a1: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_a: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let qe = AffineExpr::from(q);
    let e1 = build_e1(a1, b1, &qe)?;
    let f = build_f(&qe, b1.ncols())?;
    let s = build_s(&r_a.into(), q.nrows())?;
    let sum = &(&e1 + &f.scale(alpha)) + &s.scale(beta);
    Ok(-sum.eval(&[]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointStatus {
    /// Objective is `Tr[Q]` for verification, `Tr[R_a]` for assessment.
    Feasible {
        objective: f64,
    },
    LmiInfeasible,
    ContainmentFails,
    /// The solver reported success but the point fails the normalized
    /// residual check.
    Degenerate {
        residual: f64,
    },
    SolverFailed(String),
}

impl fmt::Display for PointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointStatus::Feasible { objective } => {
                write!(f, "feasible (objective {objective:.6e})")
            }
            PointStatus::LmiInfeasible => f.write_str("invariance LMI infeasible"),
            PointStatus::ContainmentFails => {
                f.write_str("invariance feasible, containment infeasible")
            }
            PointStatus::Degenerate { residual } => {
                write!(
                    f,
                    "degenerate solution (normalized residual {residual:.3e})"
                )
            }
            PointStatus::SolverFailed(m) => write!(f, "solver failed: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub status: PointStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasibleKind {
    /// No grid point admits an invariant ellipsoid.
    LmiInfeasible,
    /// Invariant ellipsoids exist, none inside the safe set.
    ContainmentFails,
    /// Nothing was proven either way.
    SolverFailed,
}

impl fmt::Display for InfeasibleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfeasibleKind::LmiInfeasible => "invariance LMI infeasible at every grid point",
            InfeasibleKind::ContainmentFails => {
                "invariant sets exist but none is contained in the safe set"
            }
            InfeasibleKind::SolverFailed => "solver failed at every grid point",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified(Certificate),
    Infeasible(InfeasibleKind),
}

/// A verdict together with the status of every grid point tried.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub verdict: Verdict,
    pub points: Vec<GridPoint>,
}

impl Outcome {
    pub fn certificate(&self) -> Option<&Certificate> {
        match &self.verdict {
            Verdict::Certified(c) => Some(c),
            Verdict::Infeasible(_) => None,
        }
    }

    fn infeasible(points: Vec<GridPoint>) -> Self {
        let any = |pred: fn(&PointStatus) -> bool| points.iter().any(|p| pred(&p.status));
        let kind = if any(|s| matches!(s, PointStatus::ContainmentFails)) {
            InfeasibleKind::ContainmentFails
        } else if any(|s| {
            matches!(
                s,
                PointStatus::LmiInfeasible | PointStatus::Degenerate { .. }
            )
        }) {
            InfeasibleKind::LmiInfeasible
        } else {
            InfeasibleKind::SolverFailed
        };
        Outcome {
            verdict: Verdict::Infeasible(kind),
            points,
        }
    }
}

fn check_loop(cl: &ClosedLoop) -> Result<()> {
    if !cl.is_decoupled() {
        return Err(Error::InvalidArgument(
            "analysis needs the primary-only loop (E_u = 0, C_S = 0); secondary coupling blocks are nonzero".into(),
        ));
    }
    Ok(())
}

fn check_attack(cl: &ClosedLoop, r_a: &DMatrix<f64>) -> Result<()> {
    if r_a.shape() != (cl.n_a, cl.n_a) {
        return dim_err(format!(
            "R_a is {}x{} but the loop has {} attack channels",
            r_a.nrows(),
            r_a.ncols(),
            cl.n_a
        ));
    }
    linalg::require_symmetric(r_a, "R_a")?;
    linalg::require_pd(r_a, "R_a")
}

fn check_safe(cl: &ClosedLoop, safe: &Ellipsoid) -> Result<()> {
    if safe.dim() != cl.n1 {
        return dim_err(format!(
            "safe set has dimension {} but ζ₁ has {}",
            safe.dim(),
            cl.n1
        ));
    }
    Ok(())
}

enum Attack<'a> {
    Fixed(&'a DMatrix<f64>),
    Variable { beta: f64 },
}

struct Instance {
    problem: SdpProblem,
    q: AffineExpr,
    r_a: AffineExpr,
}

/// Invariance LMI at fixed `α` with `Q ⪰ floor·I`; `β` is a variable when
/// `R_a` is fixed and `R_a ⪰ floor·I` is a variable otherwise.
fn invariance_instance(cl: &ClosedLoop, attack: &Attack<'_>, alpha: f64) -> Result<Instance> {
    let (n1, na) = (cl.n1, cl.n_a);
    let mut p = SdpProblem::new();
    let q = p.add_symmetric("Q", n1)?;
    let (r_a, beta_s) = match attack {
        Attack::Fixed(r) => {
            let beta = p.add_scalar("beta")?;
            p.require_psd("beta >= 0", beta.clone())?;
            let s = build_s(&AffineExpr::from(*r), n1)?.eval(&[]);
            (AffineExpr::from(*r), scalar_times(&beta, &s))
        }
        Attack::Variable { beta } => {
            let r = p.add_symmetric("Ra", na)?;
            p.require_psd(
                "Ra >= floor",
                &r - &AffineExpr::identity(na).scale(PD_FLOOR),
            )?;
            let s = build_s(&r, n1)?.scale(*beta);
            (r, s)
        }
    };
    let e1 = build_e1(&cl.a1, &cl.b1, &q)?;
    let f = build_f(&q, na)?;
    let lmi = -&(&(&e1 + &f.scale(alpha)) + &beta_s);
    p.require_psd("-E1 - alpha F - beta S", lmi)?;
    p.require_psd("Q >= floor", &q - &AffineExpr::identity(n1).scale(PD_FLOOR))?;
    Ok(Instance { problem: p, q, r_a })
}

fn add_containment(inst: &mut Instance, safe: &Ellipsoid, delta: f64) -> Result<()> {
    let g = build_containment_q(&inst.q, safe, delta)?;
    inst.problem.require_nsd("Q inside safe set", g)
}

/// Maximizes `Tr[Q]`; an unbounded objective falls back to plain feasibility.
fn solve_max_trace(inst: &Instance) -> Result<SdpSolution> {
    let mut p = inst.problem.clone();
    p.maximize(inst.q.trace())?;
    let sol = sdp_solve(&p);
    Ok(if sol.status == SdpStatus::Error {
        sdp_solve(&inst.problem)
    } else {
        sol
    })
}

/// Normalized residual at a solver point, with `β` and `R_a` taken from the
/// solution when they were decision variables.
fn point_residual(
    cl: &ClosedLoop,
    sol: &SdpSolution,
    alpha: f64,
    beta: Option<f64>,
    r_a: Option<&DMatrix<f64>>,
) -> f64 {
    let eval = || -> Result<f64> {
        let q = sol.value("Q")?;
        let beta = match beta {
            Some(b) => b,
            None => sol.scalar("beta")?.max(0.0),
        };
        let r = match r_a {
            Some(r) => r.clone(),
            None => sol.value("Ra")?.clone(),
        };
        normalized_residual(&cl.a1, &cl.b1, q, &r, alpha, beta)
    };
    eval().unwrap_or(f64::NEG_INFINITY)
}

fn classify(
    sol: &SdpSolution,
    when_infeasible: PointStatus,
    residual: impl Fn(&SdpSolution) -> f64,
    objective: impl Fn(&SdpSolution) -> f64,
) -> PointStatus {
    if sol.is_usable() {
        let r = residual(sol);
        if r < -NORMALIZED_TOL {
            PointStatus::Degenerate { residual: r }
        } else {
            PointStatus::Feasible {
                objective: objective(sol),
            }
        }
    } else if sol.status == SdpStatus::Infeasible {
        when_infeasible
    } else {
        PointStatus::SolverFailed(format!("{}: {}", sol.status, sol.message))
    }
}

fn build_certificate(
    sol: &SdpSolution,
    alpha: f64,
    beta: Option<f64>,
    delta: Option<f64>,
    r_a: Option<&DMatrix<f64>>,
    safe: Option<&Ellipsoid>,
) -> Result<Certificate> {
    let q = linalg::symmetrize(sol.value("Q")?);
    let beta = match beta {
        Some(b) => b,
        None => sol.scalar("beta")?.max(0.0),
    };
    let (r_a, objective) = match r_a {
        Some(r) => (r.clone(), None),
        None => {
            let r = linalg::symmetrize(sol.value("Ra")?);
            let tr = r.trace();
            (r, Some(tr))
        }
    };
    let (contained, tau) = match safe {
        Some(safe) => {
            let c = ellipsoid::contains(&Ellipsoid::centered(q.clone())?, safe)?;
            (c.contained, c.tau)
        }
        None => (false, None),
    };
    Ok(Certificate {
        q,
        alpha,
        beta,
        delta,
        r_a,
        contained,
        tau,
        objective,
    })
}

/// Candidate ranking: larger score first, then smaller `α`, `β`, `δ`.
fn better(a: (f64, &Certificate), b: (f64, &Certificate)) -> bool {
    let key = |c: &Certificate| (c.alpha, c.beta, c.delta.unwrap_or(0.0));
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => key(a.1).partial_cmp(&key(b.1)) == Some(Ordering::Less),
    }
}

fn keep_best(best: &mut Option<(f64, Certificate)>, score: f64, cert: Certificate) {
    let replace = match best {
        None => true,
        Some((s, c)) => better((score, &cert), (*s, c)),
    };
    if replace {
        *best = Some((score, cert));
    }
}

/// Searches the `α` grid for an invariant ellipsoid of the primary-only loop
/// inside `safe` under the fixed attack bound `R_a`.
///
/// Among feasible points the certificate with the largest `Tr[Q]` is
/// returned.
pub fn verify_safety(
    cl: &ClosedLoop,
    r_a: &DMatrix<f64>,
    safe: &Ellipsoid,
    grid: &ScalarGrid,
) -> Result<Outcome> {
    check_loop(cl)?;
    check_attack(cl, r_a)?;
    check_safe(cl, safe)?;
    let deltas = grid.deltas_for(safe);
    let mut points = Vec::new();
    let mut best: Option<(f64, Certificate)> = None;
    for &alpha in grid.alphas() {
        let base = invariance_instance(cl, &Attack::Fixed(r_a), alpha)?;
        let sol = sdp_solve(&base.problem);
        let status = classify(
            &sol,
            PointStatus::LmiInfeasible,
            |s| point_residual(cl, s, alpha, None, Some(r_a)),
            |_| 0.0,
        );
        if !matches!(status, PointStatus::Feasible { .. }) {
            points.push(GridPoint {
                alpha,
                beta: None,
                delta: None,
                status,
            });
            continue;
        }
        for &delta in &deltas {
            let mut inst = invariance_instance(cl, &Attack::Fixed(r_a), alpha)?;
            add_containment(&mut inst, safe, delta)?;
            let sol = solve_max_trace(&inst)?;
            let status = classify(
                &sol,
                PointStatus::ContainmentFails,
                |s| point_residual(cl, s, alpha, None, Some(r_a)),
                |s| s.value("Q").map(|q| q.trace()).unwrap_or(f64::NAN),
            );
            if let PointStatus::Feasible { objective } = status {
                let cert =
                    build_certificate(&sol, alpha, None, Some(delta), Some(r_a), Some(safe))?;
                keep_best(&mut best, objective, cert);
            }
            points.push(GridPoint {
                alpha,
                beta: None,
                delta: Some(delta),
                status,
            });
        }
    }
    Ok(match best {
        Some((_, cert)) => Outcome {
            verdict: Verdict::Certified(cert),
            points,
        },
        None => Outcome::infeasible(points),
    })
}

/// As [`verify_safety`] without the containment constraint; the returned
/// certificate has `contained = false`.
pub fn find_invariant_unconstrained(
    cl: &ClosedLoop,
    r_a: &DMatrix<f64>,
    grid: &ScalarGrid,
) -> Result<Outcome> {
    check_loop(cl)?;
    check_attack(cl, r_a)?;
    let mut points = Vec::new();
    let mut best: Option<(f64, Certificate)> = None;
    for &alpha in grid.alphas() {
        let inst = invariance_instance(cl, &Attack::Fixed(r_a), alpha)?;
        let sol = solve_max_trace(&inst)?;
        let status = classify(
            &sol,
            PointStatus::LmiInfeasible,
            |s| point_residual(cl, s, alpha, None, Some(r_a)),
            |s| s.value("Q").map(|q| q.trace()).unwrap_or(f64::NAN),
        );
        if let PointStatus::Feasible { objective } = status {
            let cert = build_certificate(&sol, alpha, None, None, Some(r_a), None)?;
            keep_best(&mut best, objective, cert);
        }
        points.push(GridPoint {
            alpha,
            beta: None,
            delta: None,
            status,
        });
    }
    Ok(match best {
        Some((_, cert)) => Outcome {
            verdict: Verdict::Certified(cert),
            points,
        },
        None => Outcome::infeasible(points),
    })
}

/// Smallest `Tr[R_a]` (largest attack, by the trace volume surrogate) for
/// which an invariant ellipsoid inside `safe` still exists. Pairs with
/// `β > α` are skipped: the `(ζ, 1)` diagonal entry of the LMI is `α − β`.
pub fn assess_worst_attack(
    cl: &ClosedLoop,
    safe: &Ellipsoid,
    grid: &ScalarGrid,
) -> Result<Outcome> {
    check_loop(cl)?;
    check_safe(cl, safe)?;
    let deltas = grid.deltas_for(safe);
    let mut points = Vec::new();
    let mut best: Option<(f64, Certificate)> = None;
    for &alpha in grid.alphas() {
        for &beta in grid.betas().iter().filter(|b| **b <= alpha) {
            for &delta in &deltas {
                let mut inst = invariance_instance(cl, &Attack::Variable { beta }, alpha)?;
                add_containment(&mut inst, safe, delta)?;
                inst.problem.minimize(inst.r_a.trace())?;
                let sol = sdp_solve(&inst.problem);
                let status = classify(
                    &sol,
                    PointStatus::LmiInfeasible,
                    |s| point_residual(cl, s, alpha, Some(beta), None),
                    |s| s.value("Ra").map(|r| r.trace()).unwrap_or(f64::NAN),
                );
                if let PointStatus::Feasible { objective } = status {
                    let cert =
                        build_certificate(&sol, alpha, Some(beta), Some(delta), None, Some(safe))?;
                    keep_best(&mut best, -objective, cert);
                }
                points.push(GridPoint {
                    alpha,
                    beta: Some(beta),
                    delta: Some(delta),
                    status,
                });
            }
        }
    }
    Ok(match best {
        Some((_, cert)) => Outcome {
            verdict: Verdict::Certified(cert),
            points,
        },
        None => Outcome::infeasible(points),
    })
}
