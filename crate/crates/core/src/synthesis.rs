//! Secondary-controller synthesis through the linearizing change of
//! variables `η = (X, Y, 𝐀, 𝐁, 𝐂, 𝐃)`, controller recovery, and solver-free
//! certification of the resulting closed loop.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::analysis::{GridPoint, InfeasibleKind, PointStatus, ScalarGrid, PD_FLOOR};
use crate::ellipsoid::{self, Ellipsoid};
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::lmi::{
    build_containment_jl, build_e1, build_e2bf, build_f, build_fbf, build_s, build_sbf,
    constraint_report, scalar_times, sdp_solve, AffineExpr, EtaExprs, SdpProblem, SdpSolution,
    SdpStatus,
};
use crate::sysmodel::{closed_loop_from_hat, HatSystem, SecondaryController};

/// Margin imposed on `P(η) ≻ 0`.
pub const P_ETA_MARGIN: f64 = 1e-6;
/// Condition number of `I − XY` above which the solve is repeated with a
/// larger margin.
pub const RESOLVE_COND: f64 = 1e8;
/// Condition number of `I − XY` above which recovery refuses.
pub const SINGULAR_COND: f64 = 1e12;
/// Lower bound on the certified LMI residual.
pub const CERTIFY_TOL: f64 = 1e-6;

/// Numeric values of the convexified variables.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisVars {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SynthesisVars {
    pub fn exprs(&self) -> EtaExprs {
        EtaExprs::constant(&self.x, &self.y, &self.a, &self.b, &self.c, &self.d)
    }

    /// `[[X, I], [I, Y]]`.
    pub fn p_eta(&self) -> Result<DMatrix<f64>> {
        Ok(self.exprs().p_eta()?.eval(&[]))
    }

    fn from_solution(sol: &SdpSolution) -> Result<Self> {
        Ok(SynthesisVars {
            x: linalg::symmetrize(sol.value("X")?),
            y: linalg::symmetrize(sol.value("Y")?),
            a: sol.value("Abf")?.clone(),
            b: sol.value("Bbf")?.clone(),
            c: sol.value("Cbf")?.clone(),
            d: sol.value("Dbf")?.clone(),
        })
    }
}

/// What the synthesis SDP optimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisGoal {
    /// Any controller for the fixed attack bound.
    Feasible { r_a: DMatrix<f64> },
    /// Smallest `Tr[X]`, shrinking the invariant set, for the fixed bound.
    MinTraceX { r_a: DMatrix<f64> },
    /// Largest tolerable attack: `R_a` is a variable and `Tr[R_a]` is
    /// minimized; `β` comes from the grid.
    MinTraceRa,
}

impl SynthesisGoal {
    fn fixed_attack(&self) -> Option<&DMatrix<f64>> {
        match self {
            SynthesisGoal::Feasible { r_a } | SynthesisGoal::MinTraceX { r_a } => Some(r_a),
            SynthesisGoal::MinTraceRa => None,
        }
    }
}

/// A solved grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub vars: SynthesisVars,
    pub r_a: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub objective: Option<f64>,
    /// Minimum eigenvalue of each constraint at the solution.
    pub residuals: Vec<(String, f64)>,
    pub cond_i_minus_xy: f64,
    /// Set when the solve was repeated with a larger `P(η)` margin.
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub result: std::result::Result<Synthesis, InfeasibleKind>,
    pub points: Vec<GridPoint>,
}

fn check_inputs(
    hat: &HatSystem,
    safe: &Ellipsoid,
    goal: &SynthesisGoal,
    order: Option<usize>,
) -> Result<()> {
    let n1 = hat.n1();
    if let Some(n2) = order {
        if n2 != n1 {
            return Err(Error::InvalidArgument(format!(
                "controller order {n2} requested but synthesis requires n2 = n1 = {n1}"
            )));
        }
    }
    if safe.dim() != n1 {
        return dim_err(format!(
            "safe set has dimension {} but ζ₁ has {n1}",
            safe.dim()
        ));
    }
    if let Some(r) = goal.fixed_attack() {
        if r.shape() != (hat.n_a(), hat.n_a()) {
            return dim_err(format!(
                "R_a is {}x{} but B1cal has {} columns",
                r.nrows(),
                r.ncols(),
                hat.n_a()
            ));
        }
        linalg::require_symmetric(r, "R_a")?;
        linalg::require_pd(r, "R_a")?;
    }
    Ok(())
}

struct Instance {
    problem: SdpProblem,
    r_a: AffineExpr,
}

fn build_instance(
    hat: &HatSystem,
    safe: &Ellipsoid,
    goal: &SynthesisGoal,
    alpha: f64,
    beta: Option<f64>,
    delta: Option<f64>,
    margin: f64,
) -> Result<Instance> {
    let (n1, mu, my, na) = (hat.n1(), hat.m_u(), hat.m_y(), hat.n_a());
    let mut p = SdpProblem::new();
    let eta = EtaExprs {
        x: p.add_symmetric("X", n1)?,
        y: p.add_symmetric("Y", n1)?,
        a: p.add_matrix("Abf", n1, n1)?,
        b: p.add_matrix("Bbf", n1, my)?,
        c: p.add_matrix("Cbf", mu, n1)?,
        d: p.add_matrix("Dbf", mu, my)?,
    };
    let (r_a, beta_s) = match (goal.fixed_attack(), beta) {
        (Some(r), _) => {
            let b = p.add_scalar("beta")?;
            p.require_psd("beta >= 0", b.clone())?;
            let s = build_sbf(&AffineExpr::from(r), n1)?.eval(&[]);
            (AffineExpr::from(r), scalar_times(&b, &s))
        }
        (None, Some(beta)) => {
            let r = p.add_symmetric("Ra", na)?;
            p.require_psd(
                "Ra >= floor",
                &r - &AffineExpr::identity(na).scale(PD_FLOOR),
            )?;
            let s = build_sbf(&r, n1)?.scale(beta);
            (r, s)
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "a variable R_a needs a fixed beta".into(),
            ))
        }
    };
    let e2 = build_e2bf(&eta, hat)?;
    let f = build_fbf(&eta, na)?;
    p.require_nsd("E2 + alpha F + beta S", &(&e2 + &f.scale(alpha)) + &beta_s)?;
    p.require_psd(
        "P(eta) > 0",
        &eta.p_eta()? - &AffineExpr::identity(2 * n1).scale(margin),
    )?;
    if let Some(delta) = delta {
        let (j, l) = build_containment_jl(&eta.x, safe)?;
        p.require_nsd("J - delta L", &j - &l.scale(delta))?;
    }
    match goal {
        SynthesisGoal::Feasible { .. } => {}
        SynthesisGoal::MinTraceX { .. } => p.minimize(eta.x.trace())?,
        SynthesisGoal::MinTraceRa => p.minimize(r_a.trace())?,
    }
    Ok(Instance { problem: p, r_a })
}

fn cond_i_minus_xy(vars: &SynthesisVars) -> f64 {
    let n = vars.x.nrows();
    linalg::condition_number(&(DMatrix::identity(n, n) - &vars.x * &vars.y))
}

fn solve_point(
    hat: &HatSystem,
    safe: &Ellipsoid,
    goal: &SynthesisGoal,
    alpha: f64,
    beta: Option<f64>,
    delta: f64,
    margin: f64,
) -> Result<(SdpSolution, Instance)> {
    let inst = build_instance(hat, safe, goal, alpha, beta, Some(delta), margin)?;
    let sol = sdp_solve(&inst.problem);
    Ok((sol, inst))
}

fn extract(
    inst: &Instance,
    sol: &SdpSolution,
    alpha: f64,
    beta: Option<f64>,
    delta: f64,
) -> Result<Synthesis> {
    let vars = SynthesisVars::from_solution(sol)?;
    let beta = match beta {
        Some(b) => b,
        None => sol.scalar("beta")?.max(0.0),
    };
    let r_a = match sol.assignment.get("Ra") {
        Some(r) => linalg::symmetrize(r),
        None => inst.r_a.eval(&[]),
    };
    let objective = sol.objective_value;
    let cond = cond_i_minus_xy(&vars);
    Ok(Synthesis {
        vars,
        r_a,
        alpha,
        beta,
        delta,
        objective,
        residuals: constraint_report(&inst.problem, sol),
        cond_i_minus_xy: cond,
        resolved: false,
    })
}

/// Which constraint family is to blame at an infeasible point: re-solves
/// without the containment constraint and without an objective.
fn diagnose(
    hat: &HatSystem,
    safe: &Ellipsoid,
    goal: &SynthesisGoal,
    alpha: f64,
    beta: Option<f64>,
) -> Result<PointStatus> {
    let relaxed_goal = match goal {
        SynthesisGoal::MinTraceX { r_a } => SynthesisGoal::Feasible { r_a: r_a.clone() },
        g => g.clone(),
    };
    let relaxed = build_instance(hat, safe, &relaxed_goal, alpha, beta, None, P_ETA_MARGIN)?;
    let sol = sdp_solve(&relaxed.problem);
    Ok(if sol.is_usable() {
        PointStatus::ContainmentFails
    } else {
        PointStatus::LmiInfeasible
    })
}

/// Solves the synthesis SDP over the grid.
///
/// `Feasible` stops at the first feasible point in grid order; the
/// optimizing goals keep the point with the smallest objective. If the
/// chosen point has `cond(I − XY) > 1e8` it is re-solved once with the
/// `P(η)` margin raised by `1e-6·Tr[X]/n₁`.
pub fn synthesize(
    hat: &HatSystem,
    safe: &Ellipsoid,
    goal: &SynthesisGoal,
    grid: &ScalarGrid,
    controller_order: Option<usize>,
) -> Result<SynthesisOutcome> {
    check_inputs(hat, safe, goal, controller_order)?;
    // Fails early on a singular safe shape.
    build_containment_jl(&AffineExpr::identity(hat.n1()), safe)?;
    let deltas = grid.deltas_for(safe);
    let betas: Vec<Option<f64>> = match goal {
        SynthesisGoal::MinTraceRa => grid.betas().iter().map(|b| Some(*b)).collect(),
        _ => vec![None],
    };
    let mut points = Vec::new();
    let mut best: Option<Synthesis> = None;
    'grid: for &alpha in grid.alphas() {
        for &beta in betas.iter().filter(|b| b.is_none_or(|b| b <= alpha)) {
            let mut lmi_fails: Option<PointStatus> = None;
            for &delta in &deltas {
                let (sol, inst) = solve_point(hat, safe, goal, alpha, beta, delta, P_ETA_MARGIN)?;
                let status = if sol.is_usable() {
                    let s = extract(&inst, &sol, alpha, beta, delta)?;
                    let objective = s.objective.unwrap_or(0.0);
                    if best.as_ref().is_none_or(|b| better(&s, b)) {
                        best = Some(s);
                    }
                    PointStatus::Feasible { objective }
                } else if sol.status == SdpStatus::Infeasible {
                    match &lmi_fails {
                        Some(s) => s.clone(),
                        None => {
                            let s = diagnose(hat, safe, goal, alpha, beta)?;
                            lmi_fails = Some(s.clone());
                            s
                        }
                    }
                } else {
                    PointStatus::SolverFailed(format!("{}: {}", sol.status, sol.message))
                };
                let feasible = matches!(status, PointStatus::Feasible { .. });
                points.push(GridPoint {
                    alpha,
                    beta,
                    delta: Some(delta),
                    status,
                });
                if feasible && matches!(goal, SynthesisGoal::Feasible { .. }) {
                    break 'grid;
                }
            }
        }
    }
    let Some(mut chosen) = best else {
        let kind = if points
            .iter()
            .any(|p| p.status == PointStatus::ContainmentFails)
        {
            InfeasibleKind::ContainmentFails
        } else if points
            .iter()
            .any(|p| p.status == PointStatus::LmiInfeasible)
        {
            InfeasibleKind::LmiInfeasible
        } else {
            InfeasibleKind::SolverFailed
        };
        return Ok(SynthesisOutcome {
            result: Err(kind),
            points,
        });
    };
    if chosen.cond_i_minus_xy > RESOLVE_COND {
        let n1 = hat.n1() as f64;
        let margin = P_ETA_MARGIN + 1e-6 * chosen.vars.x.trace() / n1;
        let beta = matches!(goal, SynthesisGoal::MinTraceRa).then_some(chosen.beta);
        let (sol, inst) = solve_point(hat, safe, goal, chosen.alpha, beta, chosen.delta, margin)?;
        if sol.is_usable() {
            let mut s = extract(&inst, &sol, chosen.alpha, beta, chosen.delta)?;
            s.resolved = true;
            if s.cond_i_minus_xy < chosen.cond_i_minus_xy {
                chosen = s;
            }
        }
    }
    Ok(SynthesisOutcome {
        result: Ok(chosen),
        points,
    })
}

/// Smaller objective wins; grid order breaks ties.
fn better(a: &Synthesis, b: &Synthesis) -> bool {
    match (a.objective, b.objective) {
        (Some(x), Some(y)) => x.partial_cmp(&y) == Some(Ordering::Less),
        _ => false,
    }
}

/// Shorthand for [`synthesize`] with [`SynthesisGoal::MinTraceX`].
pub fn minimize_invariant_volume(
    hat: &HatSystem,
    safe: &Ellipsoid,
    r_a: &DMatrix<f64>,
    grid: &ScalarGrid,
) -> Result<SynthesisOutcome> {
    synthesize(
        hat,
        safe,
        &SynthesisGoal::MinTraceX { r_a: r_a.clone() },
        grid,
        None,
    )
}

/// `M`, `N` with `MNᵀ = I − XY` and the reconstructed Lyapunov matrix `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryData {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub cond_i_minus_xy: f64,
}

impl RecoveryData {
    /// `Π₁ = [[X, I], [Mᵀ, 0]]`.
    pub fn pi1(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        linalg::block(&[
            &[x, &DMatrix::identity(n, n)],
            &[&self.m.transpose(), &DMatrix::zeros(n, n)],
        ])
        .expect("square blocks")
    }

    /// `Π₂ = [[I, Y], [0, Nᵀ]]`.
    pub fn pi2(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let n = y.nrows();
        linalg::block(&[
            &[&DMatrix::identity(n, n), y],
            &[&DMatrix::zeros(n, n), &self.n.transpose()],
        ])
        .expect("square blocks")
    }
}

fn check_vars(vars: &SynthesisVars, hat: &HatSystem) -> Result<()> {
    let (n1, mu, my) = (hat.n1(), hat.m_u(), hat.m_y());
    for (name, m, shape) in [
        ("X", &vars.x, (n1, n1)),
        ("Y", &vars.y, (n1, n1)),
        ("Abf", &vars.a, (n1, n1)),
        ("Bbf", &vars.b, (n1, my)),
        ("Cbf", &vars.c, (mu, n1)),
        ("Dbf", &vars.d, (mu, my)),
    ] {
        if m.shape() != shape {
            return dim_err(format!(
                "{name} is {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                shape.0,
                shape.1
            ));
        }
    }
    Ok(())
}

/// Inverts the change of variables in the order `D₂, C₂, B₂, A₂`, with
/// `M = m_choice` (identity when `None`) and `Nᵀ = M⁻¹(I − XY)`.
pub fn recover_controller(
    vars: &SynthesisVars,
    hat: &HatSystem,
    m_choice: Option<&DMatrix<f64>>,
) -> Result<(SecondaryController, RecoveryData)> {
    check_vars(vars, hat)?;
    let n1 = hat.n1();
    let eye = DMatrix::<f64>::identity(n1, n1);
    let (x, y) = (&vars.x, &vars.y);
    let i_xy = &eye - x * y;
    let cond = linalg::condition_number(&i_xy);
    if !cond.is_finite() || cond > SINGULAR_COND {
        return Err(Error::Singular {
            what: format!("I - XY (condition number {cond:.3e})"),
            hint: Some("choose a different M or re-solve with a larger P(eta) margin".into()),
        });
    }
    let m = m_choice.cloned().unwrap_or_else(|| eye.clone());
    if m.shape() != (n1, n1) {
        return dim_err(format!("M is {}x{} but n1 = {n1}", m.nrows(), m.ncols()));
    }
    let m_inv = linalg::inverse(&m, "M")?;
    let m_inv_t = m_inv.transpose();
    let n = (&eye - y * x) * &m_inv_t;
    let n_inv = linalg::inverse(&n, "N")?;

    let (ah, bh, ch) = (&hat.a_hat, &hat.b_hat, &hat.c_hat);
    let d2 = vars.d.clone();
    let c2 = (&vars.c - &d2 * ch * x) * &m_inv_t;
    let b2 = &n_inv * (&vars.b - y * bh * &d2);
    let a2 = &n_inv
        * (&vars.a
            - y * (ah + bh * &d2 * ch) * x
            - y * bh * &c2 * m.transpose()
            - &n * &b2 * ch * x)
        * &m_inv_t;
    let sc = SecondaryController::new(a2, b2, c2, d2)?;

    let mut data = RecoveryData {
        m,
        n,
        p: DMatrix::zeros(0, 0),
        cond_i_minus_xy: cond,
    };
    let pi1 = data.pi1(x);
    let pi1_inv = linalg::inverse(&pi1, "Pi1")?;
    data.p = linalg::symmetrize(&(data.pi2(y) * pi1_inv));
    Ok((sc, data))
}

/// The change of variables itself: `(𝐀, 𝐁, 𝐂, 𝐃)` from a controller and
/// `(X, Y, M, N)`.
pub fn forward_change_of_variables(
    hat: &HatSystem,
    sc: &SecondaryController,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    m: &DMatrix<f64>,
    n: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (ah, bh, ch) = (&hat.a_hat, &hat.b_hat, &hat.c_hat);
    let mt = m.transpose();
    let d = sc.d.clone();
    let c = &sc.d * ch * x + &sc.c * &mt;
    let b = y * bh * &sc.d + n * &sc.b;
    let a = y * (ah + bh * &sc.d * ch) * x
        + y * bh * &sc.c * &mt
        + n * &sc.b * ch * x
        + n * &sc.a * &mt;
    (a, b, c, d)
}

/// What [`certify`] is asked to confirm.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    /// Lyapunov matrix on the full state `ζ`.
    pub p: DMatrix<f64>,
    pub r_a: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Synthesis `X`; when given, the projection of `P` must equal `X⁻¹`.
    pub x: Option<DMatrix<f64>>,
}

/// Solver-free certificate on the full closed-loop state.
#[derive(Debug, Clone, PartialEq)]
pub struct FullCertificate {
    pub p: DMatrix<f64>,
    /// Projection of `P` onto `ζ₁`.
    pub q: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub r_a: DMatrix<f64>,
    pub min_eig_p: f64,
    pub lmi_residual: f64,
    pub projection_mismatch: Option<f64>,
    pub contained: bool,
    pub tau: Option<f64>,
}

/// `−(E₂ + αF + βS)` at numeric `P` for the full loop.
pub fn full_invariance_matrix(
    hat: &HatSystem,
    sc: &SecondaryController,
    p: &DMatrix<f64>,
    r_a: &DMatrix<f64>,
    alpha: f64,
    beta: f64,
) -> Result<DMatrix<f64>> {
    let cl = closed_loop_from_hat(hat, sc)?;
    if p.shape() != (cl.dim(), cl.dim()) {
        return dim_err(format!(
            "P is {}x{} but the closed loop has {} states",
            p.nrows(),
            p.ncols(),
            cl.dim()
        ));
    }
    let pe = AffineExpr::from(p);
    let e2 = build_e1(&cl.a_cal, &cl.b_cal, &pe)?;
    let f = build_f(&pe, cl.n_a)?;
    let s = build_s(&r_a.into(), cl.dim())?;
    Ok(-(&(&e2 + &f.scale(alpha)) + &s.scale(beta)).eval(&[]))
}

/// Checks, without any SDP: (i) `P ≻ 0`; (ii) the invariance LMI of the full
/// loop to `1e-6`; (iii) the projection of `P` onto `ζ₁` equals `X⁻¹` to
/// `1e-6` relative (when `X` is given) and lies inside `safe`.
pub fn certify(
    hat: &HatSystem,
    sc: &SecondaryController,
    safe: &Ellipsoid,
    claim: &Claim,
) -> Result<FullCertificate> {
    let n1 = hat.n1();
    if safe.dim() != n1 {
        return dim_err(format!(
            "safe set has dimension {} but ζ₁ has {n1}",
            safe.dim()
        ));
    }
    let p = linalg::symmetrize(&claim.p);
    let min_eig_p = linalg::min_eig(&p);
    if min_eig_p <= 0.0 {
        return Err(Error::CertificateRefused(format!(
            "check (i): P is not positive definite (min eigenvalue {min_eig_p:.3e})"
        )));
    }
    let m = full_invariance_matrix(hat, sc, &p, &claim.r_a, claim.alpha, claim.beta)?;
    let lmi_residual = linalg::min_eig(&m);
    if lmi_residual < -CERTIFY_TOL {
        return Err(Error::CertificateRefused(format!(
            "check (ii): invariance LMI violated (min eigenvalue {lmi_residual:.3e})"
        )));
    }
    let q = ellipsoid::project(&p, n1)?.shape;
    let projection_mismatch = match &claim.x {
        Some(x) => {
            let x_inv = linalg::inverse(x, "X")?;
            let d = linalg::rel_diff(&q, &x_inv);
            if d > 1e-6 {
                return Err(Error::CertificateRefused(format!(
                    "check (iii): projection of P differs from X^-1 (relative {d:.3e})"
                )));
            }
            Some(d)
        }
        None => None,
    };
    let c = ellipsoid::contains(&Ellipsoid::centered(q.clone())?, safe)?;
    if !c.contained {
        return Err(Error::CertificateRefused(format!(
            "check (iii): projected invariant set leaves the safe set (max eigenvalue {:.3e})",
            c.max_eig
        )));
    }
    Ok(FullCertificate {
        p,
        q,
        alpha: claim.alpha,
        beta: claim.beta,
        r_a: claim.r_a.clone(),
        min_eig_p,
        lmi_residual,
        projection_mismatch,
        contained: true,
        tau: c.tau,
    })
}
