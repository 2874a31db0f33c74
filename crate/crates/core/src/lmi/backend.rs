//! Interior-point backend: translation of an [`SdpProblem`] into Clarabel's
//! conic standard form `A x + s = b, s ∈ K`.

use std::panic::{catch_unwind, AssertUnwindSafe};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT,
    SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use super::problem::{SdpProblem, SdpSolution, SdpStatus, FEASIBILITY_TOL};
use crate::linalg;

/// Anything that can solve an [`SdpProblem`]. Implementations must be
/// deterministic and must not share mutable state between calls.
pub trait SdpBackend: Send + Sync {
    fn solve(&self, problem: &SdpProblem) -> SdpSolution;
}

#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
    pub tol_gap: f64,
    pub tol_feas: f64,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        ClarabelBackend {
            max_iter: 200,
            tol_gap: 1e-9,
            tol_feas: 1e-9,
        }
    }
}

/// Upper triangle, column-major, off-diagonals scaled by sqrt(2).
fn svec_into(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push((m[(i, j)] + m[(j, i)]) * std::f64::consts::FRAC_1_SQRT_2);
            }
        }
    }
}

struct ConicForm {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    q: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

fn conic_form(problem: &SdpProblem) -> ConicForm {
    let n = problem.scalar_count();
    let mut rows_i = Vec::new();
    let mut cols_j = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();

    let (scalars, blocks): (Vec<_>, Vec<_>) = problem
        .constraints()
        .iter()
        .partition(|c| c.expr.nrows() == 1);

    if !scalars.is_empty() {
        for c in &scalars {
            let row = b.len();
            b.push(c.expr.constant_part()[(0, 0)]);
            for (k, g) in c.expr.terms() {
                rows_i.push(row);
                cols_j.push(k);
                vals.push(-g[(0, 0)]);
            }
        }
        cones.push(NonnegativeConeT(scalars.len()));
    }
    let mut buf = Vec::new();
    for c in &blocks {
        let row0 = b.len();
        svec_into(c.expr.constant_part(), &mut b);
        for (k, g) in c.expr.terms() {
            buf.clear();
            svec_into(g, &mut buf);
            for (r, v) in buf.iter().enumerate() {
                if *v != 0.0 {
                    rows_i.push(row0 + r);
                    cols_j.push(k);
                    vals.push(-v);
                }
            }
        }
        cones.push(PSDTriangleConeT(c.expr.nrows()));
    }

    let mut q = vec![0.0; n];
    if let Some(obj) = problem.objective() {
        for (k, g) in obj.terms() {
            q[k] = g[(0, 0)];
        }
    }
    let a = CscMatrix::new_from_triplets(b.len(), n, rows_i, cols_j, vals);
    ConicForm { a, b, q, cones }
}

impl ClarabelBackend {
    fn solve_inner(&self, problem: &SdpProblem) -> SdpSolution {
        let n = problem.scalar_count();
        if problem.constraints().is_empty() && problem.objective().is_some_and(|o| !o.is_constant())
        {
            return SdpSolution::failed(
                SdpStatus::Error,
                "unconstrained problem with a non-constant objective",
            );
        }
        if n == 0 {
            return evaluate(problem, &[], SolverStatus::Solved, "no decision variables");
        }
        let form = conic_form(problem);
        let settings = match DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol_gap)
            .tol_gap_rel(self.tol_gap)
            .tol_feas(self.tol_feas)
            .build()
        {
            Ok(s) => s,
            Err(e) => {
                return SdpSolution::failed(SdpStatus::Error, format!("solver settings: {e}"))
            }
        };
        let p = CscMatrix::zeros((n, n));
        let mut solver =
            match DefaultSolver::new(&p, &form.q, &form.a, &form.b, &form.cones, settings) {
                Ok(s) => s,
                Err(e) => {
                    return SdpSolution::failed(SdpStatus::Error, format!("solver setup: {e}"))
                }
            };
        solver.solve();
        let status = solver.solution.status;
        evaluate(problem, &solver.solution.x, status, &format!("{status:?}"))
    }
}

fn evaluate(problem: &SdpProblem, x: &[f64], status: SolverStatus, message: &str) -> SdpSolution {
    let status = match status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return SdpSolution::failed(SdpStatus::Infeasible, message);
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return SdpSolution::failed(
                SdpStatus::Error,
                format!("{message}: objective unbounded below"),
            );
        }
        SolverStatus::Solved => SdpStatus::Feasible,
        SolverStatus::AlmostSolved
        | SolverStatus::MaxIterations
        | SolverStatus::MaxTime
        | SolverStatus::InsufficientProgress
        | SolverStatus::NumericalError => SdpStatus::Inaccurate,
        SolverStatus::Unsolved | SolverStatus::CallbackTerminated => {
            return SdpSolution::failed(SdpStatus::Error, message);
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return SdpSolution::failed(SdpStatus::Error, format!("{message}: non-finite iterate"));
    }
    let violation = problem.min_constraint_eigenvalue(x);
    let objective_value = problem.objective().map(|o| o.eval(x)[(0, 0)]);
    let status = match status {
        SdpStatus::Feasible if violation < -FEASIBILITY_TOL => {
            if problem.scalar_count() == 0 {
                SdpStatus::Infeasible
            } else {
                SdpStatus::Inaccurate
            }
        }
        s => s,
    };
    SdpSolution {
        status,
        assignment: problem.unpack(x),
        objective_value,
        max_constraint_violation: violation,
        message: message.to_owned(),
    }
}

impl SdpBackend for ClarabelBackend {
    fn solve(&self, problem: &SdpProblem) -> SdpSolution {
        match catch_unwind(AssertUnwindSafe(|| self.solve_inner(problem))) {
            Ok(sol) => sol,
            Err(_) => SdpSolution::failed(SdpStatus::Error, "backend panicked"),
        }
    }
}

/// Solves with the default backend.
pub fn sdp_solve(problem: &SdpProblem) -> SdpSolution {
    ClarabelBackend::default().solve(problem)
}

/// Eigenvalue of the most violated constraint, for diagnostics.
pub fn constraint_report(problem: &SdpProblem, sol: &SdpSolution) -> Vec<(String, f64)> {
    let Some(x) = pack(problem, sol) else {
        return Vec::new();
    };
    problem
        .constraints()
        .iter()
        .map(|c| (c.name.clone(), linalg::min_eig(&c.expr.eval(&x))))
        .collect()
}

/// Inverse of [`SdpProblem::unpack`].
pub fn pack(problem: &SdpProblem, sol: &SdpSolution) -> Option<Vec<f64>> {
    let mut x = Vec::with_capacity(problem.scalar_count());
    for v in problem.variables() {
        let m = sol.assignment.get(&v.name)?;
        match v.shape {
            super::problem::VarShape::Symmetric(n) => {
                for j in 0..n {
                    for i in 0..=j {
                        x.push(m[(i, j)]);
                    }
                }
            }
            super::problem::VarShape::Full(r, c) => {
                for j in 0..c {
                    for i in 0..r {
                        x.push(m[(i, j)]);
                    }
                }
            }
        }
    }
    Some(x)
}
