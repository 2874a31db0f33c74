//! Affine matrix expressions, SDP problem descriptions, the block LMIs of
//! analysis and synthesis, and the solver backend.

mod backend;
mod blocks;
mod expr;
mod problem;

pub use backend::{constraint_report, pack, sdp_solve, ClarabelBackend, SdpBackend};
pub use blocks::{
    build_containment_jl, build_containment_q, build_e1, build_e2bf, build_f, build_fbf, build_s,
    build_sbf, EtaExprs,
};
pub use expr::{scalar_times, AffineExpr};
pub use problem::{
    ConstraintDump, ExprDump, ProblemDump, PsdConstraint, SdpProblem, SdpSolution, SdpStatus,
    TermDump, VarDump, VarShape, Variable, FEASIBILITY_TOL,
};
