//! JSON shapes of everything the CLI writes.

use std::path::Path;

use safeloop_core::analysis::{Certificate, GridPoint, PointStatus};
use safeloop_core::serial::RowMatrix;
use safeloop_core::synthesis::{Claim, FullCertificate, Synthesis};
use safeloop_core::sysmodel::SecondaryController;
use safeloop_core::Ellipsoid;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictTag {
    Certified,
    Infeasible,
    Uncertified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetDump {
    pub shape: RowMatrix,
    pub center: Vec<f64>,
}

impl From<&Ellipsoid> for SetDump {
    fn from(e: &Ellipsoid) -> Self {
        SetDump {
            shape: RowMatrix(e.shape().clone()),
            center: e.center().iter().copied().collect(),
        }
    }
}

impl SetDump {
    pub fn to_ellipsoid(&self) -> Result<Ellipsoid, CliError> {
        let c = nalgebra::DVector::from_column_slice(&self.center);
        Ok(Ellipsoid::new(self.shape.0.clone(), c)?)
    }
}

/// Invariant set on `ζ₁`, as drawn by `plot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantDump {
    pub label: String,
    pub shape: RowMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDump {
    pub alpha: f64,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub status: String,
    pub objective: Option<f64>,
}

impl From<&GridPoint> for PointDump {
    fn from(p: &GridPoint) -> Self {
        let (status, objective) = match &p.status {
            PointStatus::Feasible { objective } => ("feasible".to_owned(), Some(*objective)),
            PointStatus::LmiInfeasible => ("lmi-infeasible".to_owned(), None),
            PointStatus::ContainmentFails => ("containment-fails".to_owned(), None),
            PointStatus::Degenerate { residual } => (
                format!("degenerate (normalized residual {residual:e})"),
                None,
            ),
            PointStatus::SolverFailed(m) => (format!("solver-failed: {m}"), None),
        };
        PointDump {
            alpha: p.alpha,
            beta: p.beta,
            delta: p.delta,
            status,
            objective,
        }
    }
}

pub fn points(points: &[GridPoint]) -> Vec<PointDump> {
    points.iter().map(PointDump::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateDump {
    pub q: RowMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub delta: Option<f64>,
    pub r_a: RowMatrix,
    pub contained: bool,
    pub tau: Option<f64>,
    pub objective: Option<f64>,
    pub lmi_residual: f64,
}

impl CertificateDump {
    pub fn new(c: &Certificate, lmi_residual: f64) -> Self {
        CertificateDump {
            q: RowMatrix(c.q.clone()),
            alpha: c.alpha,
            beta: c.beta,
            delta: c.delta,
            r_a: RowMatrix(c.r_a.clone()),
            contained: c.contained,
            tau: c.tau,
            objective: c.objective,
            lmi_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub command: String,
    pub verdict: VerdictTag,
    pub reason: Option<String>,
    pub safe_set: SetDump,
    pub invariant: Option<InvariantDump>,
    pub certificate: Option<CertificateDump>,
    /// Assessment only: `Tr[R_a*]` and the determinant bound `Tr^(n/2)/n^(n/2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_attack: Option<WorstAttackDump>,
    pub grid: Vec<PointDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstAttackDump {
    pub r_a: RowMatrix,
    pub trace: f64,
    pub volume_bound: f64,
    pub sqrt_det: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisDump {
    pub x: RowMatrix,
    pub y: RowMatrix,
    pub a_bf: RowMatrix,
    pub b_bf: RowMatrix,
    pub c_bf: RowMatrix,
    pub d_bf: RowMatrix,
    pub r_a: RowMatrix,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub objective: Option<f64>,
    pub det_x: f64,
    pub residuals: Vec<(String, f64)>,
    pub cond_i_minus_xy: f64,
    pub resolved: bool,
}

impl From<&Synthesis> for SynthesisDump {
    fn from(s: &Synthesis) -> Self {
        let v = &s.vars;
        SynthesisDump {
            x: RowMatrix(v.x.clone()),
            y: RowMatrix(v.y.clone()),
            a_bf: RowMatrix(v.a.clone()),
            b_bf: RowMatrix(v.b.clone()),
            c_bf: RowMatrix(v.c.clone()),
            d_bf: RowMatrix(v.d.clone()),
            r_a: RowMatrix(s.r_a.clone()),
            alpha: s.alpha,
            beta: s.beta,
            delta: s.delta,
            objective: s.objective,
            det_x: v.x.determinant(),
            residuals: s.residuals.clone(),
            cond_i_minus_xy: s.cond_i_minus_xy,
            resolved: s.resolved,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullCertificateDump {
    pub min_eig_p: f64,
    pub lmi_residual: f64,
    pub projection_mismatch: Option<f64>,
    pub contained: bool,
    pub tau: Option<f64>,
}

impl From<&FullCertificate> for FullCertificateDump {
    fn from(c: &FullCertificate) -> Self {
        FullCertificateDump {
            min_eig_p: c.min_eig_p,
            lmi_residual: c.lmi_residual,
            projection_mismatch: c.projection_mismatch,
            contained: c.contained,
            tau: c.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub command: String,
    pub objective: String,
    pub verdict: VerdictTag,
    pub reason: Option<String>,
    pub safe_set: SetDump,
    pub invariant: Option<InvariantDump>,
    pub synthesis: Option<SynthesisDump>,
    pub certificate: Option<FullCertificateDump>,
    pub controller_file: Option<String>,
    pub grid: Vec<PointDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimDump {
    pub p: RowMatrix,
    pub r_a: RowMatrix,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<RowMatrix>,
}

/// Secondary controller plus the claim `certify` rechecks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub a_2: RowMatrix,
    pub b_2: RowMatrix,
    pub c_2: RowMatrix,
    pub d_2: RowMatrix,
    pub claim: ClaimDump,
}

impl ControllerFile {
    pub fn new(sc: &SecondaryController, claim: &Claim) -> Self {
        ControllerFile {
            a_2: RowMatrix(sc.a.clone()),
            b_2: RowMatrix(sc.b.clone()),
            c_2: RowMatrix(sc.c.clone()),
            d_2: RowMatrix(sc.d.clone()),
            claim: ClaimDump {
                p: RowMatrix(claim.p.clone()),
                r_a: RowMatrix(claim.r_a.clone()),
                alpha: claim.alpha,
                beta: claim.beta,
                x: claim.x.clone().map(RowMatrix),
            },
        }
    }

    pub fn controller(&self) -> Result<SecondaryController, CliError> {
        SecondaryController::new(
            self.a_2.0.clone(),
            self.b_2.0.clone(),
            self.c_2.0.clone(),
            self.d_2.0.clone(),
        )
        .map_err(|e| CliError::field("controller", e))
    }

    pub fn claim(&self) -> Claim {
        let c = &self.claim;
        Claim {
            p: c.p.0.clone(),
            r_a: c.r_a.0.clone(),
            alpha: c.alpha,
            beta: c.beta,
            x: c.x.as_ref().map(|m| m.0.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDump {
    pub file: String,
    pub policy: String,
    pub seed: u64,
    pub initial_state: Vec<f64>,
    pub max_safe_form: f64,
    pub max_invariant_form: Option<f64>,
    pub first_safe_violation: Option<f64>,
    pub first_invariant_violation: Option<f64>,
    pub max_attack_form: Option<f64>,
    pub safe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub command: String,
    /// `controller`, `primary-invariant`, or `none`.
    pub lyapunov_source: String,
    /// Recheck of the controller file's claim, when one was given.
    pub certified: Option<bool>,
    pub certify_error: Option<String>,
    pub dt: f64,
    pub runs: Vec<RunDump>,
    pub all_safe: bool,
}

/// Fields `plot` reads from any report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlotInput {
    pub safe_set: Option<SetDump>,
    pub invariant: Option<InvariantDump>,
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
