use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::expr::AffineExpr;
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::serial::RowMatrix;

/// Feasibility threshold on the most negative constraint eigenvalue.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarShape {
    Symmetric(usize),
    Full(usize, usize),
}

impl VarShape {
    pub fn scalar_count(&self) -> usize {
        match *self {
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            VarShape::Full(r, c) => r * c,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Symmetric(n) => (n, n),
            VarShape::Full(r, c) => (r, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub shape: VarShape,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub name: String,
    pub expr: AffineExpr,
}

/// Matrix variables, affine constraints required PSD, and an optional linear
/// objective to minimize.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SdpProblem {
    vars: Vec<Variable>,
    scalars: usize,
    constraints: Vec<PsdConstraint>,
    objective: Option<AffineExpr>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[PsdConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> Option<&AffineExpr> {
        self.objective.as_ref()
    }

    /// Number of scalar decision entries.
    pub fn scalar_count(&self) -> usize {
        self.scalars
    }

    /// Declares a variable and returns it as an expression.
    pub fn add_variable(&mut self, name: &str, shape: VarShape) -> Result<AffineExpr> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(Error::InvalidArgument(format!(
                "variable `{name}` declared twice"
            )));
        }
        let var = Variable {
            name: name.to_owned(),
            shape,
            offset: self.scalars,
        };
        self.scalars += shape.scalar_count();
        let expr = Self::var_expr(&var);
        self.vars.push(var);
        Ok(expr)
    }

    pub fn add_symmetric(&mut self, name: &str, n: usize) -> Result<AffineExpr> {
        self.add_variable(name, VarShape::Symmetric(n))
    }

    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<AffineExpr> {
        self.add_variable(name, VarShape::Full(rows, cols))
    }

    pub fn add_scalar(&mut self, name: &str) -> Result<AffineExpr> {
        self.add_variable(name, VarShape::Full(1, 1))
    }

    fn var_expr(var: &Variable) -> AffineExpr {
        let (r, c) = var.shape.dims();
        let mut terms = BTreeMap::new();
        let mut k = var.offset;
        match var.shape {
            VarShape::Symmetric(n) => {
                for j in 0..n {
                    for i in 0..=j {
                        let mut g = DMatrix::zeros(n, n);
                        g[(i, j)] = 1.0;
                        g[(j, i)] = 1.0;
                        terms.insert(k, g);
                        k += 1;
                    }
                }
            }
            VarShape::Full(..) => {
                for j in 0..c {
                    for i in 0..r {
                        let mut g = DMatrix::zeros(r, c);
                        g[(i, j)] = 1.0;
                        terms.insert(k, g);
                        k += 1;
                    }
                }
            }
        }
        AffineExpr::from_parts(DMatrix::zeros(r, c), terms)
    }

    fn check_indices(&self, e: &AffineExpr, what: &str) -> Result<()> {
        if let Some(k) = e.max_index() {
            if k >= self.scalars {
                return Err(Error::InvalidArgument(format!(
                    "{what} references decision entry {k} but only {} are declared",
                    self.scalars
                )));
            }
        }
        Ok(())
    }

    /// Requires `expr ⪰ 0`. The expression must be square and symmetric in
    /// every coefficient.
    pub fn require_psd(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        if expr.nrows() != expr.ncols() || expr.nrows() == 0 {
            return dim_err(format!(
                "constraint `{name}` is {}x{}, expected square",
                expr.nrows(),
                expr.ncols()
            ));
        }
        let asym = expr.asymmetry();
        if asym > linalg::SYMMETRY_TOL * (1.0 + expr.magnitude()) {
            return Err(Error::NotSymmetric {
                what: format!("constraint `{name}`"),
                asymmetry: asym,
            });
        }
        self.check_indices(&expr, name)?;
        self.constraints.push(PsdConstraint {
            name: name.to_owned(),
            expr,
        });
        Ok(())
    }

    /// Requires `expr ⪯ 0`.
    pub fn require_nsd(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.require_psd(name, -expr)
    }

    pub fn minimize(&mut self, objective: AffineExpr) -> Result<()> {
        if objective.shape() != (1, 1) {
            return dim_err("objective must be a 1x1 expression");
        }
        self.check_indices(&objective, "objective")?;
        self.objective = Some(objective);
        Ok(())
    }

    pub fn maximize(&mut self, objective: AffineExpr) -> Result<()> {
        self.minimize(-objective)
    }

    /// Rebuilds every variable's matrix value from a decision vector.
    pub fn unpack(&self, x: &[f64]) -> BTreeMap<String, DMatrix<f64>> {
        self.vars
            .iter()
            .map(|v| (v.name.clone(), Self::var_expr(v).eval(x)))
            .collect()
    }

    /// Most negative eigenvalue across constraints at `x` (positive when
    /// every constraint is strictly satisfied).
    pub fn min_constraint_eigenvalue(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| linalg::min_eig(&c.expr.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Structured, backend-independent dump for replay.
    pub fn to_dump(&self) -> ProblemDump {
        let expr_dump = |e: &AffineExpr| ExprDump {
            constant: RowMatrix(e.constant_part().clone()),
            terms: e
                .terms()
                .map(|(k, g)| TermDump {
                    index: k,
                    coefficient: RowMatrix(g.clone()),
                })
                .collect(),
        };
        ProblemDump {
            variables: self
                .vars
                .iter()
                .map(|v| VarDump {
                    name: v.name.clone(),
                    shape: v.shape,
                    offset: v.offset,
                })
                .collect(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintDump {
                    name: c.name.clone(),
                    psd: expr_dump(&c.expr),
                })
                .collect(),
            minimize: self.objective.as_ref().map(expr_dump),
        }
    }

    pub fn from_dump(dump: &ProblemDump) -> Result<Self> {
        let mut p = SdpProblem::new();
        for v in &dump.variables {
            if v.offset != p.scalars {
                return Err(Error::InvalidArgument(format!(
                    "variable `{}` has inconsistent offset",
                    v.name
                )));
            }
            p.add_variable(&v.name, v.shape)?;
        }
        let rebuild = |e: &ExprDump| -> Result<AffineExpr> {
            let shape = e.constant.0.shape();
            let mut terms = BTreeMap::new();
            for t in &e.terms {
                if t.coefficient.0.shape() != shape {
                    return dim_err(format!(
                        "term {} does not match the constant's shape",
                        t.index
                    ));
                }
                terms.insert(t.index, t.coefficient.0.clone());
            }
            Ok(AffineExpr::from_parts(e.constant.0.clone(), terms))
        };
        for c in &dump.constraints {
            p.require_psd(&c.name, rebuild(&c.psd)?)?;
        }
        if let Some(o) = &dump.minimize {
            p.minimize(rebuild(o)?)?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDump {
    pub variables: Vec<VarDump>,
    pub constraints: Vec<ConstraintDump>,
    pub minimize: Option<ExprDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarDump {
    pub name: String,
    pub shape: VarShape,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDump {
    pub name: String,
    pub psd: ExprDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprDump {
    pub constant: RowMatrix,
    pub terms: Vec<TermDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDump {
    pub index: usize,
    pub coefficient: RowMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Feasible,
    Infeasible,
    Inaccurate,
    Error,
}

impl fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SdpStatus::Feasible => "feasible",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::Inaccurate => "inaccurate",
            SdpStatus::Error => "error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub assignment: BTreeMap<String, DMatrix<f64>>,
    pub objective_value: Option<f64>,
    /// Most negative eigenvalue across all constraints at the returned point.
    pub max_constraint_violation: f64,
    /// Backend status text, solver messages, or the failure reason.
    pub message: String,
}

impl SdpSolution {
    pub fn failed(status: SdpStatus, message: impl Into<String>) -> Self {
        SdpSolution {
            status,
            assignment: BTreeMap::new(),
            objective_value: None,
            max_constraint_violation: f64::NEG_INFINITY,
            message: message.into(),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == SdpStatus::Feasible
    }

    /// Feasible, or an inaccurate point that still meets every constraint to
    /// [`FEASIBILITY_TOL`].
    pub fn is_usable(&self) -> bool {
        match self.status {
            SdpStatus::Feasible => true,
            SdpStatus::Inaccurate => self.max_constraint_violation >= -FEASIBILITY_TOL,
            _ => false,
        }
    }

    pub fn value(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.assignment
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("no value for variable `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.value(name).map(|m| m[(0, 0)])
    }
}
