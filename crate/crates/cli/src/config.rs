//! Problem files: UTF-8 JSON with matrices as row-major nested arrays.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use safeloop_core::analysis::ScalarGrid;
use safeloop_core::serial::RowMatrix;
use safeloop_core::sim::AttackPolicy;
use safeloop_core::synthesis::SynthesisGoal;
use safeloop_core::sysmodel::{hat_matrices, HatSystem, Plant, PrimaryController, Selection};
use safeloop_core::Ellipsoid;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub system: SystemSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionSpec>,
    pub attack: AttackSpec,
    pub safe_set: SafeSetSpec,
    #[serde(default)]
    pub scalars: ScalarsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
}

/// Either `plant` + `primary` (with `selection`), or `hat` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary: Option<PrimarySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hat: Option<HatSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a_p: RowMatrix,
    pub b_p: RowMatrix,
    pub c_p: RowMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimarySpec {
    pub a_1: RowMatrix,
    pub b_1: RowMatrix,
    pub c_1: RowMatrix,
    pub d_1: RowMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HatSpec {
    pub a_hat: RowMatrix,
    pub b_hat: RowMatrix,
    pub c_hat: RowMatrix,
    pub b1_cal: RowMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub e_u: RowMatrix,
    pub c_s: RowMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssessTag {
    Assess,
}

/// A fixed attack shape, or the string `"assess"` to optimize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttackSpec {
    Assess(AssessTag),
    Fixed { r_a: RowMatrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeSetSpec {
    pub shape: RowMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridTag {
    Grid,
}

/// `"grid"` (the default log grid), one fixed point, or explicit lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarsSpec {
    Grid(GridTag),
    Fixed { alpha: f64, beta: f64, delta: f64 },
    Lists(GridFile),
}

impl Default for ScalarsSpec {
    fn default() -> Self {
        ScalarsSpec::Grid(GridTag::Grid)
    }
}

/// Contents of a `--grid` file; missing lists fall back to the default grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

impl GridFile {
    pub fn to_grid(&self) -> Result<ScalarGrid, CliError> {
        let d = ScalarGrid::default();
        let pick =
            |v: &Option<Vec<f64>>, fallback: &[f64]| v.clone().unwrap_or_else(|| fallback.to_vec());
        ScalarGrid::new(
            pick(&self.alphas, d.alphas()),
            pick(&self.betas, d.betas()),
            pick(&self.deltas, d.deltas()),
        )
        .map_err(|e| CliError::field("scalars", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    #[default]
    Feasible,
    MinTraceX,
    MinTraceRa,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    #[serde(default)]
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_order: Option<usize>,
    /// Factor `M` of `I - XY = MNᵀ`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<RowMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicySpec {
    Zero,
    Constant { direction: Vec<f64> },
    Random { dwell: f64 },
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub policies: Vec<PolicySpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Explicit initial states on the full closed-loop state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_states: Option<Vec<Vec<f64>>>,
    /// Random starting points on the invariant-set boundary per policy and
    /// seed, used when no explicit states are given.
    #[serde(default = "default_boundary_starts")]
    pub boundary_starts: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_boundary_starts() -> usize {
    1
}

/// Reads and deserializes a JSON file, reporting the failing field path and
/// position.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_json(&text).map_err(|msg| CliError::Config {
        file: path.display().to_string(),
        msg,
    })
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            inner.to_string()
        } else {
            format!("field `{path}`: {inner}")
        }
    })
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: ProblemConfig = read_json(path)?;
        cfg.validate().map_err(|e| match e {
            CliError::Field { field, msg } => CliError::Config {
                file: path.display().to_string(),
                msg: format!("field `{field}`: {msg}"),
            },
            other => other,
        })?;
        Ok(cfg)
    }

    /// Runs every dimension check the model types perform.
    pub fn validate(&self) -> Result<(), CliError> {
        let hat = self.hat()?;
        let safe = self.safe_set()?;
        if safe.dim() != hat.n1() {
            return Err(CliError::field(
                "safe_set.shape",
                format!(
                    "safe set has dimension {} but zeta_1 has {} states",
                    safe.dim(),
                    hat.n1()
                ),
            ));
        }
        if let Some(r_a) = self.fixed_attack() {
            if r_a.shape() != (hat.n_a(), hat.n_a()) {
                return Err(CliError::field(
                    "attack.r_a",
                    format!(
                        "R_a is {}x{} but there are {} attack channels",
                        r_a.nrows(),
                        r_a.ncols(),
                        hat.n_a()
                    ),
                ));
            }
            safeloop_core::linalg::require_pd(r_a, "R_a")
                .map_err(|e| CliError::field("attack.r_a", e))?;
        }
        self.grid()?;
        if let Some(m) = self.synthesis.as_ref().and_then(|s| s.m.as_ref()) {
            if m.0.shape() != (hat.n1(), hat.n1()) {
                return Err(CliError::field(
                    "synthesis.m",
                    format!("M must be {0}x{0}", hat.n1()),
                ));
            }
        }
        if let Some(sim) = &self.simulation {
            if sim.horizon.is_nan() || sim.horizon <= 0.0 {
                return Err(CliError::field("simulation.horizon", "must be positive"));
            }
            if sim.policies.is_empty() {
                return Err(CliError::field(
                    "simulation.policies",
                    "at least one policy is required",
                ));
            }
            for p in &sim.policies {
                match p {
                    PolicySpec::Constant { direction } if direction.len() != hat.n_a() => {
                        return Err(CliError::field(
                            "simulation.policies",
                            format!(
                                "constant direction has {} entries, expected {}",
                                direction.len(),
                                hat.n_a()
                            ),
                        ));
                    }
                    PolicySpec::Random { dwell } if dwell.is_nan() || *dwell <= 0.0 => {
                        return Err(CliError::field(
                            "simulation.policies",
                            "random dwell must be positive",
                        ));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn hat(&self) -> Result<HatSystem, CliError> {
        let s = &self.system;
        match (&s.hat, &s.plant, &s.primary) {
            (Some(h), None, None) => {
                if self.selection.is_some() {
                    return Err(CliError::field(
                        "selection",
                        "not used with `system.hat`; fold it into b_hat and c_hat",
                    ));
                }
                HatSystem::new(
                    h.a_hat.0.clone(),
                    h.b_hat.0.clone(),
                    h.c_hat.0.clone(),
                    h.b1_cal.0.clone(),
                )
                .map_err(|e| CliError::field("system.hat", e))
            }
            (None, Some(p), Some(c)) => {
                let plant = Plant::new(p.a_p.0.clone(), p.b_p.0.clone(), p.c_p.0.clone())
                    .map_err(|e| CliError::field("system.plant", e))?;
                let (b_1, c_1) = static_primary_shapes(c, &plant);
                let primary = PrimaryController::new(c.a_1.0.clone(), b_1, c_1, c.d_1.0.clone())
                    .map_err(|e| CliError::field("system.primary", e))?;
                let sel = self
                    .selection
                    .as_ref()
                    .ok_or_else(|| CliError::field("selection", "required with `system.plant`"))?;
                let sel = Selection::new(sel.e_u.0.clone(), sel.c_s.0.clone())
                    .map_err(|e| CliError::field("selection", e))?;
                hat_matrices(&plant, &primary, &sel).map_err(|e| CliError::field("system", e))
            }
            (None, Some(_), None) => Err(CliError::field(
                "system.primary",
                "missing; required with `system.plant`",
            )),
            (None, None, Some(_)) => Err(CliError::field(
                "system.plant",
                "missing; required with `system.primary`",
            )),
            _ => Err(CliError::field(
                "system",
                "give either `hat` or `plant` + `primary`",
            )),
        }
    }

    pub fn safe_set(&self) -> Result<Ellipsoid, CliError> {
        let shape = self.safe_set.shape.0.clone();
        let n = shape.nrows();
        let center = match &self.safe_set.center {
            Some(c) => DVector::from_column_slice(c),
            None => DVector::zeros(n),
        };
        Ellipsoid::new(shape, center).map_err(|e| CliError::field("safe_set", e))
    }

    pub fn fixed_attack(&self) -> Option<&DMatrix<f64>> {
        match &self.attack {
            AttackSpec::Fixed { r_a } => Some(&r_a.0),
            AttackSpec::Assess(_) => None,
        }
    }

    pub fn require_attack(&self, command: &str) -> Result<&DMatrix<f64>, CliError> {
        self.fixed_attack().ok_or_else(|| {
            CliError::field(
                "attack",
                format!("`{command}` needs a fixed `r_a`, not \"assess\""),
            )
        })
    }

    pub fn grid(&self) -> Result<ScalarGrid, CliError> {
        match &self.scalars {
            ScalarsSpec::Grid(_) => Ok(ScalarGrid::default()),
            ScalarsSpec::Fixed { alpha, beta, delta } => {
                ScalarGrid::single(*alpha, *beta, *delta).map_err(|e| CliError::field("scalars", e))
            }
            ScalarsSpec::Lists(g) => g.to_grid(),
        }
    }

    pub fn synthesis_goal(&self) -> Result<SynthesisGoal, CliError> {
        let objective = self
            .synthesis
            .as_ref()
            .map(|s| s.objective)
            .unwrap_or_default();
        Ok(match objective {
            Objective::Feasible => SynthesisGoal::Feasible {
                r_a: self.require_attack("synthesize")?.clone(),
            },
            Objective::MinTraceX => SynthesisGoal::MinTraceX {
                r_a: self.require_attack("synthesize")?.clone(),
            },
            Objective::MinTraceRa => {
                if self.fixed_attack().is_some() {
                    return Err(CliError::field(
                        "attack",
                        "objective min-trace-ra needs attack \"assess\"",
                    ));
                }
                SynthesisGoal::MinTraceRa
            }
        })
    }
}

/// An order-zero primary controller has `B_1` of shape 0 x n_y and `C_1` of
/// shape n_u x 0, which nested arrays cannot spell; empty entries are
/// reshaped when `A_1` is empty.
fn static_primary_shapes(c: &PrimarySpec, plant: &Plant) -> (DMatrix<f64>, DMatrix<f64>) {
    let (b, cc) = (&c.b_1.0, &c.c_1.0);
    if c.a_1.0.is_empty() && b.is_empty() && cc.is_empty() {
        (
            DMatrix::zeros(0, plant.outputs()),
            DMatrix::zeros(plant.inputs(), 0),
        )
    } else {
        (b.clone(), cc.clone())
    }
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Zero => "zero",
            PolicySpec::Constant { .. } => "constant",
            PolicySpec::Random { .. } => "random",
            PolicySpec::Greedy => "greedy",
        }
    }

    pub fn to_policy(&self, seed: u64, p: Option<&DMatrix<f64>>) -> Result<AttackPolicy, CliError> {
        Ok(match self {
            PolicySpec::Zero => AttackPolicy::Zero,
            PolicySpec::Constant { direction } => AttackPolicy::ConstantBoundary {
                direction: DVector::from_column_slice(direction),
            },
            PolicySpec::Random { dwell } => AttackPolicy::PiecewiseRandom {
                dwell: *dwell,
                seed,
            },
            PolicySpec::Greedy => AttackPolicy::GreedyWorst {
                p: p.cloned().ok_or_else(|| {
                    CliError::field(
                        "simulation.policies",
                        "greedy needs a Lyapunov matrix; none was found",
                    )
                })?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALAR: &str = r#"{
        "system": {"hat": {"a_hat": [[-1]], "b_hat": [[0]], "c_hat": [[1]], "b1_cal": [[1]]}},
        "attack": {"r_a": [[1]]},
        "safe_set": {"shape": [[0.25]]}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg: ProblemConfig = parse_json(SCALAR).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.scalars, ScalarsSpec::Grid(GridTag::Grid));
        assert_eq!(cfg.fixed_attack().unwrap()[(0, 0)], 1.0);
        assert_eq!(cfg.grid().unwrap(), ScalarGrid::default());
    }

    #[test]
    fn round_trips_canonical_form() {
        let cfg: ProblemConfig = parse_json(SCALAR).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ProblemConfig = parse_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(serde_json::to_string_pretty(&back).unwrap(), text);
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{
            "system": {"plant": {"a_p": [[0]], "b_p": [[1]]}, "primary": {"a_1": [], "b_1": [], "c_1": [], "d_1": [[0]]}},
            "attack": "assess",
            "safe_set": {"shape": [[1]]}
        }"#;
        let err = parse_json::<ProblemConfig>(text).unwrap_err();
        assert!(err.contains("system.plant") && err.contains("c_p"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn scalar_forms() {
        let fixed: ScalarsSpec =
            parse_json(r#"{"alpha": 0.25, "beta": 0.25, "delta": 0.99}"#).unwrap();
        assert_eq!(
            fixed,
            ScalarsSpec::Fixed {
                alpha: 0.25,
                beta: 0.25,
                delta: 0.99
            }
        );
        let lists: ScalarsSpec = parse_json(r#"{"alphas": [1.0]}"#).unwrap();
        assert!(matches!(lists, ScalarsSpec::Lists(_)));
        let attack: AttackSpec = parse_json(r#""assess""#).unwrap();
        assert_eq!(attack, AttackSpec::Assess(AssessTag::Assess));
    }

    #[test]
    fn dimension_errors_name_fields() {
        let mut cfg: ProblemConfig = parse_json(SCALAR).unwrap();
        cfg.safe_set.shape = RowMatrix(DMatrix::identity(2, 2));
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("safe_set.shape"), "{err}");
        cfg.safe_set.shape = RowMatrix(DMatrix::identity(1, 1));
        cfg.attack = AttackSpec::Fixed {
            r_a: RowMatrix(DMatrix::identity(2, 2)),
        };
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("attack.r_a"));
    }

    #[test]
    fn policies_parse() {
        let p: Vec<PolicySpec> =
            parse_json(r#"[{"kind": "zero"}, {"kind": "random", "dwell": 0.5}, {"kind": "greedy"}, {"kind": "constant", "direction": [1]}]"#)
                .unwrap();
        assert_eq!(
            p.iter().map(PolicySpec::name).collect::<Vec<_>>(),
            ["zero", "random", "greedy", "constant"]
        );
        assert!(p[2].to_policy(0, None).is_err());
    }
}
