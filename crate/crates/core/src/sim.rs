//! Fixed-step RK4 integration of `ζ̇ = 𝒜ζ + ℬa` under admissible attacks,
//! and trajectory safety checks.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ellipsoid::Ellipsoid;
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::sysmodel::ClosedLoop;

/// Slack allowed on `aᵀR_a a ≤ 1` for emitted attack samples.
pub const ADMISSIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Attack held over `[times[k], times[k+1])`; the last entry repeats the
    /// final held value.
    pub attacks: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectories hold at least the initial state")
    }

    /// CSV with header `t,zeta_1..zeta_k,a_1..a_m` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let k = self.states.first().map_or(0, |s| s.len());
        let m = self.attacks.first().map_or(0, |a| a.len());
        let mut header = vec!["t".to_owned()];
        header.extend((1..=k).map(|i| format!("zeta_{i}")));
        header.extend((1..=m).map(|i| format!("a_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for ((t, s), a) in self.times.iter().zip(&self.states).zip(&self.attacks) {
            let row: Vec<String> = std::iter::once(*t)
                .chain(s.iter().copied())
                .chain(a.iter().copied())
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// How the adversary picks `a(t)`. Every nonzero policy stays on the
/// boundary `aᵀR_a a = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackPolicy {
    Zero,
    /// `direction` scaled onto the boundary.
    ConstantBoundary {
        direction: DVector<f64>,
    },
    /// A fresh random boundary point every `dwell` seconds.
    PiecewiseRandom {
        dwell: f64,
        seed: u64,
    },
    /// Maximizes `d/dt ζᵀPζ`: `a = R_a⁻¹ℬᵀPζ / √(ζᵀPℬR_a⁻¹ℬᵀPζ)`.
    GreedyWorst {
        p: DMatrix<f64>,
    },
}

fn onto_boundary(v: &DVector<f64>, r_a: &DMatrix<f64>) -> Option<DVector<f64>> {
    let q = v.dot(&(r_a * v));
    (q > 0.0 && q.is_finite()).then(|| v / q.sqrt())
}

struct Attacker<'a> {
    policy: &'a AttackPolicy,
    r_a: &'a DMatrix<f64>,
    r_a_inv: DMatrix<f64>,
    b_cal: &'a DMatrix<f64>,
    rng: ChaCha8Rng,
    held: DVector<f64>,
    next_switch: f64,
    fallback: DVector<f64>,
}

impl<'a> Attacker<'a> {
    fn new(
        policy: &'a AttackPolicy,
        r_a: &'a DMatrix<f64>,
        b_cal: &'a DMatrix<f64>,
    ) -> Result<Self> {
        let n_a = r_a.nrows();
        let seed = match policy {
            AttackPolicy::PiecewiseRandom { dwell, seed } => {
                if dwell.is_nan() || *dwell <= 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "dwell time must be positive, got {dwell}"
                    )));
                }
                *seed
            }
            _ => 0,
        };
        let mut e1 = DVector::zeros(n_a);
        e1[0] = 1.0;
        let fallback = onto_boundary(&e1, r_a).expect("R_a positive definite");
        match policy {
            AttackPolicy::ConstantBoundary { direction } if direction.len() != n_a => {
                return dim_err(format!(
                    "attack direction has {} entries, expected {n_a}",
                    direction.len()
                ));
            }
            AttackPolicy::ConstantBoundary { direction }
                if onto_boundary(direction, r_a).is_none() =>
            {
                return Err(Error::InvalidArgument(
                    "attack direction must be nonzero".into(),
                ));
            }
            _ => {}
        }
        Ok(Attacker {
            policy,
            r_a,
            r_a_inv: linalg::inverse(r_a, "R_a")?,
            b_cal,
            rng: ChaCha8Rng::seed_from_u64(seed),
            held: DVector::zeros(n_a),
            next_switch: 0.0,
            fallback,
        })
    }

    fn sample(&mut self, t: f64, state: &DVector<f64>) -> DVector<f64> {
        match self.policy {
            AttackPolicy::Zero => DVector::zeros(self.r_a.nrows()),
            AttackPolicy::ConstantBoundary { direction } => {
                onto_boundary(direction, self.r_a).expect("checked in new")
            }
            AttackPolicy::PiecewiseRandom { dwell, .. } => {
                if t >= self.next_switch {
                    let n = self.r_a.nrows();
                    loop {
                        let v = DVector::from_fn(n, |_, _| self.rng.gen_range(-1.0..=1.0));
                        if let Some(a) = onto_boundary(&v, self.r_a) {
                            self.held = a;
                            break;
                        }
                    }
                    while self.next_switch <= t {
                        self.next_switch += dwell;
                    }
                }
                self.held.clone()
            }
            AttackPolicy::GreedyWorst { p } => {
                let g = self.b_cal.transpose() * (p * state);
                let dir = &self.r_a_inv * &g;
                let denom = g.dot(&dir);
                if denom > 0.0 && denom.is_finite() {
                    dir / denom.sqrt()
                } else {
                    self.fallback.clone()
                }
            }
        }
    }
}

/// Largest admissible step: `0.1/‖𝒜‖₂`.
pub fn max_step(cl: &ClosedLoop) -> f64 {
    let norm = linalg::spectral_norm(&cl.a_cal);
    if norm > 0.0 {
        0.1 / norm
    } else {
        f64::INFINITY
    }
}

/// `min(1e-3, 0.05/‖𝒜‖₂)`.
pub fn default_step(cl: &ClosedLoop) -> f64 {
    let norm = linalg::spectral_norm(&cl.a_cal);
    if norm > 0.0 {
        (0.05 / norm).min(1e-3)
    } else {
        1e-3
    }
}

/// Classical RK4 with the attack held constant over each step.
pub fn integrate(
    cl: &ClosedLoop,
    r_a: &DMatrix<f64>,
    policy: &AttackPolicy,
    x0: &DVector<f64>,
    horizon: f64,
    dt: Option<f64>,
) -> Result<Trajectory> {
    let n = cl.dim();
    if x0.len() != n {
        return dim_err(format!(
            "initial state has {} entries but the loop has {n} states",
            x0.len()
        ));
    }
    if r_a.shape() != (cl.n_a, cl.n_a) {
        return dim_err(format!(
            "R_a is {}x{} but the loop has {} attack channels",
            r_a.nrows(),
            r_a.ncols(),
            cl.n_a
        ));
    }
    linalg::require_pd(r_a, "R_a")?;
    if let AttackPolicy::GreedyWorst { p } = policy {
        if p.shape() != (n, n) {
            return dim_err(format!(
                "greedy policy matrix is {}x{} but the loop has {n} states",
                p.nrows(),
                p.ncols()
            ));
        }
    }
    if !horizon.is_finite() || horizon < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "horizon must be finite and nonnegative, got {horizon}"
        )));
    }
    let dt = dt.unwrap_or_else(|| default_step(cl));
    let limit = max_step(cl);
    if dt.is_nan() || dt <= 0.0 || dt > limit {
        return Err(Error::InvalidArgument(format!(
            "step {dt:e} outside (0, {limit:e}]; use dt <= 0.1/||A||"
        )));
    }

    let mut attacker = Attacker::new(policy, r_a, &cl.b_cal)?;
    let steps = ((horizon / dt) - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut attacks = Vec::with_capacity(steps + 1);
    let (a, b) = (&cl.a_cal, &cl.b_cal);
    let mut x = x0.clone();
    let mut t = 0.0;
    for k in 0..steps {
        let h = if k + 1 == steps { horizon - t } else { dt };
        let u = attacker.sample(t, &x);
        let bu = b * &u;
        let f = |z: &DVector<f64>| a * z + &bu;
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        times.push(t);
        states.push(x.clone());
        attacks.push(u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = dt * (k + 1) as f64;
        if k + 1 == steps {
            t = horizon;
        }
    }
    let last = attacker.sample(t, &x);
    times.push(t);
    states.push(x);
    attacks.push(last);
    Ok(Trajectory {
        times,
        states,
        attacks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    /// Max over samples of `(ζ₁ − c)ᵀR(ζ₁ − c)`.
    pub max_safe_form: f64,
    /// Max over samples of the invariant form on the leading coordinates.
    pub max_invariant_form: f64,
    pub first_safe_violation: Option<f64>,
    pub first_invariant_violation: Option<f64>,
    /// Max over samples of `aᵀR_a a`, when `R_a` was supplied.
    pub max_attack_form: Option<f64>,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.first_safe_violation.is_none()
    }
}

/// Evaluates a trajectory against the safe set (on the leading `dim(safe)`
/// coordinates) and an invariant shape (on the leading `dim(inv)`
/// coordinates). A sample violates a set when its form exceeds `1 + tol`.
pub fn check_safety(
    traj: &Trajectory,
    safe: &Ellipsoid,
    invariant: &DMatrix<f64>,
    r_a: Option<&DMatrix<f64>>,
    tol: f64,
) -> Result<SafetyReport> {
    let n = traj.states.first().map_or(0, |s| s.len());
    let (ks, ki) = (safe.dim(), invariant.nrows());
    if ks > n || ki > n || invariant.ncols() != ki {
        return dim_err(format!(
            "state has {n} entries; safe set needs {ks}, invariant shape is {ki}x{}",
            invariant.ncols()
        ));
    }
    let mut report = SafetyReport {
        max_safe_form: 0.0,
        max_invariant_form: 0.0,
        first_safe_violation: None,
        first_invariant_violation: None,
        max_attack_form: r_a.map(|_| 0.0),
    };
    for ((t, s), a) in traj.times.iter().zip(&traj.states).zip(&traj.attacks) {
        let head = s.rows(0, ks).into_owned();
        let sf = safe.quadratic_form(&head)?;
        let z = s.rows(0, ki).into_owned();
        let vf = z.dot(&(invariant * &z));
        report.max_safe_form = report.max_safe_form.max(sf);
        report.max_invariant_form = report.max_invariant_form.max(vf);
        if sf > 1.0 + tol && report.first_safe_violation.is_none() {
            report.first_safe_violation = Some(*t);
        }
        if vf > 1.0 + tol && report.first_invariant_violation.is_none() {
            report.first_invariant_violation = Some(*t);
        }
        if let (Some(r), Some(m)) = (r_a, report.max_attack_form.as_mut()) {
            if a.len() == r.nrows() {
                *m = m.max(a.dot(&(r * a)));
            }
        }
    }
    Ok(report)
}
