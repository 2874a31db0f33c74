use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safeloop_core::analysis::{
    assess_worst_attack, find_invariant_unconstrained, verify_safety, Outcome, ScalarGrid, Verdict,
};
use safeloop_core::ellipsoid::trace_volume_bound;
use safeloop_core::sim::{check_safety, default_step, integrate};
use safeloop_core::synthesis::{certify, recover_controller, synthesize, Claim};
use safeloop_core::sysmodel::{closed_loop_from_hat, ClosedLoop};
use safeloop_core::{Ellipsoid, Error};

use crate::config::{read_json, GridFile, Objective, ProblemConfig};
use crate::error::CliError;
use crate::plot::{render_svg, PlotSet};
use crate::report::{
    points, to_json, write_text, AnalysisReport, CertificateDump, ControllerFile,
    FullCertificateDump, InvariantDump, PlotInput, RunDump, SetDump, SimulationReport,
    SynthesisDump, SynthesisReport, VerdictTag, WorstAttackDump,
};

/// Tolerance on `V ≤ 1` and the safe-set form in simulation checks.
const SIM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Uncertified,
}

pub struct Context {
    pub config: ProblemConfig,
    pub out: PathBuf,
    pub grid: ScalarGrid,
    pub seed: Option<u64>,
}

impl Context {
    pub fn load(
        config: &Path,
        out: &Path,
        grid: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        let cfg = ProblemConfig::load(config)?;
        let grid = match grid {
            Some(path) => read_json::<GridFile>(path)?
                .to_grid()
                .map_err(|e| CliError::Config {
                    file: path.display().to_string(),
                    msg: e.to_string(),
                })?,
            None => cfg.grid()?,
        };
        create_dir(out)?;
        Ok(Context {
            config: cfg,
            out: out.to_path_buf(),
            grid,
            seed,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn analysis_report(
    command: &str,
    safe: &Ellipsoid,
    cl: &ClosedLoop,
    outcome: &Outcome,
) -> Result<AnalysisReport, CliError> {
    let (verdict, reason, certificate, invariant) = match &outcome.verdict {
        Verdict::Certified(c) => {
            let dump = CertificateDump::new(c, c.lmi_residual(cl)?);
            let inv = InvariantDump {
                label: format!("invariant set ({command})"),
                shape: dump.q.clone(),
            };
            (VerdictTag::Certified, None, Some(dump), Some(inv))
        }
        Verdict::Infeasible(kind) => (VerdictTag::Infeasible, Some(kind.to_string()), None, None),
    };
    Ok(AnalysisReport {
        command: command.to_owned(),
        verdict,
        reason,
        safe_set: SetDump::from(safe),
        invariant,
        certificate,
        worst_attack: None,
        grid: points(&outcome.points),
    })
}

fn status_of(verdict: VerdictTag) -> Status {
    if verdict == VerdictTag::Certified {
        Status::Success
    } else {
        Status::Uncertified
    }
}

pub fn verify(ctx: &Context) -> Result<Status, CliError> {
    let cfg = &ctx.config;
    let r_a = cfg.require_attack("verify")?;
    let (hat, safe) = (cfg.hat()?, cfg.safe_set()?);
    let cl = hat.primary_loop();
    let outcome = verify_safety(&cl, r_a, &safe, &ctx.grid)?;
    if let Some(c) = outcome.certificate() {
        c.recheck(&cl, Some(&safe))?;
    }
    let report = analysis_report("verify", &safe, &cl, &outcome)?;
    write_text(&ctx.path("verify_report.json"), &to_json(&report))?;
    match &report.certificate {
        Some(c) => println!(
            "verify: certified (alpha = {}, beta = {}, Tr Q = {})",
            c.alpha,
            c.beta,
            c.q.0.trace()
        ),
        None => println!(
            "verify: not certified: {}",
            report.reason.as_deref().unwrap_or_default()
        ),
    }
    Ok(status_of(report.verdict))
}

pub fn assess(ctx: &Context) -> Result<Status, CliError> {
    let cfg = &ctx.config;
    let (hat, safe) = (cfg.hat()?, cfg.safe_set()?);
    let cl = hat.primary_loop();
    let outcome = assess_worst_attack(&cl, &safe, &ctx.grid)?;
    let mut report = analysis_report("assess", &safe, &cl, &outcome)?;
    if let Some(c) = outcome.certificate() {
        report.worst_attack = Some(WorstAttackDump {
            r_a: c.r_a.clone().into(),
            trace: c.r_a.trace(),
            volume_bound: trace_volume_bound(&c.r_a)?,
            sqrt_det: c.r_a.determinant().max(0.0).sqrt(),
        });
    }
    write_text(&ctx.path("assess_report.json"), &to_json(&report))?;
    match &report.worst_attack {
        Some(w) => println!(
            "assess: Tr[R_a*] = {}, volume bound = {}",
            w.trace, w.volume_bound
        ),
        None => println!(
            "assess: not certified: {}",
            report.reason.as_deref().unwrap_or_default()
        ),
    }
    Ok(status_of(report.verdict))
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::Feasible => "feasible",
        Objective::MinTraceX => "min-trace-x",
        Objective::MinTraceRa => "min-trace-ra",
    }
}

/// Maps a refused certificate to a verdict and every other error to a failure.
fn refusal(e: Error) -> Result<String, CliError> {
    match e {
        Error::CertificateRefused(msg) => Ok(msg),
        other => Err(other.into()),
    }
}

pub fn synthesize_cmd(ctx: &Context) -> Result<Status, CliError> {
    let cfg = &ctx.config;
    let (hat, safe) = (cfg.hat()?, cfg.safe_set()?);
    let spec = cfg.synthesis.clone().unwrap_or_default();
    let goal = cfg.synthesis_goal()?;
    let outcome = synthesize(&hat, &safe, &goal, &ctx.grid, spec.controller_order)?;
    let mut report = SynthesisReport {
        command: "synthesize".into(),
        objective: objective_name(spec.objective).into(),
        verdict: VerdictTag::Infeasible,
        reason: None,
        safe_set: SetDump::from(&safe),
        invariant: None,
        synthesis: None,
        certificate: None,
        controller_file: None,
        grid: points(&outcome.points),
    };
    let mut controller_text = None;
    match &outcome.result {
        Err(kind) => report.reason = Some(kind.to_string()),
        Ok(s) => {
            report.synthesis = Some(SynthesisDump::from(s));
            let m = spec.m.as_ref().map(|m| &m.0);
            let (sc, data) = match recover_controller(&s.vars, &hat, m) {
                Ok(r) => r,
                Err(Error::Singular { what, hint }) => {
                    report.verdict = VerdictTag::Uncertified;
                    report.reason = Some(format!(
                        "controller recovery failed: {what} is singular; {}",
                        hint.unwrap_or_default()
                    ));
                    return finish_synthesis(ctx, &report, None);
                }
                Err(e) => return Err(e.into()),
            };
            let claim = Claim {
                p: data.p.clone(),
                r_a: s.r_a.clone(),
                alpha: s.alpha,
                beta: s.beta,
                x: Some(s.vars.x.clone()),
            };
            match certify(&hat, &sc, &safe, &claim) {
                Ok(cert) => {
                    report.verdict = VerdictTag::Certified;
                    report.invariant = Some(InvariantDump {
                        label: format!(
                            "invariant set (synthesis, {})",
                            objective_name(spec.objective)
                        ),
                        shape: cert.q.clone().into(),
                    });
                    report.certificate = Some(FullCertificateDump::from(&cert));
                    report.controller_file = Some("controller.json".into());
                    controller_text = Some(to_json(&ControllerFile::new(&sc, &claim)));
                }
                Err(e) => {
                    report.verdict = VerdictTag::Uncertified;
                    report.reason = Some(refusal(e)?);
                }
            }
        }
    }
    finish_synthesis(ctx, &report, controller_text)
}

fn finish_synthesis(
    ctx: &Context,
    report: &SynthesisReport,
    controller: Option<String>,
) -> Result<Status, CliError> {
    if let Some(text) = controller {
        write_text(&ctx.path("controller.json"), &text)?;
    }
    write_text(&ctx.path("synthesize_report.json"), &to_json(report))?;
    match (&report.synthesis, report.verdict) {
        (Some(s), VerdictTag::Certified) => println!(
            "synthesize: certified (alpha = {}, beta = {}, det X = {}); controller written to controller.json",
            s.alpha, s.beta, s.det_x
        ),
        _ => println!("synthesize: not certified: {}", report.reason.as_deref().unwrap_or_default()),
    }
    Ok(status_of(report.verdict))
}

/// Uniform direction on the unit sphere mapped onto `{x : xᵀPx = 1}`.
fn boundary_start(p: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>, CliError> {
    let n = p.nrows();
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| CliError::Usage("Lyapunov matrix is not positive definite".into()))?;
    let u = loop {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            break v / norm;
        }
    };
    Ok(chol
        .l()
        .transpose()
        .solve_upper_triangular(&u)
        .expect("Cholesky factor is nonsingular"))
}

pub fn simulate(ctx: &Context, controller: Option<&Path>) -> Result<Status, CliError> {
    let cfg = &ctx.config;
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::field("simulation", "missing; required by `simulate`"))?;
    let r_a = cfg.require_attack("simulate")?;
    let (hat, safe) = (cfg.hat()?, cfg.safe_set()?);

    let mut report = SimulationReport {
        command: "simulate".into(),
        lyapunov_source: "none".into(),
        certified: None,
        certify_error: None,
        dt: 0.0,
        runs: Vec::new(),
        all_safe: true,
    };
    let (cl, p) = match controller {
        Some(path) => {
            let file: ControllerFile = read_json(path)?;
            let sc = file.controller()?;
            let claim = file.claim();
            match certify(&hat, &sc, &safe, &claim) {
                Ok(_) => report.certified = Some(true),
                Err(e) => {
                    report.certified = Some(false);
                    report.certify_error = Some(refusal(e)?);
                }
            }
            report.lyapunov_source = "controller".into();
            (closed_loop_from_hat(&hat, &sc)?, Some(claim.p))
        }
        None => {
            let cl = hat.primary_loop();
            let p = find_invariant_unconstrained(&cl, r_a, &ctx.grid)?
                .certificate()
                .map(|c| c.q.clone());
            if p.is_some() {
                report.lyapunov_source = "primary-invariant".into();
            }
            (cl, p)
        }
    };
    if let Some(p) = &p {
        if p.shape() != (cl.dim(), cl.dim()) {
            return Err(CliError::field(
                "claim.p",
                format!("P must be {0}x{0} for this loop", cl.dim()),
            ));
        }
    }
    report.dt = sim.dt.unwrap_or_else(|| default_step(&cl));

    let seeds = ctx.seed.map_or_else(|| sim.seeds.clone(), |s| vec![s]);
    let mut starts: Vec<(u64, DVector<f64>)> = Vec::new();
    match (&sim.initial_states, &p) {
        (Some(states), _) => {
            for (k, s) in states.iter().enumerate() {
                if s.len() != cl.dim() {
                    return Err(CliError::field(
                        "simulation.initial_states",
                        format!(
                            "state {k} has {} entries, the loop has {}",
                            s.len(),
                            cl.dim()
                        ),
                    ));
                }
                for &seed in &seeds {
                    starts.push((seed, DVector::from_column_slice(s)));
                }
            }
        }
        (None, Some(p)) => {
            for &seed in &seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..sim.boundary_starts {
                    starts.push((seed, boundary_start(p, &mut rng)?));
                }
            }
        }
        (None, None) => {
            return Err(CliError::field(
                "simulation.initial_states",
                "no invariant set was found to start on; give explicit initial states",
            ))
        }
    }

    let dir = ctx.path("trajectories");
    create_dir(&dir)?;
    let invariant = p.clone().unwrap_or_else(|| safe.shape().clone());
    let mut csvs = Vec::new();
    for policy in &sim.policies {
        for (seed, x0) in &starts {
            let run = report.runs.len();
            let attack = policy.to_policy(*seed, p.as_ref())?;
            let traj = integrate(&cl, r_a, &attack, x0, sim.horizon, Some(report.dt))?;
            let check = check_safety(&traj, &safe, &invariant, Some(r_a), SIM_TOL)?;
            let name = format!("run_{run:03}_{}_seed{seed}.csv", policy.name());
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)
                .map_err(|e| CliError::io(&dir.join(&name), e))?;
            csvs.push((dir.join(&name), buf));
            let with_p = p.is_some();
            let safe_run =
                check.is_safe() && (!with_p || check.first_invariant_violation.is_none());
            report.all_safe &= safe_run;
            report.runs.push(RunDump {
                file: format!("trajectories/{name}"),
                policy: policy.name().into(),
                seed: *seed,
                initial_state: x0.iter().copied().collect(),
                max_safe_form: check.max_safe_form,
                max_invariant_form: with_p.then_some(check.max_invariant_form),
                first_safe_violation: check.first_safe_violation,
                first_invariant_violation: if with_p {
                    check.first_invariant_violation
                } else {
                    None
                },
                max_attack_form: check.max_attack_form,
                safe: safe_run,
            });
        }
    }
    for (path, buf) in &csvs {
        std::fs::write(path, buf).map_err(|e| CliError::io(path, e))?;
    }
    write_text(&ctx.path("simulate_report.json"), &to_json(&report))?;
    let unsafe_runs = report.runs.iter().filter(|r| !r.safe).count();
    println!(
        "simulate: {} runs, {unsafe_runs} with violations",
        report.runs.len()
    );
    Ok(if report.all_safe && report.certified != Some(false) {
        Status::Success
    } else {
        Status::Uncertified
    })
}

pub struct PlotArgs<'a> {
    pub config: Option<&'a Path>,
    pub reports: &'a [PathBuf],
    pub coords: Option<(usize, usize)>,
    pub out: &'a Path,
}

pub fn plot(args: &PlotArgs) -> Result<Status, CliError> {
    let mut safe = match args.config {
        Some(path) => Some(ProblemConfig::load(path)?.safe_set()?),
        None => None,
    };
    let mut invariants = Vec::new();
    for path in args.reports {
        let input: PlotInput = read_json(path)?;
        if safe.is_none() {
            if let Some(s) = &input.safe_set {
                safe = Some(s.to_ellipsoid()?);
            }
        }
        if let Some(inv) = input.invariant {
            invariants.push(inv);
        }
    }
    let safe =
        safe.ok_or_else(|| CliError::Usage("no safe set found in the reports or --config".into()))?;
    let mut sets = vec![PlotSet {
        label: "safe set".into(),
        set: safe,
    }];
    for inv in invariants {
        sets.push(PlotSet {
            label: inv.label,
            set: Ellipsoid::centered(inv.shape.0)?,
        });
    }
    let svg = render_svg(&sets, args.coords)?;
    create_dir(args.out)?;
    write_text(&args.out.join("plot.svg"), &svg)?;
    println!("plot: {} sets written to plot.svg", sets.len());
    Ok(Status::Success)
}
