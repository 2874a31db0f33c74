//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criterion 6(a) cannot hold with the prescribed attack matrix B1cal = [I, I]
//! (the reachable set is well inside the safe sphere); it is evaluated as
//! written and listed in `KNOWN_UNATTAINABLE`. The process fails on any other
//! FAIL, and also if a known-unattainable criterion starts passing.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeloop_core::analysis::{
    assess_worst_attack, find_invariant_unconstrained, verify_safety, PointStatus, ScalarGrid,
    Verdict,
};
use safeloop_core::ellipsoid::{contains, membership, trace_volume_bound};
use safeloop_core::linalg::{self, diag};
use safeloop_core::sim::{check_safety, integrate, AttackPolicy};
use safeloop_core::synthesis::{
    certify, forward_change_of_variables, minimize_invariant_volume, recover_controller,
    synthesize, Claim, SynthesisGoal, SynthesisVars,
};
use safeloop_core::sysmodel::{closed_loop_from_hat, ClosedLoop, HatSystem, SecondaryController};
use safeloop_core::Ellipsoid;

const KNOWN_UNATTAINABLE: &[&str] = &["6a"];

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
    seconds: f64,
}

fn run(
    id: &'static str,
    limit: Option<f64>,
    f: impl FnOnce() -> Result<String, String>,
) -> Outcome {
    let start = Instant::now();
    let (mut passed, mut detail) = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)) {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(_) => (false, "panicked".to_owned()),
    };
    let seconds = start.elapsed().as_secs_f64();
    if let Some(limit) = limit.filter(|&l| seconds > l) {
        passed = false;
        detail = format!("{detail}; runtime over the {limit} s limit");
    }
    let o = Outcome {
        id,
        passed,
        detail,
        seconds,
    };
    println!(
        "criterion {:<3} {}  ({:.2} s)  {}",
        o.id,
        if o.passed { "PASS" } else { "FAIL" },
        o.seconds,
        o.detail
    );
    o
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

fn scalar_loop() -> ClosedLoop {
    ClosedLoop::primary_only(m(1, 1, &[-1.0]), m(1, 1, &[1.0])).unwrap()
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &g * g.transpose() + DMatrix::identity(n, n) * floor
}

fn case_hat() -> HatSystem {
    let b1 = linalg::block(&[&[&DMatrix::identity(2, 2), &DMatrix::identity(2, 2)]]).unwrap();
    HatSystem::new(
        -DMatrix::identity(2, 2),
        m(2, 1, &[1.0, 0.0]),
        m(1, 2, &[1.0, 0.0]),
        b1,
    )
    .unwrap()
}

fn case_attack() -> DMatrix<f64> {
    diag(&[0.5, 1.0, 0.4, 0.7])
}

fn case_safe() -> Ellipsoid {
    Ellipsoid::centered(diag(&[0.022, 0.022])).unwrap()
}

fn case_grid() -> ScalarGrid {
    ScalarGrid::single(0.25, 0.25, 0.99).unwrap()
}

fn criterion_1() -> Result<String, String> {
    let cl = scalar_loop();
    let one = m(1, 1, &[1.0]);
    let grid = ScalarGrid::default();
    let ball = |s: f64| Ellipsoid::centered(m(1, 1, &[1.0 / (s * s)])).unwrap();

    let out = verify_safety(&cl, &one, &ball(2.0), &grid).map_err(|e| e.to_string())?;
    let cert = out
        .certificate()
        .ok_or("verify_safety infeasible on x^2 <= 4")?;
    ensure(
        (cert.q[(0, 0)] - 1.0).abs() <= 1e-3,
        format!("Q = {}", cert.q[(0, 0)]),
    )?;
    ensure(cert.alpha == 1.0, format!("alpha = {}", cert.alpha))?;

    let out = verify_safety(&cl, &one, &ball(0.5), &grid).map_err(|e| e.to_string())?;
    ensure(
        matches!(out.verdict, Verdict::Infeasible(_)),
        "x^2 <= 0.25 certified",
    )?;
    ensure(
        out.points
            .iter()
            .all(|p| !matches!(p.status, PointStatus::Feasible { .. })),
        "a grid point reported feasible for x^2 <= 0.25",
    )?;

    let mut traces = Vec::new();
    for s in [1.0, 2.0, 4.0] {
        let out = assess_worst_attack(&cl, &ball(s), &grid).map_err(|e| e.to_string())?;
        let cert = out
            .certificate()
            .ok_or(format!("assess infeasible for s = {s}"))?;
        let tr = cert.r_a.trace();
        ensure(
            (tr - 1.0 / (s * s)).abs() <= 1e-3,
            format!("s = {s}: Tr[Ra*] = {tr}"),
        )?;
        traces.push(tr);
    }
    Ok(format!(
        "Q = {:.6}, Tr[Ra*] = {:.6?}",
        cert.q[(0, 0)],
        traces
    ))
}

fn criterion_2() -> Result<String, String> {
    let vars = SynthesisVars {
        x: diag(&[28.6109, 31.9965]),
        y: diag(&[3.9840, 0.1164]),
        a: diag(&[-26.8308, -0.6765]),
        b: m(2, 1, &[-200.3492, 0.0]),
        c: m(1, 2, &[-78.5049, 0.0]),
        d: m(1, 1, &[-26.8308]),
    };
    let (sc, data) = recover_controller(&vars, &case_hat(), Some(&DMatrix::identity(2, 2)))
        .map_err(|e| e.to_string())?;
    let checks = [
        ("N11", data.n[(0, 0)], -112.9854),
        ("N22", data.n[(1, 1)], -2.7259),
        ("D2", sc.d[(0, 0)], -26.8308),
        ("C2_1", sc.c[(0, 0)], 689.1488),
        ("B2_1", sc.b[(0, 0)], 0.8271),
        ("A2_11", sc.a[(0, 0)], -27.2049),
        ("A2_22", sc.a[(1, 1)], -1.1187),
    ];
    let mut worst: f64 = 0.0;
    for (name, got, want) in checks {
        let r = (got - want).abs() / want.abs();
        ensure(r <= 0.01, format!("{name} = {got}, published {want}"))?;
        worst = worst.max(r);
    }
    let zeros = [
        data.n[(0, 1)],
        data.n[(1, 0)],
        sc.c[(0, 1)],
        sc.b[(1, 0)],
        sc.a[(0, 1)],
        sc.a[(1, 0)],
    ];
    ensure(
        zeros.iter().all(|v| v.abs() < 1e-9),
        "off-diagonal entries not zero",
    )?;
    Ok(format!("max relative deviation {worst:.2e}"))
}

fn criterion_3() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    for k in 0..1000 {
        let n = 1 + k % 6;
        let r = random_pd(&mut rng, n, 1e-3);
        let bound = trace_volume_bound(&r).map_err(|e| e.to_string())?;
        if r.determinant().sqrt() > bound * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("{violations} violations"))?;
    Ok("1000 matrices, 0 violations".to_owned())
}

/// Uniform points on the unit sphere: Fibonacci lattice in 3-D, equal angles
/// in 2-D.
fn sphere_points(n: usize, count: usize) -> Vec<DVector<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            if n == 2 {
                let t = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
                DVector::from_vec(vec![t.cos(), t.sin()])
            } else {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let t = golden * i as f64;
                DVector::from_vec(vec![r * t.cos(), r * t.sin(), z])
            }
        })
        .collect()
}

fn criterion_4() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = (0, 0);
    for k in 0..200 {
        let n = 2 + k % 2;
        let q = random_pd(&mut rng, n, 0.2);
        let inner = Ellipsoid::centered(q.clone()).unwrap();
        let r = random_pd(&mut rng, n, 0.05) * rng.gen_range(0.05..1.0);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-0.8..0.8));
        let outer = Ellipsoid::new(r, c).unwrap();
        let verdict = contains(&inner, &outer)
            .map_err(|e| e.to_string())?
            .contained;
        let l_inv_t = q
            .clone()
            .cholesky()
            .unwrap()
            .l()
            .try_inverse()
            .unwrap()
            .transpose();
        let samples: Vec<DVector<f64>> = sphere_points(n, 10_000)
            .iter()
            .map(|u| &l_inv_t * u)
            .collect();
        let outside = samples
            .iter()
            .filter(|x| !membership(x, &outer).unwrap())
            .count();
        ensure(
            verdict == (outside == 0),
            format!("pair {k}: contains = {verdict} but {outside} of 10^4 samples outside"),
        )?;
        if verdict {
            counts.0 += 1;
        } else {
            counts.1 += 1;
        }
    }
    Ok(format!(
        "200 pairs agree ({} contained, {} not)",
        counts.0, counts.1
    ))
}

struct Corpus {
    hat: HatSystem,
    vars: SynthesisVars,
    sc: SecondaryController,
    m: DMatrix<f64>,
    n: DMatrix<f64>,
}

fn random_hat(rng: &mut ChaCha8Rng, n1: usize) -> HatSystem {
    let g = DMatrix::from_fn(n1, n1, |_, _| rng.gen_range(-1.0..1.0));
    let shift = g
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    let a = &g - DMatrix::identity(n1, n1) * (shift + rng.gen_range(0.3..1.5));
    let b = DMatrix::from_fn(n1, 1, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(1, n1, |_, _| rng.gen_range(-1.0..1.0));
    let b1 = DMatrix::from_fn(n1, 2, |_, _| rng.gen_range(-1.0..1.0));
    HatSystem::new(a, b, c, b1).unwrap()
}

fn criterion_5(corpus: &mut Vec<Corpus>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = ScalarGrid::default();
    let mut attempts = 0;
    let mut max_v: f64 = 0.0;
    let mut trajectories = 0;
    while corpus.len() < 25 {
        attempts += 1;
        ensure(
            attempts <= 200,
            format!("only {} feasible systems in 200 draws", corpus.len()),
        )?;
        let n1 = 2 + attempts % 2;
        let hat = random_hat(&mut rng, n1);
        let r_a = diag(&[rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)]);
        let safe =
            Ellipsoid::centered(DMatrix::identity(n1, n1) * rng.gen_range(0.02..0.2)).unwrap();
        let goal = SynthesisGoal::Feasible { r_a: r_a.clone() };
        let out = synthesize(&hat, &safe, &goal, &grid, None).map_err(|e| e.to_string())?;
        let Ok(s) = out.result else { continue };
        let (sc, data) =
            recover_controller(&s.vars, &hat, None).map_err(|e| format!("recovery: {e}"))?;
        let claim = Claim {
            p: data.p.clone(),
            r_a: r_a.clone(),
            alpha: s.alpha,
            beta: s.beta,
            x: Some(s.vars.x.clone()),
        };
        certify(&hat, &sc, &safe, &claim).map_err(|e| format!("system {}: {e}", corpus.len()))?;

        let cl = closed_loop_from_hat(&hat, &sc).map_err(|e| e.to_string())?;
        let p = &data.p;
        let l_inv_t = p
            .clone()
            .cholesky()
            .unwrap()
            .l()
            .try_inverse()
            .unwrap()
            .transpose();
        for k in 0..100u64 {
            let u = DVector::from_fn(2 * n1, |_, _| rng.gen_range(-1.0..1.0));
            let u = &u / u.norm();
            let radius = if k % 2 == 0 {
                1.0
            } else {
                rng.gen_range(0.0..1.0)
            };
            let x0 = &l_inv_t * u * radius;
            let policy = match k % 4 {
                0 => AttackPolicy::GreedyWorst { p: p.clone() },
                1 => AttackPolicy::PiecewiseRandom {
                    dwell: 0.2,
                    seed: k,
                },
                2 => AttackPolicy::ConstantBoundary {
                    direction: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
                },
                _ => AttackPolicy::Zero,
            };
            let tr = integrate(&cl, &r_a, &policy, &x0, 2.0, None).map_err(|e| e.to_string())?;
            let rep = check_safety(&tr, &safe, p, Some(&r_a), 1e-6).map_err(|e| e.to_string())?;
            ensure(
                rep.max_invariant_form <= 1.0 + 1e-6,
                format!(
                    "system {}: V reached {} under {policy:?}",
                    corpus.len(),
                    rep.max_invariant_form
                ),
            )?;
            max_v = max_v.max(rep.max_invariant_form);
            trajectories += 1;
        }
        corpus.push(Corpus {
            hat,
            vars: s.vars,
            sc,
            m: data.m,
            n: data.n,
        });
    }
    Ok(format!(
        "25 systems certified ({attempts} draws), {trajectories} trajectories, max V = {max_v:.9}"
    ))
}

fn criterion_6a() -> Result<String, String> {
    let cl = case_hat().primary_loop();
    let constrained = verify_safety(&cl, &case_attack(), &case_safe(), &case_grid())
        .map_err(|e| e.to_string())?;
    let free = find_invariant_unconstrained(&cl, &case_attack(), &case_grid())
        .map_err(|e| e.to_string())?;
    ensure(
        free.certificate().is_some(),
        "no unconstrained invariant set",
    )?;
    match constrained.certificate() {
        None => Ok("containment fails, unconstrained invariant exists".to_owned()),
        Some(c) => Err(format!(
            "primary-only loop is already certified safe: Q = diag({:.4}, {:.4}) inside the safe sphere (B1cal = [I, I])",
            c.q[(0, 0)],
            c.q[(1, 1)]
        )),
    }
}

fn case_synthesis(goal: SynthesisGoal) -> Result<(SynthesisVars, f64), String> {
    let hat = case_hat();
    let out = match &goal {
        SynthesisGoal::MinTraceX { r_a } => {
            minimize_invariant_volume(&hat, &case_safe(), r_a, &case_grid())
        }
        _ => synthesize(&hat, &case_safe(), &goal, &case_grid(), None),
    }
    .map_err(|e| e.to_string())?;
    let s = out
        .result
        .map_err(|k| format!("synthesis infeasible: {k}"))?;
    let (sc, data) = recover_controller(&s.vars, &hat, None).map_err(|e| e.to_string())?;
    let claim = Claim {
        p: data.p,
        r_a: case_attack(),
        alpha: s.alpha,
        beta: s.beta,
        x: Some(s.vars.x.clone()),
    };
    let cert = certify(&hat, &sc, &case_safe(), &claim).map_err(|e| e.to_string())?;
    ensure(cert.contained, "certificate not contained")?;
    let det = s.vars.x.determinant();
    Ok((s.vars, det))
}

fn criterion_6b() -> Result<String, String> {
    let (_, det) = case_synthesis(SynthesisGoal::Feasible { r_a: case_attack() })?;
    Ok(format!("certified containment, det X = {det:.4}"))
}

fn criterion_6c() -> Result<String, String> {
    let (_, det_feas) = case_synthesis(SynthesisGoal::Feasible { r_a: case_attack() })?;
    let (_, det_min) = case_synthesis(SynthesisGoal::MinTraceX { r_a: case_attack() })?;
    // A smaller invariant set {x : x'X^-1 x <= 1} means a smaller det X.
    ensure(
        det_min < det_feas,
        format!("det X_min = {det_min} not below det X_feas = {det_feas}"),
    )?;
    Ok(format!(
        "det X: feasibility {det_feas:.4}, min-trace {det_min:.3e}"
    ))
}

fn criterion_7(corpus: &[Corpus]) -> Result<String, String> {
    ensure(!corpus.is_empty(), "criterion 5 corpus is empty")?;
    let mut worst: f64 = 0.0;
    for (k, c) in corpus.iter().enumerate() {
        let (a, b, cc, d) =
            forward_change_of_variables(&c.hat, &c.sc, &c.vars.x, &c.vars.y, &c.m, &c.n);
        for (got, want) in [
            (a, &c.vars.a),
            (b, &c.vars.b),
            (cc, &c.vars.c),
            (d, &c.vars.d),
        ] {
            let r = linalg::rel_diff(&got, want);
            ensure(r <= 1e-8, format!("system {k}: relative deviation {r:.3e}"))?;
            worst = worst.max(r);
        }
    }
    Ok(format!(
        "{} systems, max relative deviation {worst:.2e}",
        corpus.len()
    ))
}

fn criterion_8() -> Result<String, String> {
    let cl = scalar_loop();
    let one = m(1, 1, &[1.0]);
    let policy = AttackPolicy::ConstantBoundary {
        direction: DVector::from_element(1, 1.0),
    };
    let x0 = DVector::from_element(1, 0.0);
    let exact = 1.0 - (-10f64).exp();
    let tr = integrate(&cl, &one, &policy, &x0, 10.0, None).map_err(|e| e.to_string())?;
    let err_default = (tr.final_state()[0] - exact).abs();
    ensure(err_default <= 1e-6, format!("x(10) off by {err_default:e}"))?;
    let err = |dt: f64| -> Result<f64, String> {
        let tr = integrate(&cl, &one, &policy, &x0, 10.0, Some(dt)).map_err(|e| e.to_string())?;
        Ok((tr.final_state()[0] - exact).abs())
    };
    let ratio = err(0.1)? / err(0.05)?;
    ensure(
        (13.0..=19.0).contains(&ratio),
        format!("halving ratio {ratio}"),
    )?;
    Ok(format!(
        "x(10) error {err_default:.1e}, halving ratio {ratio:.2}"
    ))
}

fn main() {
    let mut corpus = Vec::new();
    let outcomes = vec![
        run("1", Some(10.0), criterion_1),
        run("2", Some(1.0), criterion_2),
        run("3", None, criterion_3),
        run("4", None, criterion_4),
        run("5", Some(300.0), || criterion_5(&mut corpus)),
        run("6a", None, criterion_6a),
        run("6b", None, criterion_6b),
        run("6c", None, criterion_6c),
        run("7", None, || criterion_7(&corpus)),
        run("8", None, criterion_8),
    ];
    let mut ok = true;
    for o in &outcomes {
        let known = KNOWN_UNATTAINABLE.contains(&o.id);
        if !o.passed && !known {
            ok = false;
        }
        if o.passed && known {
            println!(
                "criterion {} now passes; remove it from KNOWN_UNATTAINABLE",
                o.id
            );
            ok = false;
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!(
        "acceptance: {passed}/{} criteria pass; known unattainable: {:?}",
        outcomes.len(),
        KNOWN_UNATTAINABLE
    );
    if !ok {
        std::process::exit(1);
    }
}
