use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeloop_core::analysis::{verify_safety, ScalarGrid};
use safeloop_core::ellipsoid::{contains, project};
use safeloop_core::linalg::{self, diag};
use safeloop_core::sim::{check_safety, integrate, AttackPolicy};
use safeloop_core::synthesis::{certify, recover_controller, synthesize, Claim, SynthesisGoal};
use safeloop_core::sysmodel::{
    assemble_closed_loop, closed_loop_from_hat, hat_matrices, HatSystem, Plant, PrimaryController,
    SecondaryController, Selection,
};
use safeloop_core::Ellipsoid;

fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let g = gauss(rng, n, n);
    &g * g.transpose() + DMatrix::identity(n, n) * floor
}

/// Random selection with `m` of `n` channels picked.
fn pick(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    DMatrix::from_fn(m, n, |r, c| if idx[r] == c { 1.0 } else { 0.0 })
}

fn stable(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gauss(rng, n, n);
    let top = g
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    g - DMatrix::identity(n, n) * (top + rng.gen_range(0.3..1.5))
}

#[test]
fn closed_loop_assembly_agrees_with_hat_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let (n_p, n_u, n_y) = (
            rng.gen_range(1..4),
            rng.gen_range(1..3),
            rng.gen_range(1..3),
        );
        let n_c1 = rng.gen_range(0..3);
        let (m_u, m_y) = (rng.gen_range(1..=n_u), rng.gen_range(1..=n_y));
        let plant = Plant::new(
            gauss(&mut rng, n_p, n_p),
            gauss(&mut rng, n_p, n_u),
            gauss(&mut rng, n_y, n_p),
        )
        .unwrap();
        let pc = PrimaryController::new(
            gauss(&mut rng, n_c1, n_c1),
            gauss(&mut rng, n_c1, n_y),
            gauss(&mut rng, n_u, n_c1),
            gauss(&mut rng, n_u, n_y),
        )
        .unwrap();
        let sel = Selection::new(
            pick(&mut rng, n_u, m_u).transpose(),
            pick(&mut rng, n_y, m_y),
        )
        .unwrap();
        let n2 = rng.gen_range(0..4);
        let sc = SecondaryController::new(
            gauss(&mut rng, n2, n2),
            gauss(&mut rng, n2, m_y),
            gauss(&mut rng, m_u, n2),
            gauss(&mut rng, m_u, m_y),
        )
        .unwrap();
        let direct = assemble_closed_loop(&plant, &pc, &sc, &sel).unwrap();
        let via_hat = closed_loop_from_hat(&hat_matrices(&plant, &pc, &sel).unwrap(), &sc).unwrap();
        assert!((&direct.a_cal - &via_hat.a_cal).amax() <= 1e-12);
        assert!((&direct.b_cal - &via_hat.b_cal).amax() <= 1e-12);
        assert_eq!(direct.dim(), n_p + n_c1 + n2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipsoid_contains_itself_and_its_shrinkings(seed in any::<u64>(), n in 1usize..4, s in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Ellipsoid::centered(random_pd(&mut rng, n, 0.1)).unwrap();
        prop_assert!(contains(&e, &e).unwrap().contained);
        prop_assert!(contains(&e.scaled(s), &e).unwrap().contained);
        prop_assert!(!contains(&e.scaled(1.0 / s + 0.05), &e).unwrap().contained);
    }

    #[test]
    fn containment_is_monotone_in_the_outer_set(seed in any::<u64>(), n in 1usize..4, grow in 1.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = Ellipsoid::centered(random_pd(&mut rng, n, 0.2)).unwrap();
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let outer = Ellipsoid::new(random_pd(&mut rng, n, 0.05) * 0.3, c).unwrap();
        if contains(&inner, &outer).unwrap().contained {
            prop_assert!(contains(&inner, &outer.scaled(grow)).unwrap().contained);
        }
    }

    #[test]
    fn projection_contains_the_zero_slice(seed in any::<u64>(), n in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_pd(&mut rng, n, 0.1);
        let q = project(&p, 1).unwrap().shape;
        // The projection never exceeds the diagonal entry (slice at zero).
        prop_assert!(q[(0, 0)] <= p[(0, 0)] * (1.0 + 1e-12));
    }
}

fn random_loop(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (stable(rng, n), gauss(rng, n, 2))
}

#[test]
fn verification_is_monotone_in_the_safe_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let grid = ScalarGrid::new(vec![0.1, 0.5, 1.0], vec![1.0], vec![1.0]).unwrap();
    let mut certified = 0;
    for _ in 0..12 {
        let (a, b) = random_loop(&mut rng, 2);
        let cl = safeloop_core::sysmodel::ClosedLoop::primary_only(a, b).unwrap();
        let r_a = diag(&[rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)]);
        let safe = Ellipsoid::centered(DMatrix::identity(2, 2) * rng.gen_range(0.05..1.0)).unwrap();
        let small = verify_safety(&cl, &r_a, &safe, &grid).unwrap();
        if let Some(c) = small.certificate() {
            certified += 1;
            c.recheck(&cl, Some(&safe)).unwrap();
            let big = verify_safety(&cl, &r_a, &safe.scaled(2.0), &grid).unwrap();
            assert!(big.certificate().is_some());
        }
    }
    assert!(certified > 0);
}

#[test]
fn certified_invariant_sets_hold_in_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let grid = ScalarGrid::default();
    let mut checked = 0;
    for _ in 0..6 {
        let (a, b) = random_loop(&mut rng, 2);
        let cl = safeloop_core::sysmodel::ClosedLoop::primary_only(a, b).unwrap();
        let r_a = diag(&[1.0, 1.0]);
        let safe = Ellipsoid::centered(DMatrix::identity(2, 2) * 0.01).unwrap();
        let Some(c) = verify_safety(&cl, &r_a, &safe, &grid)
            .unwrap()
            .certificate()
            .cloned()
        else {
            continue;
        };
        let l_inv_t =
            c.q.clone()
                .cholesky()
                .unwrap()
                .l()
                .try_inverse()
                .unwrap()
                .transpose();
        for k in 0..8u64 {
            let t = std::f64::consts::TAU * k as f64 / 8.0;
            let x0 = &l_inv_t * DVector::from_vec(vec![t.cos(), t.sin()]);
            let policy = if k % 2 == 0 {
                AttackPolicy::GreedyWorst { p: c.q.clone() }
            } else {
                AttackPolicy::PiecewiseRandom {
                    dwell: 0.3,
                    seed: k,
                }
            };
            let traj = integrate(&cl, &r_a, &policy, &x0, 5.0, None).unwrap();
            let rep = check_safety(&traj, &safe, &c.q, Some(&r_a), 1e-6).unwrap();
            assert!(
                rep.max_invariant_form <= 1.0 + 1e-6,
                "{}",
                rep.max_invariant_form
            );
            assert!(rep.is_safe());
        }
        checked += 1;
    }
    assert!(checked > 0);
}

fn transfer(sc: &SecondaryController, s: Complex<f64>) -> DMatrix<Complex<f64>> {
    let n = sc.order();
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
    let resolvent = (DMatrix::<Complex<f64>>::identity(n, n) * s - to_c(&sc.a))
        .try_inverse()
        .unwrap();
    to_c(&sc.c) * resolvent * to_c(&sc.b) + to_c(&sc.d)
}

#[test]
fn recovered_controller_does_not_depend_on_m() {
    let b1 = linalg::block(&[&[&DMatrix::identity(2, 2), &DMatrix::identity(2, 2)]]).unwrap();
    let hat = HatSystem::new(
        -DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        b1,
    )
    .unwrap();
    let r_a = diag(&[0.5, 1.0, 0.4, 0.7]);
    let safe = Ellipsoid::centered(diag(&[0.022, 0.022])).unwrap();
    let grid = ScalarGrid::single(0.25, 0.25, 0.99).unwrap();
    let s = synthesize(
        &hat,
        &safe,
        &SynthesisGoal::Feasible { r_a: r_a.clone() },
        &grid,
        None,
    )
    .unwrap()
    .result
    .unwrap();
    let m2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, -0.3, 1.5]);
    let (sc1, d1) = recover_controller(&s.vars, &hat, None).unwrap();
    let (sc2, d2) = recover_controller(&s.vars, &hat, Some(&m2)).unwrap();
    for (sc, data) in [(&sc1, &d1), (&sc2, &d2)] {
        let claim = Claim {
            p: data.p.clone(),
            r_a: r_a.clone(),
            alpha: s.alpha,
            beta: s.beta,
            x: Some(s.vars.x.clone()),
        };
        certify(&hat, sc, &safe, &claim).unwrap();
    }
    let q1 = project(&d1.p, 2).unwrap().shape;
    let q2 = project(&d2.p, 2).unwrap().shape;
    assert!(linalg::rel_diff(&q1, &q2) < 1e-8);
    for w in [0.1, 1.0, 10.0] {
        let s = Complex::new(0.0, w);
        let (g1, g2) = (transfer(&sc1, s), transfer(&sc2, s));
        let scale = g1.iter().map(|z| z.norm()).fold(1.0, f64::max);
        assert!((g1 - g2).iter().all(|z| z.norm() <= 1e-8 * scale));
    }
}
