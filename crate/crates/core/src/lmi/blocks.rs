//! Block LMIs of the invariance, attack-bound and containment conditions.
//!
//! Analysis blocks act on `[ζ₁; 1; a]`, synthesis blocks on `[ζ; 1; a]`
//! after the congruence with `Π₁`.

use nalgebra::DMatrix;

use super::expr::AffineExpr;
use crate::ellipsoid::Ellipsoid;
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::sysmodel::HatSystem;

fn z(r: usize, c: usize) -> AffineExpr {
    AffineExpr::zeros(r, c)
}

fn require_square_expr(e: &AffineExpr, what: &str) -> Result<usize> {
    if e.nrows() != e.ncols() {
        return dim_err(format!(
            "{what} must be square, got {}x{}",
            e.nrows(),
            e.ncols()
        ));
    }
    Ok(e.nrows())
}

/// `[[A₁ᵀQ + QA₁, 0, QB₁], [⋆, 0, 0], [⋆, ⋆, 0]]`.
pub fn build_e1(a1: &DMatrix<f64>, b1: &DMatrix<f64>, q: &AffineExpr) -> Result<AffineExpr> {
    let n = require_square_expr(q, "Q")?;
    if a1.shape() != (n, n) {
        return dim_err(format!(
            "A1cal is {}x{} but Q is {n}x{n}",
            a1.nrows(),
            a1.ncols()
        ));
    }
    if b1.nrows() != n {
        return dim_err(format!("B1cal has {} rows but Q is {n}x{n}", b1.nrows()));
    }
    let na = b1.ncols();
    let lyap = q.rmul(a1).sym_part2();
    let qb = q.rmul(b1);
    AffineExpr::block(&[
        &[&lyap, &z(n, 1), &qb],
        &[&z(1, n), &z(1, 1), &z(1, na)],
        &[&qb.transpose(), &z(na, 1), &z(na, na)],
    ])
}

/// `diag(Q, −1, 0_{n_a})`.
pub fn build_f(q: &AffineExpr, n_a: usize) -> Result<AffineExpr> {
    let n = require_square_expr(q, "Q")?;
    AffineExpr::block(&[
        &[q, &z(n, 1), &z(n, n_a)],
        &[&z(1, n), &AffineExpr::scalar(-1.0), &z(1, n_a)],
        &[&z(n_a, n), &z(n_a, 1), &z(n_a, n_a)],
    ])
}

/// `diag(0_{lead}, 1, −R_a)`.
pub fn build_s(r_a: &AffineExpr, lead: usize) -> Result<AffineExpr> {
    let na = require_square_expr(r_a, "R_a")?;
    AffineExpr::block(&[
        &[&z(lead, lead), &z(lead, 1), &z(lead, na)],
        &[&z(1, lead), &AffineExpr::scalar(1.0), &z(1, na)],
        &[&z(na, lead), &z(na, 1), &(-r_a)],
    ])
}

/// Containment of `{ζ₁ : ζ₁ᵀQζ₁ ≤ 1}` in the safe set with a fixed
/// multiplier `τ`, as an expression required NSD:
/// `[[R − τQ, −Rc], [−cᵀR, cᵀRc − 1 + τ]]`.
pub fn build_containment_q(q: &AffineExpr, safe: &Ellipsoid, tau: f64) -> Result<AffineExpr> {
    let n = require_square_expr(q, "Q")?;
    if safe.dim() != n {
        return dim_err(format!(
            "safe set has dimension {} but Q is {n}x{n}",
            safe.dim()
        ));
    }
    let r = safe.shape();
    let rc = r * safe.center();
    let gap = safe.center().dot(&rc) - 1.0 + tau;
    let top_left = &AffineExpr::from(r) - &q.scale(tau);
    let off = AffineExpr::constant(-DMatrix::from_column_slice(n, 1, rc.as_slice()));
    AffineExpr::block(&[
        &[&top_left, &off],
        &[&off.transpose(), &AffineExpr::scalar(gap)],
    ])
}

/// The convexified decision variables, as expressions.
#[derive(Debug, Clone)]
pub struct EtaExprs {
    pub x: AffineExpr,
    pub y: AffineExpr,
    pub a: AffineExpr,
    pub b: AffineExpr,
    pub c: AffineExpr,
    pub d: AffineExpr,
}

impl EtaExprs {
    /// Constant expressions from numeric values.
    pub fn constant(
        x: &DMatrix<f64>,
        y: &DMatrix<f64>,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        c: &DMatrix<f64>,
        d: &DMatrix<f64>,
    ) -> Self {
        EtaExprs {
            x: x.into(),
            y: y.into(),
            a: a.into(),
            b: b.into(),
            c: c.into(),
            d: d.into(),
        }
    }

    fn check(&self, hat: &HatSystem) -> Result<()> {
        let (n1, mu, my) = (hat.n1(), hat.m_u(), hat.m_y());
        let want = [
            ("X", &self.x, (n1, n1)),
            ("Y", &self.y, (n1, n1)),
            ("Abf", &self.a, (n1, n1)),
            ("Bbf", &self.b, (n1, my)),
            ("Cbf", &self.c, (mu, n1)),
            ("Dbf", &self.d, (mu, my)),
        ];
        for (name, e, shape) in want {
            if e.shape() != shape {
                return dim_err(format!(
                    "{name} is {}x{} but the hat system requires {}x{}",
                    e.nrows(),
                    e.ncols(),
                    shape.0,
                    shape.1
                ));
            }
        }
        Ok(())
    }

    /// `[[ÂX + B̂𝐂, Â + B̂𝐃Ĉ], [𝐀, YÂ + 𝐁Ĉ]]`.
    pub fn a_eta(&self, hat: &HatSystem) -> Result<AffineExpr> {
        self.check(hat)?;
        let tl = &self.x.lmul(&hat.a_hat) + &self.c.lmul(&hat.b_hat);
        let tr = &AffineExpr::from(&hat.a_hat) + &self.d.lmul(&hat.b_hat).rmul(&hat.c_hat);
        let br = &self.y.rmul(&hat.a_hat) + &self.b.rmul(&hat.c_hat);
        AffineExpr::block(&[&[&tl, &tr], &[&self.a, &br]])
    }

    /// `[[ℬ₁], [Yℬ₁]]`.
    pub fn b_eta(&self, hat: &HatSystem) -> Result<AffineExpr> {
        self.check(hat)?;
        AffineExpr::block(&[
            &[&AffineExpr::from(&hat.b1_cal)],
            &[&self.y.rmul(&hat.b1_cal)],
        ])
    }

    /// `[[X, I], [I, Y]]`.
    pub fn p_eta(&self) -> Result<AffineExpr> {
        let n = require_square_expr(&self.x, "X")?;
        if self.y.shape() != (n, n) {
            return dim_err(format!(
                "Y is {}x{} but X is {n}x{n}",
                self.y.nrows(),
                self.y.ncols()
            ));
        }
        let i = AffineExpr::identity(n);
        AffineExpr::block(&[&[&self.x, &i], &[&i, &self.y]])
    }
}

/// `[[A(η)ᵀ + A(η), 0, B(η)], [⋆, 0, 0], [⋆, ⋆, 0]]`.
pub fn build_e2bf(eta: &EtaExprs, hat: &HatSystem) -> Result<AffineExpr> {
    let a = eta.a_eta(hat)?.sym_part2();
    let b = eta.b_eta(hat)?;
    let (n, na) = (a.nrows(), b.ncols());
    AffineExpr::block(&[
        &[&a, &z(n, 1), &b],
        &[&z(1, n), &z(1, 1), &z(1, na)],
        &[&b.transpose(), &z(na, 1), &z(na, na)],
    ])
}

/// `diag(P(η), −1, 0_{n_a})`.
pub fn build_fbf(eta: &EtaExprs, n_a: usize) -> Result<AffineExpr> {
    build_f(&eta.p_eta()?, n_a)
}

/// Same matrix as [`build_s`] padded to the `2n₁` synthesis state.
pub fn build_sbf(r_a: &AffineExpr, n1: usize) -> Result<AffineExpr> {
    build_s(r_a, 2 * n1)
}

/// `J` and `L` of the synthesis containment condition `J − δL ⪯ 0`.
pub fn build_containment_jl(x: &AffineExpr, safe: &Ellipsoid) -> Result<(AffineExpr, AffineExpr)> {
    let n = require_square_expr(x, "X")?;
    if safe.dim() != n {
        return dim_err(format!(
            "safe set has dimension {} but X is {n}x{n}",
            safe.dim()
        ));
    }
    let r = safe.shape();
    let r_inv = r
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular {
            what: "safe-set shape".into(),
            hint: Some(
                "restrict the safe set to the constrained coordinates before synthesis".into(),
            ),
        })?;
    let rc = r * safe.center();
    let rc = DMatrix::from_column_slice(n, 1, rc.as_slice());
    let gap = safe.center().dot(&(r * safe.center())) - 1.0;
    let xrc = -x.rmul(&rc);
    let j = AffineExpr::block(&[
        &[&z(n, n), &xrc, &(-x)],
        &[&xrc.transpose(), &AffineExpr::scalar(gap), &z(1, n)],
        &[
            &(-x),
            &z(n, 1),
            &AffineExpr::constant(-linalg::symmetrize(&r_inv)),
        ],
    ])?;
    let l = AffineExpr::block(&[
        &[x, &z(n, 1), &z(n, n)],
        &[&z(1, n), &AffineExpr::scalar(-1.0), &z(1, n)],
        &[&z(n, n), &z(n, 1), &z(n, n)],
    ])?;
    Ok((j, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::diag;
    use crate::lmi::SdpProblem;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
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

    fn published_eta() -> EtaExprs {
        EtaExprs::constant(
            &diag(&[28.6109, 31.9965]),
            &diag(&[3.9840, 0.1164]),
            &diag(&[-26.8308, -0.6765]),
            &m(2, 1, &[-200.3492, 0.0]),
            &m(1, 2, &[-78.5049, 0.0]),
            &m(1, 1, &[-26.8308]),
        )
    }

    #[test]
    fn e1_scalar_example() {
        let mut p = SdpProblem::new();
        let q = p.add_symmetric("Q", 1).unwrap();
        let e = build_e1(&m(1, 1, &[-1.0]), &m(1, 1, &[1.0]), &q).unwrap();
        let v = e.eval(&[3.0]);
        assert_eq!(v, m(3, 3, &[-6.0, 0.0, 3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0]));
    }

    #[test]
    fn e1_shapes_and_zero_case() {
        let q = AffineExpr::identity(2);
        let e = build_e1(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 4), &q).unwrap();
        assert_eq!(e.shape(), (7, 7));
        assert!(e.eval(&[]).iter().all(|v| *v == 0.0));
        assert!(build_e1(&DMatrix::zeros(3, 3), &DMatrix::zeros(2, 4), &q).is_err());
    }

    #[test]
    fn f_and_s_examples() {
        let f = build_f(&AffineExpr::identity(2), 4).unwrap().eval(&[]);
        assert_eq!(f, diag(&[1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0]));
        let q_inv = diag(&[1.0 / 28.6109, 1.0 / 31.9965]);
        let f = build_f(&q_inv.into(), 4).unwrap().eval(&[]);
        assert_relative_eq!(f[(0, 0)], 0.03495, epsilon = 1e-5);
        assert_relative_eq!(f[(1, 1)], 0.03125, epsilon = 1e-5);

        let ra = diag(&[0.5, 1.0, 0.4, 0.7]);
        let s = build_s(&(&ra).into(), 2).unwrap().eval(&[]);
        assert_eq!(s, diag(&[0.0, 0.0, 1.0, -0.5, -1.0, -0.4, -0.7]));
        assert_eq!(
            build_s(&AffineExpr::scalar(1.0), 1).unwrap().eval(&[]),
            diag(&[0.0, 1.0, -1.0])
        );
        assert!(build_s(&AffineExpr::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn s_vanishes_on_attack_boundary() {
        let ra = diag(&[0.5, 1.0, 0.4, 0.7]);
        let s = build_s(&(&ra).into(), 2).unwrap().eval(&[]);
        let a = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let a = &a / (a.dot(&(&ra * &a))).sqrt();
        let mut v = DVector::zeros(7);
        v[2] = 1.0;
        v.rows_mut(3, 4).copy_from(&a);
        assert!((-(v.dot(&(&s * &v)))).abs() < 1e-14);
    }

    #[test]
    fn e2bf_examples() {
        let hat = case_hat();
        let zero = EtaExprs::constant(
            &DMatrix::zeros(2, 2),
            &DMatrix::zeros(2, 2),
            &DMatrix::zeros(2, 2),
            &DMatrix::zeros(2, 1),
            &DMatrix::zeros(1, 2),
            &DMatrix::zeros(1, 1),
        );
        let a = zero.a_eta(&hat).unwrap().eval(&[]);
        assert_eq!(a.view((0, 0), (2, 2)), DMatrix::<f64>::zeros(2, 2));
        assert_eq!(a.view((0, 2), (2, 2)), hat.a_hat);
        assert_eq!(
            zero.b_eta(&hat).unwrap().eval(&[]).view((0, 0), (2, 4)),
            hat.b1_cal
        );

        let eta = published_eta();
        let a = eta.a_eta(&hat).unwrap().eval(&[]);
        assert_relative_eq!(
            a.view((0, 0), (2, 2)).into_owned(),
            diag(&[-107.1158, -31.9965]),
            epsilon = 1e-9
        );
        assert_eq!(build_e2bf(&eta, &hat).unwrap().shape(), (9, 9));
    }

    #[test]
    fn p_eta_examples() {
        let i = DMatrix::identity(2, 2);
        let eta = EtaExprs::constant(
            &i,
            &i,
            &i,
            &DMatrix::zeros(2, 1),
            &DMatrix::zeros(1, 2),
            &DMatrix::zeros(1, 1),
        );
        let p = eta.p_eta().unwrap().eval(&[]);
        assert!(linalg::min_eig(&p).abs() < 1e-12);

        let p = published_eta().p_eta().unwrap().eval(&[]);
        assert!(linalg::min_eig(&p) > 0.0);
        let ra: AffineExpr = diag(&[0.5, 1.0, 0.4, 0.7]).into();
        let sbf = build_sbf(&ra, 2).unwrap().eval(&[]);
        assert_eq!(
            sbf.view((4, 4), (5, 5)),
            build_s(&ra, 2).unwrap().eval(&[]).view((2, 2), (5, 5))
        );
    }

    #[test]
    fn jl_examples() {
        let safe = Ellipsoid::centered(diag(&[0.022, 0.022])).unwrap();
        let x = diag(&[2.0, 3.0]);
        let (j, _) = build_containment_jl(&(&x).into(), &safe).unwrap();
        let j = j.eval(&[]);
        assert_eq!(j.view((0, 3), (2, 2)), -&x);
        assert_eq!(j[(2, 2)], -1.0);
        assert_relative_eq!(j[(3, 3)], -1.0 / 0.022, epsilon = 1e-9);

        // Scalar: feasible iff r <= delta / x.
        let (x, r) = (2.0, 0.4);
        let safe = Ellipsoid::centered(m(1, 1, &[r])).unwrap();
        let (j, l) = build_containment_jl(&m(1, 1, &[x]).into(), &safe).unwrap();
        for (delta, ok) in [(1.0, true), (0.7, false)] {
            let k = (&j - &l.scale(delta)).eval(&[]);
            assert_eq!(linalg::max_eig(&k) <= 1e-12, ok, "delta {delta}");
        }

        // X = 0 reduces to center membership.
        let off = Ellipsoid::new(m(1, 1, &[1.0]), DVector::from_vec(vec![0.5])).unwrap();
        let (j, _) = build_containment_jl(&AffineExpr::zeros(1, 1), &off).unwrap();
        assert!(linalg::max_eig(&j.eval(&[])) <= 0.0);
        let far = Ellipsoid::new(m(1, 1, &[1.0]), DVector::from_vec(vec![2.0])).unwrap();
        let (j, _) = build_containment_jl(&AffineExpr::zeros(1, 1), &far).unwrap();
        assert!(linalg::max_eig(&j.eval(&[])) > 0.0);

        let slab = Ellipsoid::centered(diag(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            build_containment_jl(&AffineExpr::identity(2), &slab),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn containment_q_matches_jl_schur_form() {
        let safe = Ellipsoid::new(diag(&[0.5, 0.25]), DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let x = m(2, 2, &[1.5, 0.2, 0.2, 0.9]);
        let q = x.clone().try_inverse().unwrap();
        for delta in [0.5, 0.9, 1.0] {
            let g = build_containment_q(&(&q).into(), &safe, delta)
                .unwrap()
                .eval(&[]);
            let (j, l) = build_containment_jl(&(&x).into(), &safe).unwrap();
            let k = (&j - &l.scale(delta)).eval(&[]);
            assert_eq!(
                linalg::max_eig(&g) <= 1e-12,
                linalg::max_eig(&k) <= 1e-12,
                "delta {delta}"
            );
        }
    }

    #[test]
    fn analysis_and_synthesis_orientations_agree() {
        // A fixed stable instance: analysis demands −E₁ − αF − βS ⪰ 0,
        // synthesis demands E + αF + βS ⪯ 0; both must give the same verdict.
        let a1 = m(1, 1, &[-1.0]);
        let b1 = m(1, 1, &[1.0]);
        let (alpha, beta) = (1.0, 1.0);
        for (q, ok) in [(1.0, true), (1.2, false)] {
            let qe: AffineExpr = m(1, 1, &[q]).into();
            let e1 = build_e1(&a1, &b1, &qe).unwrap();
            let f = build_f(&qe, 1).unwrap();
            let s = build_s(&AffineExpr::scalar(1.0), 1).unwrap();
            let analysis = -&(&(&e1 + &f.scale(alpha)) + &s.scale(beta));
            let synthesis = &(&e1 + &f.scale(alpha)) + &s.scale(beta);
            assert_eq!(linalg::min_eig(&analysis.eval(&[])) >= -1e-12, ok);
            assert_eq!(linalg::max_eig(&synthesis.eval(&[])) <= 1e-12, ok);
        }
    }

    #[test]
    fn e1_quadratic_form_is_lyapunov_derivative() {
        let a1 = m(2, 2, &[-1.0, 0.5, -0.3, -2.0]);
        let b1 = m(2, 3, &[1.0, 0.0, 0.2, 0.0, 1.0, -0.4]);
        let q = m(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let e1 = build_e1(&a1, &b1, &(&q).into()).unwrap().eval(&[]);
        let zeta = DVector::from_vec(vec![0.7, -1.1]);
        let a = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let mut w = DVector::zeros(6);
        w.rows_mut(0, 2).copy_from(&zeta);
        w[2] = 1.0;
        w.rows_mut(3, 3).copy_from(&a);
        let quad = w.dot(&(&e1 * &w));
        let v = |z: &DVector<f64>| z.dot(&(&q * z));
        let h = 1e-6;
        let step = |h: f64| &zeta + (&a1 * &zeta + &b1 * &a) * h;
        let fd = (v(&step(h)) - v(&step(-h))) / (2.0 * h);
        assert!(
            (fd - quad).abs() <= 1e-6 * quad.abs().max(1.0),
            "{fd} vs {quad}"
        );
    }

    #[test]
    fn built_expressions_are_symmetric_for_symmetric_variables() {
        let hat = case_hat();
        let mut p = SdpProblem::new();
        let eta = EtaExprs {
            x: p.add_symmetric("X", 2).unwrap(),
            y: p.add_symmetric("Y", 2).unwrap(),
            a: p.add_matrix("Abf", 2, 2).unwrap(),
            b: p.add_matrix("Bbf", 2, 1).unwrap(),
            c: p.add_matrix("Cbf", 1, 2).unwrap(),
            d: p.add_matrix("Dbf", 1, 1).unwrap(),
        };
        let ra = p.add_symmetric("Ra", 4).unwrap();
        let safe = Ellipsoid::centered(diag(&[0.022, 0.022])).unwrap();
        let (j, l) = build_containment_jl(&eta.x, &safe).unwrap();
        let exprs = [
            build_e2bf(&eta, &hat).unwrap(),
            build_fbf(&eta, 4).unwrap(),
            build_sbf(&ra, 2).unwrap(),
            j,
            l,
            build_e1(&hat.a_hat, &hat.b1_cal, &eta.x).unwrap(),
            build_containment_q(&eta.y, &safe, 0.9).unwrap(),
        ];
        for e in &exprs {
            assert!(e.asymmetry() <= 1e-12);
        }
    }
}
