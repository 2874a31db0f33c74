//! Plant, primary and secondary controllers, actuator/sensor selection, and
//! the closed-loop matrices driven by the attack `a = [a_uᵀ a_yᵀ]ᵀ`.

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::linalg::block;

fn zeros(r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::zeros(r, c)
}

fn expect_shape(
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    what: &str,
    against: &str,
) -> Result<()> {
    if m.shape() != (rows, cols) {
        return dim_err(format!(
            "{what} is {}x{} but {against} requires {rows}x{cols}",
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(())
}

/// `ẋ_p = A_p x_p + B_p u`, `y = C_p x_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return dim_err(format!(
                "A_p must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            ));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return dim_err(format!(
                "B_p is {}x{} but A_p is {n}x{n}",
                b.nrows(),
                b.ncols()
            ));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return dim_err(format!(
                "C_p is {}x{} but A_p is {n}x{n}",
                c.nrows(),
                c.ncols()
            ));
        }
        Ok(Plant { a, b, c })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// `ẋ₁ = A₁x₁ + B₁(y + a_y)`, `u_P = C₁x₁ + D₁(y + a_y) + a_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryController {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl PrimaryController {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return dim_err(format!(
                "A_1 must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            ));
        }
        if b.nrows() != n {
            return dim_err(format!("B_1 has {} rows but A_1 is {n}x{n}", b.nrows()));
        }
        if c.ncols() != n {
            return dim_err(format!("C_1 has {} columns but A_1 is {n}x{n}", c.ncols()));
        }
        expect_shape(&d, c.nrows(), b.ncols(), "D_1", "(C_1 rows, B_1 columns)")?;
        Ok(PrimaryController { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    fn check_against(&self, p: &Plant) -> Result<()> {
        expect_shape(
            &self.b,
            self.order(),
            p.outputs(),
            "B_1",
            "the plant output count",
        )?;
        expect_shape(
            &self.c,
            p.inputs(),
            self.order(),
            "C_1",
            "the plant input count",
        )?;
        expect_shape(
            &self.d,
            p.inputs(),
            p.outputs(),
            "D_1",
            "(plant inputs, plant outputs)",
        )
    }
}

/// `ẋ₂ = A₂x₂ + B₂y_S`, `u_S = C₂x₂ + D₂y_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryController {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SecondaryController {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return dim_err(format!(
                "A_2 must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            ));
        }
        if b.nrows() != n {
            return dim_err(format!("B_2 has {} rows but A_2 is {n}x{n}", b.nrows()));
        }
        if c.ncols() != n {
            return dim_err(format!("C_2 has {} columns but A_2 is {n}x{n}", c.ncols()));
        }
        expect_shape(&d, c.nrows(), b.ncols(), "D_2", "(C_2 rows, B_2 columns)")?;
        Ok(SecondaryController { a, b, c, d })
    }

    /// All-zero controller of the given order.
    pub fn zero(order: usize, inputs: usize, outputs: usize) -> Self {
        SecondaryController {
            a: zeros(order, order),
            b: zeros(order, outputs),
            c: zeros(inputs, order),
            d: zeros(inputs, outputs),
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Number of secondary inputs `m_u` it produces.
    pub fn inputs(&self) -> usize {
        self.d.nrows()
    }

    /// Number of secured measurements `m_y` it consumes.
    pub fn outputs(&self) -> usize {
        self.d.ncols()
    }
}

/// `u = u_P + E_u u_S`, `y_S = C_S y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub e_u: DMatrix<f64>,
    pub c_s: DMatrix<f64>,
}

impl Selection {
    /// Entries must be 0 or 1, with at most one 1 per row of `C_S` and per
    /// column of `E_u`.
    pub fn new(e_u: DMatrix<f64>, c_s: DMatrix<f64>) -> Result<Self> {
        let binary = |m: &DMatrix<f64>| m.iter().all(|v| *v == 0.0 || *v == 1.0);
        if !binary(&e_u) || !binary(&c_s) {
            return Err(Error::InvalidArgument(
                "selection matrices must have 0/1 entries".into(),
            ));
        }
        if let Some(j) = (0..e_u.ncols()).find(|&j| e_u.column(j).sum() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "E_u column {j} selects more than one input"
            )));
        }
        if let Some(i) = (0..c_s.nrows()).find(|&i| c_s.row(i).sum() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "C_S row {i} selects more than one sensor"
            )));
        }
        Ok(Selection { e_u, c_s })
    }

    /// `E_u = 0`, `C_S = 0`: secondary loop disconnected.
    pub fn disconnected(n_u: usize, m_u: usize, m_y: usize, n_y: usize) -> Self {
        Selection {
            e_u: zeros(n_u, m_u),
            c_s: zeros(m_y, n_y),
        }
    }

    fn check_against(&self, p: &Plant) -> Result<()> {
        if self.e_u.nrows() != p.inputs() {
            return dim_err(format!(
                "E_u has {} rows but the plant has {} inputs",
                self.e_u.nrows(),
                p.inputs()
            ));
        }
        if self.c_s.ncols() != p.outputs() {
            return dim_err(format!(
                "C_S has {} columns but the plant has {} outputs",
                self.c_s.ncols(),
                p.outputs()
            ));
        }
        Ok(())
    }
}

/// `ζ̇ = 𝒜ζ + ℬa` with `ζ = [ζ₁ᵀ x₂ᵀ]ᵀ`, `ζ₁ = [x_pᵀ x₁ᵀ]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub a_cal: DMatrix<f64>,
    pub b_cal: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub a3: DMatrix<f64>,
    pub a4: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub n1: usize,
    pub n2: usize,
    pub n_a: usize,
}

impl ClosedLoop {
    /// Tiles the partition into `𝒜`, `ℬ` (with `ℬ₂ = 0`).
    pub fn from_blocks(
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        a3: DMatrix<f64>,
        a4: DMatrix<f64>,
        b1: DMatrix<f64>,
    ) -> Result<Self> {
        let n1 = a1.nrows();
        let n2 = a4.nrows();
        let n_a = b1.ncols();
        expect_shape(&a1, n1, n1, "A1cal", "a square leading block")?;
        expect_shape(&a4, n2, n2, "A4cal", "a square trailing block")?;
        expect_shape(&a2, n1, n2, "A2cal", "(n1, n2)")?;
        expect_shape(&a3, n2, n1, "A3cal", "(n2, n1)")?;
        expect_shape(&b1, n1, n_a, "B1cal", "n1 rows")?;
        let b2 = zeros(n2, n_a);
        let a_cal = block(&[&[&a1, &a2], &[&a3, &a4]])?;
        let b_cal = block(&[&[&b1], &[&b2]])?;
        Ok(ClosedLoop {
            a_cal,
            b_cal,
            a1,
            a2,
            a3,
            a4,
            b1,
            b2,
            n1,
            n2,
            n_a,
        })
    }

    /// Loop with the secondary controller absent (`n₂ = 0`).
    pub fn primary_only(a1: DMatrix<f64>, b1: DMatrix<f64>) -> Result<Self> {
        let n1 = a1.nrows();
        Self::from_blocks(a1, zeros(n1, 0), zeros(0, n1), zeros(0, 0), b1)
    }

    pub fn dim(&self) -> usize {
        self.n1 + self.n2
    }

    /// True when `𝒜₂ = 0` and `𝒜₃ = 0`.
    pub fn is_decoupled(&self) -> bool {
        self.a2.iter().chain(self.a3.iter()).all(|v| *v == 0.0)
    }
}

/// `Â`, `B̂`, `Ĉ` and the attack matrix `ℬ₁`; everything synthesis needs.
#[derive(Debug, Clone, PartialEq)]
pub struct HatSystem {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub b1_cal: DMatrix<f64>,
}

impl HatSystem {
    pub fn new(
        a_hat: DMatrix<f64>,
        b_hat: DMatrix<f64>,
        c_hat: DMatrix<f64>,
        b1_cal: DMatrix<f64>,
    ) -> Result<Self> {
        let n1 = a_hat.nrows();
        if n1 == 0 || a_hat.ncols() != n1 {
            return dim_err(format!(
                "Ahat must be square and non-empty, got {}x{}",
                a_hat.nrows(),
                a_hat.ncols()
            ));
        }
        if b_hat.nrows() != n1 {
            return dim_err(format!(
                "Bhat has {} rows but Ahat is {n1}x{n1}",
                b_hat.nrows()
            ));
        }
        if c_hat.ncols() != n1 {
            return dim_err(format!(
                "Chat has {} columns but Ahat is {n1}x{n1}",
                c_hat.ncols()
            ));
        }
        if b1_cal.nrows() != n1 || b1_cal.ncols() == 0 {
            return dim_err(format!(
                "B1cal is {}x{} but Ahat is {n1}x{n1}",
                b1_cal.nrows(),
                b1_cal.ncols()
            ));
        }
        Ok(HatSystem {
            a_hat,
            b_hat,
            c_hat,
            b1_cal,
        })
    }

    pub fn n1(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `m_u`, columns of `B̂`.
    pub fn m_u(&self) -> usize {
        self.b_hat.ncols()
    }

    /// `m_y`, rows of `Ĉ`.
    pub fn m_y(&self) -> usize {
        self.c_hat.nrows()
    }

    pub fn n_a(&self) -> usize {
        self.b1_cal.ncols()
    }

    /// Primary-only loop on `ζ₁`.
    pub fn primary_loop(&self) -> ClosedLoop {
        ClosedLoop::primary_only(self.a_hat.clone(), self.b1_cal.clone())
            .expect("shapes validated in new")
    }
}

fn check_all(p: &Plant, pc: &PrimaryController, sel: &Selection) -> Result<()> {
    pc.check_against(p)?;
    sel.check_against(p)
}

fn check_secondary(sc: &SecondaryController, m_u: usize, m_y: usize) -> Result<()> {
    if sc.inputs() != m_u {
        return dim_err(format!(
            "D_2/C_2 produce {} inputs but the selection expects {m_u}",
            sc.inputs()
        ));
    }
    if sc.outputs() != m_y {
        return dim_err(format!(
            "D_2/B_2 consume {} measurements but the selection provides {m_y}",
            sc.outputs()
        ));
    }
    Ok(())
}

/// `ℬ₁ = [[B_p, B_p D₁], [0, B₁]]`.
fn attack_matrix(p: &Plant, pc: &PrimaryController) -> Result<DMatrix<f64>> {
    let top_right = &p.b * &pc.d;
    block(&[
        &[&p.b, &top_right],
        &[&zeros(pc.order(), p.inputs()), &pc.b],
    ])
}

/// Full closed loop of plant, primary controller and secondary controller.
///
/// The upper-right block of `𝒜₁` is `B_p C₁`.
pub fn assemble_closed_loop(
    p: &Plant,
    pc: &PrimaryController,
    sc: &SecondaryController,
    sel: &Selection,
) -> Result<ClosedLoop> {
    check_all(p, pc, sel)?;
    check_secondary(sc, sel.e_u.ncols(), sel.c_s.nrows())?;
    let (n_c1, n2) = (pc.order(), sc.order());
    let be = &p.b * &sel.e_u;
    let csc = &sel.c_s * &p.c;
    let a11 = &p.a + &p.b * &pc.d * &p.c + &be * &sc.d * &csc;
    let a1 = block(&[&[&a11, &(&p.b * &pc.c)], &[&(&pc.b * &p.c), &pc.a]])?;
    let a2 = block(&[&[&(&be * &sc.c)], &[&zeros(n_c1, n2)]])?;
    let a3 = block(&[&[&(&sc.b * &csc), &zeros(n2, n_c1)]])?;
    ClosedLoop::from_blocks(a1, a2, a3, sc.a.clone(), attack_matrix(p, pc)?)
}

/// `Â = [[A_p + B_pD₁C_p, B_pC₁], [B₁C_p, A₁]]`, `B̂ = [[B_pE_u], [0]]`,
/// `Ĉ = [C_SC_p, 0]`.
pub fn hat_matrices(p: &Plant, pc: &PrimaryController, sel: &Selection) -> Result<HatSystem> {
    check_all(p, pc, sel)?;
    let n_c1 = pc.order();
    let a11 = &p.a + &p.b * &pc.d * &p.c;
    let a_hat = block(&[&[&a11, &(&p.b * &pc.c)], &[&(&pc.b * &p.c), &pc.a]])?;
    let b_hat = block(&[&[&(&p.b * &sel.e_u)], &[&zeros(n_c1, sel.e_u.ncols())]])?;
    let c_hat = block(&[&[&(&sel.c_s * &p.c), &zeros(sel.c_s.nrows(), n_c1)]])?;
    HatSystem::new(a_hat, b_hat, c_hat, attack_matrix(p, pc)?)
}

/// `𝒜₁ = Â + B̂D₂Ĉ`, `𝒜₂ = B̂C₂`, `𝒜₃ = B₂Ĉ`, `𝒜₄ = A₂`.
pub fn closed_loop_from_hat(h: &HatSystem, sc: &SecondaryController) -> Result<ClosedLoop> {
    check_secondary(sc, h.m_u(), h.m_y())?;
    let a1 = &h.a_hat + &h.b_hat * &sc.d * &h.c_hat;
    let a2 = &h.b_hat * &sc.c;
    let a3 = &sc.b * &h.c_hat;
    ClosedLoop::from_blocks(a1, a2, a3, sc.a.clone(), h.b1_cal.clone())
}
