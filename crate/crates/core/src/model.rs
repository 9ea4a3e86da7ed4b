//! Mean-field system and cost data, assumption checks, and the lifted
//! `[x - Ex; Ex]` representation used by the stability machinery.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, all_finite, asymmetry, kron, min_eigenvalue, symmetrize, PSD_TOL};

/// Asymmetry above this level in a weight matrix is reported as a warning.
pub const ASYMMETRY_WARN: f64 = 1e-9;

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dim(name, (rows, cols), m.shape()));
    }
    if !all_finite(m) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

/// Coefficients of
/// `dx = (A x + Ā Ex + B u + B̄ Eu) dt + (C x + C̄ Ex + D u + D̄ Eu) dW`
/// with scalar Brownian motion `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSystem {
    a: DMatrix<f64>,
    abar: DMatrix<f64>,
    b: DMatrix<f64>,
    bbar: DMatrix<f64>,
    c: DMatrix<f64>,
    cbar: DMatrix<f64>,
    d: DMatrix<f64>,
    dbar: DMatrix<f64>,
}

impl MeanFieldSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        abar: DMatrix<f64>,
        b: DMatrix<f64>,
        bbar: DMatrix<f64>,
        c: DMatrix<f64>,
        cbar: DMatrix<f64>,
        d: DMatrix<f64>,
        dbar: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if m == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        for (name, mat) in [("A", &a), ("Abar", &abar), ("C", &c), ("Cbar", &cbar)] {
            check_shape(name, mat, n, n)?;
        }
        for (name, mat) in [("B", &b), ("Bbar", &bbar), ("D", &d), ("Dbar", &dbar)] {
            check_shape(name, mat, n, m)?;
        }
        Ok(Self { a, abar, b, bbar, c, cbar, d, dbar })
    }

    /// Scalar system from `[A, Ā, B, B̄, C, C̄, D, D̄]`.
    pub fn scalar(coeffs: [f64; 8]) -> Result<Self> {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(
            s(coeffs[0]),
            s(coeffs[1]),
            s(coeffs[2]),
            s(coeffs[3]),
            s(coeffs[4]),
            s(coeffs[5]),
            s(coeffs[6]),
            s(coeffs[7]),
        )
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn abar(&self) -> &DMatrix<f64> {
        &self.abar
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn bbar(&self) -> &DMatrix<f64> {
        &self.bbar
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn cbar(&self) -> &DMatrix<f64> {
        &self.cbar
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn dbar(&self) -> &DMatrix<f64> {
        &self.dbar
    }

    /// True when every mean-field coefficient vanishes.
    pub fn is_mean_field_free(&self) -> bool {
        [&self.abar, &self.bbar, &self.cbar, &self.dbar]
            .iter()
            .all(|m| m.iter().all(|v| *v == 0.0))
    }
}

/// Quadratic weights of the cost functional. All matrices are stored
/// symmetrized; the raw asymmetry seen at construction is kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    qbar: DMatrix<f64>,
    r: DMatrix<f64>,
    rbar: DMatrix<f64>,
    p_term: DMatrix<f64>,
    pbar_term: DMatrix<f64>,
    asymmetry: Vec<(&'static str, f64)>,
}

impl CostSpec {
    pub fn new(
        q: DMatrix<f64>,
        qbar: DMatrix<f64>,
        r: DMatrix<f64>,
        rbar: DMatrix<f64>,
        p_term: DMatrix<f64>,
        pbar_term: DMatrix<f64>,
    ) -> Result<Self> {
        let n = q.nrows();
        let m = r.nrows();
        let mut asym = Vec::new();
        let mut fix = |name: &'static str, mat: DMatrix<f64>, dim: usize| -> Result<DMatrix<f64>> {
            check_shape(name, &mat, dim, dim)?;
            asym.push((name, asymmetry(&mat)));
            Ok(symmetrize(&mat))
        };
        let q = fix("Q", q, n)?;
        let qbar = fix("Qbar", qbar, n)?;
        let r = fix("R", r, m)?;
        let rbar = fix("Rbar", rbar, m)?;
        let p_term = fix("Pterm", p_term, n)?;
        let pbar_term = fix("Pbarterm", pbar_term, n)?;
        Ok(Self { q, qbar, r, rbar, p_term, pbar_term, asymmetry: asym })
    }

    /// Weights with zero terminal cost, as used for the infinite horizon.
    pub fn infinite(
        q: DMatrix<f64>,
        qbar: DMatrix<f64>,
        r: DMatrix<f64>,
        rbar: DMatrix<f64>,
    ) -> Result<Self> {
        let n = q.nrows();
        Self::new(q, qbar, r, rbar, DMatrix::zeros(n, n), DMatrix::zeros(n, n))
    }

    pub fn scalar(q: f64, qbar: f64, r: f64, rbar: f64) -> Result<Self> {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        Self::infinite(s(q), s(qbar), s(r), s(rbar))
    }

    /// Same running weights with the given terminal weights.
    pub fn with_terminal(&self, p_term: DMatrix<f64>, pbar_term: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.q.clone(),
            self.qbar.clone(),
            self.r.clone(),
            self.rbar.clone(),
            p_term,
            pbar_term,
        )
    }

    /// Same running weights, terminal weights zeroed.
    pub fn without_terminal(&self) -> Self {
        let n = self.n();
        let mut out = self.clone();
        out.p_term = DMatrix::zeros(n, n);
        out.pbar_term = DMatrix::zeros(n, n);
        out
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }
    pub fn m(&self) -> usize {
        self.r.nrows()
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn qbar(&self) -> &DMatrix<f64> {
        &self.qbar
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn rbar(&self) -> &DMatrix<f64> {
        &self.rbar
    }
    pub fn p_term(&self) -> &DMatrix<f64> {
        &self.p_term
    }
    pub fn pbar_term(&self) -> &DMatrix<f64> {
        &self.pbar_term
    }

    pub fn has_zero_terminal(&self) -> bool {
        self.p_term.iter().chain(self.pbar_term.iter()).all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonMode {
    Finite,
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub mode: HorizonMode,
    pub checks: Vec<AssumptionCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Checks the weight-sign assumptions. Dimension disagreement between the
/// system and the weights is a hard error.
pub fn validate(sys: &MeanFieldSystem, cost: &CostSpec, mode: HorizonMode) -> Result<ValidationReport> {
    let (n, m) = (sys.n(), sys.m());
    for (name, mat, dim) in [
        ("Q", cost.q(), n),
        ("Qbar", cost.qbar(), n),
        ("R", cost.r(), m),
        ("Rbar", cost.rbar(), m),
        ("Pterm", cost.p_term(), n),
        ("Pbarterm", cost.pbar_term(), n),
    ] {
        if mat.shape() != (dim, dim) {
            return Err(Error::dim(name, (dim, dim), mat.shape()));
        }
    }

    let mut pairs: Vec<(&str, DMatrix<f64>)> = vec![
        ("Q >= 0", cost.q().clone()),
        ("Q + Qbar >= 0", cost.q() + cost.qbar()),
        ("R >= 0", cost.r().clone()),
        ("R + Rbar >= 0", cost.r() + cost.rbar()),
    ];
    if mode == HorizonMode::Finite {
        pairs.push(("Pterm >= 0", cost.p_term().clone()));
        pairs.push(("Pterm + Pbarterm >= 0", cost.p_term() + cost.pbar_term()));
    }
    let checks = pairs
        .into_iter()
        .map(|(name, mat)| {
            let min_eig = min_eigenvalue(&mat);
            AssumptionCheck { name: name.to_string(), passed: min_eig >= -PSD_TOL, min_eigenvalue: min_eig }
        })
        .collect();
    let warnings = cost
        .asymmetry
        .iter()
        .filter(|(_, a)| *a > ASYMMETRY_WARN)
        .map(|(name, a)| format!("{name} was asymmetric by {a:e} and has been symmetrized"))
        .collect();
    Ok(ValidationReport { mode, checks, warnings })
}

/// Linear feedback `u = K x + K̄ Ex`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gains {
    pub k: DMatrix<f64>,
    pub kbar: DMatrix<f64>,
}

impl Gains {
    pub fn new(k: DMatrix<f64>, kbar: DMatrix<f64>) -> Result<Self> {
        check_shape("Kbar", &kbar, k.nrows(), k.ncols())?;
        check_shape("K", &k, kbar.nrows(), kbar.ncols())?;
        Ok(Self { k, kbar })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self { k: DMatrix::zeros(m, n), kbar: DMatrix::zeros(m, n) }
    }

    pub fn scalar(k: f64, kbar: f64) -> Self {
        Self { k: DMatrix::from_element(1, 1, k), kbar: DMatrix::from_element(1, 1, kbar) }
    }

    /// `K + K̄`, the gain acting on the mean.
    pub fn total(&self) -> DMatrix<f64> {
        &self.k + &self.kbar
    }

    fn check_against(&self, sys: &MeanFieldSystem) -> Result<()> {
        if self.k.shape() != (sys.m(), sys.n()) {
            return Err(Error::dim("K", (sys.m(), sys.n()), self.k.shape()));
        }
        if self.kbar.shape() != (sys.m(), sys.n()) {
            return Err(Error::dim("Kbar", (sys.m(), sys.n()), self.kbar.shape()));
        }
        Ok(())
    }
}

/// Closed-loop coefficients under `u = K x + K̄ Ex`: the deviation block
/// `(A + BK, C + DK, Q + K'RK)` and the mean block with barred data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedLoop {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub cbar: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub qbar: DMatrix<f64>,
}

impl ClosedLoop {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Open loop (`K = K̄ = 0`).
    pub fn open(sys: &MeanFieldSystem, cost: &CostSpec) -> Result<Self> {
        closed_loop(sys, cost, &Gains::zeros(sys.m(), sys.n()))
    }
}

pub fn closed_loop(sys: &MeanFieldSystem, cost: &CostSpec, g: &Gains) -> Result<ClosedLoop> {
    g.check_against(sys)?;
    if cost.n() != sys.n() || cost.m() != sys.m() {
        return Err(Error::dim("cost", (sys.n(), sys.m()), (cost.n(), cost.m())));
    }
    let kt = g.total();
    let a = sys.a() + sys.b() * &g.k;
    let c = sys.c() + sys.d() * &g.k;
    let abar = sys.a() + sys.abar() + (sys.b() + sys.bbar()) * &kt;
    let cbar = sys.c() + sys.cbar() + (sys.d() + sys.dbar()) * &kt;
    let q = symmetrize(&(cost.q() + g.k.transpose() * cost.r() * &g.k));
    let qbar = symmetrize(&(cost.q() + cost.qbar() + kt.transpose() * (cost.r() + cost.rbar()) * &kt));
    Ok(ClosedLoop { a, c, abar, cbar, q, qbar })
}

/// Dynamics of `X = [x - Ex; Ex]`:
/// `dX = Ã X dt + C̃ X dW` with output weight `Q̃`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftedSystem {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl LiftedSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `d/dt E(XX') = Ã S + S Ã' + C̃ S C̃'` applied to a second-moment matrix.
    pub fn moment_rate(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let as_ = &self.a * s;
        &as_ + as_.transpose() + &self.c * s * self.c.transpose()
    }
}

pub fn lift(cl: &ClosedLoop) -> LiftedSystem {
    let n = cl.n();
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&cl.a);
    a.view_mut((n, n), (n, n)).copy_from(&cl.abar);
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c.view_mut((0, 0), (n, n)).copy_from(&cl.c);
    c.view_mut((0, n), (n, n)).copy_from(&cl.cbar);
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    q.view_mut((0, 0), (n, n)).copy_from(&cl.q);
    q.view_mut((n, n), (n, n)).copy_from(&cl.qbar);
    LiftedSystem { a, c, q }
}

/// `G` with `vec(dS/dt) = G vec(S)` for `S = E(XX')`:
/// `G = I ⊗ Ã + Ã ⊗ I + C̃ ⊗ C̃`.
pub fn moment_generator(ls: &LiftedSystem) -> DMatrix<f64> {
    let d = ls.dim();
    let id = DMatrix::identity(d, d);
    kron(&id, &ls.a) + kron(&ls.a, &id) + kron(&ls.c, &ls.c)
}

/// The generator restricted to symmetric matrices, in `svec` coordinates.
pub fn symmetric_moment_generator(ls: &LiftedSystem) -> DMatrix<f64> {
    linalg::sym_operator_matrix(ls.dim(), |s| ls.moment_rate(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{unvec, vec};

    fn example1() -> (MeanFieldSystem, CostSpec) {
        (
            MeanFieldSystem::scalar([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]).unwrap(),
            CostSpec::scalar(1.0, 1.0, 1.0, 1.0).unwrap(),
        )
    }

    #[test]
    fn example1_passes_assumptions() {
        let (sys, cost) = example1();
        let rep = validate(&sys, &cost, HorizonMode::Infinite).unwrap();
        assert!(rep.passed());
        assert!(rep.warnings.is_empty());
        let rep = validate(&sys, &cost, HorizonMode::Finite).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.checks.len(), 6);
    }

    #[test]
    fn negative_q_is_flagged() {
        let (sys, _) = example1();
        let cost = CostSpec::scalar(-1.0, 1.0, 1.0, 1.0).unwrap();
        let rep = validate(&sys, &cost, HorizonMode::Infinite).unwrap();
        assert!(!rep.passed());
        let names: Vec<_> = rep.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["Q >= 0"]);
    }

    #[test]
    fn zero_sum_weight_is_boundary_psd() {
        let (sys, _) = example1();
        let cost = CostSpec::scalar(1.0, -1.0, 1.0, 1.0).unwrap();
        assert!(validate(&sys, &cost, HorizonMode::Infinite).unwrap().passed());
    }

    #[test]
    fn dimension_mismatch_names_matrix() {
        let (sys, _) = example1();
        let cost = CostSpec::infinite(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        match validate(&sys, &cost, HorizonMode::Infinite) {
            Err(Error::Dimension { name, .. }) => assert_eq!(name, "R"),
            other => panic!("unexpected {other:?}"),
        }
        let err = MeanFieldSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("Cbar"));
    }

    #[test]
    fn non_finite_entries_rejected() {
        let err = MeanFieldSystem::scalar([f64::NAN, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(err, Error::NonFinite("A".into()));
    }

    #[test]
    fn asymmetric_weights_are_symmetrized_with_warning() {
        let (sys2, _) = (
            MeanFieldSystem::new(
                DMatrix::zeros(2, 2),
                DMatrix::zeros(2, 2),
                DMatrix::zeros(2, 1),
                DMatrix::zeros(2, 1),
                DMatrix::zeros(2, 2),
                DMatrix::zeros(2, 2),
                DMatrix::zeros(2, 1),
                DMatrix::zeros(2, 1),
            )
            .unwrap(),
            (),
        );
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]);
        let cost = CostSpec::infinite(q, DMatrix::zeros(2, 2), DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(cost.q()[(0, 1)], 0.1);
        assert_eq!(cost.q()[(1, 0)], 0.1);
        let rep = validate(&sys2, &cost, HorizonMode::Infinite).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn closed_loop_example1_drift() {
        let (sys, cost) = example1();
        let cl = closed_loop(&sys, &cost, &Gains::scalar(-0.7986, -0.2915)).unwrap();
        assert!((cl.a[(0, 0)] - (-0.27916)).abs() < 1e-12);
        // (0.2+0.4) + (0.6+0.2)(-1.0901)
        assert!((cl.abar[(0, 0)] - (0.6 + 0.8 * (-1.0901))).abs() < 1e-12);
    }

    #[test]
    fn zero_gains_reproduce_open_loop() {
        let (sys, cost) = example1();
        let cl = ClosedLoop::open(&sys, &cost).unwrap();
        assert_eq!(cl.a, *sys.a());
        assert_eq!(cl.q, *cost.q());
        assert_eq!(cl.qbar, cost.q() + cost.qbar());
        assert_eq!(cl.cbar[(0, 0)], 0.1 + 0.7);
    }

    #[test]
    fn inert_inputs_leave_drift_unchanged() {
        let sys = MeanFieldSystem::scalar([0.3, 0.1, 0.0, 0.5, -0.2, 0.4, 0.0, 0.7]).unwrap();
        let cost = CostSpec::scalar(1.0, 0.0, 1.0, 0.0).unwrap();
        let cl = closed_loop(&sys, &cost, &Gains::scalar(3.0, -1.0)).unwrap();
        assert_eq!(cl.a[(0, 0)], 0.3);
        assert_eq!(cl.c[(0, 0)], -0.2);
    }

    #[test]
    fn lift_places_blocks() {
        let cl = ClosedLoop {
            a: DMatrix::from_element(1, 1, -1.0),
            abar: DMatrix::from_element(1, 1, -2.0),
            c: DMatrix::from_element(1, 1, 0.5),
            cbar: DMatrix::from_element(1, 1, 0.1),
            q: DMatrix::from_element(1, 1, 1.0),
            qbar: DMatrix::from_element(1, 1, 2.0),
        };
        let ls = lift(&cl);
        assert_eq!(ls.a, DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]));
        assert_eq!(ls.c, DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.0]));
        assert_eq!(ls.q, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn zero_system_lifts_to_zero() {
        let cl = ClosedLoop {
            a: DMatrix::zeros(2, 2),
            abar: DMatrix::zeros(2, 2),
            c: DMatrix::zeros(2, 2),
            cbar: DMatrix::zeros(2, 2),
            q: DMatrix::zeros(2, 2),
            qbar: DMatrix::zeros(2, 2),
        };
        let ls = lift(&cl);
        assert!(ls.a.iter().chain(ls.c.iter()).chain(ls.q.iter()).all(|v| *v == 0.0));
        assert!(moment_generator(&ls).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn open_loop_lift_of_example1() {
        let (sys, cost) = example1();
        let ls = lift(&ClosedLoop::open(&sys, &cost).unwrap());
        assert_eq!(ls.q, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        // drift diag(A, A+Ā), diffusion [[C, C+C̄], [0, 0]]
        assert_eq!(ls.a, DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.2 + 0.4]));
        assert_eq!(ls.c, DMatrix::from_row_slice(2, 2, &[0.1, 0.1 + 0.7, 0.0, 0.0]));
    }

    #[test]
    fn deviation_moment_rate() {
        let (a, c) = (-0.7, 0.4);
        let cl = ClosedLoop {
            a: DMatrix::from_element(1, 1, a),
            abar: DMatrix::from_element(1, 1, a),
            c: DMatrix::from_element(1, 1, c),
            cbar: DMatrix::zeros(1, 1),
            q: DMatrix::zeros(1, 1),
            qbar: DMatrix::zeros(1, 1),
        };
        let g = moment_generator(&lift(&cl));
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let dx = unvec(&(&g * vec(&x)), 2);
        assert!((dx[(0, 0)] - (2.0 * a + c * c)).abs() < 1e-15);
        assert!(dx[(0, 1)].abs() + dx[(1, 0)].abs() + dx[(1, 1)].abs() < 1e-15);
    }
}
