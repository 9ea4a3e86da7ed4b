//! Finite-horizon coupled Riccati equations for the pair `(P_t, P̄_t)`.
//!
//! Time runs backward from the terminal weights at `t = T` to `t = 0`.
//! The right-hand side uses Moore-Penrose pseudoinverses of `Υ⁽¹⁾`, `Υ⁽²⁾`,
//! which reduce to ordinary inverses whenever both are positive definite.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, min_eigenvalue, pinv_sym, symmetrize, PSD_TOL};
use crate::model::{validate, CostSpec, Gains, HorizonMode, MeanFieldSystem};

/// Tolerance of the regular condition `Υ Υ† M = M`, relative to `max(1, |M|)`.
pub const REGULAR_TOL: f64 = 1e-8;
/// Any entry above this magnitude is treated as finite-time escape.
pub const BLOWUP: f64 = 1e12;
/// Strictness threshold on the smallest eigenvalue of `Υ⁽¹⁾`, `Υ⁽²⁾`.
pub const SOLVABILITY_TOL: f64 = 1e-10;

/// Default RK4 step count: `max(2000, ceil(4000 T))`.
pub fn default_steps(horizon: f64) -> usize {
    ((4000.0 * horizon).ceil() as usize).max(2000)
}

/// `Υ⁽¹⁾, Υ⁽²⁾, M⁽¹⁾, M⁽²⁾` and the gains they induce at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiAux {
    pub ups1: DMatrix<f64>,
    pub ups2: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
    pub gains: Gains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiRhs {
    /// `-dP/dt`
    pub dp: DMatrix<f64>,
    /// `-dP̄/dt`
    pub dpbar: DMatrix<f64>,
    pub aux: RiccatiAux,
    pub regular: bool,
}

fn finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}

fn regular_holds(ups: &DMatrix<f64>, ups_pinv: &DMatrix<f64>, m: &DMatrix<f64>) -> bool {
    let defect = (ups * ups_pinv * m - m).amax();
    defect <= REGULAR_TOL * m.amax().max(1.0)
}

/// Constant coefficient combinations shared by every right-hand-side evaluation.
pub(crate) struct Coeffs<'a> {
    sys: &'a MeanFieldSystem,
    cost: &'a CostSpec,
    a_sum: DMatrix<f64>,
    c_sum: DMatrix<f64>,
    d_sum: DMatrix<f64>,
    bt: DMatrix<f64>,
    dt: DMatrix<f64>,
    b_sum_t: DMatrix<f64>,
    d_sum_t: DMatrix<f64>,
    r_sum: DMatrix<f64>,
}

impl<'a> Coeffs<'a> {
    pub(crate) fn new(sys: &'a MeanFieldSystem, cost: &'a CostSpec) -> Self {
        let d_sum = sys.d() + sys.dbar();
        Coeffs {
            sys,
            cost,
            a_sum: sys.a() + sys.abar(),
            c_sum: sys.c() + sys.cbar(),
            bt: sys.b().transpose(),
            dt: sys.d().transpose(),
            b_sum_t: (sys.b() + sys.bbar()).transpose(),
            d_sum_t: d_sum.transpose(),
            d_sum,
            r_sum: cost.r() + cost.rbar(),
        }
    }
}

/// `m <- (m + m') / 2` without allocating.
fn symmetrize_mut(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `m <- m + m'` without allocating.
fn add_transpose_mut(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)] *= 2.0;
        for i in 0..j {
            let v = m[(i, j)] + m[(j, i)];
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Evaluates `(-Ṗ, -P̄̇)` together with the auxiliary matrices.
pub fn coupled_rhs(
    p: &DMatrix<f64>,
    pbar: &DMatrix<f64>,
    sys: &MeanFieldSystem,
    cost: &CostSpec,
) -> Result<RiccatiRhs> {
    let n = sys.n();
    if p.shape() != (n, n) {
        return Err(Error::dim("P", (n, n), p.shape()));
    }
    if pbar.shape() != (n, n) {
        return Err(Error::dim("Pbar", (n, n), pbar.shape()));
    }
    rhs_with(&Coeffs::new(sys, cost), p, pbar)
}

pub(crate) fn rhs_with(co: &Coeffs, p: &DMatrix<f64>, pbar: &DMatrix<f64>) -> Result<RiccatiRhs> {
    let (sys, cost) = (co.sys, co.cost);
    let s = p + pbar;

    let dtp = &co.dt * p;
    let mut ups1 = cost.r() + &dtp * sys.d();
    symmetrize_mut(&mut ups1);
    finite("Ups1", &ups1)?;
    let dsp = &co.d_sum_t * p;
    let mut ups2 = &co.r_sum + &dsp * &co.d_sum;
    symmetrize_mut(&mut ups2);
    finite("Ups2", &ups2)?;
    let m1 = &co.bt * p + &dtp * sys.c();
    finite("M1", &m1)?;
    let m2 = &co.b_sum_t * &s + &dsp * &co.c_sum;
    finite("M2", &m2)?;

    let pinv1 = pinv_sym(&ups1);
    let pinv2 = pinv_sym(&ups2);
    let regular = regular_holds(&ups1, &pinv1, &m1) && regular_holds(&ups2, &pinv2, &m2);
    let k1 = &pinv1 * &m1;
    let k2 = &pinv2 * &m2;
    let quad1 = m1.tr_mul(&k1);
    let quad2 = m2.tr_mul(&k2);

    let mut dp = p * sys.a();
    add_transpose_mut(&mut dp);
    dp += cost.q() + sys.c().tr_mul(&(p * sys.c())) - &quad1;
    symmetrize_mut(&mut dp);
    finite("dP", &dp)?;

    let pcbar = p * sys.cbar();
    let mut dpbar = p * sys.abar() + pbar * &co.a_sum + sys.c().tr_mul(&pcbar);
    add_transpose_mut(&mut dpbar);
    dpbar += cost.qbar() + sys.cbar().tr_mul(&pcbar) + &quad1 - &quad2;
    symmetrize_mut(&mut dpbar);
    finite("dPbar", &dpbar)?;

    let gains = Gains { kbar: &k1 - &k2, k: -k1 };
    Ok(RiccatiRhs { dp, dpbar, aux: RiccatiAux { ups1, ups2, m1, m2, gains }, regular })
}

/// Solution of the coupled Riccati equations on a uniform grid `0 = t_0 < … < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub pbar: Vec<DMatrix<f64>>,
    pub aux: Vec<RiccatiAux>,
    pub regular: Vec<bool>,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap_or(&0.0)
    }

    pub fn steps(&self) -> usize {
        self.grid.len().saturating_sub(1)
    }

    pub fn step_size(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }

    pub fn gains(&self) -> impl Iterator<Item = &Gains> {
        self.aux.iter().map(|a| &a.gains)
    }

    /// Index of the grid point at `t`, if `t` is on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let h = self.step_size();
        if !(t.is_finite() && h > 0.0) || t < -1e-9 * h {
            return None;
        }
        let idx = (t / h).round() as usize;
        (idx < self.grid.len() && (self.grid[idx] - t).abs() <= 1e-9 * h.max(f64::MIN_POSITIVE))
            .then_some(idx)
    }
}

fn max_abs2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.amax().max(b.amax())
}

/// Backward RK4 sweep. Calls `visit(k, P, P̄, rhs)` at every grid point,
/// from `k = N` down to `k = 0`, with `rhs` evaluated at that point.
fn sweep<F>(
    sys: &MeanFieldSystem,
    cost: &CostSpec,
    horizon: f64,
    steps: usize,
    mut visit: F,
) -> Result<(DMatrix<f64>, DMatrix<f64>)>
where
    F: FnMut(usize, &DMatrix<f64>, &DMatrix<f64>, RiccatiRhs),
{
    let co = Coeffs::new(sys, cost);
    let h = horizon / steps as f64;
    let mut p = cost.p_term().clone();
    let mut pbar = cost.pbar_term().clone();
    for k in (0..=steps).rev() {
        let t = k as f64 * h;
        let k1 = rhs_with(&co, &p, &pbar).map_err(|e| blowup_or(e, t))?;
        if !k1.regular {
            return Err(Error::Irregular { time: t });
        }
        if k == 0 {
            visit(0, &p, &pbar, k1);
            break;
        }
        let stage = |dp: &DMatrix<f64>, dpbar: &DMatrix<f64>, w: f64| {
            let mut ps = &p + dp * w;
            let mut pbs = &pbar + dpbar * w;
            symmetrize_mut(&mut ps);
            symmetrize_mut(&mut pbs);
            rhs_with(&co, &ps, &pbs).map_err(|e| blowup_or(e, t))
        };
        let k2 = stage(&k1.dp, &k1.dpbar, 0.5 * h)?;
        let k3 = stage(&k2.dp, &k2.dpbar, 0.5 * h)?;
        let k4 = stage(&k3.dp, &k3.dpbar, h)?;
        let mut next_p = (&k2.dp + &k3.dp) * 2.0 + &k1.dp + &k4.dp;
        next_p *= h / 6.0;
        next_p += &p;
        symmetrize_mut(&mut next_p);
        let mut next_pbar = (&k2.dpbar + &k3.dpbar) * 2.0 + &k1.dpbar + &k4.dpbar;
        next_pbar *= h / 6.0;
        next_pbar += &pbar;
        symmetrize_mut(&mut next_pbar);
        visit(k, &p, &pbar, k1);
        p = next_p;
        pbar = next_pbar;
        let tn = (k - 1) as f64 * h;
        if !(all_finite(&p) && all_finite(&pbar)) || max_abs2(&p, &pbar) > BLOWUP {
            return Err(Error::Diverged { time: tn });
        }
    }
    Ok((p, pbar))
}

fn blowup_or(e: Error, t: f64) -> Error {
    match e {
        Error::NonFinite(_) => Error::Diverged { time: t },
        other => other,
    }
}

fn check_horizon(sys: &MeanFieldSystem, cost: &CostSpec, horizon: f64, steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 {
        return Err(Error::Precondition("at least one step is required".into()));
    }
    let report = validate(sys, cost, HorizonMode::Finite)?;
    if !report.passed() {
        let failed: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
        return Err(Error::Precondition(format!("assumptions violated: {}", failed.join(", "))));
    }
    Ok(())
}

/// Integrates the coupled Riccati equations from the terminal weights at
/// `t = horizon` back to `t = 0` with `steps` classical RK4 steps.
pub fn integrate_backward(
    sys: &MeanFieldSystem,
    cost: &CostSpec,
    horizon: f64,
    steps: usize,
) -> Result<RiccatiSolution> {
    check_horizon(sys, cost, horizon, steps)?;
    let h = horizon / steps as f64;
    let mut p = vec![DMatrix::zeros(0, 0); steps + 1];
    let mut pbar = p.clone();
    let mut aux: Vec<Option<RiccatiAux>> = vec![None; steps + 1];
    let mut regular = vec![true; steps + 1];
    sweep(sys, cost, horizon, steps, |k, pk, pbk, rhs| {
        p[k] = pk.clone();
        pbar[k] = pbk.clone();
        regular[k] = rhs.regular;
        aux[k] = Some(rhs.aux);
    })?;
    let mut grid: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    grid[steps] = horizon;
    Ok(RiccatiSolution {
        grid,
        p,
        pbar,
        aux: aux.into_iter().map(|a| a.expect("every grid point visited")).collect(),
        regular,
    })
}

/// `(P_0(T), P̄_0(T))` without recording the trajectory.
pub fn initial_value(
    sys: &MeanFieldSystem,
    cost: &CostSpec,
    horizon: f64,
    steps: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_horizon(sys, cost, horizon, steps)?;
    sweep(sys, cost, horizon, steps, |_, _, _, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", content = "times", rename_all = "snake_case")]
pub enum Solvability {
    UniquelySolvable,
    /// Grid times where `Υ⁽¹⁾` or `Υ⁽²⁾` is not positive definite.
    NotStrictlySolvable(Vec<f64>),
}

pub fn solvability_check(sol: &RiccatiSolution) -> Solvability {
    let bad: Vec<f64> = sol
        .aux
        .iter()
        .zip(&sol.grid)
        .filter(|(aux, _)| {
            min_eigenvalue(&aux.ups1) <= SOLVABILITY_TOL || min_eigenvalue(&aux.ups2) <= SOLVABILITY_TOL
        })
        .map(|(_, t)| *t)
        .collect();
    if bad.is_empty() {
        Solvability::UniquelySolvable
    } else {
        Solvability::NotStrictlySolvable(bad)
    }
}

/// Feedback gains at grid time `t`. Off-grid times are rejected.
pub fn gains_at(sol: &RiccatiSolution, t: f64) -> Result<Gains> {
    sol.index_of(t)
        .map(|k| sol.aux[k].gains.clone())
        .ok_or(Error::OffGrid(t))
}

/// `E(x₀'P₀x₀) + Ex₀'P̄₀Ex₀` written through the first two moments of `x₀`.
pub fn optimal_cost(
    p0: &DMatrix<f64>,
    pbar0: &DMatrix<f64>,
    mean: &DVector<f64>,
    second_moment: &DMatrix<f64>,
) -> Result<f64> {
    let n = p0.nrows();
    if pbar0.shape() != (n, n) {
        return Err(Error::dim("Pbar0", (n, n), pbar0.shape()));
    }
    if mean.len() != n {
        return Err(Error::dim("mean", (n, 1), (mean.len(), 1)));
    }
    if second_moment.shape() != (n, n) {
        return Err(Error::dim("second moment", (n, n), second_moment.shape()));
    }
    let cov = second_moment - mean * mean.transpose();
    let scale = second_moment.amax().max(1.0);
    if min_eigenvalue(&cov) < -PSD_TOL * scale {
        return Err(Error::Precondition(
            "second moment must dominate the outer product of the mean".into(),
        ));
    }
    Ok((p0 * second_moment).trace() + (mean.transpose() * pbar0 * mean)[(0, 0)])
}

/// Decomposition `P̄ = P̄⁽¹⁾ + P̄⁽²⁾ + P̄⁽³⁾` of the mean-field block of the costate map.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateSplit {
    pub grid: Vec<f64>,
    pub pbar1: Vec<DMatrix<f64>>,
    pub pbar2: Vec<DMatrix<f64>>,
    pub pbar3: Vec<DMatrix<f64>>,
}

impl CostateSplit {
    pub fn sum_at(&self, k: usize) -> DMatrix<f64> {
        &self.pbar1[k] + &self.pbar2[k] + &self.pbar3[k]
    }
}

struct SplitState {
    p: DMatrix<f64>,
    s1: DMatrix<f64>,
    s2: DMatrix<f64>,
    s3: DMatrix<f64>,
}

impl SplitState {
    fn axpy(&self, d: &SplitState, w: f64) -> SplitState {
        SplitState {
            p: symmetrize(&(&self.p + &d.p * w)),
            s1: &self.s1 + &d.s1 * w,
            s2: &self.s2 + &d.s2 * w,
            s3: &self.s3 + &d.s3 * w,
        }
    }

    fn max_abs(&self) -> f64 {
        [&self.p, &self.s1, &self.s2, &self.s3]
            .iter()
            .map(|m| if all_finite(m) { m.amax() } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

fn split_rhs(st: &SplitState, co: &Coeffs) -> Result<SplitState> {
    let (sys, cost) = (co.sys, co.cost);
    let pbar = &st.s1 + &st.s2 + &st.s3;
    let rhs = rhs_with(co, &st.p, &pbar)?;
    let (a, abar, b, bbar) = (sys.a(), sys.abar(), sys.b(), sys.bbar());
    let (c, cbar, d, dbar) = (sys.c(), sys.cbar(), sys.d(), sys.dbar());
    let a_sum = a + abar;
    let b_sum = b + bbar;
    let p = &st.p;
    let k = &rhs.aux.gains.k;
    let kbar = &rhs.aux.gains.kbar;
    let kt = k + kbar;
    let cbar_t = cbar.transpose();
    let cbar_pd = &cbar_t * p * d;

    let d1 = cost.qbar()
        + p * abar
        + a.transpose() * &st.s1
        + &st.s1 * &a_sum
        + c.transpose() * p * cbar
        + (p * b + c.transpose() * p * d) * kbar
        + c.transpose() * p * dbar * &kt
        + (p * bbar + &st.s1 * &b_sum) * &kt;
    let d2 = &st.s2 * a
        + abar.transpose() * p
        + a_sum.transpose() * &st.s2
        + &cbar_t * p * c
        + (&st.s2 * b + &cbar_pd) * k;
    let d3 = &st.s2 * abar
        + &st.s3 * &a_sum
        + abar.transpose() * &st.s1
        + a_sum.transpose() * &st.s3
        + &cbar_t * p * cbar
        + (&st.s2 * b + &cbar_pd) * kbar
        + (&cbar_t * p * dbar + &st.s2 * bbar + &st.s3 * &b_sum) * &kt;
    Ok(SplitState { p: rhs.dp, s1: d1, s2: d2, s3: d3 })
}

/// Integrates the three split equations backward on the grid of `sol`,
/// carrying `P` along so that every RK4 stage sees consistent gains.
pub fn integrate_costate_split(
    sol: &RiccatiSolution,
    sys: &MeanFieldSystem,
    cost: &CostSpec,
) -> Result<CostateSplit> {
    if let Solvability::NotStrictlySolvable(times) = solvability_check(sol) {
        return Err(Error::Precondition(format!(
            "Riccati solution is not uniquely solvable at {} grid points",
            times.len()
        )));
    }
    let co = Coeffs::new(sys, cost);
    let steps = sol.steps();
    let h = sol.step_size();
    let n = sys.n();
    let mut st = SplitState {
        p: cost.p_term().clone(),
        s1: cost.pbar_term().clone(),
        s2: DMatrix::zeros(n, n),
        s3: DMatrix::zeros(n, n),
    };
    let mut pbar1 = vec![DMatrix::zeros(n, n); steps + 1];
    let mut pbar2 = pbar1.clone();
    let mut pbar3 = pbar1.clone();
    for k in (0..=steps).rev() {
        pbar1[k] = st.s1.clone();
        pbar2[k] = st.s2.clone();
        pbar3[k] = st.s3.clone();
        if k == 0 {
            break;
        }
        let t = sol.grid[k];
        let f = |s: &SplitState| split_rhs(s, &co).map_err(|e| blowup_or(e, t));
        let k1 = f(&st)?;
        let k2 = f(&st.axpy(&k1, 0.5 * h))?;
        let k3 = f(&st.axpy(&k2, 0.5 * h))?;
        let k4 = f(&st.axpy(&k3, h))?;
        let w = h / 6.0;
        st = SplitState {
            p: symmetrize(&(&st.p + (&k1.p + (&k2.p + &k3.p) * 2.0 + &k4.p) * w)),
            s1: &st.s1 + (&k1.s1 + (&k2.s1 + &k3.s1) * 2.0 + &k4.s1) * w,
            s2: &st.s2 + (&k1.s2 + (&k2.s2 + &k3.s2) * 2.0 + &k4.s2) * w,
            s3: &st.s3 + (&k1.s3 + (&k2.s3 + &k3.s3) * 2.0 + &k4.s3) * w,
        };
        if st.max_abs() > BLOWUP {
            return Err(Error::Diverged { time: sol.grid[k - 1] });
        }
    }
    Ok(CostateSplit { grid: sol.grid.clone(), pbar1, pbar2, pbar3 })
}

/// Residuals of the stationarity condition of the Hamiltonian, split into
/// the zero-mean part and the mean part:
/// `r₁ = Υ⁽¹⁾(u - Eu) + M⁽¹⁾(x - Ex)`, `r₂ = Υ⁽²⁾Eu + M⁽²⁾Ex`,
/// with `u = Kx + K̄Ex` and `Eu = (K + K̄)Ex`.
pub fn equilibrium_residual(
    x: &DVector<f64>,
    xmean: &DVector<f64>,
    gains: &Gains,
    aux: &RiccatiAux,
) -> (DVector<f64>, DVector<f64>) {
    let u = &gains.k * x + &gains.kbar * xmean;
    let eu = gains.total() * xmean;
    let r1 = &aux.ups1 * (&u - &eu) + &aux.m1 * (x - xmean);
    let r2 = &aux.ups2 * &eu + &aux.m2 * xmean;
    (r1, r2)
}
