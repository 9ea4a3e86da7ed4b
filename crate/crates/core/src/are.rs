//! Infinite-horizon coupled algebraic Riccati equations.
//!
//! The stationary pair is obtained as the limit of `P_0(T)`, `P̄_0(T)` for
//! zero terminal weights as the horizon doubles, which is monotone in `T`
//! for both `P_0` and `P_0 + P̄_0`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::model::{closed_loop, lift, validate, ClosedLoop, CostSpec, Gains, HorizonMode, MeanFieldSystem, ValidationReport};
use crate::riccati::{coupled_rhs, default_steps, initial_value, RiccatiAux};
use crate::spectra::{self, ms_stability};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_HORIZON: f64 = 16384.0;
const START_HORIZON: f64 = 8.0;
/// RK4 steps per time unit inside the horizon doubling. The RK4 map shares its
/// fixed points with the ARE, so step size affects only the transient.
const ARE_STEPS_PER_UNIT: f64 = 100.0;
/// Stabilization verdicts require the closed-loop abscissa below `-STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    PositiveDefinite,
    PositiveSemiDefinite,
    Indefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreSolution {
    pub p: DMatrix<f64>,
    pub pbar: DMatrix<f64>,
    pub aux: RiccatiAux,
    pub classification: Classification,
    pub horizon_used: f64,
    /// Frobenius norms of the two ARE residuals.
    pub residual_norms: (f64, f64),
}

impl AreSolution {
    pub fn gains(&self) -> &Gains {
        &self.aux.gains
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreResiduals {
    pub res1: DMatrix<f64>,
    pub res2: DMatrix<f64>,
    pub regular: bool,
}

impl AreResiduals {
    pub fn norms(&self) -> (f64, f64) {
        (self.res1.norm(), self.res2.norm())
    }
}

/// Right-hand sides of the two stationary equations; both vanish at a solution.
pub fn are_residuals(
    p: &DMatrix<f64>,
    pbar: &DMatrix<f64>,
    sys: &MeanFieldSystem,
    cost: &CostSpec,
) -> Result<AreResiduals> {
    let rhs = coupled_rhs(p, pbar, sys, cost)?;
    Ok(AreResiduals { res1: rhs.dp, res2: rhs.dpbar, regular: rhs.regular })
}

/// PD if both `P` and `P + P̄` have smallest eigenvalue above `1e-8 (1 + |·|_F)`,
/// PSD if both are at least `-1e-10 (1 + |·|_F)`.
pub fn classify(p: &DMatrix<f64>, pbar: &DMatrix<f64>) -> Classification {
    let s = p + pbar;
    let (ep, es) = (min_eigenvalue(p), min_eigenvalue(&s));
    let (np, ns) = (1.0 + p.norm(), 1.0 + s.norm());
    if ep > 1e-8 * np && es > 1e-8 * ns {
        Classification::PositiveDefinite
    } else if ep >= -1e-10 * np && es >= -1e-10 * ns {
        Classification::PositiveSemiDefinite
    } else {
        Classification::Indefinite
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreOptions {
    pub tol: f64,
    pub max_horizon: f64,
}

impl Default for AreOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_horizon: DEFAULT_MAX_HORIZON }
    }
}

fn rel_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    (new - old).norm() / (1.0 + old.norm())
}

/// Horizon doubling from `T = 8` with zero terminal weights until both
/// `P_0` and `P_0 + P̄_0` move by less than `tol (1 + |·|_F)`.
pub fn solve_coupled_are(sys: &MeanFieldSystem, cost: &CostSpec, opts: AreOptions) -> Result<AreSolution> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Precondition(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let report = validate(sys, cost, HorizonMode::Infinite)?;
    if !report.passed() {
        let failed: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
        return Err(Error::Precondition(format!("assumptions violated: {}", failed.join(", "))));
    }
    let cost = cost.without_terminal();
    let mut horizon = START_HORIZON;
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    while horizon <= opts.max_horizon {
        let coarse = ((ARE_STEPS_PER_UNIT * horizon).ceil() as usize).max(2000);
        let attempt = match initial_value(sys, &cost, horizon, coarse) {
            // confirm escape at the default resolution before giving up
            Err(Error::Diverged { .. }) => initial_value(sys, &cost, horizon, default_steps(horizon)),
            other => other,
        };
        let (p, pbar) = match attempt {
            Ok(v) => v,
            Err(Error::Diverged { time }) => {
                return Err(Error::NonConvergent {
                    horizon,
                    reason: format!("Riccati integration diverged at t = {time}"),
                })
            }
            Err(e) => return Err(e),
        };
        if let Some((p_old, pbar_old)) = &prev {
            let dp = rel_change(&p, p_old);
            let ds = rel_change(&(&p + &pbar), &(p_old + pbar_old));
            if dp < opts.tol && ds < opts.tol {
                return finish(p, pbar, sys, &cost, horizon);
            }
        }
        prev = Some((p, pbar));
        horizon *= 2.0;
    }
    Err(Error::NonConvergent {
        horizon: horizon / 2.0,
        reason: "maximum horizon reached before convergence".into(),
    })
}

fn finish(
    p: DMatrix<f64>,
    pbar: DMatrix<f64>,
    sys: &MeanFieldSystem,
    cost: &CostSpec,
    horizon: f64,
) -> Result<AreSolution> {
    let rhs = coupled_rhs(&p, &pbar, sys, cost)?;
    if !rhs.regular {
        return Err(Error::Irregular { time: 0.0 });
    }
    let classification = classify(&p, &pbar);
    Ok(AreSolution {
        residual_norms: (rhs.dp.norm(), rhs.dpbar.norm()),
        p,
        pbar,
        aux: rhs.aux,
        classification,
        horizon_used: horizon,
    })
}

/// `K = -Υ₁†M₁`, `K̄ = -(Υ₂†M₂ - Υ₁†M₁)` at a stationary pair.
pub fn stationary_gains(
    p: &DMatrix<f64>,
    pbar: &DMatrix<f64>,
    sys: &MeanFieldSystem,
    cost: &CostSpec,
) -> Result<Gains> {
    let rhs = coupled_rhs(p, pbar, sys, cost)?;
    if !rhs.regular {
        return Err(Error::Precondition("regular condition fails at the given pair".into()));
    }
    Ok(rhs.aux.gains)
}

/// Real roots of `a x² + b x + c`, computed without cancellation.
/// Returns `None` when all three coefficients vanish.
fn real_roots(a: f64, b: f64, c: f64) -> Option<Vec<f64>> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return None;
    }
    let eps = 1e-14 * scale;
    if a.abs() <= eps {
        if b.abs() <= eps {
            return Some(Vec::new());
        }
        return Some(vec![-c / b]);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < -1e-14 * (b * b).max((4.0 * a * c).abs()) {
        return Some(Vec::new());
    }
    let sq = disc.max(0.0).sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return Some(vec![0.0]);
    }
    let (r1, r2) = (q / a, c / q);
    let mut roots = vec![r1.min(r2), r1.max(r2)];
    if sq == 0.0 {
        roots.truncate(1);
    }
    Some(roots)
}

/// Real roots of the first stationary equation for `n = m = 1`, before
/// pairing with `P̄` (see [`scalar_root_oracle`]). Roots where `Υ₁` vanishes
/// are kept here and dropped by the oracle.
pub fn scalar_p_roots(sys: &MeanFieldSystem, cost: &CostSpec) -> Result<Vec<f64>> {
    if sys.n() != 1 || sys.m() != 1 {
        return Err(Error::Precondition("scalar oracle requires n = m = 1".into()));
    }
    let g = |m: &DMatrix<f64>| m[(0, 0)];
    let (a, b, c, d) = (g(sys.a()), g(sys.b()), g(sys.c()), g(sys.d()));
    let (q, r) = (g(cost.q()), g(cost.r()));
    let lam = 2.0 * a + c * c;
    let bd = b + d * c;
    let a2 = lam * d * d - bd * bd;
    let a1 = q * d * d + lam * r;
    let a0 = q * r;
    real_roots(a2, a1, a0).ok_or_else(|| Error::Degenerate("first equation vanishes identically".into()))
}

/// Closed-form stationary pairs `(P, P̄)` for `n = m = 1`.
///
/// With `Υ₁ = R + D²P` and `M₁ = (B + DC)P`, the first equation
/// `Q + (2A + C²)P - M₁²/Υ₁ = 0` times `Υ₁` reads
/// `[(2A + C²)D² - (B + DC)²] P² + [Q D² + (2A + C²) R] P + Q R = 0`.
///
/// For each root, with `β = B + B̄`, `Υ₂ = R + R̄ + (D + D̄)²P` and
/// `M₂ = β P̄ + γ`, `γ = βP + (D + D̄)(C + C̄)P`, the second equation times `Υ₂` reads
/// `-β² P̄² + [2(A + Ā)Υ₂ - 2βγ] P̄ + c₀Υ₂ - γ² = 0`,
/// `c₀ = Q̄ + 2ĀP + (2CC̄ + C̄²)P + M₁²/Υ₁`.
///
/// Roots at which `Υ₁` or `Υ₂` vanishes are skipped.
pub fn scalar_root_oracle(sys: &MeanFieldSystem, cost: &CostSpec) -> Result<Vec<(f64, f64)>> {
    let p_roots = scalar_p_roots(sys, cost)?;
    let g = |m: &DMatrix<f64>| m[(0, 0)];
    let (a, abar, b, bbar) = (g(sys.a()), g(sys.abar()), g(sys.b()), g(sys.bbar()));
    let (c, cbar, d, dbar) = (g(sys.c()), g(sys.cbar()), g(sys.d()), g(sys.dbar()));
    let (qbar, r, rbar) = (g(cost.qbar()), g(cost.r()), g(cost.rbar()));
    let bd = b + d * c;

    let beta = b + bbar;
    let ds = d + dbar;
    let cs = c + cbar;
    let mut pairs = Vec::new();
    for p in p_roots {
        let ups1 = r + d * d * p;
        if ups1.abs() <= 1e-12 * r.abs().max(1.0) {
            continue;
        }
        let ups2 = r + rbar + ds * ds * p;
        if ups2.abs() <= 1e-12 * (r + rbar).abs().max(1.0) {
            continue;
        }
        let m1 = bd * p;
        let gamma = beta * p + ds * cs * p;
        let c0 = qbar + 2.0 * abar * p + (2.0 * c * cbar + cbar * cbar) * p + m1 * m1 / ups1;
        let quad = -beta * beta;
        let lin = 2.0 * (a + abar) * ups2 - 2.0 * beta * gamma;
        let cst = c0 * ups2 - gamma * gamma;
        let pbar_roots = real_roots(quad, lin, cst)
            .ok_or_else(|| Error::Degenerate(format!("second equation vanishes identically at P = {p}")))?;
        pairs.extend(pbar_roots.into_iter().map(|pb| (p, pb)));
    }
    Ok(pairs)
}

/// `(𝐐 + 𝐀'P + P𝐀 + 𝐂'P𝐂, 𝐐̄ + 𝐀̄'(P+P̄) + (P+P̄)𝐀̄ + 𝐂̄'P𝐂̄)` for the closed loop of `gains`.
pub fn closed_loop_lyapunov_residual(
    p: &DMatrix<f64>,
    pbar: &DMatrix<f64>,
    gains: &Gains,
    sys: &MeanFieldSystem,
    cost: &CostSpec,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let cl = closed_loop(sys, cost, gains)?;
    Ok(lyapunov_forms(&cl, p, pbar))
}

pub(crate) fn lyapunov_forms(cl: &ClosedLoop, p: &DMatrix<f64>, pbar: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let s = p + pbar;
    let pa = p * &cl.a;
    let r1 = &cl.q + &pa + pa.transpose() + cl.c.transpose() * p * &cl.c;
    let sa = &s * &cl.abar;
    let r2 = &cl.qbar + &sa + sa.transpose() + cl.cbar.transpose() * p * &cl.cbar;
    (r1, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "report", rename_all = "snake_case")]
pub enum Verdict {
    StabilizableDetectable,
    StabilizableObservable,
    NotStabilizable,
    AssumptionViolated(ValidationReport),
}

impl Verdict {
    pub fn is_stabilizable(&self) -> bool {
        matches!(self, Verdict::StabilizableDetectable | Verdict::StabilizableObservable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizationReport {
    pub verdict: Verdict,
    pub observable: bool,
    pub detectable: bool,
    pub solution: Option<AreSolution>,
    /// Why no solution is attached, when there is none.
    pub solver_message: Option<String>,
    pub open_loop_abscissa: Option<f64>,
    pub closed_loop_abscissa: Option<f64>,
    /// The verdict agrees with the sign of the relevant moment-generator abscissa.
    pub consistent: bool,
}

fn violated(report: ValidationReport) -> StabilizationReport {
    StabilizationReport {
        verdict: Verdict::AssumptionViolated(report),
        observable: false,
        detectable: false,
        solution: None,
        solver_message: None,
        open_loop_abscissa: None,
        closed_loop_abscissa: None,
        consistent: true,
    }
}

/// Decides mean-square stabilizability from the coupled ARE together with
/// exact observability / detectability of the open-loop lift.
pub fn stabilization_verdict(sys: &MeanFieldSystem, cost: &CostSpec, opts: AreOptions) -> StabilizationReport {
    let mut report = match validate(sys, cost, HorizonMode::Infinite) {
        Ok(r) => r,
        Err(e) => {
            return violated(ValidationReport {
                mode: HorizonMode::Infinite,
                checks: Vec::new(),
                warnings: vec![e.to_string()],
            })
        }
    };
    if !report.passed() {
        return violated(report);
    }
    let open = match ClosedLoop::open(sys, cost) {
        Ok(cl) => cl,
        Err(e) => {
            report.warnings.push(e.to_string());
            return violated(report);
        }
    };
    let observable = spectra::exact_observability_test(&open, spectra::DEFAULT_TMAX, spectra::DEFAULT_TOL);
    let detectable =
        observable || spectra::exact_detectability_test(&open, spectra::DEFAULT_TMAX, spectra::DEFAULT_TOL);
    let open_loop_abscissa = ms_stability(&lift(&open)).ok().map(|(_, a)| a);
    if !detectable {
        report.checks.push(crate::model::AssumptionCheck {
            name: "exact detectability".into(),
            passed: false,
            min_eigenvalue: f64::NAN,
        });
        let mut out = violated(report);
        out.open_loop_abscissa = open_loop_abscissa;
        return out;
    }

    let (solution, solver_message) = match solve_coupled_are(sys, cost, opts) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let closed_loop_abscissa = solution.as_ref().and_then(|s| {
        closed_loop(sys, cost, s.gains()).ok().and_then(|cl| ms_stability(&lift(&cl)).ok()).map(|(_, a)| a)
    });
    let verdict = match solution.as_ref().map(|s| s.classification) {
        Some(Classification::PositiveDefinite) if observable => Verdict::StabilizableObservable,
        Some(Classification::PositiveDefinite | Classification::PositiveSemiDefinite) => {
            Verdict::StabilizableDetectable
        }
        _ => Verdict::NotStabilizable,
    };
    let consistent = if verdict.is_stabilizable() {
        closed_loop_abscissa.is_some_and(|a| a < -STABILITY_MARGIN)
    } else {
        // an open loop that is already stable would contradict the verdict
        open_loop_abscissa.is_none_or(|a| a >= -STABILITY_MARGIN)
    };
    StabilizationReport {
        verdict,
        observable,
        detectable,
        solution,
        solver_message,
        open_loop_abscissa,
        closed_loop_abscissa,
        consistent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn example1() -> (MeanFieldSystem, CostSpec) {
        (
            MeanFieldSystem::scalar([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]).unwrap(),
            CostSpec::scalar(1.0, 1.0, 1.0, 1.0).unwrap(),
        )
    }

    fn example2() -> (MeanFieldSystem, CostSpec) {
        (
            MeanFieldSystem::scalar([2.0, 0.8, 1.0, 1.2, 0.1, 0.6, -0.8, -0.2]).unwrap(),
            CostSpec::scalar(1.0, 1.0, 1.0, 3.0).unwrap(),
        )
    }

    fn deterministic() -> (MeanFieldSystem, CostSpec) {
        (
            MeanFieldSystem::scalar([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            CostSpec::scalar(1.0, 0.0, 1.0, 0.0).unwrap(),
        )
    }

    #[test]
    fn residuals_trivial_cases() {
        let (sys, cost) = deterministic();
        let r = are_residuals(&s(1.0), &s(0.0), &sys, &cost).unwrap();
        assert_eq!(r.norms(), (0.0, 0.0));
        assert!(r.regular);
        let (sys, cost) = example1();
        let r = are_residuals(&s(0.0), &s(0.0), &sys, &cost).unwrap();
        assert_eq!(r.res1, s(1.0));
        assert_eq!(r.res2, s(1.0));
    }

    #[test]
    fn residuals_example2_rounded_pair() {
        let (sys, cost) = example2();
        let (n1, n2) = are_residuals(&s(-0.2356), &s(4.7637), &sys, &cost).unwrap().norms();
        assert!(n1 < 5e-4 && n2 < 5e-4, "{n1} {n2}");
    }

    #[test]
    fn oracle_example2() {
        let (sys, cost) = example2();
        let ps = scalar_p_roots(&sys, &cost).unwrap();
        assert_eq!(ps.len(), 2);
        assert!((ps[0] + 2.4679).abs() < 1e-3 && (ps[1] + 0.2356).abs() < 1e-3, "{ps:?}");
        let pairs = scalar_root_oracle(&sys, &cost).unwrap();
        assert_eq!(pairs.len(), 2, "{pairs:?}");
        for (p, _) in &pairs {
            assert!((p + 0.2356).abs() < 1e-3);
        }
        let mut pbars: Vec<f64> = pairs.iter().map(|x| x.1).collect();
        pbars.sort_by(f64::total_cmp);
        assert!((pbars[0] + 0.0869).abs() < 1e-3);
        assert!((pbars[1] - 4.7637).abs() < 1e-3);
    }

    #[test]
    fn oracle_example1() {
        let (sys, cost) = example1();
        let pairs = scalar_root_oracle(&sys, &cost).unwrap();
        let psd: Vec<_> = pairs.iter().filter(|(p, pb)| *p >= 0.0 && p + pb >= 0.0).collect();
        assert_eq!(psd.len(), 1);
        let (p, pb) = psd[0];
        assert!((p - 9.2250).abs() < 1e-3, "{p}");
        assert!((p + pb - 12.0242).abs() < 1e-3, "{}", p + pb);
    }

    #[test]
    fn oracle_deterministic() {
        let (sys, cost) = deterministic();
        let pairs = scalar_root_oracle(&sys, &cost).unwrap();
        let ps: Vec<f64> = pairs.iter().map(|x| x.0).collect();
        assert!(ps.contains(&1.0) && ps.contains(&-1.0));
        assert!(pairs.contains(&(1.0, 0.0)));
    }

    #[test]
    fn oracle_degenerate() {
        let sys = MeanFieldSystem::scalar([0.0; 8]).unwrap();
        let cost = CostSpec::scalar(0.0, 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(scalar_root_oracle(&sys, &cost), Err(Error::Degenerate(_))));
    }

    #[test]
    fn quadratic_roots_are_stable() {
        let r = real_roots(1.0, -1e8, 1.0).unwrap();
        assert!((r[0] - 1e-8).abs() < 1e-20);
        assert!((r[1] - 1e8).abs() < 1e-4);
        assert_eq!(real_roots(1.0, 0.0, 1.0).unwrap(), Vec::<f64>::new());
        assert_eq!(real_roots(0.0, 2.0, -4.0).unwrap(), vec![2.0]);
        assert_eq!(real_roots(1.0, -2.0, 1.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn deterministic_are() {
        let (sys, cost) = deterministic();
        let sol = solve_coupled_are(&sys, &cost, AreOptions::default()).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(sol.pbar[(0, 0)].abs() < 1e-9);
        assert!((sol.gains().k[(0, 0)] + 1.0).abs() < 1e-9);
        assert!(sol.gains().kbar[(0, 0)].abs() < 1e-9);
        assert_eq!(sol.classification, Classification::PositiveDefinite);
    }

    #[test]
    fn example1_are() {
        let (sys, cost) = example1();
        let sol = solve_coupled_are(&sys, &cost, AreOptions::default()).unwrap();
        assert!(sol.residual_norms.0 < 1e-8 && sol.residual_norms.1 < 1e-8, "{:?}", sol.residual_norms);
        assert_eq!(sol.classification, Classification::PositiveDefinite);
        let pairs = scalar_root_oracle(&sys, &cost).unwrap();
        assert!(pairs
            .iter()
            .any(|(p, pb)| (p - sol.p[(0, 0)]).abs() < 1e-6 && (pb - sol.pbar[(0, 0)]).abs() < 1e-6));
    }

    #[test]
    fn example2_are_does_not_converge() {
        let (sys, cost) = example2();
        assert!(matches!(
            solve_coupled_are(&sys, &cost, AreOptions::default()),
            Err(Error::NonConvergent { .. })
        ));
    }

    #[test]
    fn stationary_gains_examples() {
        let (sys, cost) = example2();
        let g = stationary_gains(&s(-0.2356), &s(-0.0869), &sys, &cost).unwrap();
        assert!((g.k[(0, 0)] - 0.2552).abs() < 1e-4);
        assert!((g.kbar[(0, 0)] + 0.1106).abs() < 1e-4);
        let g = stationary_gains(&s(-0.2356), &s(4.7637), &sys, &cost).unwrap();
        assert!((g.kbar[(0, 0)] + 2.9454).abs() < 1e-3);
        let (sys, cost) = example1();
        assert_eq!(stationary_gains(&s(0.0), &s(0.0), &sys, &cost).unwrap(), Gains::scalar(0.0, 0.0));
        let sys = MeanFieldSystem::scalar([0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let cost = CostSpec::scalar(1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(stationary_gains(&s(1.0), &s(0.0), &sys, &cost).is_err());
    }

    #[test]
    fn lyapunov_residual_examples() {
        let (sys, cost) = example1();
        let (r1, r2) = closed_loop_lyapunov_residual(&s(0.0), &s(0.0), &Gains::scalar(0.0, 0.0), &sys, &cost).unwrap();
        assert_eq!((r1[(0, 0)], r2[(0, 0)]), (1.0, 2.0));
        let sol = solve_coupled_are(&sys, &cost, AreOptions::default()).unwrap();
        let (r1, r2) = closed_loop_lyapunov_residual(&sol.p, &sol.pbar, sol.gains(), &sys, &cost).unwrap();
        assert!(r1.norm() < 1e-7 && r2.norm() < 1e-7);

        let (sys, cost) = example2();
        let (p, pb) = (s(-0.2356), s(4.7637));
        let g = stationary_gains(&p, &pb, &sys, &cost).unwrap();
        let (r1, r2) = closed_loop_lyapunov_residual(&p, &pb, &g, &sys, &cost).unwrap();
        assert!(r1.norm() < 5e-4 && r2.norm() < 5e-4, "{} {}", r1.norm(), r2.norm());
    }

    #[test]
    fn classification_thresholds() {
        assert_eq!(classify(&s(1.0), &s(0.0)), Classification::PositiveDefinite);
        assert_eq!(classify(&s(1.0), &s(-1.0)), Classification::PositiveSemiDefinite);
        assert_eq!(classify(&s(0.0), &s(0.0)), Classification::PositiveSemiDefinite);
        assert_eq!(classify(&s(1.0), &s(-2.0)), Classification::Indefinite);
        assert_eq!(classify(&s(-0.2356), &s(4.7637)), Classification::Indefinite);
    }

    #[test]
    fn verdicts() {
        let (sys, cost) = example1();
        let r = stabilization_verdict(&sys, &cost, AreOptions::default());
        assert_eq!(r.verdict, Verdict::StabilizableObservable);
        assert!(r.closed_loop_abscissa.unwrap() < 0.0);
        assert!(r.consistent);

        let (sys, cost) = example2();
        let r = stabilization_verdict(&sys, &cost, AreOptions::default());
        assert_eq!(r.verdict, Verdict::NotStabilizable);
        assert!(r.consistent);

        let (sys, cost) = deterministic();
        let r = stabilization_verdict(&sys, &cost, AreOptions::default());
        assert!(r.verdict.is_stabilizable());
        assert!((r.solution.unwrap().gains().k[(0, 0)] + 1.0).abs() < 1e-9);

        let bad = CostSpec::scalar(-1.0, 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            stabilization_verdict(&sys, &bad, AreOptions::default()).verdict,
            Verdict::AssumptionViolated(_)
        ));
    }
}
