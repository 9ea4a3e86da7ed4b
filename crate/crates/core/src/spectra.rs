//! Mean-square stability, exact observability and exact detectability of
//! lifted systems.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, min_eigenvalue, psd_null_space, spectral_abscissa, svec, symmetrize};
use crate::model::{lift, symmetric_moment_generator, ClosedLoop, LiftedSystem};
use crate::riccati::{default_steps, BLOWUP};

/// Stability requires the abscissa below `-STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;
pub const DEFAULT_TMAX: f64 = 32.0;
/// Default Gramian threshold: minimum eigenvalue for observability, relative
/// rank cutoff for detectability.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Spectral abscissa of the moment generator on symmetric matrices.
pub fn ms_stability(ls: &LiftedSystem) -> Result<(bool, f64)> {
    let abscissa = spectral_abscissa(&symmetric_moment_generator(ls))?;
    Ok((abscissa < -STABILITY_MARGIN, abscissa))
}

/// `H_0(T)` and `H_0(T) + H̄_0(T)` for the closed-loop output energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GramianPair {
    pub h0: DMatrix<f64>,
    pub hsum0: DMatrix<f64>,
    pub horizon: f64,
}

fn gramian_rhs(cl: &ClosedLoop, h: &DMatrix<f64>, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let ha = h * &cl.a;
    let dh = &cl.q + &ha + ha.transpose() + cl.c.transpose() * h * &cl.c;
    let sa = s * &cl.abar;
    let ds = &cl.qbar + &sa + sa.transpose() + cl.cbar.transpose() * h * &cl.cbar;
    (dh, ds)
}

/// Backward RK4 for `-Ḣ = 𝐐 + 𝐀'H + H𝐀 + 𝐂'H𝐂` and
/// `-Ṡ = 𝐐̄ + 𝐀̄'S + S𝐀̄ + 𝐂̄'H𝐂̄` (`S = H + H̄`), both zero at `t = T`.
pub fn observability_gramian(cl: &ClosedLoop, horizon: f64, steps: usize) -> Result<GramianPair> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 {
        return Err(Error::Precondition("at least one step is required".into()));
    }
    let n = cl.n();
    let dt = horizon / steps as f64;
    let mut h = DMatrix::zeros(n, n);
    let mut s = DMatrix::zeros(n, n);
    for k in (0..steps).rev() {
        let (k1h, k1s) = gramian_rhs(cl, &h, &s);
        let stage = |dh: &DMatrix<f64>, ds: &DMatrix<f64>, w: f64| {
            gramian_rhs(cl, &symmetrize(&(&h + dh * w)), &symmetrize(&(&s + ds * w)))
        };
        let (k2h, k2s) = stage(&k1h, &k1s, 0.5 * dt);
        let (k3h, k3s) = stage(&k2h, &k2s, 0.5 * dt);
        let (k4h, k4s) = stage(&k3h, &k3s, dt);
        h = symmetrize(&(&h + (&k1h + (&k2h + &k3h) * 2.0 + &k4h) * (dt / 6.0)));
        s = symmetrize(&(&s + (&k1s + (&k2s + &k3s) * 2.0 + &k4s) * (dt / 6.0)));
        if !(all_finite(&h) && all_finite(&s)) || h.amax().max(s.amax()) > BLOWUP {
            return Err(Error::Diverged { time: k as f64 * dt });
        }
    }
    Ok(GramianPair { h0: h, hsum0: s, horizon })
}

fn doubling_schedule(tmax: f64) -> impl Iterator<Item = f64> {
    std::iter::successors(Some(1.0_f64), |t| Some(t * 2.0)).take_while(move |t| *t <= tmax)
}

/// True iff both Gramians are positive definite (smallest eigenvalue above `tol`)
/// for some `T` in `1, 2, 4, …, tmax`.
pub fn exact_observability_test(cl: &ClosedLoop, tmax: f64, tol: f64) -> bool {
    for t in doubling_schedule(tmax) {
        match observability_gramian(cl, t, default_steps(t)) {
            Ok(g) => {
                if min_eigenvalue(&g.h0) > tol && min_eigenvalue(&g.hsum0) > tol {
                    return true;
                }
            }
            Err(_) => return false,
        }
    }
    false
}

/// Gramians at the largest horizon of the doubling schedule that does not diverge.
fn largest_gramian(cl: &ClosedLoop, tmax: f64) -> Option<GramianPair> {
    let mut best = None;
    for t in doubling_schedule(tmax) {
        match observability_gramian(cl, t, default_steps(t)) {
            Ok(g) => best = Some(g),
            Err(_) => break,
        }
    }
    best
}

/// Symmetric `2n x 2n` matrices `diag(N₁WN₁', 0)` and `diag(0, N₂WN₂')` spanning
/// the second moments of initial states with zero output energy.
fn unobservable_moments(n1: &DMatrix<f64>, n2: &DMatrix<f64>, n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::new();
    for (basis, offset) in [(n1, 0), (n2, n)] {
        let k = basis.ncols();
        for j in 0..k {
            for i in 0..=j {
                let vi = basis.column(i);
                let vj = basis.column(j);
                let block = vi * vj.transpose() + vj * vi.transpose();
                let mut m = DMatrix::zeros(2 * n, 2 * n);
                m.view_mut((offset, offset), (n, n)).copy_from(&block);
                out.push(m);
            }
        }
    }
    out
}

/// Orthonormal basis of the smallest `op`-invariant subspace containing `seeds`.
fn krylov_closure(op: &DMatrix<f64>, seeds: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let push = |basis: &mut Vec<DVector<f64>>, v: DVector<f64>| -> bool {
        let scale = v.norm();
        if scale == 0.0 {
            return false;
        }
        let mut w = v;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dot(&w);
                w -= b * c;
            }
        }
        let norm = w.norm();
        if norm > 1e-10 * scale {
            basis.push(w / norm);
            true
        } else {
            false
        }
    };
    for v in seeds {
        push(&mut basis, v);
    }
    let mut next = 0;
    while next < basis.len() {
        let image = op * &basis[next];
        push(&mut basis, image);
        next += 1;
    }
    basis
}

/// Exact detectability: the moment dynamics restricted to the invariant subspace
/// generated by unobservable initial moments must be stable. The unobservable
/// directions are the numerical null spaces of `H_0(T)` and `H_0(T) + H̄_0(T)`
/// at the largest non-divergent `T` of the doubling schedule, with relative
/// rank cutoff `tol`.
pub fn exact_detectability_test(cl: &ClosedLoop, tmax: f64, tol: f64) -> bool {
    let n = cl.n();
    let Some(g) = largest_gramian(cl, tmax) else {
        // the Gramian diverges already at T = 1: nothing can be certified
        return false;
    };
    let n1 = psd_null_space(&g.h0, tol, 0.0);
    let n2 = psd_null_space(&g.hsum0, tol, 0.0);
    if n1.ncols() == 0 && n2.ncols() == 0 {
        return true;
    }
    let ls = lift(cl);
    let op = symmetric_moment_generator(&ls);
    let seeds = unobservable_moments(&n1, &n2, n).iter().map(svec).collect();
    let basis = krylov_closure(&op, seeds);
    let v = DMatrix::from_columns(&basis);
    let restricted = v.transpose() * &op * &v;
    spectral_abscissa(&restricted).is_ok_and(|a| a < -STABILITY_MARGIN)
}
