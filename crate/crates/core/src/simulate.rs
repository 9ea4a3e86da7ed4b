//! Euler-Maruyama Monte Carlo for the closed-loop mean-field SDE.
//!
//! The controller sees the current state and the mean `Ex_t`, which is
//! propagated deterministically by RK4 rather than estimated from the
//! ensemble, so paths are independent and can run in parallel.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, min_eigenvalue, psd_sqrt, PSD_TOL};
use crate::model::{CostSpec, Gains, MeanFieldSystem};
use crate::riccati::RiccatiSolution;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_PATHS: usize = 5000;
/// Recorded grid points per path when no stride is given.
const DEFAULT_RECORDS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Deterministic(DVector<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            InitialState::Deterministic(x) => x.len(),
            InitialState::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &DVector<f64> {
        match self {
            InitialState::Deterministic(x) => x,
            InitialState::Gaussian { mean, .. } => mean,
        }
    }

    /// `E(x₀x₀')`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        match self {
            InitialState::Deterministic(x) => x * x.transpose(),
            InitialState::Gaussian { mean, cov } => cov + mean * mean.transpose(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub initial: InitialState,
    /// Keep every `record_stride`-th grid point per path (the final point is always kept).
    pub record_stride: usize,
}

impl SimConfig {
    /// Config with the default stride of about a thousand recorded points.
    pub fn new(dt: f64, horizon: f64, paths: usize, seed: u64, initial: InitialState) -> Result<Self> {
        let mut cfg = SimConfig { dt, horizon, paths, seed, initial, record_stride: 1 };
        cfg.validate()?;
        cfg.record_stride = cfg.steps().div_ceil(DEFAULT_RECORDS).max(1);
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.record_stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon {} must be at least dt {}", self.horizon, self.dt)));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            return Err(Error::Config(format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record stride must be at least 1".into()));
        }
        match &self.initial {
            InitialState::Deterministic(x) if !x.iter().all(|v| v.is_finite()) => {
                Err(Error::NonFinite("initial state".into()))
            }
            InitialState::Gaussian { mean, cov } => {
                if cov.shape() != (mean.len(), mean.len()) {
                    return Err(Error::dim("initial covariance", (mean.len(), mean.len()), cov.shape()));
                }
                if !(mean.iter().all(|v| v.is_finite()) && all_finite(cov)) {
                    return Err(Error::NonFinite("initial distribution".into()));
                }
                if min_eigenvalue(cov) < -PSD_TOL * cov.amax().max(1.0) {
                    return Err(Error::Config("initial covariance must be positive semi-definite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Indices of recorded grid points.
    pub fn record_indices(&self) -> Vec<usize> {
        let steps = self.steps();
        let mut idx: Vec<usize> = (0..=steps).step_by(self.record_stride).collect();
        if idx.last() != Some(&steps) {
            idx.push(steps);
        }
        idx
    }
}

/// Control law `u = K x + K̄ Ex`.
#[derive(Debug, Clone, Copy)]
pub enum Feedback<'a> {
    OpenLoop,
    Constant(&'a Gains),
    /// Time-varying optimal gains; the solution grid must have step `dt / 2`
    /// and end at the simulation horizon so that RK4 midpoints are grid points.
    Scheduled(&'a RiccatiSolution),
}

/// Gains at half-step resolution: index `j` is time `j dt / 2`.
struct Schedule {
    gains: Vec<Gains>,
    constant: bool,
}

impl Schedule {
    fn build(sys: &MeanFieldSystem, fb: &Feedback, cfg: &SimConfig) -> Result<Self> {
        let (n, m) = (sys.n(), sys.m());
        let check = |g: &Gains| -> Result<()> {
            if g.k.shape() != (m, n) {
                return Err(Error::dim("K", (m, n), g.k.shape()));
            }
            if g.kbar.shape() != (m, n) {
                return Err(Error::dim("Kbar", (m, n), g.kbar.shape()));
            }
            Ok(())
        };
        match fb {
            Feedback::OpenLoop => Ok(Schedule { gains: vec![Gains::zeros(m, n)], constant: true }),
            Feedback::Constant(g) => {
                check(g)?;
                Ok(Schedule { gains: vec![(*g).clone()], constant: true })
            }
            Feedback::Scheduled(sol) => {
                let steps = cfg.steps();
                if sol.steps() != 2 * steps || (sol.horizon() - cfg.horizon).abs() > 1e-9 * cfg.horizon {
                    return Err(Error::Precondition(format!(
                        "gain schedule needs {} steps over horizon {}, found {} over {}",
                        2 * steps,
                        cfg.horizon,
                        sol.steps(),
                        sol.horizon()
                    )));
                }
                let gains: Vec<Gains> = sol.gains().cloned().collect();
                check(&gains[0])?;
                Ok(Schedule { gains, constant: false })
            }
        }
    }

    /// Gains at half-step index `j`.
    fn at(&self, j: usize) -> &Gains {
        if self.constant {
            &self.gains[0]
        } else {
            &self.gains[j]
        }
    }
}

/// RK4 for `dx̄/dt = [(A + Ā) + (B + B̄)(K + K̄)] x̄` on the simulation grid.
pub fn propagate_mean(
    sys: &MeanFieldSystem,
    fb: &Feedback,
    mean0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    if mean0.len() != sys.n() {
        return Err(Error::dim("initial mean", (sys.n(), 1), (mean0.len(), 1)));
    }
    let schedule = Schedule::build(sys, fb, cfg)?;
    Ok(propagate_with(sys, &schedule, mean0, cfg))
}

fn propagate_with(sys: &MeanFieldSystem, schedule: &Schedule, mean0: &DVector<f64>, cfg: &SimConfig) -> Vec<DVector<f64>> {
    let steps = cfg.steps();
    let dt = cfg.horizon / steps as f64;
    let a_sum = sys.a() + sys.abar();
    let b_sum = sys.b() + sys.bbar();
    let field = |j: usize| &a_sum + &b_sum * schedule.at(j).total();
    let mut out = Vec::with_capacity(steps + 1);
    let mut x = mean0.clone();
    out.push(x.clone());
    let mut f_start = field(0);
    for k in 0..steps {
        let f_mid = field(2 * k + 1);
        let f_end = field(2 * k + 2);
        let k1 = &f_start * &x;
        let k2 = &f_mid * (&x + &k1 * (0.5 * dt));
        let k3 = &f_mid * (&x + &k2 * (0.5 * dt));
        let k4 = &f_end * (&x + &k3 * dt);
        x += (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0);
        out.push(x.clone());
        f_start = f_end;
    }
    out
}

/// One simulated path: recorded states plus running integrals for cost evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    /// States at the recorded grid points.
    pub states: Vec<DVector<f64>>,
    /// Trapezoidal `∫ x x' dt` over `[0, T]`.
    pub state_gram: DMatrix<f64>,
    /// Trapezoidal `∫ u u' dt` over `[0, T]`.
    pub control_gram: DMatrix<f64>,
    pub final_state: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub dt: f64,
    pub horizon: f64,
    /// Full simulation grid.
    pub grid: Vec<f64>,
    /// Propagated mean `Ex_t` on the full grid.
    pub mean: Vec<DVector<f64>>,
    /// Grid indices at which path states are recorded.
    pub record: Vec<usize>,
    pub paths: Vec<PathRecord>,
    /// Trapezoidal `∫ x̄ x̄' dt` and `∫ ū ū' dt` for the propagated mean.
    pub mean_state_gram: DMatrix<f64>,
    pub mean_control_gram: DMatrix<f64>,
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let value = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Estimate { value, std_error: 0.0 };
        }
        let var = samples.iter().map(|s| (s - value).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate { value, std_error: (var / n).sqrt() }
    }
}

impl Ensemble {
    pub fn n(&self) -> usize {
        self.mean[0].len()
    }

    pub fn record_times(&self) -> Vec<f64> {
        self.record.iter().map(|&k| self.grid[k]).collect()
    }

    /// `E(x_t'x_t)` with standard error at each recorded point.
    pub fn second_moment(&self) -> Vec<Estimate> {
        (0..self.record.len())
            .map(|r| {
                let samples: Vec<f64> = self.paths.iter().map(|p| p.states[r].norm_squared()).collect();
                Estimate::from_samples(&samples)
            })
            .collect()
    }

    /// Cross-path average state at each recorded point.
    pub fn sample_mean(&self) -> Vec<DVector<f64>> {
        let count = self.paths.len() as f64;
        (0..self.record.len())
            .map(|r| self.paths.iter().fold(DVector::zeros(self.n()), |acc, p| acc + &p.states[r]) / count)
            .collect()
    }

    /// Propagated mean at the recorded points.
    pub fn recorded_mean(&self) -> Vec<&DVector<f64>> {
        self.record.iter().map(|&k| &self.mean[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Parallel when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Auto,
    Sequential,
    Parallel,
}

/// Per-step closed-loop data shared by all paths.
struct StepData {
    /// `A + BK`, `C + DK`, `K` per step (a single entry when gains are constant).
    a: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    k: Vec<DMatrix<f64>>,
    /// `Āx̄ + BK̄x̄ + B̄ū`, `C̄x̄ + DK̄x̄ + D̄ū`, `K̄x̄` per step.
    drift: Vec<DVector<f64>>,
    diffusion: Vec<DVector<f64>>,
    kbar_mean: Vec<DVector<f64>>,
}

impl StepData {
    fn build(sys: &MeanFieldSystem, schedule: &Schedule, mean: &[DVector<f64>]) -> Self {
        let steps = mean.len() - 1;
        let count = if schedule.constant { 1 } else { steps + 1 };
        let mut out = StepData {
            a: Vec::with_capacity(count),
            c: Vec::with_capacity(count),
            k: Vec::with_capacity(count),
            drift: Vec::with_capacity(steps + 1),
            diffusion: Vec::with_capacity(steps + 1),
            kbar_mean: Vec::with_capacity(steps + 1),
        };
        for i in 0..count {
            let g = schedule.at(2 * i);
            out.a.push(sys.a() + sys.b() * &g.k);
            out.c.push(sys.c() + sys.d() * &g.k);
            out.k.push(g.k.clone());
        }
        for (i, xm) in mean.iter().enumerate() {
            let g = schedule.at(2 * i);
            let kbx = &g.kbar * xm;
            let um = g.total() * xm;
            out.drift.push(sys.abar() * xm + sys.b() * &kbx + sys.bbar() * &um);
            out.diffusion.push(sys.cbar() * xm + sys.d() * &kbx + sys.dbar() * &um);
            out.kbar_mean.push(kbx);
        }
        out
    }

    fn gain_index(&self, k: usize) -> usize {
        if self.a.len() == 1 {
            0
        } else {
            k
        }
    }
}

/// RNG for one path: the base seed selects the key, the path index the stream.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn simulate_one(
    path: usize,
    data: &StepData,
    cfg: &SimConfig,
    init_sqrt: Option<&DMatrix<f64>>,
    n: usize,
    m: usize,
) -> Result<PathRecord> {
    let steps = cfg.steps();
    let dt = cfg.horizon / steps as f64;
    let sqdt = dt.sqrt();
    let mut rng = path_rng(cfg.seed, path);
    let mut x = cfg.initial.mean().clone();
    if let Some(l) = init_sqrt {
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        x.gemv(1.0, l, &z, 1.0);
    }
    let record = cfg.record_indices();
    let mut states = Vec::with_capacity(record.len());
    let mut next_record = 0;
    let mut state_gram = DMatrix::zeros(n, n);
    let mut control_gram = DMatrix::zeros(m, m);
    let mut drift = DVector::zeros(n);
    let mut diff = DVector::zeros(n);
    let mut u = DVector::zeros(m);
    for k in 0..=steps {
        if record.get(next_record) == Some(&k) {
            states.push(x.clone());
            next_record += 1;
        }
        let gi = data.gain_index(k);
        let w = if k == 0 || k == steps { 0.5 * dt } else { dt };
        u.copy_from(&data.kbar_mean[k]);
        u.gemv(1.0, &data.k[gi], &x, 1.0);
        state_gram.ger(w, &x, &x, 1.0);
        control_gram.ger(w, &u, &u, 1.0);
        if k == steps {
            break;
        }
        drift.copy_from(&data.drift[k]);
        drift.gemv(1.0, &data.a[gi], &x, 1.0);
        diff.copy_from(&data.diffusion[k]);
        diff.gemv(1.0, &data.c[gi], &x, 1.0);
        let xi: f64 = StandardNormal.sample(&mut rng);
        x.axpy(dt, &drift, 1.0);
        x.axpy(sqdt * xi, &diff, 1.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { path, step: k + 1 });
        }
    }
    Ok(PathRecord { states, state_gram, control_gram, final_state: x })
}

/// Simulates `cfg.paths` independent paths under the given feedback.
pub fn simulate_paths(sys: &MeanFieldSystem, fb: &Feedback, cfg: &SimConfig) -> Result<Ensemble> {
    simulate_paths_with(sys, fb, cfg, Execution::Auto)
}

pub fn simulate_paths_with(
    sys: &MeanFieldSystem,
    fb: &Feedback,
    cfg: &SimConfig,
    exec: Execution,
) -> Result<Ensemble> {
    cfg.validate()?;
    let (n, m) = (sys.n(), sys.m());
    if cfg.initial.dim() != n {
        return Err(Error::dim("initial state", (n, 1), (cfg.initial.dim(), 1)));
    }
    let schedule = Schedule::build(sys, fb, cfg)?;
    let mean = propagate_with(sys, &schedule, cfg.initial.mean(), cfg);
    let data = StepData::build(sys, &schedule, &mean);
    let init_sqrt = match &cfg.initial {
        InitialState::Gaussian { cov, .. } => Some(psd_sqrt(cov)),
        InitialState::Deterministic(_) => None,
    };
    let run = |path: usize| simulate_one(path, &data, cfg, init_sqrt.as_ref(), n, m);
    let results: Vec<Result<PathRecord>> = match exec {
        Execution::Sequential => (0..cfg.paths).map(run).collect(),
        Execution::Auto | Execution::Parallel => run_parallel(cfg.paths, run),
    };
    let paths = results.into_iter().collect::<Result<Vec<_>>>()?;

    let steps = cfg.steps();
    let dt = cfg.horizon / steps as f64;
    let mut mean_state_gram = DMatrix::zeros(n, n);
    let mut mean_control_gram = DMatrix::zeros(m, m);
    for (k, xm) in mean.iter().enumerate() {
        let w = if k == 0 || k == steps { 0.5 * dt } else { dt };
        let um = schedule.at(2 * k).total() * xm;
        mean_state_gram.ger(w, xm, xm, 1.0);
        mean_control_gram.ger(w, &um, &um, 1.0);
    }
    Ok(Ensemble {
        dt,
        horizon: cfg.horizon,
        grid: (0..=steps).map(|k| k as f64 * dt).collect(),
        mean,
        record: cfg.record_indices(),
        paths,
        mean_state_gram,
        mean_control_gram,
    })
}

#[cfg(feature = "parallel")]
fn run_parallel<F>(paths: usize, run: F) -> Vec<Result<PathRecord>>
where
    F: Fn(usize) -> Result<PathRecord> + Sync + Send,
{
    use rayon::prelude::*;
    (0..paths).into_par_iter().map(run).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<F>(paths: usize, run: F) -> Vec<Result<PathRecord>>
where
    F: Fn(usize) -> Result<PathRecord>,
{
    (0..paths).map(run).collect()
}

fn check_cost(ens: &Ensemble, cost: &CostSpec) -> Result<()> {
    let n = ens.n();
    let m = ens.mean_control_gram.nrows();
    if cost.n() != n || cost.m() != m {
        return Err(Error::dim("cost", (n, m), (cost.n(), cost.m())));
    }
    Ok(())
}

/// Per-path cost `∫ (x'Qx + u'Ru) dt [+ x_T'P_T x_T]` plus the common mean part
/// `∫ (x̄'Q̄x̄ + ū'R̄ū) dt [+ x̄_T'P̄_T x̄_T]`.
pub fn cost_samples(ens: &Ensemble, cost: &CostSpec, include_terminal: bool) -> Result<Vec<f64>> {
    check_cost(ens, cost)?;
    let trace = |w: &DMatrix<f64>, g: &DMatrix<f64>| w.component_mul(g).sum();
    let mut common = trace(cost.qbar(), &ens.mean_state_gram) + trace(cost.rbar(), &ens.mean_control_gram);
    if include_terminal {
        let xm = ens.mean.last().expect("non-empty grid");
        common += (xm.transpose() * cost.pbar_term() * xm)[(0, 0)];
    }
    Ok(ens
        .paths
        .iter()
        .map(|p| {
            let mut c = trace(cost.q(), &p.state_gram) + trace(cost.r(), &p.control_gram) + common;
            if include_terminal {
                c += (p.final_state.transpose() * cost.p_term() * &p.final_state)[(0, 0)];
            }
            c
        })
        .collect())
}

/// Monte Carlo estimate of the cost with its standard error.
pub fn estimate_cost(ens: &Ensemble, cost: &CostSpec, include_terminal: bool) -> Result<Estimate> {
    Ok(Estimate::from_samples(&cost_samples(ens, cost, include_terminal)?))
}

/// `V(t) = E(x_t'P x_t) + x̄_t'P̄ x̄_t` at each recorded point.
pub fn lyapunov_trace(ens: &Ensemble, p: &DMatrix<f64>, pbar: &DMatrix<f64>) -> Result<Vec<Estimate>> {
    let n = ens.n();
    if p.shape() != (n, n) {
        return Err(Error::dim("P", (n, n), p.shape()));
    }
    if pbar.shape() != (n, n) {
        return Err(Error::dim("Pbar", (n, n), pbar.shape()));
    }
    Ok(ens
        .record
        .iter()
        .enumerate()
        .map(|(r, &k)| {
            let xm = &ens.mean[k];
            let common = (xm.transpose() * pbar * xm)[(0, 0)];
            let samples: Vec<f64> =
                ens.paths.iter().map(|path| (path.states[r].transpose() * p * &path.states[r])[(0, 0)] + common).collect();
            Estimate::from_samples(&samples)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_sys(coeffs: [f64; 8]) -> MeanFieldSystem {
        MeanFieldSystem::scalar(coeffs).unwrap()
    }

    fn det(x: f64) -> InitialState {
        InitialState::Deterministic(DVector::from_element(1, x))
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.0, 1.0, 10, 0, det(1.0)).is_err());
        assert!(SimConfig::new(0.1, 0.05, 10, 0, det(1.0)).is_err());
        assert!(SimConfig::new(0.1, 1.0, 0, 0, det(1.0)).is_err());
        assert!(SimConfig::new(0.3, 1.0, 1, 0, det(1.0)).is_err());
        let bad_cov = InitialState::Gaussian { mean: DVector::zeros(1), cov: DMatrix::from_element(1, 1, -1.0) };
        assert!(SimConfig::new(0.1, 1.0, 1, 0, bad_cov).is_err());
        let cfg = SimConfig::new(1e-3, 10.0, 1, 0, det(1.0)).unwrap();
        assert_eq!(cfg.steps(), 10_000);
        assert_eq!(cfg.record_stride, 10);
        assert_eq!(cfg.record_indices().len(), 1001);
    }

    #[test]
    fn record_indices_include_final_point() {
        let cfg = SimConfig::new(0.1, 1.0, 1, 0, det(1.0)).unwrap().with_stride(3).unwrap();
        assert_eq!(cfg.record_indices(), vec![0, 3, 6, 9, 10]);
    }

    #[test]
    fn mean_of_stable_scalar() {
        let sys = scalar_sys([-0.6, -0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let cfg = SimConfig::new(1e-3, 1.0, 1, 0, det(1.0)).unwrap();
        let mean = propagate_mean(&sys, &Feedback::OpenLoop, &DVector::from_element(1, 1.0), &cfg).unwrap();
        assert!((mean[1000][0] - (-1.0f64).exp()).abs() < 1e-8);
        let zero = propagate_mean(&sys, &Feedback::OpenLoop, &DVector::zeros(1), &cfg).unwrap();
        assert!(zero.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn noise_free_paths_match_deterministic_solution() {
        // drift only, so every path is the Euler recursion for x' = a x
        let a = -0.2;
        let sys = scalar_sys([a, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let cfg = SimConfig::new(1e-5, 1.0, 4, 3, det(1.0)).unwrap();
        let ens = simulate_paths(&sys, &Feedback::OpenLoop, &cfg).unwrap();
        let m2 = ens.second_moment();
        for (r, &k) in ens.record.iter().enumerate() {
            let t = ens.grid[k];
            let exact = (2.0 * a * t).exp();
            assert!((m2[r].value - exact).abs() < 1e-6, "t = {t}");
            assert_eq!(m2[r].std_error, 0.0);
        }
    }

    #[test]
    fn seed_determinism_and_execution_modes_agree() {
        let sys = scalar_sys([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]);
        let g = Gains::scalar(-0.75, -0.3);
        let cfg = SimConfig::new(1e-2, 1.0, 64, 42, det(1.0)).unwrap();
        let a = simulate_paths_with(&sys, &Feedback::Constant(&g), &cfg, Execution::Sequential).unwrap();
        let b = simulate_paths_with(&sys, &Feedback::Constant(&g), &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let other = SimConfig { seed: 43, ..cfg.clone() };
        let c = simulate_paths(&sys, &Feedback::Constant(&g), &other).unwrap();
        assert_ne!(a.paths[0].final_state, c.paths[0].final_state);
    }

    #[test]
    fn adding_paths_keeps_existing_ones() {
        let sys = scalar_sys([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]);
        let g = Gains::scalar(-0.75, -0.3);
        let small = SimConfig::new(1e-2, 1.0, 8, 7, det(1.0)).unwrap();
        let large = SimConfig { paths: 16, ..small.clone() };
        let a = simulate_paths(&sys, &Feedback::Constant(&g), &small).unwrap();
        let b = simulate_paths(&sys, &Feedback::Constant(&g), &large).unwrap();
        assert_eq!(a.paths[..], b.paths[..8]);
    }

    #[test]
    fn zero_weights_cost_nothing() {
        let sys = scalar_sys([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]);
        let cfg = SimConfig::new(1e-2, 1.0, 16, 1, det(1.0)).unwrap();
        let ens = simulate_paths(&sys, &Feedback::Constant(&Gains::scalar(-1.0, 0.5)), &cfg).unwrap();
        let zero = CostSpec::scalar(0.0, 0.0, 0.0, 0.0).unwrap();
        let e = estimate_cost(&ens, &zero, true).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn lyapunov_trace_trivial_cases() {
        let a = -0.5;
        let sys = scalar_sys([a, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let cfg = SimConfig::new(1e-5, 1.0, 2, 0, det(1.0)).unwrap();
        let ens = simulate_paths(&sys, &Feedback::OpenLoop, &cfg).unwrap();
        let id = DMatrix::identity(1, 1);
        let v = lyapunov_trace(&ens, &id, &DMatrix::zeros(1, 1)).unwrap();
        for (r, t) in ens.record_times().into_iter().enumerate() {
            assert!((v[r].value - (2.0 * a * t).exp()).abs() < 1e-5);
        }
        let cfg0 = SimConfig::new(1e-2, 1.0, 4, 0, det(0.0)).unwrap();
        let ens0 = simulate_paths(&scalar_sys([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]), &Feedback::OpenLoop, &cfg0).unwrap();
        assert!(lyapunov_trace(&ens0, &id, &id).unwrap().iter().all(|e| e.value == 0.0));
    }

    #[test]
    fn non_finite_state_names_path_and_step() {
        let sys = scalar_sys([1e200, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let cfg = SimConfig::new(0.5, 20.0, 3, 0, det(1.0)).unwrap();
        match simulate_paths(&sys, &Feedback::OpenLoop, &cfg) {
            Err(Error::NonFiniteState { path, step }) => {
                assert_eq!(path, 0);
                assert!((1..=40).contains(&step));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gaussian_initial_moments() {
        let sys = scalar_sys([0.0; 8]);
        let init = InitialState::Gaussian { mean: DVector::from_element(1, 2.0), cov: DMatrix::from_element(1, 1, 0.25) };
        let cfg = SimConfig::new(0.5, 1.0, 20_000, 9, init).unwrap();
        let ens = simulate_paths(&sys, &Feedback::OpenLoop, &cfg).unwrap();
        let m2 = ens.second_moment()[0];
        assert!((m2.value - 4.25).abs() < 3.0 * m2.std_error + 1e-12, "{m2:?}");
    }

    #[test]
    fn schedule_grid_must_match() {
        let sys = scalar_sys([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]);
        let cost = CostSpec::scalar(1.0, 1.0, 1.0, 1.0).unwrap();
        let sol = crate::riccati::integrate_backward(&sys, &cost, 1.0, 100).unwrap();
        let cfg = SimConfig::new(1e-2, 1.0, 2, 0, det(1.0)).unwrap();
        assert!(simulate_paths(&sys, &Feedback::Scheduled(&sol), &cfg).is_err());
        let cfg = SimConfig::new(2e-2, 1.0, 2, 0, det(1.0)).unwrap();
        assert!(simulate_paths(&sys, &Feedback::Scheduled(&sol), &cfg).is_ok());
    }
}
