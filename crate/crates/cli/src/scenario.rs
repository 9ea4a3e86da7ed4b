//! TOML scenario files.
//!
//! Matrices are nested arrays in row-major order; a 1x1 matrix may be written
//! as a plain number. Unknown keys are rejected.

use std::path::Path;

use mflq_core::are::{DEFAULT_MAX_HORIZON, DEFAULT_TOL};
use mflq_core::model::{CostSpec, MeanFieldSystem};
use mflq_core::simulate::{InitialState, DEFAULT_DT, DEFAULT_PATHS};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

const BUNDLED: [(&str, &str); 3] = [
    ("paper_example1", include_str!("../scenarios/paper_example1.toml")),
    ("paper_example2", include_str!("../scenarios/paper_example2.toml")),
    ("deterministic_scalar", include_str!("../scenarios/deterministic_scalar.toml")),
];

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Scalar(f64),
    Vector(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    horizon: Option<f64>,
    system: Option<RawSystem>,
    cost: Option<RawCost>,
    simulation: Option<RawSimulation>,
    solver: Option<RawSolver>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: Option<usize>,
    m: Option<usize>,
    #[serde(rename = "A")]
    a: Option<RawMatrix>,
    #[serde(rename = "Abar")]
    abar: Option<RawMatrix>,
    #[serde(rename = "B")]
    b: Option<RawMatrix>,
    #[serde(rename = "Bbar")]
    bbar: Option<RawMatrix>,
    #[serde(rename = "C")]
    c: Option<RawMatrix>,
    #[serde(rename = "Cbar")]
    cbar: Option<RawMatrix>,
    #[serde(rename = "D")]
    d: Option<RawMatrix>,
    #[serde(rename = "Dbar")]
    dbar: Option<RawMatrix>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    #[serde(rename = "Q")]
    q: Option<RawMatrix>,
    #[serde(rename = "Qbar")]
    qbar: Option<RawMatrix>,
    #[serde(rename = "R")]
    r: Option<RawMatrix>,
    #[serde(rename = "Rbar")]
    rbar: Option<RawMatrix>,
    #[serde(rename = "P_T")]
    p_term: Option<RawMatrix>,
    #[serde(rename = "Pbar_T")]
    pbar_term: Option<RawMatrix>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    dt: Option<f64>,
    paths: Option<usize>,
    seed: Option<u64>,
    x0: Option<RawMatrix>,
    x0_cov: Option<RawMatrix>,
    record_stride: Option<usize>,
    feedback: Option<FeedbackKind>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    tol: Option<f64>,
    steps: Option<usize>,
    max_horizon: Option<f64>,
}

/// Which control law `simulate` applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    /// Time-varying gains from the finite-horizon Riccati solution.
    #[default]
    Optimal,
    /// Constant gains from the coupled ARE.
    Stationary,
    OpenLoop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub initial: InitialState,
    pub record_stride: Option<usize>,
    pub feedback: FeedbackKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solver {
    pub tol: f64,
    pub steps: Option<usize>,
    pub max_horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub system: MeanFieldSystem,
    pub cost: CostSpec,
    pub horizon: Option<f64>,
    pub simulation: Simulation,
    pub solver: Solver,
}

/// Resolved settings echoed into every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct Echo {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub horizon: Option<f64>,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub feedback: FeedbackKind,
}

impl Scenario {
    pub fn echo(&self) -> Echo {
        Echo {
            name: self.name.clone(),
            n: self.system.n(),
            m: self.system.m(),
            horizon: self.horizon,
            dt: self.simulation.dt,
            paths: self.simulation.paths,
            seed: self.simulation.seed,
            tol: self.solver.tol,
            feedback: self.simulation.feedback,
        }
    }

    pub fn require_horizon(&self, command: &str) -> Result<f64, CliError> {
        self.horizon.ok_or_else(|| {
            CliError::Validation(format!("horizon: required for `{command}` (set it in the scenario or pass --horizon)"))
        })
    }
}

pub fn bundled(name: &str) -> Option<&'static str> {
    let key = name.trim_start_matches("examples/").trim_end_matches(".toml");
    BUNDLED.iter().find(|(k, _)| *k == key).map(|(_, text)| *text)
}

/// Reads a scenario file. Names of bundled scenarios (optionally prefixed
/// with `examples/`) resolve to the built-in copies when no such file exists.
pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let origin = path.display().to_string();
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => match bundled(&origin) {
            Some(text) => text.to_string(),
            None => return Err(CliError::Validation(format!("{origin}: {e}"))),
        },
    };
    parse_scenario(&text, &origin)
}

pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, CliError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))?;
    let invalid = |msg: String| CliError::Validation(msg);

    let sys = raw.system.ok_or_else(|| invalid("system: required".into()))?;
    let a = required(sys.a, "system.A")?;
    let b = required(sys.b, "system.B")?;
    let n = sys.n.unwrap_or_else(|| a.rows());
    let m = sys.m.unwrap_or_else(|| b.cols());
    if n == 0 || m == 0 {
        return Err(invalid("system: n and m must be positive".into()));
    }
    let system = MeanFieldSystem::new(
        a.to_matrix("system.A", n, n)?,
        matrix(sys.abar, "system.Abar", n, n)?,
        b.to_matrix("system.B", n, m)?,
        matrix(sys.bbar, "system.Bbar", n, m)?,
        matrix(sys.c, "system.C", n, n)?,
        matrix(sys.cbar, "system.Cbar", n, n)?,
        matrix(sys.d, "system.D", n, m)?,
        matrix(sys.dbar, "system.Dbar", n, m)?,
    )
    .map_err(|e| invalid(format!("system: {e}")))?;

    let cost = raw.cost.ok_or_else(|| invalid("cost: required".into()))?;
    let mut spec = CostSpec::infinite(
        matrix(cost.q, "cost.Q", n, n)?,
        matrix(cost.qbar, "cost.Qbar", n, n)?,
        matrix(cost.r, "cost.R", m, m)?,
        matrix(cost.rbar, "cost.Rbar", m, m)?,
    )
    .map_err(|e| invalid(format!("cost: {e}")))?;
    if cost.p_term.is_some() || cost.pbar_term.is_some() {
        let p = optional(cost.p_term, "cost.P_T", n, n)?;
        let pbar = optional(cost.pbar_term, "cost.Pbar_T", n, n)?;
        spec = spec.with_terminal(p, pbar).map_err(|e| invalid(format!("cost: {e}")))?;
    }

    let sim = raw.simulation.unwrap_or(RawSimulation {
        dt: None,
        paths: None,
        seed: None,
        x0: None,
        x0_cov: None,
        record_stride: None,
        feedback: None,
    });
    let x0 = match sim.x0 {
        Some(raw) => raw.to_vector("simulation.x0", n)?,
        None => DVector::from_element(n, 1.0),
    };
    let initial = match sim.x0_cov {
        Some(raw) => InitialState::Gaussian { mean: x0, cov: raw.to_matrix("simulation.x0_cov", n, n)? },
        None => InitialState::Deterministic(x0),
    };
    let simulation = Simulation {
        dt: sim.dt.unwrap_or(DEFAULT_DT),
        paths: sim.paths.unwrap_or(DEFAULT_PATHS),
        seed: sim.seed.unwrap_or(0),
        initial,
        record_stride: sim.record_stride,
        feedback: sim.feedback.unwrap_or_default(),
    };

    let solver = raw.solver.unwrap_or(RawSolver { tol: None, steps: None, max_horizon: None });
    let solver = Solver {
        tol: solver.tol.unwrap_or(DEFAULT_TOL),
        steps: solver.steps,
        max_horizon: solver.max_horizon.unwrap_or(DEFAULT_MAX_HORIZON),
    };

    let scenario = Scenario {
        name: raw.name.unwrap_or_else(|| origin.to_string()),
        system,
        cost: spec,
        horizon: raw.horizon,
        simulation,
        solver,
    };
    check_settings(&scenario)?;
    Ok(scenario)
}

/// Range checks shared by file values and command-line overrides.
pub fn check_settings(s: &Scenario) -> Result<(), CliError> {
    let bad = |msg: String| Err(CliError::Validation(msg));
    if let Some(t) = s.horizon {
        if !(t > 0.0 && t.is_finite()) {
            return bad(format!("horizon: must be positive, got {t}"));
        }
    }
    if !(s.simulation.dt > 0.0 && s.simulation.dt.is_finite()) {
        return bad(format!("simulation.dt: must be positive, got {}", s.simulation.dt));
    }
    if s.simulation.paths == 0 {
        return bad("simulation.paths: must be positive".into());
    }
    if s.simulation.record_stride == Some(0) {
        return bad("simulation.record_stride: must be positive".into());
    }
    if !(s.solver.tol > 0.0 && s.solver.tol.is_finite()) {
        return bad(format!("solver.tol: must be positive, got {}", s.solver.tol));
    }
    if s.solver.steps == Some(0) {
        return bad("solver.steps: must be positive".into());
    }
    if s.solver.max_horizon.is_nan() || s.solver.max_horizon <= 0.0 {
        return bad(format!("solver.max_horizon: must be positive, got {}", s.solver.max_horizon));
    }
    Ok(())
}

fn required(raw: Option<RawMatrix>, field: &str) -> Result<RawMatrix, CliError> {
    raw.ok_or_else(|| CliError::Validation(format!("{field}: required")))
}

fn matrix(raw: Option<RawMatrix>, field: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, CliError> {
    required(raw, field)?.to_matrix(field, rows, cols)
}

/// Missing entries default to zero.
fn optional(raw: Option<RawMatrix>, field: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, CliError> {
    raw.map_or_else(|| Ok(DMatrix::zeros(rows, cols)), |r| r.to_matrix(field, rows, cols))
}

impl RawMatrix {
    fn rows(&self) -> usize {
        match self {
            RawMatrix::Scalar(_) => 1,
            RawMatrix::Vector(v) => v.len(),
            RawMatrix::Rows(r) => r.len(),
        }
    }

    fn cols(&self) -> usize {
        match self {
            RawMatrix::Scalar(_) | RawMatrix::Vector(_) => 1,
            RawMatrix::Rows(r) => r.first().map_or(0, Vec::len),
        }
    }

    fn to_matrix(&self, field: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, CliError> {
        let shape_err = |found: String| {
            CliError::Validation(format!("{field}: expected {rows}x{cols}, got {found}"))
        };
        let out = match self {
            RawMatrix::Scalar(v) if rows == 1 && cols == 1 => DMatrix::from_element(1, 1, *v),
            RawMatrix::Scalar(_) => return Err(shape_err("a plain number".into())),
            RawMatrix::Vector(v) => {
                return Err(shape_err(format!("a flat array of {} (write rows as nested arrays)", v.len())))
            }
            RawMatrix::Rows(r) => {
                let width = self.cols();
                if let Some(i) = r.iter().position(|row| row.len() != width) {
                    return Err(CliError::Validation(format!(
                        "{field}: row {} has {} entries, row 1 has {width}",
                        i + 1,
                        r[i].len()
                    )));
                }
                if r.len() != rows || width != cols {
                    return Err(shape_err(format!("{}x{width}", r.len())));
                }
                DMatrix::from_fn(rows, cols, |i, j| r[i][j])
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Validation(format!("{field}: non-finite entry")));
        }
        Ok(out)
    }

    fn to_vector(&self, field: &str, n: usize) -> Result<DVector<f64>, CliError> {
        let v: Vec<f64> = match self {
            RawMatrix::Scalar(v) => vec![*v],
            RawMatrix::Vector(v) => v.clone(),
            RawMatrix::Rows(r) if r.iter().all(|row| row.len() == 1) => r.iter().map(|row| row[0]).collect(),
            RawMatrix::Rows(_) => {
                return Err(CliError::Validation(format!("{field}: expected a vector of length {n}")))
            }
        };
        if v.len() != n {
            return Err(CliError::Validation(format!("{field}: expected length {n}, got {}", v.len())));
        }
        Ok(DVector::from_vec(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [system]
        A = 0.2
        Abar = 0.4
        B = 0.6
        Bbar = 0.2
        C = 0.1
        Cbar = 0.7
        D = 0.9
        Dbar = 0.3
        [cost]
        Q = 1
        Qbar = 1
        R = 1
        Rbar = 1
    "#;

    fn message(r: Result<Scenario, CliError>) -> String {
        match r {
            Err(e) => e.to_string(),
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn bundled_example1_parses() {
        let s = parse_scenario(bundled("examples/paper_example1").unwrap(), "ex1").unwrap();
        assert_eq!((s.system.n(), s.system.m()), (1, 1));
        assert_eq!(s.system.a()[(0, 0)], 0.2);
        assert_eq!(s.system.dbar()[(0, 0)], 0.3);
        assert_eq!(s.simulation.dt, 1e-3);
        assert_eq!(s.simulation.paths, 5000);
        assert_eq!(s.solver.tol, 1e-9);
    }

    #[test]
    fn all_bundled_scenarios_parse() {
        for (name, text) in BUNDLED {
            parse_scenario(text, name).unwrap();
        }
    }

    #[test]
    fn integers_are_accepted() {
        let s = parse_scenario(MINIMAL, "min").unwrap();
        assert_eq!(s.cost.q()[(0, 0)], 1.0);
        assert_eq!(s.horizon, None);
    }

    #[test]
    fn missing_b_is_named() {
        let text = MINIMAL.replace("B = 0.6\n", "");
        assert_eq!(message(parse_scenario(&text, "x")), "system.B: required");
    }

    #[test]
    fn declared_dimension_mismatch() {
        let text = MINIMAL.replace("A = 0.2", "n = 1\nA = [[0.2, 0.0], [0.0, 0.2]]");
        assert!(message(parse_scenario(&text, "x")).starts_with("system.A: expected 1x1, got 2x2"));
    }

    #[test]
    fn scalar_for_larger_matrix_rejected() {
        let text = MINIMAL.replace("Abar = 0.4", "Abar = 0.4\nn = 2");
        assert!(message(parse_scenario(&text, "x")).starts_with("system.A: expected 2x2"));
    }

    #[test]
    fn ragged_rows_rejected() {
        let text = MINIMAL.replace("A = 0.2", "A = [[0.2, 0.1], [0.3]]");
        assert!(message(parse_scenario(&text, "x")).contains("row 2 has 1 entries"));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replace("[cost]", "[cost]\nW = 3");
        assert!(message(parse_scenario(&text, "x")).contains("unknown field `W`"));
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = MINIMAL.replace("C = 0.1", "C = = 0.1");
        let msg = message(parse_scenario(&text, "broken.toml"));
        assert!(msg.starts_with("broken.toml:"), "{msg}");
        assert!(msg.contains("line 7"), "{msg}");
    }

    #[test]
    fn gaussian_initial_state() {
        let text = format!("{MINIMAL}\n[simulation]\nx0 = 2.0\nx0_cov = 0.5\nfeedback = \"stationary\"\n");
        let s = parse_scenario(&text, "x").unwrap();
        assert_eq!(s.simulation.feedback, FeedbackKind::Stationary);
        assert_eq!(s.simulation.initial.second_moment()[(0, 0)], 4.5);
    }

    #[test]
    fn negative_dt_rejected() {
        let text = format!("{MINIMAL}\n[simulation]\ndt = -1.0\n");
        assert!(message(parse_scenario(&text, "x")).starts_with("simulation.dt"));
    }
}
