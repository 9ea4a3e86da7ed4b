//! CSV emission with 17 significant digits, comma delimited, header first.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::riccati::RiccatiSolution;
use crate::simulate::{lyapunov_trace, Ensemble};

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn export_err(e: impl std::fmt::Display) -> Error {
    Error::Export(e.to_string())
}

/// Column names `{name}_{i}{j}` for a `rows x cols` matrix in row-major order.
fn matrix_headers(name: &str, rows: usize, cols: usize) -> impl Iterator<Item = String> + '_ {
    (0..rows).flat_map(move |i| (0..cols).map(move |j| format!("{name}_{}{}", i + 1, j + 1)))
}

fn matrix_cells(m: &DMatrix<f64>) -> impl Iterator<Item = String> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| fmt(m[(i, j)])))
}

/// One row per grid point: `t`, entries of `P`, `P̄`, `K`, `K̄`, and the
/// smallest eigenvalues of `Υ⁽¹⁾`, `Υ⁽²⁾`.
pub fn write_riccati_csv<W: Write>(sol: &RiccatiSolution, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = sol.p[0].nrows();
    let m = sol.aux[0].gains.k.nrows();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(matrix_headers("P", n, n))
        .chain(matrix_headers("Pbar", n, n))
        .chain(matrix_headers("K", m, n))
        .chain(matrix_headers("Kbar", m, n))
        .chain(["min_eig_ups1".to_string(), "min_eig_ups2".to_string()])
        .collect();
    w.write_record(&header).map_err(export_err)?;
    for (k, t) in sol.grid.iter().enumerate() {
        let aux = &sol.aux[k];
        let row: Vec<String> = std::iter::once(fmt(*t))
            .chain(matrix_cells(&sol.p[k]))
            .chain(matrix_cells(&sol.pbar[k]))
            .chain(matrix_cells(&aux.gains.k))
            .chain(matrix_cells(&aux.gains.kbar))
            .chain([fmt(min_eigenvalue(&aux.ups1)), fmt(min_eigenvalue(&aux.ups2))])
            .collect();
        w.write_record(&row).map_err(export_err)?;
    }
    w.flush().map_err(export_err)
}

/// Ensemble summary on the recorded grid: `t`, `mean_norm_sq` (`|Ex_t|²` of the
/// propagated mean), `second_moment` (`E(x_t'x_t)`), and `V` when a stationary
/// pair is supplied.
pub fn write_ensemble_csv<W: Write>(
    ens: &Ensemble,
    lyapunov: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let v = lyapunov.map(|(p, pbar)| lyapunov_trace(ens, p, pbar)).transpose()?;
    let mut header = vec!["t", "mean_norm_sq", "second_moment"];
    if v.is_some() {
        header.push("V");
    }
    w.write_record(&header).map_err(export_err)?;
    let m2 = ens.second_moment();
    for (r, &k) in ens.record.iter().enumerate() {
        let mut row = vec![fmt(ens.grid[k]), fmt(ens.mean[k].norm_squared()), fmt(m2[r].value)];
        if let Some(v) = &v {
            row.push(fmt(v[r].value));
        }
        w.write_record(&row).map_err(export_err)?;
    }
    w.flush().map_err(export_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, Gains, MeanFieldSystem};
    use crate::riccati::integrate_backward;
    use crate::simulate::{simulate_paths, Feedback, InitialState, SimConfig};
    use nalgebra::DVector;

    #[test]
    fn values_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 12.024137721468728, f64::MAX] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn riccati_csv_layout() {
        let sys = MeanFieldSystem::scalar([0.2, 0.4, 0.6, 0.2, 0.1, 0.7, 0.9, 0.3]).unwrap();
        let cost = CostSpec::scalar(1.0, 1.0, 1.0, 1.0).unwrap();
        let sol = integrate_backward(&sys, &cost, 1.0, 10).unwrap();
        let mut buf = Vec::new();
        write_riccati_csv(&sol, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,P_11,Pbar_11,K_11,Kbar_11,min_eig_ups1,min_eig_ups2");
        assert_eq!(lines.len(), 12);
        let last: Vec<f64> = lines[11].split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(last[0], 1.0);
        assert_eq!(last[1], 0.0);
        assert_eq!(last[5], 1.0);
    }

    #[test]
    fn ensemble_csv_layout() {
        let sys = MeanFieldSystem::scalar([-0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let cfg = SimConfig::new(0.1, 1.0, 2, 0, InitialState::Deterministic(DVector::from_element(1, 1.0))).unwrap();
        let ens = simulate_paths(&sys, &Feedback::Constant(&Gains::scalar(0.0, 0.0)), &cfg).unwrap();
        let mut buf = Vec::new();
        let id = DMatrix::identity(1, 1);
        write_ensemble_csv(&ens, Some((&id, &id)), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,mean_norm_sq,second_moment,V\n"));
        assert_eq!(text.lines().count(), 12);
        let mut buf = Vec::new();
        write_ensemble_csv(&ens, None, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,mean_norm_sq,second_moment\n"));
    }
}
