//! Error and cost metrics.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::models::{FomModel, FomState};

/// Relative errors above this are not admitted to efficacy comparisons.
pub const EFFICACY_THRESHOLD: f64 = 1e-1;

/// `‖Q - Φ Q̂‖²_F / ‖Q‖²_F` (squared, not square-rooted).
pub fn relative_state_error(q: &DMatrix<f64>, phi: &DMatrix<f64>, q_hat: &DMatrix<f64>) -> Result<f64> {
    check_len("relative_state_error basis rows", q.nrows(), phi.nrows())?;
    check_len("relative_state_error reduced rows", phi.ncols(), q_hat.nrows())?;
    relative_error_of(q, &(phi * q_hat))
}

/// `‖Q - R‖²_F / ‖Q‖²_F` for an already reconstructed `R`.
pub fn relative_error_of(q: &DMatrix<f64>, recon: &DMatrix<f64>) -> Result<f64> {
    check_len("relative_error rows", q.nrows(), recon.nrows())?;
    check_len("relative_error columns", q.ncols(), recon.ncols())?;
    let denom = q.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((q - recon).norm_squared() / denom)
}

/// `1 / (error × seconds)`, absent when the error is above the admission
/// threshold or either input is not positive.
pub fn efficacy(train_error: f64, wall_seconds: f64) -> Option<f64> {
    if !(train_error > 0.0 && wall_seconds > 0.0) || train_error > EFFICACY_THRESHOLD {
        return None;
    }
    Some(1.0 / (train_error * wall_seconds))
}

/// `|E(Φ q̂(t), Φ p̂(t)) - E(Φ q̂(0), Φ p̂(0))|` for a reduced trajectory
/// stored column-wise as `[q̂; p̂]`.
pub fn fom_energy_error(model: &FomModel, phi: &DMatrix<f64>, traj: &DMatrix<f64>) -> Result<Vec<f64>> {
    let r = phi.ncols();
    check_len("fom_energy_error basis rows", model.n(), phi.nrows())?;
    check_len("fom_energy_error reduced rows", 2 * r, traj.nrows())?;
    let energies = (0..traj.ncols())
        .map(|k| {
            let col = traj.column(k);
            let state = FomState {
                q: phi * col.rows(0, r),
                p: phi * col.rows(r, r),
                t: 0.0,
            };
            model.energy(&state)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(drift(&energies))
}

/// `|e_k - e_0|` for every sample.
pub fn drift(series: &[f64]) -> Vec<f64> {
    match series.first() {
        Some(&e0) => series.iter().map(|e| (e - e0).abs()).collect(),
        None => Vec::new(),
    }
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Arithmetic mean of per-parameter relative errors.
pub fn average_relative_state_error(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Empty("per-parameter errors"));
    }
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Median wall time of `runs` executions of `f`; the last result is kept.
pub fn timed_median<T, F>(runs: usize, mut f: F) -> Result<(T, f64)>
where
    F: FnMut() -> Result<T>,
{
    let mut times = Vec::with_capacity(runs.max(1));
    let mut last = None;
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        last = Some(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok((last.expect("at least one run"), median(&times).unwrap_or(0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Regime {
    Train,
    Test,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Train => "train",
            Regime::Test => "test",
        })
    }
}

/// One row of results for a (model, method, reduced dimension, regime) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub method: String,
    pub reduced_dim: usize,
    pub regime: Regime,
    /// Relative error in `q` (KGZ: in `ψ`).
    pub error_q: f64,
    /// Relative error in `p` (KGZ: in `φ`).
    pub error_p: Option<f64>,
    /// Max FOM energy error over the regime window.
    pub fom_energy_error: Option<f64>,
    /// Max lifted energy drift over the regime window, for lifted ROMs.
    pub lifted_energy_drift: Option<f64>,
    pub wall_seconds: f64,
    pub efficacy: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Boundary, Nonlinearity, SpatialGrid};

    #[test]
    fn state_error_limits() {
        let phi = DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let q = DMatrix::from_column_slice(3, 2, &[0.6, 0.8, 0.0, -1.2, -1.6, 0.0]);
        let exact = phi.tr_mul(&q);
        assert!(relative_state_error(&q, &phi, &exact).unwrap() < 1e-30);
        assert_eq!(relative_state_error(&q, &phi, &DMatrix::zeros(1, 2)).unwrap(), 1.0);
        assert!(matches!(
            relative_state_error(&DMatrix::zeros(3, 2), &phi, &exact),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn state_error_is_scale_invariant() {
        let phi = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let q = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        let qh = DMatrix::from_element(1, 1, 0.7);
        let e1 = relative_state_error(&q, &phi, &qh).unwrap();
        let e2 = relative_state_error(&(3.5 * &q), &phi, &(3.5 * &qh)).unwrap();
        assert!((e1 - e2).abs() < 1e-15);
    }

    #[test]
    fn efficacy_arithmetic() {
        assert!((efficacy(0.01, 10.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((efficacy(0.1, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((efficacy(0.01, 20.0).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(efficacy(0.2, 1.0), None);
        assert_eq!(efficacy(0.01, 0.0), None);
    }

    #[test]
    fn energy_error_of_constant_trajectory() {
        let grid = SpatialGrid::new_1d(8, 0.0, 1.0, Boundary::DirichletZero).unwrap();
        let model = FomModel::new(grid, Nonlinearity::Exponential).unwrap();
        let phi = DMatrix::from_fn(8, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let col = [0.3, -0.2, 0.1, 0.5];
        let traj = DMatrix::from_fn(4, 5, |i, _| col[i]);
        assert_eq!(fom_energy_error(&model, &phi, &traj).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn averages_and_medians() {
        assert_eq!(average_relative_state_error(&[0.3]).unwrap(), 0.3);
        assert!((average_relative_state_error(&[0.2; 7]).unwrap() - 0.2).abs() < 1e-15);
        assert!(average_relative_state_error(&[]).is_err());
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(drift(&[1.0, 1.5, 0.5])[0], 0.0);
    }
}
