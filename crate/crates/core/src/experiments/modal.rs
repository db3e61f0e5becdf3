//! Sums of lightly damped second-order modes with static residue matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{MatrixPolynomial, Polynomial};
use crate::model::{AdditiveModel, Submodel};

/// `sum_i R_i / (p^2/omega_i^2 + 2 zeta_i/omega_i p + 1)`.
pub fn modal_beam_model(omegas: &[f64], zetas: &[f64], residues: &[DMatrix<f64>]) -> Result<AdditiveModel> {
    let k = omegas.len();
    if k == 0 || zetas.len() != k || residues.len() != k {
        return Err(Error::InvalidConfig(format!(
            "need matching mode data, got {} frequencies, {} damping ratios, {} residues",
            k,
            zetas.len(),
            residues.len()
        )));
    }
    for (i, &w) in omegas.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::InvalidConfig(format!("natural frequency {w} must be positive")));
        }
        if omegas[..i].contains(&w) {
            return Err(Error::RepeatedFrequency(w));
        }
    }
    if zetas.iter().any(|&z| !(z > 0.0 && z < 1.0)) {
        return Err(Error::InvalidConfig("damping ratios must lie in (0, 1)".into()));
    }
    let (n_y, n_u) = residues[0].shape();
    let subs = omegas
        .iter()
        .zip(zetas)
        .zip(residues)
        .map(|((&w, &z), r)| {
            let a = Polynomial::new(vec![1.0, 2.0 * z / w, 1.0 / (w * w)])?;
            Ok(Submodel::new(0, a, MatrixPolynomial::new(vec![r.clone()])?))
        })
        .collect::<Result<Vec<_>>>()?;
    AdditiveModel::new(n_u, n_y, subs)
}

/// `(omega, zeta)` of `1 + a_1 p + a_2 p^2`.
pub fn modal_parameters(a: &Polynomial) -> Result<(f64, f64)> {
    let c = a.coeffs();
    if c.len() != 3 || !(c[2] > 0.0) {
        return Err(Error::InvalidConfig("expected a second-order denominator with positive leading coefficient".into()));
    }
    let w = 1.0 / c[2].sqrt();
    Ok((w, c[1] * w / 2.0))
}

/// Stored description of a modal model: frequencies in Hz, residues row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalSpec {
    pub freqs_hz: Vec<f64>,
    pub damping: Vec<f64>,
    pub residues: Vec<Vec<Vec<f64>>>,
}

impl ModalSpec {
    pub fn model(&self) -> Result<AdditiveModel> {
        let omegas: Vec<f64> = self.freqs_hz.iter().map(|f| 2.0 * std::f64::consts::PI * f).collect();
        let residues = self
            .residues
            .iter()
            .map(|rows| {
                let n_y = rows.len();
                let n_u = rows.first().map_or(0, |r| r.len());
                if n_y == 0 || n_u == 0 || rows.iter().any(|r| r.len() != n_u) {
                    return Err(Error::InvalidConfig("residue matrices must be rectangular and nonempty".into()));
                }
                Ok(DMatrix::from_fn(n_y, n_u, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        modal_beam_model(&omegas, &self.damping, &residues)
    }
}
