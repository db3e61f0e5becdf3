//! Agreement between an estimated and a reference model.

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::C64;
use crate::model::{frf_eval, AdditiveModel, Submodel};

/// `n` logarithmically spaced points from `f_min` to `f_max` (inclusive).
pub fn log_grid(f_min: f64, f_max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![f_min];
    }
    let (a, b) = (f_min.log10(), f_max.log10());
    (0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)).collect()
}

/// Grid used for FRF errors by default: 200 points from 0.1 Hz to a quarter of
/// the sampling frequency.
pub fn default_grid(ts: f64) -> Vec<f64> {
    log_grid(0.1, 0.25 / ts, 200)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// `||beta_hat - beta|| / ||beta||` after submodel matching.
    pub param_error: f64,
    /// Per-channel `||G_hat - G|| / ||G||` over the grid, `n_y x n_u`, row-major.
    pub frf_error: Vec<Vec<f64>>,
    pub worst_frf_error: f64,
    /// Largest magnitude deviation in dB outside the resonance neighbourhoods.
    pub max_db_error: f64,
    /// Matched truth index of every estimated submodel.
    pub matching: Vec<usize>,
}

fn sorted_poles(s: &Submodel) -> Vec<C64> {
    let mut p = s.poles();
    p.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    p
}

fn pole_distance(a: &Submodel, b: &Submodel) -> f64 {
    if a.structure() != b.structure() {
        return f64::INFINITY;
    }
    let (pa, pb) = (sorted_poles(a), sorted_poles(b));
    if pa.len() != pb.len() {
        return f64::INFINITY;
    }
    pa.iter().zip(&pb).map(|(x, y)| (x - y).norm() / y.norm().max(1.0)).sum()
}

/// Assignment of estimated submodels to truth submodels minimizing the total
/// relative pole distance; `result[i]` is the truth index for estimate `i`.
pub fn match_submodels(estimate: &AdditiveModel, truth: &AdditiveModel) -> Result<Vec<usize>> {
    let k = truth.k();
    if estimate.k() != k {
        return Err(Error::Dimension(format!("{} estimated vs {} true submodels", estimate.k(), k)));
    }
    let cost = DMatrix::from_fn(k, k, |i, j| pole_distance(&estimate.submodels[i], &truth.submodels[j]));
    if k <= 8 {
        let best = (0..k)
            .permutations(k)
            .map(|p| {
                let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
                (c, p)
            })
            .filter(|(c, _)| c.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0));
        return best
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Dimension("submodel structures cannot be matched".into()));
    }
    // greedy for large K
    let mut used = vec![false; k];
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = (0..k)
            .filter(|&j| !used[j] && cost[(i, j)].is_finite())
            .min_by(|&a, &b| cost[(i, a)].total_cmp(&cost[(i, b)]))
            .ok_or_else(|| Error::Dimension("submodel structures cannot be matched".into()))?;
        used[j] = true;
        out.push(j);
    }
    Ok(out)
}

/// Resonances of `truth` as `(frequency Hz, damping ratio)`.
pub fn resonances(truth: &AdditiveModel) -> Vec<(f64, f64)> {
    truth
        .submodels
        .iter()
        .flat_map(|s| s.denominator_roots())
        .filter(|r| r.im > 0.0)
        .map(|r| (r.norm() / (2.0 * std::f64::consts::PI), -r.re / r.norm()))
        .collect()
}

/// Compare `estimate` with `truth` on the grid `freqs_hz`.
///
/// Grid points within `3 zeta_i f_i` of a resonance of the truth are excluded
/// from the dB deviation.
pub fn fit_metrics(estimate: &AdditiveModel, truth: &AdditiveModel, freqs_hz: &[f64]) -> Result<FitMetrics> {
    if estimate.n_u != truth.n_u || estimate.n_y != truth.n_y {
        return Err(Error::ChannelMismatch {
            expected: truth.n_y * truth.n_u,
            got: estimate.n_y * estimate.n_u,
        });
    }
    let matching = match_submodels(estimate, truth)?;
    let mut permuted = truth.submodels.clone();
    for (i, &j) in matching.iter().enumerate() {
        permuted[j] = estimate.submodels[i].clone();
    }
    let est_sorted = AdditiveModel::new(truth.n_u, truth.n_y, permuted)?;
    let (bt, be) = (truth.beta().beta, est_sorted.beta().beta);
    let param_error = (&be - &bt).norm() / bt.norm().max(f64::MIN_POSITIVE);

    let omegas: Vec<f64> = freqs_hz.iter().map(|f| 2.0 * std::f64::consts::PI * f).collect();
    let ge = frf_eval(estimate, &omegas)?;
    let gt = frf_eval(truth, &omegas)?;
    let peaks = resonances(truth);
    let (n_y, n_u) = (truth.n_y, truth.n_u);
    let mut frf_error = vec![vec![0.0; n_u]; n_y];
    let mut max_db: f64 = 0.0;
    for i in 0..n_y {
        for j in 0..n_u {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, f) in freqs_hz.iter().enumerate() {
                num += (ge[k][(i, j)] - gt[k][(i, j)]).norm_sqr();
                den += gt[k][(i, j)].norm_sqr();
                let near_peak = peaks.iter().any(|&(fp, z)| (f - fp).abs() <= 3.0 * z * fp);
                if !near_peak {
                    let db = 20.0 * (ge[k][(i, j)].norm() / gt[k][(i, j)].norm()).log10();
                    max_db = max_db.max(db.abs());
                }
            }
            frf_error[i][j] = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        }
    }
    let worst = frf_error.iter().flatten().copied().fold(0.0, f64::max);
    Ok(FitMetrics {
        param_error,
        frf_error,
        worst_frf_error: worst,
        max_db_error: max_db,
        matching,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::modal::modal_beam_model;

    fn model() -> AdditiveModel {
        let r1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let r2 = DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.1, 0.4]);
        modal_beam_model(&[10.0, 40.0], &[0.02, 0.01], &[r1, r2]).unwrap()
    }

    #[test]
    fn identical_models_have_zero_error() {
        let m = model();
        let f = fit_metrics(&m, &m, &log_grid(0.1, 20.0, 50)).unwrap();
        assert_eq!(f.param_error, 0.0);
        assert_eq!(f.worst_frf_error, 0.0);
        assert_eq!(f.max_db_error, 0.0);
    }

    #[test]
    fn scaled_numerator_affects_one_channel() {
        let truth = model();
        let mut est = truth.clone();
        est.submodels[0].b.coeffs_mut()[0][(1, 0)] *= 1.0 + 1e-3;
        est.submodels[1].b.coeffs_mut()[0][(1, 0)] *= 1.0 + 1e-3;
        let f = fit_metrics(&est, &truth, &log_grid(0.1, 20.0, 50)).unwrap();
        assert!((f.frf_error[1][0] - 1e-3).abs() < 1e-9);
        assert_eq!(f.frf_error[0][0], 0.0);
        assert_eq!(f.frf_error[1][1], 0.0);
    }

    #[test]
    fn permutation_invariant() {
        let truth = model();
        let mut est = truth.clone();
        est.submodels[0].b.coeffs_mut()[0][(0, 0)] *= 1.01;
        let a = fit_metrics(&est, &truth, &log_grid(0.1, 20.0, 50)).unwrap();
        est.submodels.swap(0, 1);
        let b = fit_metrics(&est, &truth, &log_grid(0.1, 20.0, 50)).unwrap();
        assert!((a.param_error - b.param_error).abs() < 1e-15);
        assert_eq!(a.frf_error, b.frf_error);
        assert_eq!(b.matching, vec![1, 0]);
    }

    #[test]
    fn grid_endpoints() {
        let g = log_grid(0.1, 100.0, 200);
        assert_eq!(g.len(), 200);
        assert!((g[0] - 0.1).abs() < 1e-15);
        assert!((g[199] - 100.0).abs() < 1e-12);
        assert!((default_grid(1e-3)[199] - 250.0).abs() < 1e-9);
    }
}
