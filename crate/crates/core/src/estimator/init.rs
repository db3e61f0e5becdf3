//! Initialization: numerators for fixed denominators and resonance picking.

use nalgebra::DMatrix;

use super::series::instrument_from_signal;
use crate::error::{Error, Result};
use crate::lti::{MatrixPolynomial, Polynomial};
use crate::model::{AdditiveModel, ModelStructure, Submodel};
use crate::signals::Dataset;

/// Least-squares numerators for fixed denominators `p^l_i A_i`.
///
/// The regression `y = sum_i B_i/(p^l_i A_i) u` is linear in the numerator
/// coefficients and decouples over output channels.
pub fn init_numerators(ds: &Dataset, structure: &ModelStructure, denominators: &[Polynomial]) -> Result<AdditiveModel> {
    let k = structure.submodels.len();
    if denominators.len() != k {
        return Err(Error::Dimension(format!("{} denominators for {} submodels", denominators.len(), k)));
    }
    if ds.n_u() != structure.n_u || ds.n_y() != structure.n_y {
        return Err(Error::ChannelMismatch {
            expected: structure.n_y,
            got: ds.n_y(),
        });
    }
    let (n_u, n_y) = (structure.n_u, structure.n_y);
    // a placeholder model carrying the denominators; only the numerator filter rows are used
    let submodels = structure
        .submodels
        .iter()
        .zip(denominators)
        .map(|(s, a)| {
            if a.declared_degree() != s.n {
                return Err(Error::Dimension(format!(
                    "denominator of degree {} for a submodel with n = {}",
                    a.declared_degree(),
                    s.n
                )));
            }
            Ok(Submodel::new(s.ell, a.clone(), MatrixPolynomial::zeros(s.m, n_y, n_u)))
        })
        .collect::<Result<Vec<_>>>()?;
    let shell = AdditiveModel::new(n_u, n_y, submodels)?;
    let series = instrument_from_signal(&shell, &ds.u, ds.ts)?;

    // regressor columns: (submodel, power j, input c)
    let n = ds.len();
    let p: usize = structure.submodels.iter().map(|s| (s.m + 1) * n_u).sum();
    let mut f = DMatrix::zeros(n, p);
    let mut col = 0;
    for block in &series.blocks {
        for num in &block.num {
            for c in 0..n_u {
                f.column_mut(col).copy_from(&num.column(c));
                col += 1;
            }
        }
    }
    let coef = least_squares(&f, &ds.y)?;

    let mut col = 0;
    let mut out = Vec::with_capacity(k);
    for (s, a) in structure.submodels.iter().zip(denominators) {
        let mut b = Vec::with_capacity(s.m + 1);
        for _ in 0..=s.m {
            let mut bj = DMatrix::zeros(n_y, n_u);
            for c in 0..n_u {
                for o in 0..n_y {
                    bj[(o, c)] = coef[(col, o)];
                }
                col += 1;
            }
            b.push(bj);
        }
        out.push(Submodel::new(s.ell, a.clone(), MatrixPolynomial::new(b)?));
    }
    AdditiveModel::new(n_u, n_y, out)
}

/// Column-scaled SVD least squares with a rank check.
fn least_squares(f: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = f.ncols();
    let scale: Vec<f64> = (0..p).map(|j| f.column(j).norm()).collect();
    if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::RankDeficiency);
    }
    let mut a = f.clone();
    for j in 0..p {
        a.column_mut(j).scale_mut(1.0 / scale[j]);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficiency);
    }
    let mut x = svd.solve(y, 0.0).map_err(|_| Error::RankDeficiency)?;
    for j in 0..p {
        x.row_mut(j).scale_mut(1.0 / scale[j]);
    }
    Ok(x)
}

/// Second-order denominator `1 + 2 zeta/omega p + p^2/omega^2`.
pub fn modal_denominator(omega: f64, zeta: f64) -> Polynomial {
    Polynomial::new(vec![1.0, 2.0 * zeta / omega, 1.0 / (omega * omega)]).expect("nonempty coefficients")
}

/// Natural frequencies (rad/s, ascending) of the `k` most prominent local
/// maxima of the aggregate log-magnitude `sum_ij ln |G_ij|`.
///
/// Peaks closer than a factor `1 + min_rel_spacing` in frequency to a more
/// prominent peak are suppressed.
pub fn pick_initial_poles(freqs_hz: &[f64], mags: &[DMatrix<f64>], k: usize, min_rel_spacing: f64) -> Result<Vec<f64>> {
    if freqs_hz.len() != mags.len() {
        return Err(Error::Dimension("frequency grid and magnitudes differ in length".into()));
    }
    if freqs_hz.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidConfig("frequency grid must be strictly ascending".into()));
    }
    let agg: Vec<f64> = mags
        .iter()
        .map(|m| m.iter().map(|v| v.abs().max(f64::MIN_POSITIVE).ln()).sum())
        .collect();
    let n = agg.len();
    let mut peaks: Vec<(usize, f64)> = (1..n.saturating_sub(1))
        .filter(|&i| agg[i] > agg[i - 1] && agg[i] >= agg[i + 1])
        .map(|i| (i, prominence(&agg, i)))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for (i, _) in peaks {
        let f = freqs_hz[i];
        let clash = chosen.iter().any(|&j| {
            let (lo, hi) = if freqs_hz[j] < f { (freqs_hz[j], f) } else { (f, freqs_hz[j]) };
            hi < lo * (1.0 + min_rel_spacing)
        });
        if !clash {
            chosen.push(i);
            if chosen.len() == k {
                break;
            }
        }
    }
    if chosen.len() < k {
        return Err(Error::TooFewPeaks {
            found: chosen.len(),
            requested: k,
        });
    }
    let mut omegas: Vec<f64> = chosen.into_iter().map(|i| 2.0 * std::f64::consts::PI * freqs_hz[i]).collect();
    omegas.sort_by(f64::total_cmp);
    Ok(omegas)
}

/// Height of peak `i` above the higher of the two lowest points separating it
/// from a higher sample (or the grid edge) on either side.
fn prominence(x: &[f64], i: usize) -> f64 {
    let h = x[i];
    let mut left_min = h;
    for &v in x[..i].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::series::submodel_outputs;
    use crate::signals::generate_gaussian;
    use std::f64::consts::PI;

    fn truth() -> AdditiveModel {
        AdditiveModel::new(
            2,
            2,
            vec![
                Submodel::new(
                    2,
                    Polynomial::one(),
                    MatrixPolynomial::new(vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])]).unwrap(),
                ),
                Submodel::new(
                    0,
                    modal_denominator(2.0 * PI * 8.0, 0.02),
                    MatrixPolynomial::new(vec![DMatrix::from_row_slice(2, 2, &[0.4, -0.4, -0.4, 0.4])]).unwrap(),
                ),
            ],
        )
        .unwrap()
    }

    fn noise_free(model: &AdditiveModel, n: usize, ts: f64) -> Dataset {
        let u = generate_gaussian(n, model.n_u, 1.0, 21);
        let probe = Dataset::new(u.clone(), DMatrix::zeros(n, model.n_y), None, ts).unwrap();
        let mut y = DMatrix::zeros(n, model.n_y);
        for p in submodel_outputs(model, &probe).unwrap() {
            y += p;
        }
        Dataset::new(u, y, None, ts).unwrap()
    }

    fn denominators(m: &AdditiveModel) -> Vec<Polynomial> {
        m.submodels.iter().map(|s| s.a.clone()).collect()
    }

    #[test]
    fn true_denominators_recover_numerators() {
        let t = truth();
        let ds = noise_free(&t, 4000, 0.001);
        let got = init_numerators(&ds, &t.structure(), &denominators(&t)).unwrap();
        let (a, b) = (got.beta().beta, t.beta().beta);
        assert!((&a - &b).norm() / b.norm() < 1e-6);
    }

    #[test]
    fn zero_output_gives_zero_numerators() {
        let t = truth();
        let mut ds = noise_free(&t, 1000, 0.001);
        ds.y.fill(0.0);
        let got = init_numerators(&ds, &t.structure(), &denominators(&t)).unwrap();
        for s in &got.submodels {
            assert!(s.b.coeffs().iter().all(|c| c.amax() == 0.0));
        }
    }

    #[test]
    fn mismatched_denominators_rejected() {
        let t = truth();
        let ds = noise_free(&t, 100, 0.001);
        assert!(init_numerators(&ds, &t.structure(), &[Polynomial::one()]).is_err());
        let wrong = vec![Polynomial::one(), Polynomial::new(vec![1.0, 0.1]).unwrap()];
        assert!(init_numerators(&ds, &t.structure(), &wrong).is_err());
    }

    fn resonance(f: f64, fr: f64, zeta: f64, gain: f64) -> f64 {
        let r = f / fr;
        gain / ((1.0 - r * r).powi(2) + (2.0 * zeta * r).powi(2)).sqrt()
    }

    fn grid(df: f64, f_max: f64) -> Vec<f64> {
        (1..=(f_max / df).round() as usize).map(|k| k as f64 * df).collect()
    }

    #[test]
    fn single_peak() {
        let f = grid(0.1, 50.0);
        let mags: Vec<DMatrix<f64>> = f.iter().map(|&x| DMatrix::from_element(1, 1, resonance(x, 12.0, 0.02, 1.0))).collect();
        let w = pick_initial_poles(&f, &mags, 1, 0.1).unwrap();
        assert!((w[0] - 2.0 * PI * 12.0).abs() <= 2.0 * PI * 0.1 + 1e-9);
    }

    #[test]
    fn peaks_of_different_height_both_found() {
        let f = grid(0.1, 80.0);
        let mags: Vec<DMatrix<f64>> = f
            .iter()
            .map(|&x| {
                let v = resonance(x, 10.0, 0.01, 1.0) + resonance(x, 45.0, 0.02, 1e-3);
                DMatrix::from_row_slice(1, 2, &[v, 2.0 * v])
            })
            .collect();
        let w = pick_initial_poles(&f, &mags, 2, 0.1).unwrap();
        assert!((w[0] / (2.0 * PI) - 10.0).abs() <= 0.1 + 1e-9);
        assert!((w[1] / (2.0 * PI) - 45.0).abs() <= 0.1 + 1e-9);
    }

    #[test]
    fn too_few_peaks_reported() {
        let f = grid(0.1, 50.0);
        let mags: Vec<DMatrix<f64>> = f.iter().map(|&x| DMatrix::from_element(1, 1, resonance(x, 12.0, 0.02, 1.0))).collect();
        let err = pick_initial_poles(&f, &mags, 3, 0.1).unwrap_err();
        assert!(matches!(err, Error::TooFewPeaks { found: 1, requested: 3 }));
        assert!(err.to_string().contains('1'));
    }

    #[test]
    fn unsorted_grid_rejected() {
        let mags = vec![DMatrix::from_element(1, 1, 1.0); 3];
        assert!(pick_initial_poles(&[1.0, 3.0, 2.0], &mags, 1, 0.1).is_err());
    }

    #[test]
    fn modal_denominator_roots() {
        let (w, z) = (2.0 * PI * 5.0, 0.03);
        let roots = modal_denominator(w, z).roots().unwrap();
        for r in roots {
            assert!((r.norm() - w).abs() < 1e-9 * w);
            assert!((-r.re / r.norm() - z).abs() < 1e-12);
        }
    }
}
