//! Noise covariance, weighting and the block-diagonal weighted IV update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::series::{InstrumentSeries, RegressorSeries, ResidualOutputSeries};
use crate::error::{Error, Result};
use crate::model::{ModelStructure, ParameterMatrix, ParameterVector};

/// Condition number above which the covariance is loaded on the diagonal.
pub const COV_CONDITION_LIMIT: f64 = 1e12;
/// Reciprocal condition number of the equilibrated normal matrix treated as singular.
pub const RANK_TOL: f64 = 1e-13;

const CHUNK: usize = 1024;

/// Sample covariance `(1/N) sum_k eps_k eps_k^T` of an `N x n_y` residual.
pub fn estimate_noise_cov(eps: &DMatrix<f64>) -> DMatrix<f64> {
    let n = eps.nrows().max(1) as f64;
    eps.transpose() * eps / n
}

/// Diagonal loading applied before inversion; a zero or non-finite covariance
/// falls back to the identity.
pub fn regularize_covariance(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let n_y = sigma.nrows();
    let sym = (sigma + sigma.transpose()) * 0.5;
    let trace = sym.trace();
    if !(trace > 0.0) || !trace.is_finite() || sym.iter().any(|v| !v.is_finite()) {
        return DMatrix::identity(n_y, n_y);
    }
    let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || hi / lo > COV_CONDITION_LIMIT {
        let mut out = sym;
        for i in 0..n_y {
            out[(i, i)] += 1e-12 * trace / n_y as f64;
        }
        // loading cannot fix an indefinite estimate with large negative eigenvalues
        if lo < -1e-12 * trace {
            return DMatrix::identity(n_y, n_y);
        }
        return out;
    }
    sym
}

/// `T` with `T^T T = Sigma^-1` (inverse Cholesky factor of the regularized covariance).
pub fn whitening(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let reg = regularize_covariance(sigma);
    let n_y = reg.nrows();
    match reg.clone().cholesky() {
        Some(ch) => ch
            .l()
            .solve_lower_triangular(&DMatrix::identity(n_y, n_y))
            .unwrap_or_else(|| DMatrix::identity(n_y, n_y)),
        None => DMatrix::identity(n_y, n_y),
    }
}

/// Fill `out` (`(len * n_y) x d`) with rows `(T Phi(t_k)^T)[o, :]` for `k` in the chunk.
fn fill_chunk(series: &RegressorSeries, k0: usize, len: usize, t: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let n_y = t.nrows();
    out.fill(0.0);
    for kk in 0..len {
        let base = kk * n_y;
        series.for_each_entry(k0 + kk, |row, q, v| {
            if v != 0.0 {
                for o in 0..n_y {
                    let w = t[(o, q)];
                    if w != 0.0 {
                        out[(base + o, row)] += w * v;
                    }
                }
            }
        });
    }
}

/// Whitened signal rows `T x_k` for an `N x n_y` series, one column per series.
fn fill_signals(signals: &[&DMatrix<f64>], k0: usize, len: usize, t: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    let n_y = t.nrows();
    for kk in 0..len {
        for (col, s) in signals.iter().enumerate() {
            for o in 0..n_y {
                let mut acc = 0.0;
                for q in 0..n_y {
                    acc += t[(o, q)] * s[(k0 + kk, q)];
                }
                out[(kk * n_y + o, col)] = acc;
            }
        }
    }
}

/// Accumulate `sum_k Phi_hat W Phi^T` and `sum_k Phi_hat W S_k` where each
/// column of `S_k` comes from one of `signals`, in a fixed chunk order.
fn accumulate(
    phi_hat: &InstrumentSeries,
    phi: Option<&RegressorSeries>,
    signals: &[&DMatrix<f64>],
    t: &DMatrix<f64>,
) -> (Option<DMatrix<f64>>, DMatrix<f64>) {
    let d = phi_hat.dim();
    let n_y = t.nrows();
    let n = phi_hat.len();
    let mut m = phi.map(|_| DMatrix::zeros(d, d));
    let mut r = DMatrix::zeros(d, signals.len());
    let rows = CHUNK * n_y;
    let mut xh = DMatrix::zeros(rows, d);
    let mut x = DMatrix::zeros(rows, d);
    let mut y = DMatrix::zeros(rows, signals.len());
    let mut k0 = 0;
    while k0 < n {
        let len = CHUNK.min(n - k0);
        if len < CHUNK {
            xh = DMatrix::zeros(len * n_y, d);
            x = DMatrix::zeros(len * n_y, d);
            y = DMatrix::zeros(len * n_y, signals.len());
        }
        fill_chunk(phi_hat, k0, len, t, &mut xh);
        if let (Some(m), Some(phi)) = (m.as_mut(), phi) {
            fill_chunk(phi, k0, len, t, &mut x);
            m.gemm_tr(1.0, &xh, &x, 1.0);
        }
        fill_signals(signals, k0, len, t, &mut y);
        r.gemm_tr(1.0, &xh, &y, 1.0);
        k0 += len;
    }
    (m, r)
}

/// Normal matrix `M = sum_k Phi_hat W Phi^T` (`d x d`) and right-hand side
/// `R = sum_k Phi_hat W Upsilon^T` (`d x K`).
pub fn normal_equations(
    phi_hat: &InstrumentSeries,
    phi: &RegressorSeries,
    upsilon: &ResidualOutputSeries,
    sigma: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if phi_hat.structure != phi.structure || phi_hat.len() != phi.len() {
        return Err(Error::Dimension("instrument and regressor layouts differ".into()));
    }
    if upsilon.k() != phi.structure.submodels.len() {
        return Err(Error::Dimension("residual outputs do not match the number of submodels".into()));
    }
    if sigma.nrows() != phi.structure.n_y || sigma.ncols() != phi.structure.n_y {
        return Err(Error::Dimension("covariance does not match the output dimension".into()));
    }
    let t = whitening(sigma);
    let refs: Vec<&DMatrix<f64>> = upsilon.rows.iter().collect();
    let (m, r) = accumulate(phi_hat, Some(phi), &refs, &t);
    Ok((m.expect("normal matrix requested"), r))
}

/// Solve `M X = R` through a row/column equilibrated SVD, rejecting
/// numerically singular `M`.
pub fn solve_normal(m: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.iter().chain(r.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Divergence(0));
    }
    let row_scale: Vec<f64> = (0..d).map(|i| m.row(i).norm()).collect();
    if row_scale.contains(&0.0) {
        return Err(Error::RankDeficiency);
    }
    let mut a = m.clone();
    for i in 0..d {
        a.row_mut(i).scale_mut(1.0 / row_scale[i]);
    }
    let col_scale: Vec<f64> = (0..d).map(|j| a.column(j).norm()).collect();
    if col_scale.contains(&0.0) {
        return Err(Error::RankDeficiency);
    }
    for j in 0..d {
        a.column_mut(j).scale_mut(1.0 / col_scale[j]);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > RANK_TOL * smax) {
        return Err(Error::RankDeficiency);
    }
    let mut rhs = r.clone();
    for i in 0..d {
        rhs.row_mut(i).scale_mut(1.0 / row_scale[i]);
    }
    let mut x = svd.solve(&rhs, 0.0).map_err(|_| Error::RankDeficiency)?;
    for j in 0..d {
        x.row_mut(j).scale_mut(1.0 / col_scale[j]);
    }
    Ok(x)
}

/// Input bases whitening the numerator signals of the instrument and the
/// regressor jointly, one `n_u x n_u` matrix per block and power.
///
/// Integrating filters can make a fixed combination of input channels orders
/// of magnitude smaller than each channel alone; expressing the numerators in
/// this basis keeps the normal matrix well conditioned without changing the
/// estimate.
fn input_bases(phi_hat: &InstrumentSeries, phi: &RegressorSeries) -> Vec<Vec<DMatrix<f64>>> {
    phi_hat
        .blocks
        .iter()
        .zip(&phi.blocks)
        .map(|(bh, b)| {
            bh.num
                .iter()
                .zip(&b.num)
                .map(|(fh, f)| {
                    let n_u = f.ncols();
                    let gram = fh.tr_mul(fh) + f.tr_mul(f);
                    let eig = SymmetricEigen::new(gram);
                    let top = eig.eigenvalues.max();
                    if !(top > 0.0) || !top.is_finite() {
                        return DMatrix::identity(n_u, n_u);
                    }
                    let mut q = eig.eigenvectors;
                    for (c, &l) in eig.eigenvalues.iter().enumerate() {
                        q.column_mut(c).scale_mut(1.0 / l.max(1e-300 * top).sqrt());
                    }
                    q
                })
                .collect()
        })
        .collect()
}

/// Map solution rows in the whitened input bases back to `vec(B_j)` coordinates.
fn restore_input_bases(x: &mut DMatrix<f64>, structure: &ModelStructure, bases: &[Vec<DMatrix<f64>>]) {
    let (n_u, n_y) = (structure.n_u, structure.n_y);
    for ((s, off), q) in structure.submodels.iter().zip(structure.block_offsets()).zip(bases) {
        for (j, q) in q.iter().enumerate() {
            let start = off + s.n + j * n_u * n_y;
            for col in 0..x.ncols() {
                // rows are vec(B') column-major; B = B' Q^T
                let bp = DMatrix::from_fn(n_y, n_u, |o, c| x[(start + c * n_y + o, col)]);
                let b = bp * q.transpose();
                for c in 0..n_u {
                    for o in 0..n_y {
                        x[(start + c * n_y + o, col)] = b[(o, c)];
                    }
                }
            }
        }
    }
}

/// Full parameter matrix `[sum Phi_hat W Phi^T]^-1 [sum Phi_hat W Upsilon^T]`.
pub fn iv_solve(
    phi_hat: &InstrumentSeries,
    phi: &RegressorSeries,
    upsilon: &ResidualOutputSeries,
    sigma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if phi_hat.structure != phi.structure || phi_hat.len() != phi.len() {
        return Err(Error::Dimension("instrument and regressor layouts differ".into()));
    }
    let bases = input_bases(phi_hat, phi);
    let (m, r) = normal_equations(&phi_hat.with_input_bases(&bases), &phi.with_input_bases(&bases), upsilon, sigma)?;
    let mut x = solve_normal(&m, &r)?;
    restore_input_bases(&mut x, &phi.structure, &bases);
    Ok(x)
}

/// One weighted IV update; the new parameters are the block-diagonal entries.
pub fn iv_step(
    phi_hat: &InstrumentSeries,
    phi: &RegressorSeries,
    upsilon: &ResidualOutputSeries,
    sigma: &DMatrix<f64>,
) -> Result<ParameterVector> {
    let full = iv_solve(phi_hat, phi, upsilon, sigma)?;
    extract(&full, &phi.structure)
}

fn extract(full: &DMatrix<f64>, structure: &ModelStructure) -> Result<ParameterVector> {
    ParameterMatrix::extract_block_diagonal(full, structure)
}

/// `(1/N) sum_k Phi_hat(t_k) Sigma^-1 eps(t_k)`.
pub fn correlation_vector(phi_hat: &InstrumentSeries, eps: &DMatrix<f64>, sigma: &DMatrix<f64>) -> DVector<f64> {
    let t = whitening(sigma);
    let (_, r) = accumulate(phi_hat, None, &[eps], &t);
    DVector::from_column_slice(r.as_slice()) / phi_hat.len().max(1) as f64
}

/// Euclidean norm of [`correlation_vector`].
pub fn correlation_norm(phi_hat: &InstrumentSeries, eps: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    correlation_vector(phi_hat, eps, sigma).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::series::{build_instrument_ol, build_regressor, build_residual_outputs, residual, submodel_outputs};
    use crate::lti::{MatrixPolynomial, Polynomial};
    use crate::model::{AdditiveModel, Submodel};
    use crate::signals::{generate_gaussian, Dataset};

    fn siso(ell: usize, a: &[f64], b: &[f64]) -> Submodel {
        Submodel::new(
            ell,
            Polynomial::new(a.to_vec()).unwrap(),
            MatrixPolynomial::new(b.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect()).unwrap(),
        )
    }

    fn simulate(model: &AdditiveModel, n: usize, ts: f64, noise: f64, seed: u64) -> Dataset {
        let u = generate_gaussian(n, model.n_u, 1.0, seed);
        let probe = Dataset::new(u.clone(), DMatrix::zeros(n, model.n_y), None, ts).unwrap();
        let mut y = generate_gaussian(n, model.n_y, noise, seed + 1000);
        for part in submodel_outputs(model, &probe).unwrap() {
            y += part;
        }
        Dataset::new(u, y, None, ts).unwrap()
    }

    fn two_siso() -> AdditiveModel {
        AdditiveModel::new(
            1,
            1,
            vec![siso(1, &[1.0], &[2.0]), siso(0, &[1.0, 0.02, 0.0025], &[1.0, 0.01])],
        )
        .unwrap()
    }

    fn mimo() -> AdditiveModel {
        AdditiveModel::new(
            2,
            2,
            vec![Submodel::new(
                0,
                Polynomial::new(vec![1.0, 0.05, 0.001]).unwrap(),
                MatrixPolynomial::new(vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.7])]).unwrap(),
            )],
        )
        .unwrap()
    }

    /// Normal equations by explicit per-sample matrices and an explicit inverse weight.
    fn dense_solve(model: &AdditiveModel, ds: &Dataset, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let phi_hat = build_instrument_ol(model, ds).unwrap();
        let phi = build_regressor(model, ds).unwrap();
        let ups = build_residual_outputs(model, ds).unwrap();
        let w = sigma.clone().try_inverse().unwrap();
        let d = phi.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut r = DMatrix::zeros(d, model.k());
        for k in 0..ds.len() {
            let zh = phi_hat.at(k) * &w;
            m += &zh * phi.at(k).transpose();
            r += &zh * ups.at(k).transpose();
        }
        m.lu().solve(&r).unwrap()
    }

    fn step(model: &AdditiveModel, ds: &Dataset, sigma: &DMatrix<f64>) -> Result<ParameterVector> {
        iv_step(
            &build_instrument_ol(model, ds)?,
            &build_regressor(model, ds)?,
            &build_residual_outputs(model, ds)?,
            sigma,
        )
    }

    fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn covariance_of_zero_and_single_sample() {
        assert_eq!(estimate_noise_cov(&DMatrix::zeros(10, 3)), DMatrix::zeros(3, 3));
        let e = DMatrix::from_row_slice(1, 2, &[2.0, -3.0]);
        assert_eq!(estimate_noise_cov(&e), DMatrix::from_row_slice(2, 2, &[4.0, -6.0, -6.0, 9.0]));
    }

    #[test]
    fn regularization_cases() {
        assert_eq!(regularize_covariance(&DMatrix::zeros(2, 2)), DMatrix::identity(2, 2));
        let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(regularize_covariance(&good), good);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-14]));
        let reg = regularize_covariance(&bad);
        let load = 1e-12 * (1.0 + 1e-14) / 2.0;
        assert!((reg[(1, 1)] - (1e-14 + load)).abs() < 1e-24);
        assert!((reg[(0, 0)] - (1.0 + load)).abs() < 1e-15);
        let w = whitening(&good);
        let back = w.transpose() * &w * &good;
        assert!((back - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn single_submodel_matches_dense_weighted_iv() {
        let truth = mimo();
        let ds = simulate(&truth, 2000, 0.002, 0.01, 1);
        let mut m = truth.clone();
        m.submodels[0].a = Polynomial::new(vec![1.0, 0.045, 0.0011]).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[0.02, 0.004, 0.004, 0.01]);
        let dense = dense_solve(&m, &ds, &sigma);
        let got = step(&m, &ds, &sigma).unwrap();
        let expect = DVector::from_column_slice(dense.column(0).as_slice());
        assert!(rel(&got.beta, &expect) < 1e-9, "{}", rel(&got.beta, &expect));
    }

    #[test]
    fn two_submodels_match_dense_assembly() {
        let truth = two_siso();
        let ds = simulate(&truth, 3000, 0.002, 0.05, 2);
        let mut m = truth.clone();
        m.submodels[0].b.coeffs_mut()[0][(0, 0)] = 2.1;
        m.submodels[1].a = Polynomial::new(vec![1.0, 0.021, 0.0024]).unwrap();
        let sigma = DMatrix::from_element(1, 1, 0.05);
        let dense = dense_solve(&m, &ds, &sigma);
        let sizes = m.structure().block_sizes();
        let mut expect = Vec::new();
        expect.extend(dense.view((0, 0), (sizes[0], 1)).iter());
        expect.extend(dense.view((sizes[0], 1), (sizes[1], 1)).iter());
        let got = step(&m, &ds, &sigma).unwrap();
        assert!(rel(&got.beta, &DVector::from_vec(expect)) < 1e-8);
    }

    #[test]
    fn covariance_scale_does_not_change_the_update() {
        let truth = mimo();
        let ds = simulate(&truth, 1500, 0.002, 0.01, 3);
        let mut m = truth.clone();
        m.submodels[0].b.coeffs_mut()[0][(1, 0)] = -0.25;
        let sigma = DMatrix::from_row_slice(2, 2, &[0.02, 0.004, 0.004, 0.01]);
        let a = step(&m, &ds, &sigma).unwrap();
        for scale in [1e-6, 7.3, 1e5] {
            let b = step(&m, &ds, &(&sigma * scale)).unwrap();
            assert!(rel(&b.beta, &a.beta) < 1e-10);
        }
    }

    #[test]
    fn truth_is_a_fixed_point_with_empty_off_diagonal_blocks() {
        let truth = two_siso();
        let ds = simulate(&truth, 3000, 0.002, 0.0, 4);
        let eps = residual(&truth, &ds).unwrap();
        let sigma = estimate_noise_cov(&eps);
        let got = step(&truth, &ds, &sigma).unwrap();
        assert!(rel(&got.beta, &truth.beta().beta) < 1e-6);

        let full = iv_solve(
            &build_instrument_ol(&truth, &ds).unwrap(),
            &build_regressor(&truth, &ds).unwrap(),
            &build_residual_outputs(&truth, &ds).unwrap(),
            &sigma,
        )
        .unwrap();
        let (offs, sizes) = (truth.structure().block_offsets(), truth.structure().block_sizes());
        let pv = truth.beta();
        for col in 0..2 {
            for blk in 0..2 {
                if blk != col {
                    let off = full.view((offs[blk], col), (sizes[blk], 1)).norm();
                    assert!(off < 1e-4 * pv.theta(blk).norm(), "block {blk} of column {col}: {off}");
                }
            }
        }
    }

    #[test]
    fn correlation_vanishes_at_truth_without_noise() {
        let truth = mimo();
        let ds = simulate(&truth, 2000, 0.002, 0.0, 5);
        let phi_hat = build_instrument_ol(&truth, &ds).unwrap();
        let eps = residual(&truth, &ds).unwrap();
        let id = DMatrix::identity(2, 2);
        let n = ds.len() as f64;
        let c = correlation_vector(&phi_hat, &eps, &id) * n;
        let mut gram = DMatrix::zeros(phi_hat.dim(), phi_hat.dim());
        for k in 0..ds.len() {
            let p = phi_hat.at(k);
            gram += &p * p.transpose();
        }
        assert!(c.norm() < 1e-6 * gram.norm());
    }

    #[test]
    fn vanishing_instrument_is_rank_deficient() {
        let m = mimo();
        let ds = Dataset::new(DMatrix::zeros(200, 2), generate_gaussian(200, 2, 1.0, 6), None, 0.01).unwrap();
        assert!(matches!(step(&m, &ds, &DMatrix::identity(2, 2)), Err(Error::RankDeficiency)));
    }

    #[test]
    fn rank_deficiency_message() {
        assert_eq!(
            Error::RankDeficiency.to_string(),
            "instrument/regressor rank deficiency (insufficient excitation or overparameterization)"
        );
    }
}
