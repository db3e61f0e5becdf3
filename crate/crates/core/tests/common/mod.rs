//! Reference computations shared by the integration suites. Nothing here
//! calls into the filtering, discretization or estimation code under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix exponential by scaling, a truncated Taylor series and repeated squaring.
pub fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = m / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `(Ad, Bd)` of a zero-order hold through the exponential of `[[A, B], [0, 0]] ts`.
pub fn zoh_series(a: &DMatrix<f64>, b: &DMatrix<f64>, ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (a.nrows(), b.ncols());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * ts));
    let e = expm_series(&aug);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
}

/// `num(p) / den(p)` (ascending coefficients, proper) applied to a held signal
/// from rest, realized in controllable canonical form.
pub fn zoh_filter(num: &[f64], den: &[f64], ts: f64, x: &[f64]) -> Vec<f64> {
    let mut den = den.to_vec();
    while den.len() > 1 && *den.last().unwrap() == 0.0 {
        den.pop();
    }
    let n = den.len() - 1;
    let lead = den[n];
    let alpha: Vec<f64> = den.iter().map(|d| d / lead).collect();
    let mut beta: Vec<f64> = num.iter().map(|v| v / lead).collect();
    beta.resize(n + 1, 0.0);
    assert!(num.len() <= n + 1 || num[n + 1..].iter().all(|&v| v == 0.0), "improper");
    let feed = beta[n];
    if n == 0 {
        return x.iter().map(|v| feed * v).collect();
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -alpha[j];
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0;
    let c = DVector::from_iterator(n, (0..n).map(|j| beta[j] - feed * alpha[j]));
    let (ad, bd) = zoh_series(&a, &b, ts);
    let mut s = DVector::zeros(n);
    x.iter()
        .map(|&v| {
            let out = c.dot(&s) + feed * v;
            s = &ad * &s + bd.column(0) * v;
            out
        })
        .collect()
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn monomial(k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k + 1];
    v[k] = 1.0;
    v
}

/// One simplified refined IV update for `y = B(p) / (p^ell A(p)) u` with
/// `A = 1 + a_1 p + ... + a_n p^n` and `B = b_0 + ... + b_m p^m`.
///
/// Returns the next `[a_1..a_n, b_0..b_m]`.
pub fn srivc_step(theta: &[f64], n: usize, ell: usize, u: &[f64], y: &[f64], ts: f64) -> Vec<f64> {
    let mut a = vec![1.0];
    a.extend_from_slice(&theta[..n]);
    let b = &theta[n..];
    let m = b.len() - 1;
    let pla = poly_mul(&monomial(ell), &a);
    let pla2 = poly_mul(&pla, &a);
    let d = n + m + 1;
    let len = u.len();

    let mut reg: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut ins: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 1..=n {
        reg.push(zoh_filter(&monomial(j), &a, ts, y).into_iter().map(|v| -v).collect());
        let num = poly_mul(&monomial(j), b);
        ins.push(zoh_filter(&num, &pla2, ts, u).into_iter().map(|v| -v).collect());
    }
    for j in 0..=m {
        let f = zoh_filter(&monomial(j), &pla, ts, u);
        reg.push(f.clone());
        ins.push(f);
    }
    let target = zoh_filter(&[1.0], &a, ts, y);

    let mut mat = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for k in 0..len {
        for r in 0..d {
            rhs[r] += ins[r][k] * target[k];
            for c in 0..d {
                mat[(r, c)] += ins[r][k] * reg[c][k];
            }
        }
    }
    mat.lu().solve(&rhs).expect("nonsingular").iter().copied().collect()
}

/// Random real matrix with entries uniform in `[-1, 1]`.
pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

/// Random `(A, B)` of the given order: a block-diagonal modal matrix (real
/// poles, damped pairs and, when `marginal`, integrators or undamped pairs)
/// under a well-conditioned similarity.
pub fn random_system(r: &mut impl Rng, order: usize, marginal: bool) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(order, order);
    let mut i = 0;
    let mut used_marginal = false;
    while i < order {
        let want_marginal = marginal && !used_marginal;
        if i + 1 < order && r.random_bool(0.6) {
            let (sigma, omega) = if want_marginal && r.random_bool(0.5) {
                (0.0, r.random_range(1.0..40.0))
            } else if want_marginal {
                // double integrator
                a[(i, i + 1)] = 1.0;
                used_marginal = true;
                i += 2;
                continue;
            } else {
                (r.random_range(0.1..20.0), r.random_range(1.0..60.0))
            };
            used_marginal |= want_marginal;
            a[(i, i)] = -sigma;
            a[(i + 1, i + 1)] = -sigma;
            a[(i, i + 1)] = omega;
            a[(i + 1, i)] = -omega;
            i += 2;
        } else {
            a[(i, i)] = if want_marginal { 0.0 } else { -r.random_range(0.1..50.0) };
            used_marginal |= want_marginal;
            i += 1;
        }
    }
    let t = DMatrix::identity(order, order) + random_matrix(r, order, order) * 0.3;
    let t_inv = t.clone().try_inverse().expect("near identity");
    let inputs = r.random_range(1..=2);
    (&t * a * t_inv, random_matrix(r, order, inputs))
}

/// Ascending coefficients of `1 + a_1 p + ...` with the given negative real parts
/// and pairs, i.e. `prod (1 - p / r_k)`.
pub fn stable_poly(r: &mut impl Rng, degree: usize) -> Vec<f64> {
    let mut poly = vec![1.0];
    let mut k = 0;
    while k < degree {
        if k + 1 < degree && r.random_bool(0.5) {
            let w: f64 = r.random_range(2.0..60.0);
            let z: f64 = r.random_range(0.05..0.7);
            poly = poly_mul(&poly, &[1.0, 2.0 * z / w, 1.0 / (w * w)]);
            k += 2;
        } else {
            let p: f64 = r.random_range(1.0..80.0);
            poly = poly_mul(&poly, &[1.0, 1.0 / p]);
            k += 1;
        }
    }
    poly
}
