//! Continuous-time LTI primitives.
//!
//! Polynomials are stored in ascending powers of the differential operator `p`.
//! Filters are realized in a frequency-scaled controllable canonical form and
//! discretized exactly under a zero-order hold, so that applying a continuous
//! filter to a sampled signal means: hold each sample constant over one sample
//! period, integrate the continuous dynamics, and read the output at the
//! sampling instants.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Real polynomial `c_0 + c_1 p + ... + c_n p^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Dimension("polynomial needs at least one coefficient".into()));
        }
        Ok(Self { coeffs })
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// `p^k`.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree implied by the number of stored coefficients.
    pub fn declared_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Degree after discarding trailing zero coefficients.
    pub fn degree(&self) -> usize {
        self.coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Horner evaluation at a complex point.
    pub fn eval(&self, s: C64) -> C64 {
        self.coeffs
            .iter()
            .rev()
            .fold(C64::new(0.0, 0.0), |acc, &c| acc * s + c)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial { coeffs: out }
    }

    /// Multiply by `p^k`.
    pub fn shift(&self, k: usize) -> Polynomial {
        let mut coeffs = vec![0.0; k];
        coeffs.extend_from_slice(&self.coeffs);
        Polynomial { coeffs }
    }

    /// Monic-in-`p` expansion of `prod (p - r)`, scaled by `leading`.
    /// Complex roots must come in conjugate pairs; imaginary residue is dropped.
    pub fn from_roots(roots: &[C64], leading: f64) -> Polynomial {
        let mut acc = vec![C64::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![C64::new(0.0, 0.0); acc.len() + 1];
            for (k, &c) in acc.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= c * r;
            }
            acc = next;
        }
        Polynomial {
            coeffs: acc.iter().map(|c| c.re * leading).collect(),
        }
    }

    /// Roots via the eigenvalues of a frequency-scaled companion matrix,
    /// followed by Newton polishing on the original polynomial.
    pub fn roots(&self) -> Result<Vec<C64>> {
        let d = self.degree();
        if d == 0 {
            return Err(Error::NoRoots);
        }
        let c = &self.coeffs[..=d];
        let zeros_at_origin = c.iter().position(|&x| x != 0.0).unwrap_or(0);
        let mut roots = vec![C64::new(0.0, 0.0); zeros_at_origin];
        let reduced = &c[zeros_at_origin..];
        let nd = reduced.len() - 1;
        if nd == 0 {
            return Ok(roots);
        }
        let sigma = (reduced[0].abs() / reduced[nd].abs()).powf(1.0 / nd as f64);
        let sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1.0 };
        // polynomial in q = p / sigma
        let scaled: Vec<f64> = reduced
            .iter()
            .enumerate()
            .map(|(k, &x)| x * sigma.powi(k as i32))
            .collect();
        let lead = scaled[nd];
        let mut companion = DMatrix::<f64>::zeros(nd, nd);
        for k in 0..nd - 1 {
            companion[(k, k + 1)] = 1.0;
        }
        for k in 0..nd {
            companion[(nd - 1, k)] = -scaled[k] / lead;
        }
        let eig = companion.complex_eigenvalues();
        for z in eig.iter() {
            roots.push(self.polish(*z * sigma));
        }
        Ok(roots)
    }

    fn polish(&self, mut z: C64) -> C64 {
        let deriv = self.derivative();
        let mut best = self.eval(z).norm();
        for _ in 0..4 {
            let dp = deriv.eval(z);
            if dp.norm() == 0.0 {
                break;
            }
            let candidate = z - self.eval(z) / dp;
            let val = self.eval(candidate).norm();
            if !(val < best) {
                break;
            }
            best = val;
            z = candidate;
        }
        z
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() == 1 {
            return Polynomial::constant(0.0);
        }
        Polynomial {
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        }
    }

    /// Mirror right-half-plane roots into the left-half plane and renormalize
    /// so that the constant term is 1. A stable polynomial is returned as is.
    pub fn reflect_unstable(&self) -> Result<Polynomial> {
        if self.degree() == 0 {
            return Err(Error::NoRoots);
        }
        if self.coeffs[0] == 0.0 {
            return Err(Error::RootAtOrigin);
        }
        let roots = self.roots()?;
        if roots.iter().all(|r| r.re <= 0.0) {
            return Ok(self.clone());
        }
        let mirrored: Vec<C64> = roots
            .iter()
            .map(|r| if r.re > 0.0 { C64::new(-r.re, r.im) } else { *r })
            .collect();
        let expanded = Polynomial::from_roots(&mirrored, 1.0);
        let c0 = expanded.coeffs[0];
        let mut coeffs: Vec<f64> = expanded.coeffs.iter().map(|c| c / c0).collect();
        coeffs[0] = 1.0;
        // keep the declared length so the parameter structure is unchanged
        coeffs.resize(self.coeffs.len(), 0.0);
        Ok(Polynomial { coeffs })
    }
}

/// Matrix polynomial `B_0 + B_1 p + ... + B_m p^m` with `n_y x n_u` coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPolynomial {
    coeffs: Vec<DMatrix<f64>>,
}

impl MatrixPolynomial {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| Error::Dimension("matrix polynomial needs at least one coefficient".into()))?;
        let shape = first.shape();
        if coeffs.iter().any(|c| c.shape() != shape) {
            return Err(Error::Dimension(
                "matrix polynomial coefficients differ in shape".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(degree: usize, n_y: usize, n_u: usize) -> Self {
        Self {
            coeffs: vec![DMatrix::zeros(n_y, n_u); degree + 1],
        }
    }

    pub fn from_scalar(poly: &Polynomial) -> Self {
        Self {
            coeffs: poly
                .coeffs()
                .iter()
                .map(|&c| DMatrix::from_element(1, 1, c))
                .collect(),
        }
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.coeffs
    }

    pub fn declared_degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Highest power with a nonzero coefficient matrix.
    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| c.iter().any(|&x| x != 0.0))
            .unwrap_or(0)
    }

    pub fn rows(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.coeffs[0].ncols()
    }

    pub fn eval(&self, s: C64) -> DMatrix<C64> {
        let mut acc = DMatrix::<C64>::zeros(self.rows(), self.cols());
        for c in self.coeffs.iter().rev() {
            acc = acc * s + c.map(|x| C64::new(x, 0.0));
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Numerator {
    Scalar(Polynomial),
    Matrix(MatrixPolynomial),
}

impl Numerator {
    fn as_matrix(&self) -> MatrixPolynomial {
        match self {
            Numerator::Scalar(p) => MatrixPolynomial::from_scalar(p),
            Numerator::Matrix(m) => m.clone(),
        }
    }

    fn degree(&self) -> usize {
        match self {
            Numerator::Scalar(p) => p.degree(),
            Numerator::Matrix(m) => m.degree(),
        }
    }
}

/// `numerator(p) / (p^integrator_order * denominator(p))`.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalFilter {
    numerator: Numerator,
    denominator: Polynomial,
    integrator_order: usize,
}

impl RationalFilter {
    pub fn new(numerator: Numerator, denominator: Polynomial, integrator_order: usize) -> Result<Self> {
        if denominator.is_zero() {
            return Err(Error::Dimension("zero denominator".into()));
        }
        let den_degree = denominator.degree() + integrator_order;
        let num_degree = numerator.degree();
        if num_degree > den_degree {
            return Err(Error::Improper {
                numerator: num_degree,
                denominator: den_degree,
            });
        }
        Ok(Self {
            numerator,
            denominator,
            integrator_order,
        })
    }

    pub fn scalar(num: Polynomial, den: Polynomial) -> Result<Self> {
        Self::new(Numerator::Scalar(num), den, 0)
    }

    pub fn numerator(&self) -> &Numerator {
        &self.numerator
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.denominator
    }

    pub fn integrator_order(&self) -> usize {
        self.integrator_order
    }

    /// `p^l * A(p)` as a single polynomial.
    pub fn full_denominator(&self) -> Polynomial {
        self.denominator.shift(self.integrator_order)
    }

    pub fn input_dim(&self) -> usize {
        match &self.numerator {
            Numerator::Scalar(_) => 1,
            Numerator::Matrix(m) => m.cols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.numerator {
            Numerator::Scalar(_) => 1,
            Numerator::Matrix(m) => m.rows(),
        }
    }

    /// Frequency response at `s`.
    pub fn eval(&self, s: C64) -> DMatrix<C64> {
        let den = self.full_denominator().eval(s);
        self.numerator.as_matrix().eval(s) / den
    }
}

/// Continuous-time state-space system.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, C {:?}, D {:?}",
            a.shape(),
            b.shape(),
            c.shape(),
            d.shape()
        )));
    }
    Ok(())
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        Ok(Self { a, b, c, d })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C (sI - A)^{-1} B + D`.
    pub fn frequency_response(&self, s: C64) -> Option<DMatrix<C64>> {
        let n = self.order();
        let to_c = |m: &DMatrix<f64>| m.map(|x| C64::new(x, 0.0));
        if n == 0 {
            return Some(to_c(&self.d));
        }
        let resolvent = DMatrix::<C64>::identity(n, n) * s - to_c(&self.a);
        let x = resolvent.lu().solve(&to_c(&self.b))?;
        Some(to_c(&self.c) * x + to_c(&self.d))
    }

    /// Parallel interconnection: shared input, summed outputs.
    pub fn parallel(&self, other: &StateSpace) -> Result<StateSpace> {
        if self.inputs() != other.inputs() || self.outputs() != other.outputs() {
            return Err(Error::Dimension("parallel interconnection of mismatched systems".into()));
        }
        let (n1, n2) = (self.order(), other.order());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = DMatrix::zeros(n1 + n2, self.inputs());
        b.view_mut((0, 0), (n1, self.inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.inputs())).copy_from(&other.b);
        let mut c = DMatrix::zeros(self.outputs(), n1 + n2);
        c.view_mut((0, 0), (self.outputs(), n1)).copy_from(&self.c);
        c.view_mut((0, n1), (self.outputs(), n2)).copy_from(&other.c);
        StateSpace::new(a, b, c, &self.d + &other.d)
    }
}

/// Discrete-time state-space system with sample period `ts`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub ts: f64,
}

impl DiscreteStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, ts: f64) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        if !(ts > 0.0) {
            return Err(Error::InvalidConfig(format!("sample period must be positive, got {ts}")));
        }
        Ok(Self { a, b, c, d, ts })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C (zI - A)^{-1} B + D`.
    pub fn frequency_response(&self, z: C64) -> Option<DMatrix<C64>> {
        let ct = StateSpace {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        };
        ct.frequency_response(z)
    }

    /// Spectral radius of `A` (0 for a static system).
    pub fn spectral_radius(&self) -> f64 {
        if self.order() == 0 {
            return 0.0;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Run the recursion from zero initial state. `u` is `N x inputs`.
    pub fn simulate(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.ncols() != self.inputs() {
            return Err(Error::ChannelMismatch {
                expected: self.inputs(),
                got: u.ncols(),
            });
        }
        let mut sim = Recursion::new(self);
        let n_samples = u.nrows();
        let mut y = DMatrix::zeros(n_samples, self.outputs());
        let mut uk = vec![0.0; self.inputs()];
        let mut yk = vec![0.0; self.outputs()];
        for k in 0..n_samples {
            for (j, v) in uk.iter_mut().enumerate() {
                *v = u[(k, j)];
            }
            sim.step(&uk, &mut yk);
            for (i, v) in yk.iter().enumerate() {
                y[(k, i)] = *v;
            }
        }
        Ok(y)
    }
}

/// Stateful, allocation-free evaluation of a discrete state-space recursion.
pub struct Recursion {
    n: usize,
    m: usize,
    p: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    x: Vec<f64>,
    scratch: Vec<f64>,
}

impl Recursion {
    pub fn new(sys: &DiscreteStateSpace) -> Self {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Self {
            n: sys.order(),
            m: sys.inputs(),
            p: sys.outputs(),
            a: row_major(&sys.a),
            b: row_major(&sys.b),
            c: row_major(&sys.c),
            d: row_major(&sys.d),
            x: vec![0.0; sys.order()],
            scratch: vec![0.0; sys.order()],
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    /// Output at the current instant (`y = Cx + Du`), then advance the state.
    pub fn step(&mut self, u: &[f64], y: &mut [f64]) {
        self.output(u, y);
        self.advance(u);
    }

    pub fn output(&self, u: &[f64], y: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..self.p {
            let mut acc = 0.0;
            let crow = &self.c[i * n..(i + 1) * n];
            for (c, x) in crow.iter().zip(&self.x) {
                acc += c * x;
            }
            let drow = &self.d[i * m..(i + 1) * m];
            for (d, v) in drow.iter().zip(u) {
                acc += d * v;
            }
            y[i] = acc;
        }
    }

    pub fn advance(&mut self, u: &[f64]) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            let mut acc = 0.0;
            let arow = &self.a[i * n..(i + 1) * n];
            for (a, x) in arow.iter().zip(&self.x) {
                acc += a * x;
            }
            let brow = &self.b[i * m..(i + 1) * m];
            for (b, v) in brow.iter().zip(u) {
                acc += b * v;
            }
            self.scratch[i] = acc;
        }
        std::mem::swap(&mut self.x, &mut self.scratch);
    }
}

/// Frequency-scaled controllable canonical chain for `1 / D(p)`.
///
/// States are `z_k = p^k w / sigma^k` with `w = u / D(p)`, `k = 0..d-1`. The
/// derivative map returns `p^k w` for `k = 0..=d` from `(z, u)`.
#[derive(Clone, Debug)]
struct Chain {
    a: DMatrix<f64>,
    b: DVector<f64>,
    deriv_c: DMatrix<f64>,
    deriv_d: DVector<f64>,
}

impl Chain {
    fn new(den: &Polynomial) -> Result<Self> {
        let d = den.degree();
        let coeffs = &den.coeffs()[..=d];
        let lead = coeffs[d];
        if lead == 0.0 {
            return Err(Error::Dimension("zero denominator".into()));
        }
        let lo = coeffs.iter().position(|&c| c != 0.0).unwrap_or(d);
        let sigma = if d > lo {
            (coeffs[lo].abs() / lead.abs()).powf(1.0 / (d - lo) as f64)
        } else {
            1.0
        };
        let sigma = if sigma.is_finite() && sigma > 0.0 { sigma } else { 1.0 };
        let g = 1.0 / (lead * sigma.powi(d as i32));
        let c: Vec<f64> = (0..d).map(|k| coeffs[k] * sigma.powi(k as i32) * g).collect();

        let mut a = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        if d > 0 {
            for k in 0..d - 1 {
                a[(k, k + 1)] = sigma;
            }
            for k in 0..d {
                a[(d - 1, k)] = -sigma * c[k];
            }
            b[d - 1] = sigma * g;
        }
        let mut deriv_c = DMatrix::zeros(d + 1, d);
        let mut deriv_d = DVector::zeros(d + 1);
        for k in 0..d {
            deriv_c[(k, k)] = sigma.powi(k as i32);
        }
        let top = sigma.powi(d as i32);
        for k in 0..d {
            deriv_c[(d, k)] = -top * c[k];
        }
        deriv_d[d] = top * g;
        Ok(Self { a, b, deriv_c, deriv_d })
    }

    fn order(&self) -> usize {
        self.a.nrows()
    }
}

/// Realize a proper rational filter in controllable canonical form, one
/// chain per input channel sharing the scalar denominator. Integrator states
/// are part of the chain.
pub fn tf_to_ss(filter: &RationalFilter) -> Result<StateSpace> {
    let den = filter.full_denominator();
    let chain = Chain::new(&den)?;
    let num = filter.numerator.as_matrix();
    let (n_y, n_u) = (num.rows(), num.cols());
    let d = chain.order();
    if num.degree() > d {
        return Err(Error::Improper {
            numerator: num.degree(),
            denominator: d,
        });
    }
    let n = d * n_u;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n_u);
    let mut c = DMatrix::zeros(n_y, n);
    let mut dd = DMatrix::zeros(n_y, n_u);
    for j in 0..n_u {
        let off = j * d;
        a.view_mut((off, off), (d, d)).copy_from(&chain.a);
        b.view_mut((off, j), (d, 1)).copy_from(&chain.b);
        for (r, coeff) in num.coeffs().iter().enumerate() {
            if r > d {
                break;
            }
            for i in 0..n_y {
                let w = coeff[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for k in 0..d {
                    c[(i, off + k)] += w * chain.deriv_c[(r, k)];
                }
                dd[(i, j)] += w * chain.deriv_d[r];
            }
        }
    }
    StateSpace::new(a, b, c, dd)
}

/// Exact zero-order-hold discretization through the exponential of the
/// augmented matrix `[[A, B], [0, 0]] * ts`; singular `A` needs no special care.
pub fn zoh_discretize(ss: &StateSpace, ts: f64) -> Result<DiscreteStateSpace> {
    if !(ts > 0.0) {
        return Err(Error::InvalidConfig(format!("sample period must be positive, got {ts}")));
    }
    let (n, m) = (ss.order(), ss.inputs());
    if n == 0 {
        return DiscreteStateSpace::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, m),
            ss.c.clone(),
            ss.d.clone(),
            ts,
        );
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&ss.a * ts));
    aug.view_mut((0, n), (n, m)).copy_from(&(&ss.b * ts));
    let e = aug.exp();
    DiscreteStateSpace::new(
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
        ss.c.clone(),
        ss.d.clone(),
        ts,
    )
}

/// Intersample behaviour assumed when a sampled signal drives a continuous filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intersample {
    #[default]
    Zoh,
}

/// Apply a continuous filter to a sampled signal (`N x channels`) from zero
/// initial conditions, returning the output at the sampling instants.
pub fn filter_sampled(
    filter: &RationalFilter,
    u: &DMatrix<f64>,
    ts: f64,
    intersample: Intersample,
) -> Result<DMatrix<f64>> {
    match intersample {
        Intersample::Zoh => {}
    }
    if u.ncols() != filter.input_dim() {
        return Err(Error::ChannelMismatch {
            expected: filter.input_dim(),
            got: u.ncols(),
        });
    }
    let ss = tf_to_ss(filter)?;
    zoh_discretize(&ss, ts)?.simulate(u)
}

/// Bank of derivative filters `p^k / D(p)`, `k = 0..=deg D`, sharing one
/// discretized chain. Each input channel is processed independently.
#[derive(Clone, Debug)]
pub struct DerivativeBank {
    order: usize,
    sys: DiscreteStateSpace,
}

impl DerivativeBank {
    pub fn new(den: &Polynomial, ts: f64) -> Result<Self> {
        let chain = Chain::new(den)?;
        let order = chain.order();
        let ss = StateSpace::new(
            chain.a.clone(),
            DMatrix::from_column_slice(order, 1, chain.b.as_slice()),
            chain.deriv_c.clone(),
            DMatrix::from_column_slice(order + 1, 1, chain.deriv_d.as_slice()),
        )?;
        Ok(Self {
            order,
            sys: zoh_discretize(&ss, ts)?,
        })
    }

    /// Degree of the denominator; outputs are `p^0 .. p^order`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Filter one channel; returns `order + 1` sequences, entry `k` holding
    /// `(p^k / D) s` at the sampling instants.
    pub fn apply(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        let n_out = self.order + 1;
        let mut out = vec![Vec::with_capacity(signal.len()); n_out];
        let mut rec = Recursion::new(&self.sys);
        let mut y = vec![0.0; n_out];
        for &s in signal {
            rec.step(&[s], &mut y);
            for (o, v) in out.iter_mut().zip(&y) {
                o.push(*v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eval_linear_and_constant() {
        let p = Polynomial::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(p.eval(C64::new(0.0, 1.0)), C64::new(1.0, 2.0));
        let c = Polynomial::one();
        assert_eq!(c.eval(C64::new(3.0, -7.0)), C64::new(1.0, 0.0));
    }

    #[test]
    fn eval_matches_naive_sum() {
        let p = Polynomial::new(vec![1.0, 0.3, 0.01]).unwrap();
        let s = C64::new(0.0, 2.0);
        let naive: C64 = p
            .coeffs()
            .iter()
            .enumerate()
            .map(|(k, &c)| s.powu(k as u32) * c)
            .sum();
        assert!((p.eval(s) - naive).norm() < 1e-15);
    }

    #[test]
    fn roots_simple_cases() {
        let r = Polynomial::new(vec![1.0, 1.0]).unwrap().roots().unwrap();
        assert_eq!(r.len(), 1);
        assert!((r[0] - C64::new(-1.0, 0.0)).norm() < 1e-14);

        let mut r = Polynomial::new(vec![1.0, 0.0, 1.0]).unwrap().roots().unwrap();
        r.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((r[0] - C64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((r[1] - C64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn roots_of_constant_is_error() {
        assert!(matches!(Polynomial::one().roots(), Err(Error::NoRoots)));
    }

    #[test]
    fn roots_keep_origin_multiplicity() {
        // p^2 (1 + p)
        let r = Polynomial::new(vec![0.0, 0.0, 1.0, 1.0]).unwrap().roots().unwrap();
        assert_eq!(r.iter().filter(|z| z.norm() == 0.0).count(), 2);
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn reflect_examples() {
        let p = Polynomial::new(vec![1.0, -1.0]).unwrap();
        let q = p.reflect_unstable().unwrap();
        assert!(close(q.coeffs()[0], 1.0, 1e-15) && close(q.coeffs()[1], 1.0, 1e-14));

        let s = Polynomial::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(s.reflect_unstable().unwrap(), s);

        let u = Polynomial::new(vec![1.0, 0.1, -0.02]).unwrap();
        let v = u.reflect_unstable().unwrap();
        assert!((v.coeffs()[0] - 1.0).abs() < 1e-12);
        assert!(v.roots().unwrap().iter().all(|r| r.re < 0.0));

        let z = Polynomial::new(vec![0.0, 1.0]).unwrap();
        assert!(matches!(z.reflect_unstable(), Err(Error::RootAtOrigin)));
    }

    #[test]
    fn integrator_realization() {
        let f = RationalFilter::new(Numerator::Scalar(Polynomial::one()), Polynomial::one(), 1).unwrap();
        let ss = tf_to_ss(&f).unwrap();
        assert_eq!(ss.order(), 1);
        assert_eq!(ss.a[(0, 0)], 0.0);
        // up to similarity: C*B is invariant
        assert!(close((&ss.c * &ss.b)[(0, 0)], 1.0, 1e-15));
        assert_eq!(ss.d[(0, 0)], 0.0);
    }

    #[test]
    fn static_gain_realization() {
        let f = RationalFilter::scalar(Polynomial::constant(2.0), Polynomial::one()).unwrap();
        let ss = tf_to_ss(&f).unwrap();
        assert_eq!(ss.order(), 0);
        assert_eq!(ss.d[(0, 0)], 2.0);
    }

    #[test]
    fn improper_filter_rejected() {
        let r = RationalFilter::scalar(Polynomial::new(vec![0.0, 0.0, 1.0]).unwrap(), Polynomial::new(vec![1.0, 1.0]).unwrap());
        assert!(matches!(r, Err(Error::Improper { .. })));
    }

    #[test]
    fn first_order_frequency_response() {
        let den = Polynomial::new(vec![1.0, 0.5]).unwrap();
        let f = RationalFilter::scalar(Polynomial::one(), den.clone()).unwrap();
        let ss = tf_to_ss(&f).unwrap();
        for w in [0.1, 1.0, 10.0] {
            let s = C64::new(0.0, w);
            let direct = C64::new(1.0, 0.0) / den.eval(s);
            let got = ss.frequency_response(s).unwrap()[(0, 0)];
            assert!((got - direct).norm() < 1e-10);
        }
    }

    #[test]
    fn zoh_scalar_cases() {
        let integ = StateSpace::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let d = zoh_discretize(&integ, 0.1).unwrap();
        assert!(close(d.a[(0, 0)], 1.0, 1e-15));
        assert!(close(d.b[(0, 0)], 0.1, 1e-15));

        let decay = StateSpace::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let d = zoh_discretize(&decay, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!(close(d.a[(0, 0)], e, 1e-15));
        assert!(close(d.b[(0, 0)], 1.0 - e, 1e-15));
    }

    #[test]
    fn identity_filter_is_passthrough() {
        let f = RationalFilter::scalar(Polynomial::one(), Polynomial::one()).unwrap();
        let u = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 3.5, 0.25]);
        assert_eq!(filter_sampled(&f, &u, 0.01, Intersample::Zoh).unwrap(), u);
    }

    #[test]
    fn step_response_first_order() {
        let f = RationalFilter::scalar(Polynomial::one(), Polynomial::new(vec![1.0, 1.0]).unwrap()).unwrap();
        let n = 500;
        let ts = 0.01;
        let u = DMatrix::from_element(n, 1, 1.0);
        let y = filter_sampled(&f, &u, ts, Intersample::Zoh).unwrap();
        for k in 0..n {
            let t = k as f64 * ts;
            assert!(close(y[(k, 0)], 1.0 - (-t).exp(), 1e-12));
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let f = RationalFilter::scalar(Polynomial::one(), Polynomial::new(vec![1.0, 1.0]).unwrap()).unwrap();
        let u = DMatrix::zeros(3, 2);
        assert!(matches!(
            filter_sampled(&f, &u, 0.1, Intersample::Zoh),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn derivative_bank_matches_individual_filters() {
        let den = Polynomial::new(vec![1.0, 0.02, 1e-4]).unwrap();
        let ts = 1e-3;
        let bank = DerivativeBank::new(&den, ts).unwrap();
        let signal: Vec<f64> = (0..300).map(|k| ((k * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let outs = bank.apply(&signal);
        let u = DMatrix::from_column_slice(signal.len(), 1, &signal);
        for k in 0..=2 {
            let f = RationalFilter::scalar(Polynomial::monomial(k), den.clone()).unwrap();
            let y = filter_sampled(&f, &u, ts, Intersample::Zoh).unwrap();
            let scale = y.amax().max(1.0);
            for (a, b) in outs[k].iter().zip(y.iter()) {
                assert!((a - b).abs() < 1e-11 * scale, "k={k}: {a} vs {b}");
            }
        }
    }
}
