//! Additive MIMO model `G(p) = sum_i B_i(p) / (p^l_i A_i(p))`, its structural
//! rules, parameter packing and frequency response.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{tf_to_ss, MatrixPolynomial, Numerator, Polynomial, RationalFilter, StateSpace, C64};

/// Relative root distance below which two denominators count as sharing a root.
pub const SHARED_ROOT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Submodel {
    /// Number of poles at the origin.
    pub ell: usize,
    /// Denominator with unit constant term.
    pub a: Polynomial,
    /// `n_y x n_u` numerator coefficients.
    pub b: MatrixPolynomial,
}

impl Submodel {
    pub fn new(ell: usize, a: Polynomial, b: MatrixPolynomial) -> Self {
        Self { ell, a, b }
    }

    pub fn n(&self) -> usize {
        self.a.declared_degree()
    }

    pub fn m(&self) -> usize {
        self.b.declared_degree()
    }

    pub fn structure(&self) -> SubmodelStructure {
        SubmodelStructure {
            ell: self.ell,
            n: self.n(),
            m: self.m(),
        }
    }

    pub fn is_biproper(&self) -> bool {
        self.m() == self.n() + self.ell
    }

    /// `p^l A(p)`.
    pub fn full_denominator(&self) -> Polynomial {
        self.a.shift(self.ell)
    }

    pub fn filter(&self) -> Result<RationalFilter> {
        RationalFilter::new(Numerator::Matrix(self.b.clone()), self.a.clone(), self.ell)
    }

    /// Roots of `A` (finite, nonzero poles).
    pub fn denominator_roots(&self) -> Vec<C64> {
        if self.a.degree() == 0 {
            Vec::new()
        } else {
            self.a.roots().unwrap_or_default()
        }
    }

    /// All poles including those at the origin.
    pub fn poles(&self) -> Vec<C64> {
        let mut p = vec![C64::new(0.0, 0.0); self.ell];
        p.extend(self.denominator_roots());
        p
    }

    pub fn frequency_response(&self, omega: f64) -> Result<DMatrix<C64>> {
        if omega == 0.0 && self.ell > 0 {
            return Err(Error::PoleAtEvaluationPoint(omega));
        }
        let s = C64::new(0.0, omega);
        let den = self.full_denominator().eval(s);
        if den.norm() == 0.0 {
            return Err(Error::PoleAtEvaluationPoint(omega));
        }
        Ok(self.b.eval(s) / den)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmodelStructure {
    pub ell: usize,
    pub n: usize,
    pub m: usize,
}

impl SubmodelStructure {
    pub fn param_count(&self, n_u: usize, n_y: usize) -> usize {
        self.n + (self.m + 1) * n_u * n_y
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub n_u: usize,
    pub n_y: usize,
    pub submodels: Vec<SubmodelStructure>,
}

impl ModelStructure {
    pub fn block_sizes(&self) -> Vec<usize> {
        self.submodels
            .iter()
            .map(|s| s.param_count(self.n_u, self.n_y))
            .collect()
    }

    /// Row offset of each submodel block in the stacked parameter vector.
    pub fn block_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.block_sizes()
            .into_iter()
            .map(|d| {
                let o = acc;
                acc += d;
                o
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.block_sizes().iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveModel {
    pub n_u: usize,
    pub n_y: usize,
    pub submodels: Vec<Submodel>,
}

impl AdditiveModel {
    pub fn new(n_u: usize, n_y: usize, submodels: Vec<Submodel>) -> Result<Self> {
        for (i, s) in submodels.iter().enumerate() {
            if s.b.rows() != n_y || s.b.cols() != n_u {
                return Err(Error::Dimension(format!(
                    "submodel {} numerator is {}x{}, expected {}x{}",
                    i + 1,
                    s.b.rows(),
                    s.b.cols(),
                    n_y,
                    n_u
                )));
            }
        }
        Ok(Self { n_u, n_y, submodels })
    }

    pub fn k(&self) -> usize {
        self.submodels.len()
    }

    pub fn structure(&self) -> ModelStructure {
        ModelStructure {
            n_u: self.n_u,
            n_y: self.n_y,
            submodels: self.submodels.iter().map(Submodel::structure).collect(),
        }
    }

    /// Parallel interconnection of the submodel realizations.
    pub fn to_state_space(&self) -> Result<StateSpace> {
        let mut acc = StateSpace::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, self.n_u),
            DMatrix::zeros(self.n_y, 0),
            DMatrix::zeros(self.n_y, self.n_u),
        )?;
        for s in &self.submodels {
            let part = if s.m() == 0 {
                static_residue_realization(s)?
            } else {
                tf_to_ss(&s.filter()?)?
            };
            acc = acc.parallel(&part)?;
        }
        Ok(acc)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }
}

/// `B_0 / (p^l A)` realized with one scalar chain per singular direction of
/// `B_0`, so a low-rank residue carries no unobservable states.
fn static_residue_realization(s: &Submodel) -> Result<StateSpace> {
    let b0 = &s.b.coeffs()[0];
    let (n_y, n_u) = b0.shape();
    let scalar = tf_to_ss(&RationalFilter::scalar(Polynomial::one(), s.full_denominator())?)?;
    let ns = scalar.order();
    let svd = b0.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let smax = svd.singular_values.max();
    let dirs: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&q| svd.singular_values[q] > 1e-12 * smax)
        .collect();
    let n = dirs.len() * ns;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n_u);
    let mut c = DMatrix::zeros(n_y, n);
    for (slot, &q) in dirs.iter().enumerate() {
        let off = slot * ns;
        let root = svd.singular_values[q].sqrt();
        a.view_mut((off, off), (ns, ns)).copy_from(&scalar.a);
        b.view_mut((off, 0), (ns, n_u)).copy_from(&(&scalar.b * (vt.row(q) * root)));
        c.view_mut((0, off), (n_y, ns)).copy_from(&((u.column(q) * root) * &scalar.c));
    }
    StateSpace::new(a, b, c, b0 * scalar.d[(0, 0)])
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NotNormalized { submodel: usize },
    Unstable { submodel: usize, root: C64 },
    Improper { submodel: usize },
    MultipleIntegrators,
    MultipleBiproper,
    SharedRoot { first: usize, second: usize, root: C64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotNormalized { submodel } => {
                write!(f, "submodel {submodel}: denominator constant term is not 1")
            }
            Violation::Unstable { submodel, root } => {
                write!(f, "submodel {submodel}: unstable denominator root at {}", fmt_root(*root))
            }
            Violation::Improper { submodel } => write!(f, "submodel {submodel}: improper (m > n + ell)"),
            Violation::MultipleIntegrators => write!(f, "multiple integrator submodels"),
            Violation::MultipleBiproper => write!(f, "multiple biproper submodels"),
            Violation::SharedRoot { first, second, root } => write!(
                f,
                "shared denominator root at {} (submodels {first} and {second})",
                fmt_root(*root)
            ),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn fmt_root(z: C64) -> String {
    if z.im.abs() <= 1e-9 * z.norm().max(1.0) {
        fmt_num(z.re)
    } else {
        format!("{}{}{}i", fmt_num(z.re), if z.im < 0.0 { "-" } else { "+" }, fmt_num(z.im.abs()))
    }
}

/// Non-fatal observations, e.g. a submodel whose numerator vanishes at a pole.
#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    NotCoprime { submodel: usize, root: C64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::NotCoprime { submodel, root } => write!(
                f,
                "submodel {submodel}: numerator vanishes at denominator root {}",
                fmt_root(*root)
            ),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self.violations.iter().map(|v| v.to_string()).collect()))
        }
    }
}

/// Check the structural assumptions of the additive form. Submodel indices in
/// the report are 1-based.
pub fn validate_model(model: &AdditiveModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut roots = Vec::with_capacity(model.k());
    for (i, s) in model.submodels.iter().enumerate() {
        let idx = i + 1;
        if s.a.coeffs()[0] != 1.0 {
            report.violations.push(Violation::NotNormalized { submodel: idx });
        }
        if s.b.degree() > s.a.degree() + s.ell || s.m() > s.n() + s.ell {
            report.violations.push(Violation::Improper { submodel: idx });
        }
        let r = s.denominator_roots();
        for z in &r {
            if !(z.re < 0.0) {
                report.violations.push(Violation::Unstable { submodel: idx, root: *z });
            }
            let bz = s.b.eval(*z);
            let scale = s.b.coeffs().iter().map(|c| c.amax()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            if bz.iter().all(|v| v.norm() <= 1e-9 * scale * (1.0 + z.norm()).powi(s.m() as i32)) {
                report.warnings.push(Warning::NotCoprime { submodel: idx, root: *z });
            }
        }
        roots.push(r);
    }
    if model.submodels.iter().filter(|s| s.ell > 0).count() > 1 {
        report.violations.push(Violation::MultipleIntegrators);
    }
    if model.submodels.iter().filter(|s| s.is_biproper()).count() > 1 {
        report.violations.push(Violation::MultipleBiproper);
    }
    for i in 0..roots.len() {
        for j in i + 1..roots.len() {
            for zi in &roots[i] {
                if let Some(zj) = roots[j]
                    .iter()
                    .find(|zj| (*zi - **zj).norm() <= SHARED_ROOT_TOL * zi.norm().max(zj.norm()))
                {
                    let _ = zj;
                    report.violations.push(Violation::SharedRoot {
                        first: i + 1,
                        second: j + 1,
                        root: *zi,
                    });
                }
            }
        }
    }
    report
}

/// Stacked parameters `beta = [theta_1; ...; theta_K]` with
/// `theta_i = [a_1..a_n, vec(B_0), .., vec(B_m)]` (column-major vec).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    pub beta: DVector<f64>,
    pub structure: ModelStructure,
}

impl ParameterVector {
    pub fn new(beta: DVector<f64>, structure: ModelStructure) -> Result<Self> {
        let expected = structure.param_count();
        if beta.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: beta.len(),
            });
        }
        Ok(Self { beta, structure })
    }

    /// Parameters of submodel `i` (0-based).
    pub fn theta(&self, i: usize) -> DVector<f64> {
        let offs = self.structure.block_offsets();
        let sizes = self.structure.block_sizes();
        self.beta.rows(offs[i], sizes[i]).into_owned()
    }
}

fn pack_unchecked(model: &AdditiveModel) -> DVector<f64> {
    let mut beta = Vec::new();
    for s in &model.submodels {
        beta.extend_from_slice(&s.a.coeffs()[1..]);
        for c in s.b.coeffs() {
            beta.extend_from_slice(c.as_slice());
        }
    }
    DVector::from_vec(beta)
}

pub fn pack_parameters(model: &AdditiveModel) -> Result<ParameterVector> {
    validate_model(model).into_result()?;
    ParameterVector::new(pack_unchecked(model), model.structure())
}

/// Inverse of [`pack_parameters`]; performs no structural validation.
pub fn unpack_parameters(params: &ParameterVector) -> Result<AdditiveModel> {
    let st = &params.structure;
    if params.beta.len() != st.param_count() {
        return Err(Error::LengthMismatch {
            expected: st.param_count(),
            got: params.beta.len(),
        });
    }
    let (n_u, n_y) = (st.n_u, st.n_y);
    let mut pos = 0;
    let mut submodels = Vec::with_capacity(st.submodels.len());
    for s in &st.submodels {
        let mut a = vec![1.0];
        a.extend(params.beta.rows(pos, s.n).iter());
        pos += s.n;
        let mut b = Vec::with_capacity(s.m + 1);
        for _ in 0..=s.m {
            b.push(DMatrix::from_column_slice(n_y, n_u, params.beta.rows(pos, n_u * n_y).as_slice()));
            pos += n_u * n_y;
        }
        submodels.push(Submodel::new(s.ell, Polynomial::new(a)?, MatrixPolynomial::new(b)?));
    }
    AdditiveModel::new(n_u, n_y, submodels)
}

impl AdditiveModel {
    /// Parameter vector without structural validation.
    pub fn beta(&self) -> ParameterVector {
        ParameterVector {
            beta: pack_unchecked(self),
            structure: self.structure(),
        }
    }
}

/// Block-diagonal arrangement of the submodel parameters, `(sum d_i) x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterMatrix {
    pub matrix: DMatrix<f64>,
    pub structure: ModelStructure,
}

impl ParameterMatrix {
    pub fn from_parameters(params: &ParameterVector) -> Self {
        let st = &params.structure;
        let k = st.submodels.len();
        let mut matrix = DMatrix::zeros(st.param_count(), k);
        for (i, (o, d)) in st.block_offsets().into_iter().zip(st.block_sizes()).enumerate() {
            matrix.view_mut((o, i), (d, 1)).copy_from(&params.beta.rows(o, d));
        }
        Self {
            matrix,
            structure: st.clone(),
        }
    }

    /// Keep block `i` of column `i` for every submodel; everything else is
    /// discarded.
    pub fn extract_block_diagonal(full: &DMatrix<f64>, structure: &ModelStructure) -> Result<ParameterVector> {
        let k = structure.submodels.len();
        if full.nrows() != structure.param_count() || full.ncols() != k {
            return Err(Error::Dimension(format!(
                "parameter matrix is {}x{}, expected {}x{}",
                full.nrows(),
                full.ncols(),
                structure.param_count(),
                k
            )));
        }
        let mut beta = DVector::zeros(structure.param_count());
        for (i, (o, d)) in structure.block_offsets().into_iter().zip(structure.block_sizes()).enumerate() {
            beta.rows_mut(o, d).copy_from(&full.view((o, i), (d, 1)));
        }
        ParameterVector::new(beta, structure.clone())
    }
}

/// `G(i omega) = sum_i B_i(i omega) / ((i omega)^l_i A_i(i omega))`.
pub fn frf_eval(model: &AdditiveModel, omegas: &[f64]) -> Result<Vec<DMatrix<C64>>> {
    omegas
        .iter()
        .map(|&w| {
            let mut acc = DMatrix::<C64>::zeros(model.n_y, model.n_u);
            for s in &model.submodels {
                acc += s.frequency_response(w)?;
            }
            Ok(acc)
        })
        .collect()
}

/// `u (x) I_{n_y}`, an `(n_u n_y) x n_y` matrix.
pub fn kron_lift(u: &[f64], n_y: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.len() * n_y, n_y);
    for (a, &ua) in u.iter().enumerate() {
        for c in 0..n_y {
            out[(a * n_y + c, c)] = ua;
        }
    }
    out
}

/// Column-stacking of a matrix.
pub fn vec_of(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// JSON representation: coefficients in ascending powers; `a` includes the
/// unit constant term; `B[r]` is the `p^r` coefficient given row by row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub n_u: usize,
    pub n_y: usize,
    pub submodels: Vec<SubmodelFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmodelFile {
    pub ell: usize,
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
}

impl From<&AdditiveModel> for ModelFile {
    fn from(m: &AdditiveModel) -> Self {
        ModelFile {
            n_u: m.n_u,
            n_y: m.n_y,
            submodels: m
                .submodels
                .iter()
                .map(|s| SubmodelFile {
                    ell: s.ell,
                    a: s.a.coeffs().to_vec(),
                    b: s
                        .b
                        .coeffs()
                        .iter()
                        .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for AdditiveModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let mut subs = Vec::with_capacity(f.submodels.len());
        for s in f.submodels {
            let mut mats = Vec::with_capacity(s.b.len());
            for rows in s.b {
                if rows.len() != f.n_y || rows.iter().any(|r| r.len() != f.n_u) {
                    return Err(Error::Dimension(format!(
                        "numerator coefficient must be {}x{}",
                        f.n_y, f.n_u
                    )));
                }
                mats.push(DMatrix::from_fn(f.n_y, f.n_u, |i, j| rows[i][j]));
            }
            subs.push(Submodel::new(s.ell, Polynomial::new(s.a)?, MatrixPolynomial::new(mats)?));
        }
        AdditiveModel::new(f.n_u, f.n_y, subs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn siso(ell: usize, a: &[f64], b: &[f64]) -> Submodel {
        Submodel::new(
            ell,
            Polynomial::new(a.to_vec()).unwrap(),
            MatrixPolynomial::new(b.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect()).unwrap(),
        )
    }

    #[test]
    fn minimal_model_is_valid() {
        let m = AdditiveModel::new(1, 1, vec![siso(0, &[1.0, 1.0], &[1.0])]).unwrap();
        assert!(validate_model(&m).passed());
    }

    #[test]
    fn two_integrator_submodels_rejected() {
        let m = AdditiveModel::new(
            1,
            1,
            vec![siso(1, &[1.0, 1.0], &[1.0]), siso(1, &[1.0, 0.5], &[1.0])],
        )
        .unwrap();
        let r = validate_model(&m);
        assert!(r.violations.contains(&Violation::MultipleIntegrators));
        assert!(r.violations.iter().any(|v| v.to_string() == "multiple integrator submodels"));
    }

    #[test]
    fn multiple_biproper_rejected() {
        let m = AdditiveModel::new(
            1,
            1,
            vec![siso(0, &[1.0, 1.0], &[1.0, 2.0]), siso(0, &[1.0, 0.5], &[1.0, 1.0])],
        )
        .unwrap();
        assert!(validate_model(&m).violations.contains(&Violation::MultipleBiproper));
    }

    #[test]
    fn shared_root_reported() {
        // (1 + p)(1 + 0.1 p) = 1 + 1.1 p + 0.1 p^2
        let m = AdditiveModel::new(
            1,
            1,
            vec![siso(0, &[1.0, 1.0], &[1.0]), siso(0, &[1.0, 1.1, 0.1], &[1.0])],
        )
        .unwrap();
        let r = validate_model(&m);
        let msgs: Vec<String> = r.violations.iter().map(|v| v.to_string()).collect();
        assert!(msgs.iter().any(|s| s.starts_with("shared denominator root at -1 ")), "{msgs:?}");
    }

    #[test]
    fn unstable_and_improper_reported() {
        let m = AdditiveModel::new(1, 1, vec![siso(0, &[1.0, -1.0], &[1.0, 1.0, 1.0])]).unwrap();
        let r = validate_model(&m);
        assert!(r.violations.iter().any(|v| matches!(v, Violation::Unstable { .. })));
        assert!(r.violations.iter().any(|v| matches!(v, Violation::Improper { .. })));
    }

    #[test]
    fn pack_column_major() {
        let b0 = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 5.0, 6.0]);
        let s = Submodel::new(0, Polynomial::new(vec![1.0, 2.0]).unwrap(), MatrixPolynomial::new(vec![b0]).unwrap());
        let m = AdditiveModel::new(2, 2, vec![s]).unwrap();
        let pv = pack_parameters(&m).unwrap();
        assert_eq!(pv.beta.as_slice(), &[2.0, 3.0, 5.0, 4.0, 6.0]);
        let back = unpack_parameters(&pv).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn zero_numerator_packs_to_zeros() {
        let s = Submodel::new(0, Polynomial::new(vec![1.0, 0.5]).unwrap(), MatrixPolynomial::zeros(0, 2, 1));
        let m = AdditiveModel::new(1, 2, vec![s]).unwrap();
        let pv = pack_parameters(&m).unwrap();
        assert_eq!(pv.beta.as_slice(), &[0.5, 0.0, 0.0]);
        assert!(!validate_model(&m).warnings.is_empty());
    }

    #[test]
    fn unpack_zero_denominator_is_unit() {
        let st = ModelStructure {
            n_u: 1,
            n_y: 1,
            submodels: vec![SubmodelStructure { ell: 0, n: 1, m: 0 }],
        };
        let pv = ParameterVector::new(DVector::from_vec(vec![0.0, 2.0]), st).unwrap();
        let m = unpack_parameters(&pv).unwrap();
        assert_eq!(m.submodels[0].a.eval(C64::new(0.3, 2.0)), C64::new(1.0, 0.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        let st = ModelStructure {
            n_u: 1,
            n_y: 1,
            submodels: vec![SubmodelStructure { ell: 0, n: 1, m: 0 }],
        };
        assert!(matches!(
            ParameterVector::new(DVector::zeros(3), st),
            Err(Error::LengthMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn frf_static_and_rigid_body() {
        let b0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let stat = Submodel::new(0, Polynomial::one(), MatrixPolynomial::new(vec![b0.clone()]).unwrap());
        let m = AdditiveModel::new(2, 2, vec![stat]).unwrap();
        for g in frf_eval(&m, &[0.0, 1.0, 100.0]).unwrap() {
            assert_eq!(g, b0.map(|x| C64::new(x, 0.0)));
        }
        let rigid = Submodel::new(2, Polynomial::one(), MatrixPolynomial::new(vec![b0.clone()]).unwrap());
        let m = AdditiveModel::new(2, 2, vec![rigid]).unwrap();
        let g = &frf_eval(&m, &[1.0]).unwrap()[0];
        assert_eq!(*g, b0.map(|x| C64::new(-x, 0.0)));
        assert!(matches!(frf_eval(&m, &[0.0]), Err(Error::PoleAtEvaluationPoint(_))));
    }

    #[test]
    fn kron_lift_examples() {
        let k = kron_lift(&[1.0, 0.0], 2);
        let mut expected = DMatrix::zeros(4, 2);
        expected[(0, 0)] = 1.0;
        expected[(1, 1)] = 1.0;
        assert_eq!(k, expected);
        assert_eq!(kron_lift(&[2.5], 1), DMatrix::from_element(1, 1, 2.5));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let b0 = DMatrix::from_row_slice(2, 3, &[0.1, 1.0 / 3.0, -2e-17, 4.0, 5.5, 1e300]);
        let b1 = DMatrix::from_row_slice(2, 3, &[0.7, -0.3, 0.0, 1.25, std::f64::consts::PI, -9.0]);
        let m = AdditiveModel::new(
            3,
            2,
            vec![
                Submodel::new(2, Polynomial::one(), MatrixPolynomial::new(vec![b0.clone()]).unwrap()),
                Submodel::new(0, Polynomial::new(vec![1.0, 0.013, 1.0 / 7.0]).unwrap(), MatrixPolynomial::new(vec![b0, b1]).unwrap()),
            ],
        )
        .unwrap();
        let text = m.to_json().unwrap();
        assert!(text.contains("\"B\""));
        assert_eq!(AdditiveModel::from_json(&text).unwrap(), m);
    }
}
