//! Residuals, regressors, instruments and filtered residual outputs.

use nalgebra::DMatrix;

use crate::closed_loop::{noise_free_input, DiscreteController};
use crate::error::{Error, Result};
use crate::lti::{filter_sampled, DerivativeBank, Polynomial};
use crate::model::{AdditiveModel, ModelStructure, Submodel};
use crate::signals::Dataset;

/// Signals of one submodel block, stored compactly.
///
/// `den[j]` (`N x n_y`) holds the row for `a_{j+1}` as a function of the output
/// channel; `num[j]` (`N x n_u`) holds the filtered input `f_j` whose Kronecker
/// lift `f_j (x) I_{n_y}` forms the rows for `vec(B_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSeries {
    pub den: Vec<DMatrix<f64>>,
    pub num: Vec<DMatrix<f64>>,
}

/// Per-sample `d x n_y` matrices stacked over all submodels.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedSeries {
    pub structure: ModelStructure,
    pub blocks: Vec<BlockSeries>,
    len: usize,
}

pub type RegressorSeries = StackedSeries;
pub type InstrumentSeries = StackedSeries;

impl StackedSeries {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.structure.param_count()
    }

    /// Copy with every numerator signal `num[j]` of block `b` replaced by `num[j] * bases[b][j]`.
    pub(crate) fn with_input_bases(&self, bases: &[Vec<DMatrix<f64>>]) -> Self {
        let blocks = self
            .blocks
            .iter()
            .zip(bases)
            .map(|(block, q)| BlockSeries {
                den: block.den.clone(),
                num: block.num.iter().zip(q).map(|(f, q)| f * q).collect(),
            })
            .collect();
        Self {
            structure: self.structure.clone(),
            blocks,
            len: self.len,
        }
    }

    /// Materialize the `d x n_y` matrix at sample `k`.
    pub fn at(&self, k: usize) -> DMatrix<f64> {
        let n_y = self.structure.n_y;
        let mut out = DMatrix::zeros(self.dim(), n_y);
        self.for_each_entry(k, |row, col, v| out[(row, col)] = v);
        out
    }

    /// Visit the structurally nonzero entries `(row, output channel, value)` at sample `k`.
    pub(crate) fn for_each_entry(&self, k: usize, mut f: impl FnMut(usize, usize, f64)) {
        let (n_u, n_y) = (self.structure.n_u, self.structure.n_y);
        for (block, off) in self.blocks.iter().zip(self.structure.block_offsets()) {
            let mut row = off;
            for den in &block.den {
                for o in 0..n_y {
                    f(row, o, den[(k, o)]);
                }
                row += 1;
            }
            for num in &block.num {
                for c in 0..n_u {
                    let v = num[(k, c)];
                    for o in 0..n_y {
                        f(row + c * n_y + o, o, v);
                    }
                }
                row += n_u * n_y;
            }
        }
    }
}

/// Stacked filtered residual outputs: row `i` of `Upsilon(t_k)` is `y~_{f,i}(t_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualOutputSeries {
    /// One `N x n_y` matrix per submodel.
    pub rows: Vec<DMatrix<f64>>,
}

impl ResidualOutputSeries {
    pub fn k(&self) -> usize {
        self.rows.len()
    }

    /// `K x n_y` matrix at sample `k`.
    pub fn at(&self, k: usize) -> DMatrix<f64> {
        let n_y = self.rows.first().map_or(0, |r| r.ncols());
        DMatrix::from_fn(self.rows.len(), n_y, |i, o| self.rows[i][(k, o)])
    }
}

fn check_dims(model: &AdditiveModel, ds: &Dataset) -> Result<()> {
    if ds.n_u() != model.n_u {
        return Err(Error::ChannelMismatch {
            expected: model.n_u,
            got: ds.n_u(),
        });
    }
    if ds.n_y() != model.n_y {
        return Err(Error::ChannelMismatch {
            expected: model.n_y,
            got: ds.n_y(),
        });
    }
    Ok(())
}

/// Simulated contribution `G_i(p) u` of every submodel (`N x n_y` each).
pub fn submodel_outputs(model: &AdditiveModel, ds: &Dataset) -> Result<Vec<DMatrix<f64>>> {
    check_dims(model, ds)?;
    model
        .submodels
        .iter()
        .map(|s| filter_sampled(&s.filter()?, &ds.u, ds.ts, ds.intersample))
        .collect()
}

/// `eps = y - sum_i G_i u`.
pub fn residual(model: &AdditiveModel, ds: &Dataset) -> Result<DMatrix<f64>> {
    let parts = submodel_outputs(model, ds)?;
    Ok(residual_from_parts(&ds.y, &parts))
}

pub(crate) fn residual_from_parts(y: &DMatrix<f64>, parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut eps = y.clone();
    for p in parts {
        eps -= p;
    }
    eps
}

/// `y~_i = y - sum_{j != i} G_j u` for the 0-based submodel index `i`.
pub fn residual_output_sub(model: &AdditiveModel, ds: &Dataset, i: usize) -> Result<DMatrix<f64>> {
    if i >= model.k() {
        return Err(Error::IndexOutOfRange { index: i, count: model.k() });
    }
    let parts = submodel_outputs(model, ds)?;
    Ok(residual_output_from_parts(&ds.y, &parts, i))
}

fn residual_output_from_parts(y: &DMatrix<f64>, parts: &[DMatrix<f64>], i: usize) -> DMatrix<f64> {
    let mut out = y.clone();
    for (j, p) in parts.iter().enumerate() {
        if j != i {
            out -= p;
        }
    }
    out
}

/// `bank[c][k][t]`: `(p^k / den) x_c` at sample `t` for every column `c` of `x`.
fn bank_columns(den: &Polynomial, ts: f64, x: &DMatrix<f64>) -> Result<Vec<Vec<Vec<f64>>>> {
    let bank = DerivativeBank::new(den, ts)?;
    if bank.order() != den.declared_degree() {
        return Err(Error::InvalidModel(vec!["denominator has a vanishing leading coefficient".into()]));
    }
    Ok((0..x.ncols()).map(|c| bank.apply(x.column(c).as_slice())).collect())
}

fn columns_to_matrix(cols: Vec<&[f64]>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (c, col) in cols.into_iter().enumerate() {
        m.column_mut(c).copy_from_slice(col);
    }
    m
}

/// Rows `(p^j / (p^l A)) s` for `j = 0..=m`.
fn numerator_rows(sub: &Submodel, s: &DMatrix<f64>, ts: f64) -> Result<Vec<DMatrix<f64>>> {
    let bank = bank_columns(&sub.full_denominator(), ts, s)?;
    let n = s.nrows();
    Ok((0..=sub.m())
        .map(|j| columns_to_matrix(bank.iter().map(|ch| ch[j].as_slice()).collect(), n))
        .collect())
}

/// Regressor blocks and filtered residual outputs from precomputed submodel outputs.
pub(crate) fn regressor_and_targets(
    model: &AdditiveModel,
    ds: &Dataset,
    parts: &[DMatrix<f64>],
) -> Result<(RegressorSeries, ResidualOutputSeries)> {
    let n = ds.len();
    let mut blocks = Vec::with_capacity(model.k());
    let mut rows = Vec::with_capacity(model.k());
    for (i, sub) in model.submodels.iter().enumerate() {
        let yt = residual_output_from_parts(&ds.y, parts, i);
        let bank = bank_columns(&sub.a, ds.ts, &yt)?;
        rows.push(columns_to_matrix(bank.iter().map(|ch| ch[0].as_slice()).collect(), n));
        let den = (1..=sub.n())
            .map(|j| -columns_to_matrix(bank.iter().map(|ch| ch[j].as_slice()).collect(), n))
            .collect();
        blocks.push(BlockSeries {
            den,
            num: numerator_rows(sub, &ds.u, ds.ts)?,
        });
    }
    Ok((
        StackedSeries {
            structure: model.structure(),
            blocks,
            len: n,
        },
        ResidualOutputSeries { rows },
    ))
}

/// Pseudolinear regressor at the current model.
pub fn build_regressor(model: &AdditiveModel, ds: &Dataset) -> Result<RegressorSeries> {
    let parts = submodel_outputs(model, ds)?;
    Ok(regressor_and_targets(model, ds, &parts)?.0)
}

/// Filtered residual outputs `y~_{f,i} = y~_i / A_i`.
pub fn build_residual_outputs(model: &AdditiveModel, ds: &Dataset) -> Result<ResidualOutputSeries> {
    let parts = submodel_outputs(model, ds)?;
    Ok(regressor_and_targets(model, ds, &parts)?.1)
}

/// Instrument built from the noise-free signal `s` (`N x n_u`): rows
/// `-(p^j B / (p^l A^2)) s` for `j = 1..=n` and `(p^j / (p^l A)) s` for `j = 0..=m`.
pub fn instrument_from_signal(model: &AdditiveModel, s: &DMatrix<f64>, ts: f64) -> Result<InstrumentSeries> {
    if s.ncols() != model.n_u {
        return Err(Error::ChannelMismatch {
            expected: model.n_u,
            got: s.ncols(),
        });
    }
    let n = s.nrows();
    let n_y = model.n_y;
    let mut blocks = Vec::with_capacity(model.k());
    for sub in &model.submodels {
        let mut den = Vec::with_capacity(sub.n());
        if sub.n() > 0 {
            let sq = sub.a.mul(&sub.a).shift(sub.ell);
            let bank = bank_columns(&sq, ts, s)?;
            for j in 1..=sub.n() {
                let mut row = DMatrix::zeros(n, n_y);
                for (r, br) in sub.b.coeffs().iter().enumerate() {
                    for (c, ch) in bank.iter().enumerate() {
                        let w = &ch[j + r];
                        for o in 0..n_y {
                            let coef = br[(o, c)];
                            if coef == 0.0 {
                                continue;
                            }
                            let mut col = row.column_mut(o);
                            for (t, &v) in w.iter().enumerate() {
                                col[t] -= coef * v;
                            }
                        }
                    }
                }
                den.push(row);
            }
        }
        blocks.push(BlockSeries {
            den,
            num: numerator_rows(sub, s, ts)?,
        });
    }
    Ok(StackedSeries {
        structure: model.structure(),
        blocks,
        len: n,
    })
}

/// Open-loop instrument driven by the measured input.
pub fn build_instrument_ol(model: &AdditiveModel, ds: &Dataset) -> Result<InstrumentSeries> {
    check_dims(model, ds)?;
    instrument_from_signal(model, &ds.u, ds.ts)
}

/// Closed-loop instrument driven by `S_uo r`, with `S_uo` formed from `model`.
pub fn build_instrument_cl(
    model: &AdditiveModel,
    ds: &Dataset,
    controller: Option<&DiscreteController>,
) -> Result<InstrumentSeries> {
    check_dims(model, ds)?;
    ds.reference()?;
    let controller = controller.ok_or(Error::MissingController)?;
    let r_tilde = noise_free_input(controller, model, ds)?;
    instrument_from_signal(model, &r_tilde, ds.ts)
}
