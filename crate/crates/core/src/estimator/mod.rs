//! Refined instrumental variable estimation of additive models in open and
//! closed loop.
//!
//! Each iteration fixes the current parameters, simulates the submodel
//! contributions, estimates the noise covariance from the residual, builds
//! the pseudolinear regressor, instrument and filtered residual outputs, and
//! solves the weighted IV normal equations. The new parameters are read off
//! the block diagonal of the solution.

pub mod init;
pub mod iv;
pub mod series;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_loop::DiscreteController;
use crate::error::{Error, Result};
use crate::lti::Polynomial;
use crate::model::{
    unpack_parameters, validate_model, AdditiveModel, ModelFile, ParameterVector, SubmodelStructure,
};
use crate::signals::Dataset;

pub use init::{init_numerators, modal_denominator, pick_initial_poles};
pub use iv::{
    correlation_norm, correlation_vector, estimate_noise_cov, iv_solve, iv_step, normal_equations, regularize_covariance,
};
pub use series::{
    build_instrument_cl, build_instrument_ol, build_regressor, build_residual_outputs, instrument_from_signal, residual,
    residual_output_sub, submodel_outputs, InstrumentSeries, RegressorSeries, ResidualOutputSeries,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Identity,
    #[default]
    Estimated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopMode {
    #[default]
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationOptions {
    #[serde(rename = "max_iter")]
    pub max_iterations: usize,
    pub tol: f64,
    pub stability_safeguard: bool,
    pub weighting: Weighting,
    #[serde(skip)]
    pub loop_mode: LoopMode,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tol: 1e-6,
            stability_safeguard: true,
            weighting: Weighting::Estimated,
            loop_mode: LoopMode::Open,
        }
    }
}

impl EstimationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EstimationResult {
    pub model: AdditiveModel,
    pub beta: ParameterVector,
    pub sigma_hat: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `beta` before the first update followed by every iterate.
    pub beta_trace: Vec<DVector<f64>>,
    /// Correlation norm at the final iterate.
    pub correlation_norm: f64,
    /// Correlation norm at the initial parameters, weighted with the final covariance.
    pub initial_correlation_norm: f64,
}

/// Everything evaluated at one parameter value.
struct Evaluation {
    eps: DMatrix<f64>,
    sigma: DMatrix<f64>,
    phi: RegressorSeries,
    upsilon: ResidualOutputSeries,
    phi_hat: InstrumentSeries,
}

fn evaluate(
    model: &AdditiveModel,
    ds: &Dataset,
    opts: &EstimationOptions,
    controller: Option<&DiscreteController>,
    iteration: usize,
) -> Result<Evaluation> {
    let parts = submodel_outputs(model, ds)?;
    let eps = series::residual_from_parts(&ds.y, &parts);
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence(iteration));
    }
    let sigma = match opts.weighting {
        Weighting::Estimated => floored_noise_cov(&eps, &ds.y),
        Weighting::Identity => DMatrix::identity(ds.n_y(), ds.n_y()),
    };
    let (phi, upsilon) = series::regressor_and_targets(model, ds, &parts)?;
    let phi_hat = match opts.loop_mode {
        LoopMode::Open => build_instrument_ol(model, ds)?,
        LoopMode::Closed => build_instrument_cl(model, ds, controller)?,
    };
    Ok(Evaluation {
        eps,
        sigma,
        phi,
        upsilon,
        phi_hat,
    })
}

/// Residual power below this fraction of the output power is treated as round-off.
const COV_FLOOR: f64 = 1e-14;

fn floored_noise_cov(eps: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sigma = estimate_noise_cov(eps);
    let n_y = y.ncols().max(1);
    let power = y.norm_squared() / (y.nrows().max(1) * n_y) as f64;
    if power.is_finite() && power > 0.0 {
        for i in 0..sigma.nrows() {
            sigma[(i, i)] += COV_FLOOR * power;
        }
    }
    sigma
}

fn stabilize(model: AdditiveModel) -> Result<AdditiveModel> {
    let mut model = model;
    for s in &mut model.submodels {
        if s.a.degree() > 0 {
            s.a = s.a.reflect_unstable()?;
        }
    }
    Ok(model)
}

/// Iterate the weighted IV update from `init` until the relative parameter
/// change drops below `opts.tol` or `opts.max_iterations` is reached.
pub fn identify(
    ds: &Dataset,
    init: &AdditiveModel,
    opts: &EstimationOptions,
    controller: Option<&DiscreteController>,
) -> Result<EstimationResult> {
    opts.validate()?;
    validate_model(init).into_result()?;
    if opts.loop_mode == LoopMode::Closed {
        ds.reference()?;
        if controller.is_none() {
            return Err(Error::MissingController);
        }
    }
    let mut model = init.clone();
    let mut beta = model.beta();
    let mut trace = vec![beta.beta.clone()];
    let mut converged = false;
    let mut iterations = 0;
    let mut initial = None;

    for j in 0..opts.max_iterations {
        let ev = evaluate(&model, ds, opts, controller, j)?;
        let next = iv_step(&ev.phi_hat, &ev.phi, &ev.upsilon, &ev.sigma)?;
        if initial.is_none() {
            initial = Some((ev.phi_hat, ev.eps));
        }
        if next.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(j + 1));
        }
        let mut next_model = unpack_parameters(&next)?;
        if opts.stability_safeguard {
            next_model = stabilize(next_model)?;
        }
        let next_beta = next_model.beta();
        let change = (&next_beta.beta - &beta.beta).norm() / beta.beta.norm().max(f64::MIN_POSITIVE);
        model = next_model;
        beta = next_beta;
        trace.push(beta.beta.clone());
        iterations = j + 1;
        if !change.is_finite() {
            return Err(Error::Divergence(iterations));
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let ev = evaluate(&model, ds, opts, controller, iterations)?;
    let correlation_norm = correlation_norm(&ev.phi_hat, &ev.eps, &ev.sigma);
    let initial_correlation_norm = match &initial {
        Some((phi_hat, eps)) => self::correlation_norm(phi_hat, eps, &ev.sigma),
        None => correlation_norm,
    };
    Ok(EstimationResult {
        model,
        beta,
        sigma_hat: ev.sigma,
        iterations,
        converged,
        beta_trace: trace,
        correlation_norm,
        initial_correlation_norm,
    })
}

/// Initial model description in an estimation config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    /// Path of a model JSON file, relative to the config file.
    Model { model: String },
    /// Natural frequencies (rad/s) and damping ratios for the submodels with a
    /// nonconstant denominator, in order; numerators are fitted by least squares.
    Modal { poles: Vec<f64>, damping: Vec<f64> },
}

/// Estimation configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub mode: LoopMode,
    pub structure: Vec<SubmodelStructure>,
    pub init: InitSpec,
    #[serde(default)]
    pub options: EstimationOptions,
    /// Controller file for closed-loop estimation, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<String>,
}

impl EstimationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.options.validate()?;
        if cfg.structure.is_empty() {
            return Err(Error::InvalidConfig("structure lists no submodels".into()));
        }
        Ok(cfg)
    }

    pub fn effective_options(&self) -> EstimationOptions {
        EstimationOptions {
            loop_mode: self.mode,
            ..self.options.clone()
        }
    }

    /// Build the initial model, resolving relative paths against `base`.
    pub fn initial_model(&self, ds: &Dataset, base: &Path) -> Result<AdditiveModel> {
        match &self.init {
            InitSpec::Model { model } => {
                let m = AdditiveModel::load(base.join(model))?;
                if m.structure().submodels != self.structure {
                    return Err(Error::InvalidConfig("initial model does not match the configured structure".into()));
                }
                Ok(m)
            }
            InitSpec::Modal { poles, damping } => {
                let dynamic = self.structure.iter().filter(|s| s.n > 0).count();
                if poles.len() != dynamic || damping.len() != dynamic {
                    return Err(Error::InvalidConfig(format!(
                        "{dynamic} submodels need initial poles, got {} poles and {} damping ratios",
                        poles.len(),
                        damping.len()
                    )));
                }
                let mut it = poles.iter().zip(damping);
                let dens = self
                    .structure
                    .iter()
                    .map(|s| match s.n {
                        0 => Ok(Polynomial::one()),
                        1 => {
                            let (w, _) = it.next().expect("counted above");
                            Polynomial::new(vec![1.0, 1.0 / w])
                        }
                        2 => {
                            let (w, z) = it.next().expect("counted above");
                            Ok(modal_denominator(*w, *z))
                        }
                        n => Err(Error::InvalidConfig(format!(
                            "modal initialization supports denominators up to degree 2, got {n}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let st = crate::model::ModelStructure {
                    n_u: ds.n_u(),
                    n_y: ds.n_y(),
                    submodels: self.structure.clone(),
                };
                init_numerators(ds, &st, &dens)
            }
        }
    }
}

/// Result file: the estimated model plus iteration diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimationReport {
    pub model: ModelFile,
    #[serde(rename = "Sigma_hat")]
    pub sigma_hat: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub correlation_norm: f64,
    pub initial_correlation_norm: f64,
    pub beta_trace: Vec<Vec<f64>>,
}

impl From<&EstimationResult> for EstimationReport {
    fn from(r: &EstimationResult) -> Self {
        Self {
            model: ModelFile::from(&r.model),
            sigma_hat: r.sigma_hat.row_iter().map(|row| row.iter().copied().collect()).collect(),
            iterations: r.iterations,
            converged: r.converged,
            correlation_norm: r.correlation_norm,
            initial_correlation_norm: r.initial_correlation_norm,
            beta_trace: r.beta_trace.iter().map(|b| b.iter().copied().collect()).collect(),
        }
    }
}
