//! Declarative benchmark definitions and data generation.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::modal::ModalSpec;
use super::three_mass::{three_mass_model, ThreeMassConfig};
use crate::closed_loop::{plant_discrete, simulate_closed_loop, DiscreteController};
use crate::error::{Error, Result};
use crate::estimator::{init_numerators, modal_denominator, pick_initial_poles, EstimationOptions, LoopMode};
use crate::lti::Polynomial;
use crate::model::{unpack_parameters, AdditiveModel, ParameterVector};
use crate::signals::{
    compensate_delay, estimate_frf_interleaved, generate_gaussian, generate_multisine_interleaved, sample_output_noise,
    Dataset, NoiseSpec,
};

const BUILTIN: [(&str, &str); 3] = [
    ("three-mass-open", include_str!("../../benchmarks/three_mass_open.json")),
    ("three-mass-closed", include_str!("../../benchmarks/three_mass_closed.json")),
    ("modal-beam", include_str!("../../benchmarks/modal_beam.json")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantSpec {
    ThreeMass(ThreeMassConfig),
    Modal(ModalSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Excitation {
    /// White Gaussian sequence on every channel.
    Gaussian { variance: f64 },
    /// Random-phase multisines on interleaved frequency grids.
    Multisine { f_min_hz: f64, f_max_hz: f64, periods: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseConfig {
    Variance { variance: f64 },
    Snr { snr_db: f64 },
}

impl NoiseConfig {
    pub fn spec(&self, n_y: usize) -> NoiseSpec {
        match self {
            NoiseConfig::Variance { variance } => NoiseSpec::white(n_y, *variance),
            NoiseConfig::Snr { snr_db } => NoiseSpec::SnrDb(*snr_db),
        }
    }
}

/// Diagonal lead/PD controller placing the rigid-body crossover at `bandwidth_hz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub bandwidth_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitStrategy {
    /// Every true parameter scaled by an independent factor in `[1 - relative, 1 + relative]`.
    Perturbed { relative: f64 },
    /// Natural frequencies from the peaks of the measured FRF, fixed damping,
    /// least-squares numerators.
    FrfPeaks {
        damping: f64,
        min_rel_spacing: f64,
        skip_periods: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn grid(&self) -> Vec<f64> {
        super::metrics::log_grid(self.f_min_hz, self.f_max_hz, self.points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub id: String,
    pub description: String,
    #[serde(rename = "Ts")]
    pub ts: f64,
    pub samples: usize,
    pub plant: PlantSpec,
    #[serde(rename = "loop")]
    pub loop_mode: LoopMode,
    pub excitation: Excitation,
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerSpec>,
    pub init: InitStrategy,
    pub frf_grid: GridSpec,
    /// Output delay present in the raw data and removed before estimation.
    #[serde(default)]
    pub output_delay_samples: usize,
    /// Estimator settings; the loop mode is taken from `loop`.
    #[serde(default)]
    pub options: EstimationOptions,
}

/// Independent seed for one purpose derived from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_EXCITATION: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_INIT: u64 = 3;

impl Benchmark {
    pub fn builtin_ids() -> Vec<&'static str> {
        BUILTIN.iter().map(|(id, _)| *id).collect()
    }

    pub fn builtin(id: &str) -> Result<Self> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(name, _)| *name == id)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown benchmark '{id}' (known: {})", Self::builtin_ids().join(", "))))?;
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text)?;
        b.check()?;
        Ok(b)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        if !(self.ts > 0.0) || self.samples == 0 {
            return Err(Error::InvalidConfig("benchmark needs a positive sample period and sample count".into()));
        }
        self.options.validate()?;
        if self.loop_mode == LoopMode::Closed && self.controller.is_none() {
            return Err(Error::InvalidConfig("closed-loop benchmark without controller".into()));
        }
        if self.output_delay_samples >= self.samples {
            return Err(Error::DelayTooLarge {
                delay: self.output_delay_samples,
                len: self.samples,
            });
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<AdditiveModel> {
        match &self.plant {
            PlantSpec::ThreeMass(cfg) => three_mass_model(cfg),
            PlantSpec::Modal(spec) => spec.model(),
        }
    }

    pub fn controller(&self) -> Result<Option<DiscreteController>> {
        let Some(spec) = &self.controller else {
            return Ok(None);
        };
        let truth = self.truth()?;
        // effective double-integrator gain of the rigid-body term along its dominant direction
        let rigid = truth
            .submodels
            .iter()
            .find(|s| s.ell == 2)
            .ok_or_else(|| Error::InvalidConfig("controller design needs a rigid-body submodel".into()))?;
        let b0 = &rigid.b.coeffs()[0];
        let g = b0.clone().svd(false, false).singular_values.max();
        let omega_c = 2.0 * std::f64::consts::PI * spec.bandwidth_hz;
        Ok(Some(DiscreteController::pd_for_double_integrator(
            truth.n_u, g, omega_c, self.ts,
        )?))
    }

    pub fn estimation_options(&self) -> EstimationOptions {
        EstimationOptions {
            loop_mode: self.loop_mode,
            ..self.options.clone()
        }
    }

    /// Raw data for a run: excitation, simulation, output delay and noise.
    pub fn simulate(&self, seed: u64) -> Result<Dataset> {
        self.simulate_with_noise(seed, &self.noise.spec(self.truth()?.n_y))
    }

    pub fn simulate_with_noise(&self, seed: u64, noise: &NoiseSpec) -> Result<Dataset> {
        let truth = self.truth()?;
        let n = self.samples;
        let channels = match self.loop_mode {
            LoopMode::Open => truth.n_u,
            LoopMode::Closed => truth.n_y,
        };
        let excitation = match &self.excitation {
            Excitation::Gaussian { variance } => {
                generate_gaussian(n, channels, *variance, derive_seed(seed, STREAM_EXCITATION))
            }
            Excitation::Multisine {
                f_min_hz,
                f_max_hz,
                periods,
            } => generate_multisine_interleaved(
                n,
                self.ts,
                (*f_min_hz, *f_max_hz),
                *periods,
                channels,
                derive_seed(seed, STREAM_EXCITATION),
            )?,
        };
        let noise_seed = derive_seed(seed, STREAM_NOISE);
        match self.loop_mode {
            LoopMode::Open => {
                let x = plant_discrete(&truth, self.ts)?.simulate(&excitation)?;
                let d = self.output_delay_samples;
                let delayed = DMatrix::from_fn(n, truth.n_y, |k, j| if k >= d { x[(k - d, j)] } else { 0.0 });
                let v = sample_output_noise(&delayed, noise, noise_seed)?;
                Dataset::new(excitation, delayed + v, None, self.ts)
            }
            LoopMode::Closed => {
                let ctrl = self.controller()?.ok_or(Error::MissingController)?;
                simulate_closed_loop(&truth, &ctrl, &excitation, noise, noise_seed, self.ts)
            }
        }
    }

    /// Raw data aligned for time-domain estimation.
    pub fn prepare(&self, raw: &Dataset) -> Result<Dataset> {
        compensate_delay(raw, self.output_delay_samples)
    }

    /// Initial model for a run.
    pub fn initial_model(&self, raw: &Dataset, seed: u64) -> Result<AdditiveModel> {
        let truth = self.truth()?;
        match &self.init {
            InitStrategy::Perturbed { relative } => perturb(&truth, *relative, derive_seed(seed, STREAM_INIT)),
            InitStrategy::FrfPeaks {
                damping,
                min_rel_spacing,
                skip_periods,
            } => {
                let periods = match &self.excitation {
                    Excitation::Multisine { periods, .. } => *periods,
                    Excitation::Gaussian { .. } => {
                        return Err(Error::InvalidConfig("FRF-based initialization needs multisine excitation".into()))
                    }
                };
                let frf = estimate_frf_interleaved(raw, periods, *skip_periods)?;
                let freqs: Vec<f64> = frf.iter().map(|p| p.freq_hz).collect();
                let mags: Vec<DMatrix<f64>> = frf.iter().map(|p| p.g.map(|c| c.norm())).collect();
                let structure = truth.structure();
                let dynamic = structure.submodels.iter().filter(|s| s.n == 2).count();
                let omegas = pick_initial_poles(&freqs, &mags, dynamic, *min_rel_spacing)?;
                let mut it = omegas.into_iter();
                let dens = structure
                    .submodels
                    .iter()
                    .map(|s| match s.n {
                        0 => Ok(Polynomial::one()),
                        2 => Ok(modal_denominator(it.next().expect("one frequency per mode"), *damping)),
                        n => Err(Error::InvalidConfig(format!("peak initialization needs n = 0 or 2, got {n}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                init_numerators(&self.prepare(raw)?, &structure, &dens)
            }
        }
    }
}

/// Multiply every parameter by an independent uniform factor in `[1 - rel, 1 + rel]`.
pub fn perturb(model: &AdditiveModel, rel: f64, seed: u64) -> Result<AdditiveModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = model.beta();
    let perturbed = beta.beta.map(|v| v * (1.0 + rel * (2.0 * rng.random::<f64>() - 1.0)));
    unpack_parameters(&ParameterVector::new(perturbed, beta.structure)?)
}
