//! Benchmarks, reference models, fit metrics and Monte Carlo batteries.

pub mod benchmark;
pub mod metrics;
pub mod modal;
pub mod montecarlo;
pub mod three_mass;

pub use benchmark::{derive_seed, perturb, Benchmark, Excitation, InitStrategy, NoiseConfig, PlantSpec};
pub use metrics::{default_grid, fit_metrics, log_grid, match_submodels, FitMetrics};
pub use modal::{modal_beam_model, modal_parameters, ModalSpec};
pub use montecarlo::{monte_carlo, run_once, seed_list, MonteCarloReport, RunRecord, Summary};
pub use three_mass::{three_mass_model, ThreeMassConfig};
