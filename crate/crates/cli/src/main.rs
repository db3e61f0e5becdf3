//! `arivc` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use arivc::closed_loop::{plant_discrete, simulate_closed_loop, DiscreteController};
use arivc::estimator::{identify, EstimationConfig, EstimationReport, LoopMode};
use arivc::experiments::{log_grid, monte_carlo, seed_list, Benchmark};
use arivc::model::{frf_eval, AdditiveModel};
use arivc::signals::{
    compensate_delay, generate_gaussian, load_dataset, sample_output_noise, save_dataset, variance, Dataset, NoiseSpec,
};
use arivc::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Deserialize;

mod exit {
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const SIMULATION: u8 = 3;
    pub const NOT_CONVERGED: u8 = 4;
    pub const RANK: u8 = 5;
}

/// Failure carrying the process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    fn config(msg: impl std::fmt::Display) -> Self {
        Self::new(exit::CONFIG, anyhow!("{msg}"))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

trait Stage<T> {
    fn stage(self, code: u8, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, code: u8, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure::new(code, e.into().context(what.to_string())))
    }
}

#[derive(Parser, Debug)]
#[command(name = "arivc", version, about = "Refined IV identification of additive MIMO continuous-time systems")]
struct Cli {
    /// Random seed (base seed for montecarlo).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (simulate, frf) or directory (identify, montecarlo).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with defaults for the command's flags; for identify, the estimation config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Debug)]
enum Command {
    /// Generate a dataset from a benchmark or a model file.
    Simulate(SimulateArgs),
    /// Estimate an additive model from a dataset.
    Identify(IdentifyArgs),
    /// Export the frequency response of a model as CSV.
    Frf(FrfArgs),
    /// Repeat simulation and identification on a benchmark.
    Montecarlo(MonteCarloArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LoopArg {
    Open,
    Closed,
}

impl From<LoopArg> for LoopMode {
    fn from(l: LoopArg) -> Self {
        match l {
            LoopArg::Open => LoopMode::Open,
            LoopArg::Closed => LoopMode::Closed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Spacing {
    #[default]
    Log,
    Lin,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateArgs {
    /// Builtin benchmark id, `three-mass` (with --loop) or a benchmark JSON file.
    #[arg(long, conflicts_with = "model")]
    benchmark: Option<String>,
    #[arg(long = "loop", value_enum)]
    #[serde(rename = "loop")]
    loop_mode: Option<LoopArg>,
    /// Model JSON file driven by unit-variance white Gaussian excitation.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Controller JSON file (closed loop with --model).
    #[arg(long)]
    controller: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    ts: Option<f64>,
    /// White output noise variance per channel.
    #[arg(long, conflicts_with = "snr_db")]
    noise_var: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    /// Write noise-free outputs.
    #[arg(long)]
    noise_free: bool,
    #[arg(skip)]
    seed: Option<u64>,
    #[arg(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default)]
struct IdentifyArgs {
    /// Dataset CSV (metadata sidecar optional).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Controller JSON file; overrides the one named in the config.
    #[arg(long)]
    controller: Option<PathBuf>,
    /// Output delay in samples removed before estimation.
    #[arg(long)]
    delay: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FrfArgs {
    /// Model JSON file.
    #[arg(long, conflicts_with = "benchmark")]
    model: Option<PathBuf>,
    /// Use the true model of a benchmark instead of a model file.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    f_min: Option<f64>,
    #[arg(long)]
    f_max: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long, value_enum)]
    spacing: Option<Spacing>,
    #[arg(skip)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MonteCarloArgs {
    /// Builtin benchmark id or benchmark JSON file.
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(skip)]
    seed: Option<u64>,
    #[arg(skip)]
    out: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(|e| Failure::new(exit::CONFIG, e))?;
    serde_json::from_str(&text)
        .with_context(|| format!("malformed {}", path.display()))
        .map_err(|e| Failure::new(exit::CONFIG, e))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::config(format!("{what} '{}' does not exist", path.display())))
    }
}

fn load_benchmark(spec: &str, loop_mode: Option<LoopArg>) -> CliResult<Benchmark> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") {
        require_file(path, "benchmark file")?;
        let b = Benchmark::load(path).stage(exit::CONFIG, "invalid benchmark file")?;
        if loop_mode.is_some_and(|l| LoopMode::from(l) != b.loop_mode) {
            return Err(Failure::config("--loop disagrees with the benchmark file"));
        }
        return Ok(b);
    }
    let id = match (spec, loop_mode) {
        ("three-mass", Some(LoopArg::Open) | None) => "three-mass-open".to_string(),
        ("three-mass", Some(LoopArg::Closed)) => "three-mass-closed".to_string(),
        (id, _) => id.to_string(),
    };
    let b = Benchmark::builtin(&id).map_err(Failure::config)?;
    if loop_mode.is_some_and(|l| LoopMode::from(l) != b.loop_mode) {
        return Err(Failure::config(format!("--loop disagrees with benchmark '{id}'")));
    }
    Ok(b)
}

fn merge<T: DeserializeOwned + Default>(config: Option<&Path>) -> CliResult<T> {
    match config {
        Some(p) => read_json(p),
        None => Ok(T::default()),
    }
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),+) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field.take(); } )+
    };
}

fn noise_spec(args: &SimulateArgs, n_y: usize) -> Option<NoiseSpec> {
    if args.noise_free {
        Some(NoiseSpec::none(n_y))
    } else if let Some(v) = args.noise_var {
        Some(NoiseSpec::white(n_y, v))
    } else {
        args.snr_db.map(NoiseSpec::SnrDb)
    }
}

fn snr_db(noisy: &Dataset, clean: &Dataset) -> Vec<f64> {
    (0..noisy.n_y())
        .map(|j| {
            let signal = variance(clean.y.column(j).as_slice());
            let diff: Vec<f64> = noisy.y.column(j).iter().zip(clean.y.column(j).iter()).map(|(a, b)| a - b).collect();
            10.0 * (signal / variance(&diff)).log10()
        })
        .collect()
}

fn cmd_simulate(cli: &Cli, mut args: SimulateArgs) -> CliResult<()> {
    let mut file: SimulateArgs = merge(cli.config.as_deref())?;
    overlay!(args, file, benchmark, loop_mode, model, controller, samples, ts, noise_var, snr_db, seed, out);
    args.noise_free |= file.noise_free;
    let seed = cli.seed.or(args.seed).unwrap_or(1);
    let out = cli.out.clone().or(args.out.take()).unwrap_or_else(|| PathBuf::from("data.csv"));

    let (noisy, clean, controller) = match (&args.benchmark, &args.model) {
        (Some(spec), None) => {
            let b = load_benchmark(spec, args.loop_mode)?;
            if args.samples.is_some() || args.ts.is_some() || args.controller.is_some() {
                return Err(Failure::config("--samples, --ts and --controller apply to --model only"));
            }
            let n_y = b.truth().stage(exit::CONFIG, "invalid benchmark plant")?.n_y;
            let noise = noise_spec(&args, n_y).unwrap_or_else(|| b.noise.spec(n_y));
            let mut noisy = b.simulate_with_noise(seed, &noise).stage(exit::SIMULATION, "simulation failed")?;
            noisy.delay_samples = 0;
            let clean = b
                .simulate_with_noise(seed, &NoiseSpec::none(n_y))
                .stage(exit::SIMULATION, "simulation failed")?;
            if b.output_delay_samples > 0 {
                eprintln!(
                    "note: outputs lag the inputs by {} samples; pass --delay {} to identify",
                    b.output_delay_samples, b.output_delay_samples
                );
            }
            let controller = b.controller().stage(exit::CONFIG, "invalid controller")?;
            (noisy, clean, controller)
        }
        (None, Some(model_path)) => {
            require_file(model_path, "model file")?;
            let model = AdditiveModel::load(model_path).stage(exit::CONFIG, "invalid model file")?;
            model.validate().into_result().stage(exit::CONFIG, "invalid model")?;
            let n = args.samples.ok_or_else(|| Failure::config("--samples is required with --model"))?;
            let ts = args.ts.ok_or_else(|| Failure::config("--ts is required with --model"))?;
            if n == 0 || !(ts > 0.0) {
                return Err(Failure::config("--samples and --ts must be positive"));
            }
            let closed = args.loop_mode == Some(LoopArg::Closed);
            let controller = match (&args.controller, closed) {
                (Some(p), true) => {
                    require_file(p, "controller file")?;
                    Some(DiscreteController::load(p).stage(exit::CONFIG, "invalid controller file")?)
                }
                (None, true) => return Err(Failure::config("closed-loop simulation needs --controller")),
                (Some(_), false) => return Err(Failure::config("--controller needs --loop closed")),
                (None, false) => None,
            };
            let noise = noise_spec(&args, model.n_y).unwrap_or_else(|| NoiseSpec::none(model.n_y));
            let run = |spec: &NoiseSpec| -> arivc::Result<Dataset> {
                match &controller {
                    Some(c) => {
                        let r = generate_gaussian(n, model.n_y, 1.0, seed);
                        simulate_closed_loop(&model, c, &r, spec, seed.wrapping_add(1), ts)
                    }
                    None => {
                        let u = generate_gaussian(n, model.n_u, 1.0, seed);
                        let x = plant_discrete(&model, ts)?.simulate(&u)?;
                        let v = sample_output_noise(&x, spec, seed.wrapping_add(1))?;
                        Dataset::new(u, x + v, None, ts)
                    }
                }
            };
            let noisy = run(&noise).stage(exit::SIMULATION, "simulation failed")?;
            let clean = run(&NoiseSpec::none(model.n_y)).stage(exit::SIMULATION, "simulation failed")?;
            (noisy, clean, controller)
        }
        (None, None) => return Err(Failure::config("simulate needs --benchmark or --model")),
        (Some(_), Some(_)) => return Err(Failure::config("--benchmark and --model are mutually exclusive")),
    };

    save_dataset(&noisy, &out).stage(exit::FAILURE, "cannot write dataset")?;
    if let Some(c) = &controller {
        let path = out.with_extension("controller.json");
        c.save(&path).stage(exit::FAILURE, "cannot write controller")?;
        println!("controller: {}", path.display());
    }
    let snr = snr_db(&noisy, &clean);
    println!("wrote {}", out.display());
    println!("N = {}, Ts = {} s", noisy.len(), noisy.ts);
    println!(
        "channels: {} u, {} y{}",
        noisy.n_u(),
        noisy.n_y(),
        if noisy.r.is_some() { format!(", {} r", noisy.n_y()) } else { String::new() }
    );
    println!(
        "SNR achieved [dB]: {}",
        snr.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>().join(", ")
    );
    Ok(())
}

fn cmd_identify(cli: &Cli, args: IdentifyArgs) -> CliResult<()> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::config("identify needs an estimation config (--config)"))?;
    require_file(config_path, "estimation config")?;
    let data = args.data.as_deref().ok_or_else(|| Failure::config("identify needs a dataset (--data)"))?;
    require_file(data, "dataset")?;
    let mut cfg = EstimationConfig::load(config_path).stage(exit::CONFIG, "invalid estimation config")?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    if let Some(m) = args.max_iter {
        cfg.options.max_iterations = m;
    }
    if let Some(t) = args.tol {
        cfg.options.tol = t;
    }
    let opts = cfg.effective_options();
    opts.validate().stage(exit::CONFIG, "invalid estimation options")?;

    let controller_path = args.controller.clone().or_else(|| cfg.controller.as_ref().map(|c| base.join(c)));
    let controller = match (cfg.mode, controller_path) {
        (LoopMode::Closed, None) => {
            return Err(Failure::config(
                "closed-loop identification needs a controller file: pass --controller or set \"controller\" in the config",
            ))
        }
        (LoopMode::Closed, Some(p)) => {
            require_file(&p, "controller file")?;
            Some(DiscreteController::load(&p).stage(exit::CONFIG, "invalid controller file")?)
        }
        (LoopMode::Open, _) => None,
    };

    let raw = load_dataset(data, None).stage(exit::CONFIG, "cannot load dataset")?;
    if cfg.mode == LoopMode::Closed && raw.r.is_none() {
        return Err(Failure::config("closed-loop identification needs reference columns r1..rn in the dataset"));
    }
    let ds = match args.delay {
        Some(d) if d > 0 => compensate_delay(&raw, d).stage(exit::CONFIG, "invalid delay")?,
        _ => raw,
    };
    let init = cfg.initial_model(&ds, base).map_err(|e| match e {
        Error::RankDeficiency => Failure::new(exit::RANK, rank_hint(e)),
        e => Failure::new(exit::CONFIG, anyhow::Error::from(e).context("cannot build the initial model")),
    })?;
    let result = identify(&ds, &init, &opts, controller.as_ref()).map_err(|e| match e {
        Error::RankDeficiency => Failure::new(exit::RANK, rank_hint(e)),
        Error::Divergence(_) => Failure::new(exit::NOT_CONVERGED, anyhow::Error::from(e)),
        Error::InvalidModel(_) | Error::MissingController | Error::MissingReference | Error::ChannelMismatch { .. } => {
            Failure::new(exit::CONFIG, anyhow::Error::from(e))
        }
        e => Failure::new(exit::SIMULATION, anyhow::Error::from(e).context("estimation failed")),
    })?;

    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).stage(exit::FAILURE, "cannot create output directory")?;
    result.model.save(out.join("model.json")).stage(exit::FAILURE, "cannot write model")?;
    let report = EstimationReport::from(&result);
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .stage(exit::FAILURE, "cannot write report")?;

    if cli.verbose {
        for (j, b) in result.beta_trace.windows(2).enumerate() {
            let change = (&b[1] - &b[0]).norm() / b[0].norm().max(f64::MIN_POSITIVE);
            eprintln!("iteration {:3}: relative change {change:.3e}", j + 1);
        }
    }
    println!("iterations: {}", result.iterations);
    println!("converged: {}", result.converged);
    println!(
        "correlation norm: {:.3e} (initial {:.3e})",
        result.correlation_norm, result.initial_correlation_norm
    );
    println!("wrote {} and {}", out.join("model.json").display(), out.join("report.json").display());
    if result.converged {
        Ok(())
    } else {
        Err(Failure::new(
            exit::NOT_CONVERGED,
            anyhow!("no convergence within {} iterations (result written)", opts.max_iterations),
        ))
    }
}

fn rank_hint(e: Error) -> anyhow::Error {
    anyhow::Error::from(e).context(
        "the instrument is rank deficient: use a richer excitation or a longer record, or reduce the numerator/denominator orders",
    )
}

fn cmd_frf(cli: &Cli, mut args: FrfArgs) -> CliResult<()> {
    let mut file: FrfArgs = merge(cli.config.as_deref())?;
    overlay!(args, file, model, benchmark, f_min, f_max, points, spacing, out);
    let model = match (&args.model, &args.benchmark) {
        (Some(p), None) => {
            require_file(p, "model file")?;
            AdditiveModel::load(p).stage(exit::CONFIG, "invalid model file")?
        }
        (None, Some(b)) => load_benchmark(b, None)?.truth().stage(exit::CONFIG, "invalid benchmark plant")?,
        _ => return Err(Failure::config("frf needs exactly one of --model and --benchmark")),
    };
    let (f_min, f_max) = (args.f_min.unwrap_or(0.1), args.f_max.unwrap_or(1000.0));
    let points = args.points.unwrap_or(200);
    let spacing = args.spacing.unwrap_or_default();
    if points == 0 || !(f_max >= f_min) || f_min < 0.0 || (spacing == Spacing::Log && f_min <= 0.0) {
        return Err(Failure::config(
            "invalid grid: need points > 0, 0 <= f_min <= f_max and f_min > 0 for log spacing",
        ));
    }
    let freqs = match spacing {
        Spacing::Log => log_grid(f_min, f_max, points),
        Spacing::Lin if points == 1 => vec![f_min],
        Spacing::Lin => (0..points)
            .map(|k| f_min + (f_max - f_min) * k as f64 / (points - 1) as f64)
            .collect(),
    };
    let omegas: Vec<f64> = freqs.iter().map(|f| 2.0 * std::f64::consts::PI * f).collect();
    let g = frf_eval(&model, &omegas).map_err(|e| match e {
        Error::PoleAtEvaluationPoint(_) => Failure::config(format!(
            "{e}: the model has an integrator, so the grid must not contain 0 Hz"
        )),
        e => Failure::new(exit::FAILURE, e),
    })?;
    let out = cli.out.clone().or(args.out.take()).unwrap_or_else(|| PathBuf::from("frf.csv"));
    write_frf(&out, &freqs, &g, model.n_y, model.n_u).stage(exit::FAILURE, "cannot write FRF")?;
    println!("wrote {} ({} frequencies, {}x{} channels)", out.display(), freqs.len(), model.n_y, model.n_u);
    Ok(())
}

fn write_frf(
    path: &Path,
    freqs: &[f64],
    g: &[DMatrix<arivc::lti::C64>],
    n_y: usize,
    n_u: usize,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["frequency_hz".to_string()];
    for i in 1..=n_y {
        for j in 1..=n_u {
            header.push(format!("mag_db_y{i}_u{j}"));
            header.push(format!("phase_deg_y{i}_u{j}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (f, gk) in freqs.iter().zip(g) {
        let mut row = vec![format!("{f:?}")];
        for i in 0..n_y {
            for j in 0..n_u {
                let z = gk[(i, j)];
                row.push(format!("{:?}", 20.0 * z.norm().log10()));
                row.push(format!("{:?}", z.arg().to_degrees()));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

fn cmd_montecarlo(cli: &Cli, mut args: MonteCarloArgs) -> CliResult<()> {
    let mut file: MonteCarloArgs = merge(cli.config.as_deref())?;
    overlay!(args, file, benchmark, runs, seed, out);
    let spec = args.benchmark.as_deref().ok_or_else(|| Failure::config("montecarlo needs --benchmark"))?;
    let bench = load_benchmark(spec, None)?;
    let runs = args.runs.unwrap_or(10);
    if runs == 0 {
        return Err(Failure::config("--runs must be at least 1"));
    }
    let seed = cli.seed.or(args.seed).unwrap_or(1);
    let out = cli.out.clone().or(args.out.take()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).stage(exit::FAILURE, "cannot create output directory")?;

    let report = monte_carlo(&bench, &seed_list(seed, runs), &bench.estimation_options())
        .stage(exit::SIMULATION, "Monte-Carlo run failed")?;
    if cli.verbose {
        for r in &report.runs {
            eprintln!(
                "run {:2} seed {:4}: converged {} iterations {:3} param error {:.3e}{}",
                r.run,
                r.seed,
                r.converged,
                r.iterations,
                r.param_error,
                r.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default()
            );
        }
    }
    report.write_csv(out.join("runs.csv")).stage(exit::FAILURE, "cannot write runs.csv")?;
    report
        .write_summary(out.join("summary.json"))
        .stage(exit::FAILURE, "cannot write summary.json")?;
    let s = report.summary();
    println!("benchmark {}: {} runs, {} converged, {} failed", s.benchmark, s.runs, s.converged, s.failed);
    println!(
        "parameter error median {:.3e}, worst FRF error median {:.3e}",
        s.param_error.median, s.worst_frf_error.median
    );
    println!("wrote {} and {}", out.join("runs.csv").display(), out.join("summary.json").display());
    if report.all_converged() {
        Ok(())
    } else {
        Err(Failure::new(
            exit::NOT_CONVERGED,
            anyhow!("{} of {} runs did not converge ({} failed)", s.runs - s.converged, s.runs, s.failed),
        ))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command.clone() {
        Command::Simulate(a) => cmd_simulate(&cli, a),
        Command::Identify(a) => cmd_identify(&cli, a),
        Command::Frf(a) => cmd_frf(&cli, a),
        Command::Montecarlo(a) => cmd_montecarlo(&cli, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
