use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use ssae::bench::{
    k_for_eta, run_benchmark, run_benchmark_against, sweep_gamma, BenchmarkConfig, CsMode, Method,
    DEFAULT_GAMMA_GRID,
};
use ssae::cs::{min_measurements, LassoSettings, Measurement, SensingMatrix};
use ssae::data::{generate_synthetic_parts, load_csv, write_csv, DataMatrix, NoiseSpec};
use ssae::pipeline::{bs_decode, gw_encode, load_model, save_model, TrainedModel};
use ssae::trainer::{train, GammaSetting, TrainingConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ssae",
    version,
    about = "Sparse coding and compressive aggregation of sensor data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic spatially correlated data set as CSV.
    Datagen(DatagenArgs),
    /// Cross-validate an autoencoder and save the final model.
    Train(TrainArgs),
    /// Turn frames into M + 1 values each (measurements then frame mean).
    Encode(EncodeArgs),
    /// Recover frames from a measurement file.
    Decode(DecodeArgs),
    /// Compare the autoencoder against DCT, DFT and PCA.
    Bench(BenchArgs),
    /// Cross-validated RMSE over a grid of penalty weights.
    SweepGamma(SweepArgs),
}

#[derive(Debug, clap::Args)]
struct DatagenArgs {
    #[arg(long, default_value_t = 23)]
    sensors: usize,
    #[arg(long, default_value_t = 1440)]
    samples: usize,
    /// Spatial correlation length, in sensor spacings.
    #[arg(long, default_value_t = 5.0)]
    corr_len: f64,
    #[arg(long, default_value_t = 2.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 0.25)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the noiseless field to this file.
    #[arg(long)]
    clean_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Code length L; defaults to the sensor count.
    #[arg(long)]
    hidden: Option<usize>,
    /// Nonzeros kept per code.
    #[arg(long)]
    k: Option<usize>,
    /// Penalty weight, or `auto` to derive it from K / L.
    #[arg(long)]
    gamma: Option<GammaSetting>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// `key = value` file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Measurements per frame stored in the model; defaults to the
    /// minimum for K and L.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    sensing_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Overrides the model's measurement count.
    #[arg(long)]
    m: Option<usize>,
    /// Overrides the model's sensing seed.
    #[arg(long)]
    sensing_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sensing_seed: Option<u64>,
    /// LASSO penalty; defaults to a small fraction of `‖Φᵀy‖∞` per frame.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CsArg {
    On,
    Off,
    Both,
}

impl From<CsArg> for CsMode {
    fn from(value: CsArg) -> Self {
        match value {
            CsArg::On => CsMode::On,
            CsArg::Off => CsMode::Off,
            CsArg::Both => CsMode::Both,
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.trim().parse().map_err(|e: ssae::Error| e.to_string())
}

#[derive(Debug, clap::Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "ssae,dct,dft,pca")]
    methods: Vec<Method>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.13,0.217,0.3,0.5,0.8,1"
    )]
    etas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = CsArg::Off)]
    cs: CsArg,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Autoencoder code length; defaults to the sensor count.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value = "auto")]
    gamma: GammaSetting,
    /// Noise added to held-out inputs only.
    #[arg(long, default_value_t = 0.0)]
    noise_var: f64,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    #[arg(long, default_value_t = 400)]
    max_iterations: usize,
    /// Score against these readings (same shape as --data) instead of the
    /// data itself, e.g. the noiseless field written by `datagen --clean-out`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Sparsity ratio K / L.
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    hidden: Option<usize>,
    /// `log` for the default log-spaced grid, or a comma-separated list.
    #[arg(long, default_value = "log")]
    grid: String,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    max_iterations: usize,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Datagen(args) => datagen(args),
        Command::Train(args) => train_cmd(args),
        Command::Encode(args) => encode(args),
        Command::Decode(args) => decode(args),
        Command::Bench(args) => bench(args),
        Command::SweepGamma(args) => sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn usage_error(message: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(ErrorKind::ValueValidation, message)
        .exit()
}

fn read_data(path: &Path) -> Result<DataMatrix> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    load_csv(BufReader::new(file)).with_context(|| format!("cannot read {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_data(path: &Path, x: &DataMatrix) -> Result<()> {
    let mut sink = create(path)?;
    write_csv(x, &mut sink)?;
    sink.flush()?;
    Ok(())
}

fn datagen(args: DatagenArgs) -> Result<()> {
    let noise = NoiseSpec::new(args.noise_var, args.seed)?;
    let parts = generate_synthetic_parts(
        args.sensors,
        args.samples,
        args.corr_len,
        args.amplitude,
        noise,
    )?;
    write_data(&args.out, &parts.noisy)?;
    if let Some(path) = &args.clean_out {
        write_data(path, &parts.clean)?;
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut config = TrainingConfig::new(0, 0);
    let mut from_file = false;
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        config
            .apply_config(&text)
            .with_context(|| format!("in {}", path.display()))?;
        from_file = true;
    }
    if let Some(l) = args.hidden {
        config.n_hidden = l;
    }
    match args.k {
        Some(k) => config.k_max = k,
        None if from_file && config.k_max > 0 => {}
        None => usage_error("--k is required (or `k = ...` in --config)"),
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    if let Some(f) = args.folds {
        config.folds = f;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(it) = args.max_iterations {
        config.max_iterations = it;
    }
    if config.n_hidden > 0 && config.k_max > config.n_hidden {
        usage_error(format!(
            "--k {} exceeds the code length L = {}",
            config.k_max, config.n_hidden
        ));
    }

    let x = read_data(&args.data)?;
    if config.n_hidden == 0 {
        config.n_hidden = x.n_sensors();
        if config.k_max > config.n_hidden {
            usage_error(format!(
                "--k {} exceeds the code length L = {}",
                config.k_max, config.n_hidden
            ));
        }
    }
    let gamma = config.resolved_gamma()?;
    let eta = config.k_max as f64 / config.n_hidden as f64;
    match config.gamma {
        GammaSetting::Auto => println!("gamma = {gamma} (auto, eta = {eta:.4})"),
        GammaSetting::Fixed(_) => println!("gamma = {gamma}"),
    }

    let report = train(&x, &config)?;
    for (i, r) in report.fold_rmse.iter().enumerate() {
        println!("fold {:>2}  rmse {r:.6}", i + 1);
    }
    println!("mean rmse {:.6}", report.mean_rmse);
    for fold in &report.warnings {
        eprintln!("warning: fold {} stopped before converging", fold + 1);
    }

    let m = match args.m {
        Some(m) => m,
        None => min_measurements(config.k_max, config.n_hidden, 1.0)?,
    };
    let model = TrainedModel::new(
        report.params,
        report.sigma,
        config.k_max,
        config.rounding_places,
        m,
        args.sensing_seed,
    )?;
    let mut sink = create(&args.out)?;
    save_model(&model, &mut sink)?;
    sink.flush()?;
    Ok(())
}

fn read_model(path: &Path) -> Result<TrainedModel> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    load_model(BufReader::new(file))
        .with_context(|| format!("cannot load model {}", path.display()))
}

fn sensing_for(model: &TrainedModel, m: Option<usize>, seed: Option<u64>) -> Result<SensingMatrix> {
    let m = m.unwrap_or(model.measurements);
    let seed = seed.unwrap_or(model.sensing_seed);
    SensingMatrix::gaussian(m, model.n_hidden(), seed).with_context(|| {
        format!(
            "sensing matrix with M = {m} for model code length L = {}",
            model.n_hidden()
        )
    })
}

fn encode(args: EncodeArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let x = read_data(&args.data)?;
    if x.n_sensors() != model.n_visible() {
        bail!(
            "data has {} columns but the model expects N = {} sensors",
            x.n_sensors(),
            model.n_visible()
        );
    }
    let phi = sensing_for(&model, args.m, args.sensing_seed)?;
    let rows = (0..x.n_samples())
        .map(|t| gw_encode(&model, &phi, x.row(t)).map(|m| m.to_payload()))
        .collect::<ssae::Result<Vec<_>>>()?;
    write_data(&args.out, &DataMatrix::from_rows(&rows)?)
}

fn decode(args: DecodeArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let phi = sensing_for(&model, args.m, args.sensing_seed)?;
    let payload = read_data(&args.measurements)?;
    let m = phi.n_measurements();
    if payload.n_sensors() != m + 1 {
        bail!(
            "measurement file has {} columns but the sensing matrix needs M + 1 = {} (M = {m}, L = {})",
            payload.n_sensors(),
            m + 1,
            model.n_hidden()
        );
    }
    let lasso = LassoSettings {
        lambda: args.lambda,
        ..LassoSettings::default()
    };
    let mut rows = Vec::with_capacity(payload.n_samples());
    let mut unconverged = 0;
    for t in 0..payload.n_samples() {
        let meas = Measurement::from_payload(payload.row(t).as_slice().expect("contiguous rows"))?;
        let decoded = bs_decode(&model, &phi, &meas, &lasso)?;
        unconverged += usize::from(!decoded.lasso_converged);
        rows.push(decoded.x_hat.to_vec());
    }
    if unconverged > 0 {
        eprintln!("warning: LASSO hit its sweep limit on {unconverged} frames");
    }
    write_data(&args.out, &DataMatrix::from_rows(&rows)?)
}

fn bench(args: BenchArgs) -> Result<()> {
    let x = read_data(&args.data)?;
    let config = BenchmarkConfig {
        etas: args.etas,
        methods: args.methods,
        noise: NoiseSpec::new(args.noise_var, args.noise_seed)?,
        cs: args.cs.into(),
        seeds: args.seeds,
        n_hidden: args.hidden,
        gamma: args.gamma,
        max_iterations: args.max_iterations,
        ..BenchmarkConfig::default()
    };
    let report = match &args.reference {
        Some(path) => run_benchmark_against(&x, &read_data(path)?, &config)?,
        None => run_benchmark(&x, &config)?,
    };
    let mut sink = create(&args.out)?;
    report.write_csv(&mut sink)?;
    sink.flush()?;
    print!("{}", report.summary());
    for cell in &report.cells {
        if let Err(e) = &cell.rmse {
            eprintln!(
                "warning: {} eta={} cs={} seed={} failed: {e}",
                cell.method, cell.eta, cell.cs_enabled, cell.seed
            );
        }
    }
    Ok(())
}

fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    if grid.trim().eq_ignore_ascii_case("log") {
        return Ok(DEFAULT_GAMMA_GRID.to_vec());
    }
    grid.split(',')
        .map(|g| {
            let g = g.trim();
            g.parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.is_finite())
                .with_context(|| format!("invalid gamma {g:?} in --grid"))
        })
        .collect()
}

fn sweep(args: SweepArgs) -> Result<()> {
    if !(args.eta > 0.0 && args.eta <= 1.0) {
        usage_error(format!("--eta must lie in (0, 1], got {}", args.eta));
    }
    let grid = parse_grid(&args.grid)?;
    let x = read_data(&args.data)?;
    let l = args.hidden.unwrap_or(x.n_sensors());
    let k = k_for_eta(args.eta, l);
    let base = TrainingConfig {
        folds: args.folds,
        seed: args.seed,
        max_iterations: args.max_iterations,
        ..TrainingConfig::new(l, k)
    };
    println!("L = {l}, K = {k}, {} runs per gamma", args.runs);
    let rows = sweep_gamma(&x, &base, &grid, args.runs)?;
    println!("{:>10} {:>12} {:>12}", "gamma", "mean_rmse", "std_rmse");
    for row in &rows {
        let flag = if row.best { "  best" } else { "" };
        println!(
            "{:>10} {:>12.6} {:>12.6}{flag}",
            row.gamma, row.mean_rmse, row.std_rmse
        );
    }
    if let Some(path) = &args.out {
        let mut sink = create(path)?;
        writeln!(sink, "gamma,mean_rmse,std_rmse,runs,best")?;
        for row in &rows {
            writeln!(
                sink,
                "{},{},{},{},{}",
                row.gamma, row.mean_rmse, row.std_rmse, row.runs, row.best
            )?;
        }
        sink.flush()?;
    }
    Ok(())
}
