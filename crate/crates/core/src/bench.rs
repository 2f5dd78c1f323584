//! Reconstruction-error benchmark: the autoencoder against DCT, DFT and PCA
//! over a grid of sparsity ratios, with and without the CS layer.
//!
//! Every cell uses the same seeded 80/20 split, the same shrink, and the same
//! RMSE routine. Test-time noise is added to the held-out inputs only; the
//! error is measured against the held-out readings before injection.

use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::baselines::{fit as fit_sparsifier, Sparsifier, SparsifierKind};
use crate::cs::{lasso_recover, measure_values, min_measurements, LassoSettings, SensingMatrix};
use crate::data::{dataset_std, format_f64, rmse, DataMatrix, NoiseSpec};
use crate::error::{invalid, Error, Result};
use crate::pipeline::TrainedModel;
use crate::trainer::{self, fit, shuffled_rows, GammaSetting, TrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ssae,
    Baseline(SparsifierKind),
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ssae,
        Method::Baseline(SparsifierKind::Dct),
        Method::Baseline(SparsifierKind::Dft),
        Method::Baseline(SparsifierKind::Pca),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ssae => "ssae",
            Method::Baseline(kind) => kind.name(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("ssae") {
            return Ok(Method::Ssae);
        }
        s.parse::<SparsifierKind>()
            .map(Method::Baseline)
            .map_err(|_| {
                invalid(
                    "method",
                    format!("unknown method {s:?}; valid methods are ssae, dct, dft, pca"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsMode {
    Off,
    On,
    Both,
}

impl CsMode {
    pub fn flags(self) -> &'static [bool] {
        match self {
            CsMode::Off => &[false],
            CsMode::On => &[true],
            CsMode::Both => &[false, true],
        }
    }
}

impl FromStr for CsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(CsMode::Off),
            "on" => Ok(CsMode::On),
            "both" => Ok(CsMode::Both),
            other => Err(invalid(
                "cs",
                format!("expected on, off or both, got {other:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub etas: Vec<f64>,
    pub methods: Vec<Method>,
    /// Added to held-out inputs only.
    pub noise: NoiseSpec,
    pub cs: CsMode,
    pub seeds: Vec<u64>,
    /// Autoencoder code length; defaults to the sensor count.
    pub n_hidden: Option<usize>,
    pub gamma: GammaSetting,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub rounding_places: u32,
    pub train_fraction: f64,
    /// Constant in the measurement-count rule.
    pub rho: f64,
    pub lasso: LassoSettings,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            etas: vec![0.13, 0.217, 0.3, 0.5, 0.8, 1.0],
            methods: Method::ALL.to_vec(),
            noise: NoiseSpec::none(),
            cs: CsMode::Off,
            seeds: vec![0],
            n_hidden: None,
            gamma: GammaSetting::Auto,
            max_iterations: 400,
            convergence_tol: 1e-7,
            rounding_places: 3,
            train_fraction: 0.8,
            rho: 1.0,
            lasso: LassoSettings::default(),
        }
    }
}

impl BenchmarkConfig {
    fn validate(&self, n_sensors: usize) -> Result<()> {
        if self.methods.is_empty() {
            return Err(invalid("methods", "need at least one method"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed"));
        }
        if let Some(eta) = self.etas.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(invalid("eta", format!("must lie in (0, 1], got {eta}")));
        }
        if self.etas.is_empty() {
            return Err(invalid("etas", "need at least one sparsity ratio"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid("train_fraction", "must lie in (0, 1)"));
        }
        if self.n_hidden == Some(0) || n_sensors == 0 {
            return Err(invalid("n_hidden", "must be at least 1"));
        }
        Ok(())
    }
}

/// `K = round(η L)`, kept inside `[1, L]`.
pub fn k_for_eta(eta: f64, l: usize) -> usize {
    ((eta * l as f64).round() as usize).clamp(1, l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCell {
    pub method: Method,
    pub eta: f64,
    /// Code length.
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub noise_variance: f64,
    pub cs_enabled: bool,
    pub seed: u64,
    /// Real values sent per frame.
    pub payload: usize,
    pub rmse: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub n_sensors: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub cells: Vec<BenchmarkCell>,
}

pub const REPORT_HEADER: &str = "method,eta,L,K,M,noise_variance,cs_enabled,rmse,seed";

impl BenchmarkReport {
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "{REPORT_HEADER}")?;
        for c in &self.cells {
            let rmse = match &c.rmse {
                Ok(v) => format_f64(*v),
                Err(_) => "failed".to_string(),
            };
            writeln!(
                sink,
                "{},{},{},{},{},{},{},{},{}",
                c.method, c.eta, c.l, c.k, c.m, c.noise_variance, c.cs_enabled, rmse, c.seed
            )?;
        }
        Ok(())
    }

    /// Mean RMSE over seeds for one `(method, η, cs)` cell, `None` if any
    /// seed failed or the cell is absent.
    pub fn mean_rmse(&self, method: Method, eta: f64, cs_enabled: bool) -> Option<f64> {
        let values: Option<Vec<f64>> = self
            .cells
            .iter()
            .filter(|c| c.method == method && c.eta == eta && c.cs_enabled == cs_enabled)
            .map(|c| c.rmse.as_ref().ok().copied())
            .collect();
        values
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Human-readable table of mean RMSE per method and η.
    pub fn summary(&self) -> String {
        let mut methods: Vec<Method> = self.cells.iter().map(|c| c.method).collect();
        methods.dedup();
        methods.sort();
        methods.dedup();
        let mut etas: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !etas.contains(&c.eta) {
                etas.push(c.eta);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "N = {}, train rows = {}, test rows = {}",
            self.n_sensors, self.n_train, self.n_test
        );
        for cs in [false, true] {
            if !self.cells.iter().any(|c| c.cs_enabled == cs) {
                continue;
            }
            let _ = writeln!(
                out,
                "\nmean RMSE ({})",
                if cs { "with CS" } else { "transform only" }
            );
            let _ = write!(out, "{:>8}", "eta");
            for m in &methods {
                let _ = write!(out, "{:>12}", m.name());
            }
            let _ = writeln!(out);
            for &eta in &etas {
                let _ = write!(out, "{eta:>8.3}");
                for &m in &methods {
                    match self.mean_rmse(m, eta, cs) {
                        Some(v) => {
                            let _ = write!(out, "{v:>12.4}");
                        }
                        None => {
                            let _ = write!(out, "{:>12}", "failed");
                        }
                    }
                }
                let _ = writeln!(out);
            }
        }
        let _ = writeln!(out, "\nvalues sent per frame");
        for c in self.cells.iter().filter(|c| c.seed == self.cells[0].seed) {
            let _ = writeln!(
                out,
                "  {:<5} eta={:<6} cs={:<5} L={:<3} K={:<3} M={:<3} -> {}",
                c.method.name(),
                c.eta,
                c.cs_enabled,
                c.l,
                c.k,
                c.m,
                c.payload
            );
        }
        out
    }
}

struct Split {
    train: DataMatrix,
    /// Held-out readings before noise injection.
    truth: DataMatrix,
    /// Held-out readings the encoder sees.
    observed: DataMatrix,
}

fn split(
    x: &DataMatrix,
    reference: &DataMatrix,
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<Split> {
    let t = x.n_samples();
    let order = shuffled_rows(t, seed);
    let n_train = ((t as f64) * config.train_fraction).round() as usize;
    if n_train < 2 || n_train >= t {
        return Err(invalid(
            "data",
            format!("{t} rows are too few for a train/test split"),
        ));
    }
    let train = x.select_rows(&order[..n_train]);
    let truth = reference.select_rows(&order[n_train..]);
    let noise = NoiseSpec::new(
        config.noise.variance,
        config.noise.seed ^ seed.rotate_left(17),
    )?;
    let observed = noise.apply(&x.select_rows(&order[n_train..]));
    Ok(Split {
        train,
        truth,
        observed,
    })
}

/// Runs every `(method, η, cs, seed)` cell. Failures are recorded per cell.
pub fn run_benchmark(x: &DataMatrix, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    run_benchmark_against(x, x, config)
}

/// Like [`run_benchmark`], but scores held-out reconstructions against the
/// matching rows of `reference` instead of `x` itself. With synthetic data
/// this is the noiseless field behind the readings.
pub fn run_benchmark_against(
    x: &DataMatrix,
    reference: &DataMatrix,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    let n = x.n_sensors();
    config.validate(n)?;
    if reference.n_samples() != x.n_samples() || reference.n_sensors() != n {
        return Err(invalid(
            "reference",
            format!(
                "shape {}x{} does not match data {}x{n}",
                reference.n_samples(),
                reference.n_sensors(),
                x.n_samples()
            ),
        ));
    }
    let splits: Vec<Split> = config
        .seeds
        .iter()
        .map(|&seed| split(x, reference, config, seed))
        .collect::<Result<_>>()?;

    let mut units = Vec::new();
    for (si, &seed) in config.seeds.iter().enumerate() {
        for &method in &config.methods {
            for &eta in &config.etas {
                units.push((si, seed, method, eta));
            }
        }
    }
    let cells: Vec<Vec<BenchmarkCell>> = units
        .par_iter()
        .map(|&(si, seed, method, eta)| run_unit(&splits[si], config, seed, method, eta))
        .collect();

    Ok(BenchmarkReport {
        n_sensors: n,
        n_train: splits[0].train.n_samples(),
        n_test: splits[0].truth.n_samples(),
        cells: cells.into_iter().flatten().collect(),
    })
}

/// Encodes and decodes whole test sets for either kind of method.
enum Codec {
    Ssae(TrainedModel),
    Baseline(Sparsifier),
}

impl Codec {
    fn code_len(&self) -> usize {
        match self {
            Codec::Ssae(m) => m.n_hidden(),
            Codec::Baseline(sp) => sp.code_len(),
        }
    }

    fn reconstruct(
        &self,
        x: ArrayView2<'_, f64>,
        k: usize,
        phi: Option<&SensingMatrix>,
        lasso: &LassoSettings,
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.raw_dim());
        for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
            let (code, mean) = match self {
                Codec::Ssae(m) => {
                    let (s, mean) = m.encode_frame(row)?;
                    (s.into_values(), mean)
                }
                Codec::Baseline(sp) => (sp.encode(row, k)?.into_values(), 0.0),
            };
            let code = match phi {
                Some(phi) => {
                    let meas = measure_values(phi, code.view(), mean)?;
                    lasso_recover(phi, meas.y.view(), lasso)?.s
                }
                None => code,
            };
            let x_hat = match self {
                Codec::Ssae(m) => m.decode_code(code.view(), mean)?,
                Codec::Baseline(sp) => sp.decode_values(code.view())?,
            };
            dst.assign(&x_hat);
        }
        Ok(out)
    }
}

fn build_codec(
    train: &DataMatrix,
    config: &BenchmarkConfig,
    method: Method,
    k: usize,
    seed: u64,
) -> Result<Codec> {
    match method {
        Method::Baseline(kind) => Ok(Codec::Baseline(fit_sparsifier(kind, train)?)),
        Method::Ssae => {
            let l = config.n_hidden.unwrap_or(train.n_sensors());
            let tc = TrainingConfig {
                gamma: config.gamma,
                max_iterations: config.max_iterations,
                convergence_tol: config.convergence_tol,
                seed,
                rounding_places: config.rounding_places,
                ..TrainingConfig::new(l, k)
            };
            let sigma = dataset_std(train)?;
            let fitted = fit(train.values(), sigma, &tc, seed)?;
            let m = min_measurements(k, l, config.rho)?;
            Ok(Codec::Ssae(TrainedModel::new(
                fitted.params,
                sigma,
                k,
                config.rounding_places,
                m,
                seed,
            )?))
        }
    }
}

fn run_unit(
    split: &Split,
    config: &BenchmarkConfig,
    seed: u64,
    method: Method,
    eta: f64,
) -> Vec<BenchmarkCell> {
    let n = split.train.n_sensors();
    let l = match method {
        Method::Ssae => config.n_hidden.unwrap_or(n),
        Method::Baseline(_) => n,
    };
    let k = k_for_eta(eta, l);
    let m = min_measurements(k, l, config.rho).unwrap_or(l);
    let extra = usize::from(method == Method::Ssae);
    let codec = build_codec(&split.train, config, method, k, seed);

    config
        .cs
        .flags()
        .iter()
        .map(|&cs_enabled| {
            let rmse = codec.as_ref().map_err(|e| e.to_string()).and_then(|codec| {
                let phi = if cs_enabled {
                    Some(
                        SensingMatrix::gaussian(m, codec.code_len(), seed)
                            .map_err(|e| e.to_string())?,
                    )
                } else {
                    None
                };
                let x_hat = codec
                    .reconstruct(split.observed.values(), k, phi.as_ref(), &config.lasso)
                    .map_err(|e| e.to_string())?;
                rmse(x_hat.view(), split.truth.values()).map_err(|e| e.to_string())
            });
            BenchmarkCell {
                method,
                eta,
                l,
                k,
                m,
                noise_variance: config.noise.variance,
                cs_enabled,
                seed,
                payload: if cs_enabled { m + extra } else { k + extra },
                rmse,
            }
        })
        .collect()
}

/// The log-spaced γ grid used when none is given.
pub const DEFAULT_GAMMA_GRID: [f64; 6] = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub mean_rmse: f64,
    /// Population standard deviation across runs.
    pub std_rmse: f64,
    pub runs: usize,
    pub best: bool,
}

/// Cross-validated RMSE for each γ in `grid`, `runs` seeded trainings each,
/// sorted by mean RMSE with the best row flagged. The sparsity level comes
/// from `base.k_max`; seeds are `base.seed + run`.
pub fn sweep_gamma(
    x: &DataMatrix,
    base: &TrainingConfig,
    grid: &[f64],
    runs: usize,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(invalid("grid", "need at least one gamma value"));
    }
    if runs == 0 {
        return Err(invalid("runs", "need at least one run"));
    }
    let mut jobs = Vec::new();
    for &gamma in grid {
        for run in 0..runs {
            jobs.push((gamma, run));
        }
    }
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(gamma, run)| {
            let config = TrainingConfig {
                gamma: GammaSetting::Fixed(gamma),
                seed: base.seed.wrapping_add(run as u64),
                ..base.clone()
            };
            trainer::train(x, &config).map(|r| r.mean_rmse)
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<SweepRow> = grid
        .iter()
        .enumerate()
        .map(|(i, &gamma)| {
            let s = &scores[i * runs..(i + 1) * runs];
            let mean = s.iter().sum::<f64>() / runs as f64;
            let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / runs as f64;
            SweepRow {
                gamma,
                mean_rmse: mean,
                std_rmse: var.sqrt(),
                runs,
                best: false,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.mean_rmse.total_cmp(&b.mean_rmse));
    rows[0].best = true;
    Ok(rows)
}
