//! Offline training: seeded shuffling, φ-fold cross-validation, and L-BFGS
//! minimization of the autoencoder cost.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::data::{dataset_std, desphere, rmse, sphere, sphere_rows, DataMatrix};
use crate::error::{check_len, invalid, Error, Result};
use crate::lbfgs::{self, LbfgsOptions, Termination};
use crate::ssae::{encode, reconstruct, SsaeObjective, SsaeParams};

/// Linear sparsity-penalty schedule `γ(η) = 0.26 − 0.26 η`.
pub fn gamma_for_eta(eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid("eta", format!("must lie in (0, 1], got {eta}")));
    }
    Ok(0.26 - 0.26 * eta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSetting {
    /// Derived from `η = K / L` by [`gamma_for_eta`].
    Auto,
    Fixed(f64),
}

impl GammaSetting {
    pub fn resolve(self, k: usize, l: usize) -> Result<f64> {
        match self {
            GammaSetting::Auto => gamma_for_eta(k as f64 / l as f64),
            GammaSetting::Fixed(g) if g >= 0.0 && g.is_finite() => Ok(g),
            GammaSetting::Fixed(g) => Err(invalid("gamma", format!("must be >= 0, got {g}"))),
        }
    }
}

impl FromStr for GammaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(GammaSetting::Auto);
        }
        let g: f64 = s
            .parse()
            .map_err(|_| invalid("gamma", format!("expected a number or `auto`, got {s:?}")))?;
        GammaSetting::Fixed(g)
            .resolve(1, 1)
            .map(GammaSetting::Fixed)
    }
}

impl fmt::Display for GammaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSetting::Auto => f.write_str("auto"),
            GammaSetting::Fixed(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// `L`
    pub n_hidden: usize,
    /// `K`
    pub k_max: usize,
    pub gamma: GammaSetting,
    /// `φ`
    pub folds: usize,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub seed: u64,
    pub rounding_places: u32,
}

impl TrainingConfig {
    pub fn new(n_hidden: usize, k_max: usize) -> Self {
        Self {
            n_hidden,
            k_max,
            gamma: GammaSetting::Auto,
            folds: 10,
            max_iterations: 400,
            convergence_tol: 1e-7,
            seed: 0,
            rounding_places: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_hidden < 1 {
            return Err(invalid("n_hidden", "must be at least 1"));
        }
        if self.k_max < 1 || self.k_max > self.n_hidden {
            return Err(invalid(
                "k_max",
                format!(
                    "must satisfy 1 <= K <= L = {}, got {}",
                    self.n_hidden, self.k_max
                ),
            ));
        }
        if self.folds < 2 {
            return Err(invalid(
                "folds",
                format!("need at least 2, got {}", self.folds),
            ));
        }
        if self.max_iterations < 1 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(invalid("convergence_tol", "must be positive"));
        }
        self.gamma.resolve(self.k_max, self.n_hidden).map(|_| ())
    }

    /// `γ` actually used: the fixed value, or `γ(K / L)`.
    pub fn resolved_gamma(&self) -> Result<f64> {
        self.gamma.resolve(self.k_max, self.n_hidden)
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
                line: idx + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Malformed {
                line: idx + 1,
                message: format!("invalid {what} {value:?} for `{key}`"),
            };
            match key {
                "n_hidden" | "hidden" => self.n_hidden = value.parse().map_err(|_| bad("count"))?,
                "k_max" | "k" => self.k_max = value.parse().map_err(|_| bad("count"))?,
                "gamma" => self.gamma = value.parse().map_err(|_| bad("gamma"))?,
                "folds" => self.folds = value.parse().map_err(|_| bad("count"))?,
                "max_iterations" => {
                    self.max_iterations = value.parse().map_err(|_| bad("count"))?
                }
                "convergence_tol" => {
                    self.convergence_tol = value.parse().map_err(|_| bad("number"))?
                }
                "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
                "rounding_places" => {
                    self.rounding_places = value.parse().map_err(|_| bad("count"))?
                }
                _ => {
                    return Err(Error::Malformed {
                        line: idx + 1,
                        message: format!("unknown key `{key}`"),
                    })
                }
            }
        }
        Ok(())
    }

    fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iterations: self.max_iterations,
            tolerance: self.convergence_tol,
            ..LbfgsOptions::default()
        }
    }
}

/// Weights uniform in `±√(6 / (N + L))`, biases zero.
pub fn init_params(n_visible: usize, n_hidden: usize, seed: u64) -> SsaeParams {
    let r = (6.0 / (n_visible + n_hidden) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Uniform::new_inclusive(-r, r).expect("finite bound");
    let mut theta = SsaeParams::zeros(n_visible, n_hidden);
    theta
        .w1
        .iter_mut()
        .for_each(|w| *w = uniform.sample(&mut rng));
    theta
        .w2
        .iter_mut()
        .for_each(|w| *w = uniform.sample(&mut rng));
    theta
}

/// Parameters from one minimization run.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: SsaeParams,
    pub curve: Vec<(usize, f64)>,
    pub termination: Termination,
}

/// Spheres `rows` with `sigma` and minimizes the autoencoder cost from a
/// seeded initialization.
pub fn fit(
    rows: ArrayView2<'_, f64>,
    sigma: f64,
    config: &TrainingConfig,
    init_seed: u64,
) -> Result<FitResult> {
    let theta0 = init_params(rows.ncols(), config.n_hidden, init_seed);
    fit_from(rows, sigma, config, theta0)
}

/// Like [`fit`], starting from `theta0`.
pub fn fit_from(
    rows: ArrayView2<'_, f64>,
    sigma: f64,
    config: &TrainingConfig,
    theta0: SsaeParams,
) -> Result<FitResult> {
    config.validate()?;
    check_len("initial parameters", rows.ncols(), theta0.n_visible())?;
    check_len("initial parameters", config.n_hidden, theta0.n_hidden())?;
    let (d, _) = sphere_rows(rows, sigma)?;
    let gamma = config.resolved_gamma()?;
    let n = rows.ncols();
    let l = config.n_hidden;
    let objective =
        SsaeObjective::new(d.view(), gamma, config.k_max, Some(config.rounding_places))?;
    let eval = |flat: &[f64]| {
        let theta = SsaeParams::from_flat(n, l, flat)?;
        let (c, g) = objective.cost_and_gradient(&theta)?;
        Ok((c, g.to_flat()))
    };

    // The shrink mask makes the cost piecewise smooth, so the curvature
    // history goes stale whenever the mask changes. Restart with a fresh
    // history until a restart no longer improves the cost.
    let mut options = config.lbfgs_options();
    let mut x = theta0.to_flat();
    let mut curve: Vec<(usize, f64)> = Vec::new();
    let mut termination;
    loop {
        let offset = curve.last().map_or(0, |(i, _)| *i);
        let min = lbfgs::minimize(eval, x, &options)?;
        let start = min.curve[0].1;
        let skip = usize::from(!curve.is_empty());
        curve.extend(min.curve.iter().skip(skip).map(|(i, c)| (i + offset, *c)));
        x = min.x;
        termination = min.termination;
        let used = min.iterations;
        let gain = (start - min.cost) / start.abs().max(1e-300);
        if termination == Termination::MaxIterations
            || termination == Termination::Stationary
            || used >= options.max_iterations
            || (skip == 1 && gain < config.convergence_tol)
        {
            break;
        }
        options.max_iterations -= used;
    }
    Ok(FitResult {
        params: SsaeParams::from_flat(n, l, &x)?,
        curve,
        termination,
    })
}

/// Sphere, encode (shrink + round), decode, desphere for a single frame.
pub fn round_trip(
    params: &SsaeParams,
    sigma: f64,
    k: usize,
    rounding_places: u32,
    x: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    let frame = sphere(x, sigma)?;
    let s = encode(params, frame.d.view(), k, Some(rounding_places))?;
    let d_hat = reconstruct(params, &s)?;
    desphere(d_hat.view(), frame.mean, sigma)
}

/// Round-trip reconstructions of every row of `x`.
pub fn reconstruct_rows(
    params: &SsaeParams,
    sigma: f64,
    k: usize,
    rounding_places: u32,
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    check_len("test data columns", params.n_visible(), x.ncols())?;
    let mut out = Array2::zeros(x.raw_dim());
    for (row, mut dst) in x.rows().into_iter().zip(out.rows_mut()) {
        dst.assign(&round_trip(params, sigma, k, rounding_places, row)?);
    }
    Ok(out)
}

/// RMSE in raw sensor units over the full encode/decode path.
pub fn evaluate_rmse(
    params: &SsaeParams,
    sigma: f64,
    x_test: &DataMatrix,
    k: usize,
    rounding_places: u32,
) -> Result<f64> {
    let x_hat = reconstruct_rows(params, sigma, k, rounding_places, x_test.values())?;
    rmse(x_hat.view(), x_test.values())
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
    /// Cost trace of the final fold's minimization.
    pub learning_curve: Vec<(usize, f64)>,
    /// Model trained on the final fold split.
    pub params: SsaeParams,
    pub sigma: f64,
    pub gamma: f64,
    /// Folds whose line search failed before convergence.
    pub warnings: Vec<usize>,
}

/// Seeded row order used by [`train`].
pub fn shuffled_rows(n_rows: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Contiguous fold `i` of `folds` over `n` items.
pub fn fold_range(n: usize, folds: usize, i: usize) -> std::ops::Range<usize> {
    (i * n / folds)..((i + 1) * n / folds)
}

/// Shuffle, split into `φ` folds, train on each complement and score the
/// held-out fold; `σ` is pooled over all of `x`.
pub fn train(x: &DataMatrix, config: &TrainingConfig) -> Result<TrainingReport> {
    config.validate()?;
    let t = x.n_samples();
    if t < config.folds {
        return Err(invalid(
            "data",
            format!("{t} rows cannot be split into {} folds", config.folds),
        ));
    }
    let sigma = dataset_std(x)?;
    let gamma = config.resolved_gamma()?;
    let order = shuffled_rows(t, config.seed);

    let folds: Vec<(f64, FitResult)> = (0..config.folds)
        .into_par_iter()
        .map(|fold| {
            let test = fold_range(t, config.folds, fold);
            let train_idx: Vec<usize> = order[..test.start]
                .iter()
                .chain(&order[test.end..])
                .copied()
                .collect();
            let train_rows = x.select_rows(&train_idx);
            let test_rows = x.select_rows(&order[test]);
            let wrap = |e: Error| Error::Fold {
                fold,
                source: Box::new(e),
            };
            let fitted = fit(
                train_rows.values(),
                sigma,
                config,
                config.seed.wrapping_add(1 + fold as u64),
            )
            .map_err(wrap)?;
            let score = evaluate_rmse(
                &fitted.params,
                sigma,
                &test_rows,
                config.k_max,
                config.rounding_places,
            )
            .map_err(wrap)?;
            Ok((score, fitted))
        })
        .collect::<Result<_>>()?;

    let fold_rmse: Vec<f64> = folds.iter().map(|(r, _)| *r).collect();
    let mean_rmse = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
    let warnings = folds
        .iter()
        .enumerate()
        .filter(|(_, (_, f))| f.termination == Termination::LineSearchFailed)
        .map(|(i, _)| i)
        .collect();
    let (_, last) = folds.into_iter().last().expect("folds >= 2");
    Ok(TrainingReport {
        fold_rmse,
        mean_rmse,
        learning_curve: last.curve,
        params: last.params,
        sigma,
        gamma,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gamma_schedule() {
        assert_eq!(gamma_for_eta(1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(gamma_for_eta(0.5).unwrap(), 0.13, epsilon = 1e-15);
        assert_abs_diff_eq!(gamma_for_eta(5.0 / 23.0).unwrap(), 0.2035, epsilon = 1e-4);
        assert!(gamma_for_eta(0.0).is_err());
        assert!(gamma_for_eta(1.2).is_err());
    }

    #[test]
    fn gamma_setting_parses() {
        assert_eq!("auto".parse::<GammaSetting>().unwrap(), GammaSetting::Auto);
        assert_eq!(
            "0.2".parse::<GammaSetting>().unwrap(),
            GammaSetting::Fixed(0.2)
        );
        assert!("-1".parse::<GammaSetting>().is_err());
        assert!("lots".parse::<GammaSetting>().is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let theta = init_params(23, 25, 4);
        let r = (6.0f64 / 48.0).sqrt();
        assert_abs_diff_eq!(r, 0.3536, epsilon = 1e-4);
        assert!(theta.w1.iter().chain(theta.w2.iter()).all(|w| w.abs() <= r));
        assert!(theta.b1.iter().chain(theta.b2.iter()).all(|b| *b == 0.0));
        assert_eq!(theta, init_params(23, 25, 4));
        assert_ne!(theta, init_params(23, 25, 5));
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::new(5, 6).validate().is_err());
        assert!(TrainingConfig::new(5, 0).validate().is_err());
        let mut c = TrainingConfig::new(5, 2);
        c.folds = 1;
        assert!(c.validate().is_err());
        assert!(TrainingConfig::new(5, 2).validate().is_ok());
    }

    #[test]
    fn config_file_overrides_defaults() {
        let mut c = TrainingConfig::new(23, 5);
        c.apply_config("# comment\nhidden = 25\nk = 4\ngamma = 0.5\nfolds=3\nseed = 9\n\n")
            .unwrap();
        assert_eq!((c.n_hidden, c.k_max, c.folds, c.seed), (25, 4, 3, 9));
        assert_eq!(c.gamma, GammaSetting::Fixed(0.5));
        assert!(c.apply_config("bogus = 1").is_err());
        assert!(c.apply_config("folds = many").is_err());
        assert!(c.apply_config("just words").is_err());
    }

    #[test]
    fn folds_partition_rows() {
        let order = shuffled_rows(103, 1);
        let mut seen = vec![0; 103];
        for i in 0..7 {
            for &row in &order[fold_range(103, 7, i)] {
                seen[row] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(shuffled_rows(103, 1), order);
    }

    #[test]
    fn too_few_rows_for_folds() {
        let x = DataMatrix::new(Array2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64)).unwrap();
        let mut c = TrainingConfig::new(2, 1);
        c.folds = 4;
        assert!(train(&x, &c).is_err());
    }

    #[test]
    fn rmse_of_perfect_reconstruction_is_zero() {
        // a zero-code frame decodes to its own mean when b2 = 0
        let theta = SsaeParams::zeros(3, 3);
        let x = DataMatrix::new(Array2::from_elem((4, 3), 2.5)).unwrap();
        assert_eq!(evaluate_rmse(&theta, 1.0, &x, 1, 3).unwrap(), 0.0);
        let wide = DataMatrix::new(Array2::zeros((2, 4))).unwrap();
        assert!(evaluate_rmse(&theta, 1.0, &wide, 1, 3).is_err());
    }
}
