//! Compressive sensing of sparse codes: Gaussian sensing matrices, the
//! measurement-count rule, and LASSO recovery by cyclic coordinate descent.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_len, invalid, Result};
use crate::ssae::SparseCode;

/// Smallest `M` with `M >= ρ K log2(L / K)`, never less than 1.
pub fn min_measurements(k: usize, l: usize, rho: f64) -> Result<usize> {
    if k < 1 || k > l {
        return Err(invalid(
            "k",
            format!("must satisfy 1 <= k <= l = {l}, got {k}"),
        ));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(invalid("rho", format!("must be positive, got {rho}")));
    }
    let bound = rho * k as f64 * (l as f64 / k as f64).log2();
    Ok((bound.ceil() as usize).max(1))
}

/// Flat `M × L` measurement matrix, regenerated from `(M, L, seed)` on both
/// ends of the link.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    phi: Array2<f64>,
    seed: u64,
}

impl SensingMatrix {
    /// Entries i.i.d. `N(0, 1/M)`.
    pub fn gaussian(m: usize, l: usize, seed: u64) -> Result<Self> {
        if m < 1 || m > l {
            return Err(invalid(
                "m",
                format!("must satisfy 1 <= m <= l = {l}, got {m}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (1.0 / m as f64).sqrt()).expect("positive std");
        let phi = Array2::from_shape_simple_fn((m, l), || normal.sample(&mut rng));
        Ok(Self { phi, seed })
    }

    /// `L × L` identity; turns the CS layer into a pass-through.
    pub fn identity(l: usize) -> Self {
        Self {
            phi: Array2::eye(l),
            seed: 0,
        }
    }

    pub fn from_matrix(phi: Array2<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.nrows() > phi.ncols() {
            return Err(invalid("phi", "need 1 <= rows <= columns"));
        }
        Ok(Self { phi, seed: 0 })
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.phi.view()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `M`
    pub fn n_measurements(&self) -> usize {
        self.phi.nrows()
    }

    /// `L`
    pub fn code_len(&self) -> usize {
        self.phi.ncols()
    }
}

/// `y` plus the frame mean: the `M + 1` values sent per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: Array1<f64>,
    pub frame_mean: f64,
}

impl Measurement {
    /// Number of real values on the wire.
    pub fn payload_len(&self) -> usize {
        self.y.len() + 1
    }

    pub fn to_payload(&self) -> Vec<f64> {
        self.y.iter().copied().chain([self.frame_mean]).collect()
    }

    pub fn from_payload(values: &[f64]) -> Result<Self> {
        let (mean, y) = values
            .split_last()
            .ok_or_else(|| invalid("payload", "need at least one value"))?;
        Ok(Self {
            y: Array1::from(y.to_vec()),
            frame_mean: *mean,
        })
    }
}

/// `y = Φ s`.
pub fn measure(phi: &SensingMatrix, s: &SparseCode, frame_mean: f64) -> Result<Measurement> {
    measure_values(phi, s.values(), frame_mean)
}

pub(crate) fn measure_values(
    phi: &SensingMatrix,
    s: ArrayView1<'_, f64>,
    frame_mean: f64,
) -> Result<Measurement> {
    check_len("measure code length", phi.code_len(), s.len())?;
    Ok(Measurement {
        y: phi.phi.dot(&s),
        frame_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoSettings {
    /// `None` picks `1e-4 · ‖Φᵀy‖∞` per call.
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            lambda: None,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Relative weight of the default penalty against `‖Φᵀy‖∞`.
pub const DEFAULT_LAMBDA_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub s: Array1<f64>,
    pub lambda: f64,
    pub sweeps: usize,
    /// False when `max_iter` sweeps ran out before the update fell under `tol`.
    pub converged: bool,
}

/// `½‖y − Φs‖² + λ‖s‖₁`
pub fn lasso_objective(
    phi: &SensingMatrix,
    y: ArrayView1<'_, f64>,
    s: ArrayView1<'_, f64>,
    lambda: f64,
) -> f64 {
    let r = &y - &phi.phi.dot(&s);
    0.5 * r.dot(&r) + lambda * s.iter().map(|v| v.abs()).sum::<f64>()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on the penalized LASSO problem.
///
/// Coordinates whose column of `Φ` is all zero stay at 0. Stops when the
/// largest coordinate change in a sweep is below `tol`. The solve is
/// warm-started along a halving sequence of penalties from `‖Φᵀy‖∞`.
pub fn lasso_recover(
    phi: &SensingMatrix,
    y: ArrayView1<'_, f64>,
    settings: &LassoSettings,
) -> Result<LassoSolution> {
    check_len("lasso measurement length", phi.n_measurements(), y.len())?;
    let a = &phi.phi;
    let lambda = match settings.lambda {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return Err(invalid("lambda", format!("must be positive, got {l}"))),
        None => {
            let corr = a.t().dot(&y);
            DEFAULT_LAMBDA_RATIO * corr.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        }
    };
    let l = phi.code_len();
    let mut s = Array1::<f64>::zeros(l);
    if lambda == 0.0 {
        // y = 0 (or orthogonal to every column): zero is optimal
        return Ok(LassoSolution {
            s,
            lambda,
            sweeps: 0,
            converged: true,
        });
    }

    let col_sq: Vec<f64> = a.columns().into_iter().map(|c| c.dot(&c)).collect();
    let mut residual = y.to_owned();
    let lambda_max = a.t().dot(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // Warm-started path from λ_max down to λ; intermediate stages are
    // solved loosely and share the sweep budget with the final one.
    let mut sweeps = 0;
    let mut stage = lambda_max * PATH_RATIO;
    while stage > lambda && sweeps < settings.max_iter {
        let (used, _) = descend(
            a.view(),
            &col_sq,
            &mut residual,
            &mut s,
            stage,
            PATH_TOL.max(settings.tol),
            settings.max_iter - sweeps,
        );
        sweeps += used;
        stage *= PATH_RATIO;
    }
    let (used, converged) = descend(
        a.view(),
        &col_sq,
        &mut residual,
        &mut s,
        lambda,
        settings.tol,
        settings.max_iter - sweeps,
    );
    Ok(LassoSolution {
        s,
        lambda,
        sweeps: sweeps + used,
        converged,
    })
}

const PATH_RATIO: f64 = 0.5;
const PATH_TOL: f64 = 1e-6;

/// Cyclic sweeps at a fixed `lambda`, at most `budget` of them. Returns the
/// sweep count and whether the largest update fell below `tol`.
fn descend(
    a: ArrayView2<'_, f64>,
    col_sq: &[f64],
    residual: &mut Array1<f64>,
    s: &mut Array1<f64>,
    lambda: f64,
    tol: f64,
    budget: usize,
) -> (usize, bool) {
    for sweep in 1..=budget {
        let mut max_change = 0.0f64;
        for (j, &sq) in col_sq.iter().enumerate() {
            if sq == 0.0 {
                continue;
            }
            let col = a.column(j);
            let old = s[j];
            let rho = col.dot(&*residual) + sq * old;
            let new = soft_threshold(rho, lambda) / sq;
            if new != old {
                residual.scaled_add(old - new, &col);
                s[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < tol {
            return (sweep, true);
        }
    }
    (budget, false)
}
