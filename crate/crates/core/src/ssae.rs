//! The shrinking sparse autoencoder.
//!
//! Encoding is `h = tanh(W1 d + b1)` followed by keeping the `K` largest
//! magnitudes of `h` and rounding them to a fixed number of decimals.
//! Decoding is `d̂ = tanh(W2 s + b2)`. Training minimizes
//!
//! ```text
//! Γ(θ; D) = (1/T) Σ_u ½‖d̂_u − d_u‖² + (γ/T) Σ_u Σ_j log10(1 + h_uj²)
//! ```
//!
//! The shrink mask and the rounding are frozen in the backward pass: the
//! error reaches only the hidden units that survived shrinking.

use std::f64::consts::LN_10;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{check_len, invalid, Error, Result};

/// Network parameters `θ = [W1, W2, b1, b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaeParams {
    /// `L × N`, input to hidden.
    pub w1: Array2<f64>,
    /// Length `L`.
    pub b1: Array1<f64>,
    /// `N × L`, hidden to output.
    pub w2: Array2<f64>,
    /// Length `N`.
    pub b2: Array1<f64>,
}

impl SsaeParams {
    pub fn new(w1: Array2<f64>, b1: Array1<f64>, w2: Array2<f64>, b2: Array1<f64>) -> Result<Self> {
        let (l, n) = w1.dim();
        check_len("b1 length", l, b1.len())?;
        check_len("w2 rows", n, w2.nrows())?;
        check_len("w2 columns", l, w2.ncols())?;
        check_len("b2 length", n, b2.len())?;
        let params = Self { w1, b1, w2, b2 };
        if params.iter_all().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("autoencoder parameters"));
        }
        Ok(params)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((n_hidden, n_visible)),
            b1: Array1::zeros(n_hidden),
            w2: Array2::zeros((n_visible, n_hidden)),
            b2: Array1::zeros(n_visible),
        }
    }

    /// `N`
    pub fn n_visible(&self) -> usize {
        self.w1.ncols()
    }

    /// `L`
    pub fn n_hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_hidden() * self.n_visible() + self.n_hidden() + self.n_visible()
    }

    fn iter_all(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
    }

    /// Packs `[W1 (row-major), b1, W2 (row-major), b2]` into one vector.
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter_all().copied().collect()
    }

    /// Inverse of [`to_flat`](Self::to_flat) for the given shape.
    pub fn from_flat(n_visible: usize, n_hidden: usize, flat: &[f64]) -> Result<Self> {
        let (n, l) = (n_visible, n_hidden);
        check_len("flat parameter vector", 2 * l * n + l + n, flat.len())?;
        let (w1, rest) = flat.split_at(l * n);
        let (b1, rest) = rest.split_at(l);
        let (w2, b2) = rest.split_at(n * l);
        Ok(Self {
            w1: Array2::from_shape_vec((l, n), w1.to_vec()).expect("length checked"),
            b1: Array1::from(b1.to_vec()),
            w2: Array2::from_shape_vec((n, l), w2.to_vec()).expect("length checked"),
            b2: Array1::from(b2.to_vec()),
        })
    }
}

/// Gradient of the cost with respect to each parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaeGradient {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl SsaeGradient {
    /// Same packing as [`SsaeParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

/// A code vector with at most `k_max` nonzero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    values: Array1<f64>,
    k_max: usize,
}

impl SparseCode {
    pub fn new(values: Array1<f64>, k_max: usize) -> Result<Self> {
        let nnz = count_nonzero(values.view());
        if nnz > k_max {
            return Err(invalid(
                "sparse code",
                format!("{nnz} nonzero entries exceed the bound {k_max}"),
            ));
        }
        Ok(Self { values, k_max })
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    /// `K`
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `L`
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nnz(&self) -> usize {
        count_nonzero(self.values.view())
    }
}

fn count_nonzero(v: ArrayView1<'_, f64>) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

/// `h = tanh(W1 d + b1)`.
pub fn hidden_activation(theta: &SsaeParams, d: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_len("hidden_activation input", theta.n_visible(), d.len())?;
    Ok((theta.w1.dot(&d) + &theta.b1).mapv_into(f64::tanh))
}

/// `d̂ = tanh(W2 s + b2)`.
pub fn reconstruct(theta: &SsaeParams, s: &SparseCode) -> Result<Array1<f64>> {
    check_len("reconstruct code", theta.n_hidden(), s.len())?;
    Ok((theta.w2.dot(&s.values) + &theta.b2).mapv_into(f64::tanh))
}

/// Indices of the `k` largest magnitudes; equal magnitudes go to the lower
/// index. Returned in no particular order.
pub(crate) fn top_k_indices(h: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    if k < idx.len() {
        let rank = |a: &usize, b: &usize| h[*b].abs().total_cmp(&h[*a].abs()).then(a.cmp(b));
        idx.select_nth_unstable_by(k, rank);
        idx.truncate(k);
    }
    idx
}

fn check_k(k: usize, l: usize) -> Result<()> {
    if k >= 1 && k <= l {
        Ok(())
    } else {
        Err(invalid("k", format!("must satisfy 1 <= k <= {l}, got {k}")))
    }
}

/// Keeps the `k` largest-magnitude entries of `h` and zeroes the rest.
pub fn shrink(h: ArrayView1<'_, f64>, k: usize) -> Result<SparseCode> {
    check_k(k, h.len())?;
    let mut s = Array1::zeros(h.len());
    for i in top_k_indices(h, k) {
        s[i] = h[i];
    }
    SparseCode::new(s, k)
}

/// Rounds to `places` decimals, half away from zero.
pub fn round_code(s: &SparseCode, places: u32) -> SparseCode {
    SparseCode {
        values: s.values.mapv(|v| round_places(v, places)),
        k_max: s.k_max,
    }
}

pub(crate) fn round_places(v: f64, places: u32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(places as i32);
    let r = (v * scale).round() / scale;
    // fold -0.0 into 0.0
    r + 0.0
}

/// Encodes one sphered frame: activation, shrink, optional rounding.
pub fn encode(
    theta: &SsaeParams,
    d: ArrayView1<'_, f64>,
    k: usize,
    rounding: Option<u32>,
) -> Result<SparseCode> {
    let h = hidden_activation(theta, d)?;
    let s = shrink(h.view(), k)?;
    Ok(match rounding {
        Some(places) => round_code(&s, places),
        None => s,
    })
}

/// The training objective over a fixed matrix of sphered frames.
#[derive(Debug, Clone, Copy)]
pub struct SsaeObjective<'a> {
    pub data: ArrayView2<'a, f64>,
    pub gamma: f64,
    pub k: usize,
    pub rounding: Option<u32>,
}

struct Forward {
    h: Array2<f64>,
    mask: Array2<f64>,
    s: Array2<f64>,
    d_hat: Array2<f64>,
}

impl<'a> SsaeObjective<'a> {
    pub fn new(
        data: ArrayView2<'a, f64>,
        gamma: f64,
        k: usize,
        rounding: Option<u32>,
    ) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Empty("training matrix"));
        }
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(invalid(
                "gamma",
                format!("must be finite and >= 0, got {gamma}"),
            ));
        }
        Ok(Self {
            data,
            gamma,
            k,
            rounding,
        })
    }

    fn check(&self, theta: &SsaeParams) -> Result<()> {
        check_len(
            "training matrix columns",
            theta.n_visible(),
            self.data.ncols(),
        )?;
        check_k(self.k, theta.n_hidden())
    }

    fn forward(&self, theta: &SsaeParams) -> Forward {
        let mut h = self.data.dot(&theta.w1.t());
        h += &theta.b1;
        h.mapv_inplace(f64::tanh);

        let mut mask = Array2::zeros(h.raw_dim());
        let mut s = Array2::zeros(h.raw_dim());
        for ((h_row, mut m_row), mut s_row) in
            h.rows().into_iter().zip(mask.rows_mut()).zip(s.rows_mut())
        {
            for j in top_k_indices(h_row, self.k) {
                m_row[j] = 1.0;
                s_row[j] = match self.rounding {
                    Some(places) => round_places(h_row[j], places),
                    None => h_row[j],
                };
            }
        }

        let mut d_hat = s.dot(&theta.w2.t());
        d_hat += &theta.b2;
        d_hat.mapv_inplace(f64::tanh);
        Forward { h, mask, s, d_hat }
    }

    fn cost_from(&self, fwd: &Forward) -> f64 {
        let t = self.data.nrows() as f64;
        let recon: f64 = fwd
            .d_hat
            .iter()
            .zip(self.data.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            * 0.5;
        let penalty: f64 = fwd.h.iter().map(|h| (1.0 + h * h).log10()).sum();
        (recon + self.gamma * penalty) / t
    }

    pub fn cost(&self, theta: &SsaeParams) -> Result<f64> {
        self.check(theta)?;
        Ok(self.cost_from(&self.forward(theta)))
    }

    pub fn cost_and_gradient(&self, theta: &SsaeParams) -> Result<(f64, SsaeGradient)> {
        self.check(theta)?;
        let fwd = self.forward(theta);
        let cost = self.cost_from(&fwd);
        let inv_t = 1.0 / self.data.nrows() as f64;

        // output layer error: (d̂ − d) ⊙ (1 − d̂²)
        let mut delta_out = &fwd.d_hat - &self.data;
        Zip::from(&mut delta_out)
            .and(&fwd.d_hat)
            .for_each(|e, &y| *e *= 1.0 - y * y);

        let grad_w2 = delta_out.t().dot(&fwd.s) * inv_t;
        let grad_b2 = delta_out.sum_axis(Axis(0)) * inv_t;

        // straight-through on kept units, plus the log penalty on every unit
        let mut delta_hidden = delta_out.dot(&theta.w2);
        let pen_scale = 2.0 * self.gamma / LN_10;
        Zip::from(&mut delta_hidden)
            .and(&fwd.mask)
            .and(&fwd.h)
            .for_each(|e, &m, &h| {
                *e = (*e * m + pen_scale * h / (1.0 + h * h)) * (1.0 - h * h);
            });

        let grad_w1 = delta_hidden.t().dot(&self.data) * inv_t;
        let grad_b1 = delta_hidden.sum_axis(Axis(0)) * inv_t;

        Ok((
            cost,
            SsaeGradient {
                w1: grad_w1,
                b1: grad_b1,
                w2: grad_w2,
                b2: grad_b2,
            },
        ))
    }
}

/// Training cost with rounding to `rounding` decimals in the forward pass.
pub fn cost(
    theta: &SsaeParams,
    data: ArrayView2<'_, f64>,
    gamma: f64,
    k: usize,
    rounding: Option<u32>,
) -> Result<f64> {
    SsaeObjective::new(data, gamma, k, rounding)?.cost(theta)
}

/// Analytic gradient of [`cost`], averaged over the rows of `data`.
pub fn gradient(
    theta: &SsaeParams,
    data: ArrayView2<'_, f64>,
    gamma: f64,
    k: usize,
    rounding: Option<u32>,
) -> Result<SsaeGradient> {
    SsaeObjective::new(data, gamma, k, rounding)?
        .cost_and_gradient(theta)
        .map(|(_, g)| g)
}
