//! Conventional orthonormal sparsifying transforms used as comparison
//! points: DCT-II, a real-packed DFT, and PCA. Each is a square `N × N`
//! orthonormal basis followed by the same top-`K` shrink as the autoencoder.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::data::DataMatrix;
use crate::error::{check_len, invalid, Error, Result};
use crate::ssae::{shrink, SparseCode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SparsifierKind {
    Dct,
    Dft,
    Pca,
}

impl SparsifierKind {
    pub const ALL: [SparsifierKind; 3] = [Self::Dct, Self::Dft, Self::Pca];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dct => "dct",
            Self::Dft => "dft",
            Self::Pca => "pca",
        }
    }
}

impl fmt::Display for SparsifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SparsifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dct" => Ok(Self::Dct),
            "dft" => Ok(Self::Dft),
            "pca" => Ok(Self::Pca),
            other => Err(invalid("sparsifier", format!("unknown kind {other:?}"))),
        }
    }
}

/// A fitted transform. Rows of `basis` are the orthonormal analysis vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Sparsifier {
    kind: SparsifierKind,
    basis: Array2<f64>,
    mean: Array1<f64>,
    /// PCA only, descending.
    eigenvalues: Option<Array1<f64>>,
}

impl Sparsifier {
    pub fn kind(&self) -> SparsifierKind {
        self.kind
    }

    /// `N × N` matrix whose rows are the basis vectors.
    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Subtracted before the transform; zero for DCT and DFT.
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn eigenvalues(&self) -> Option<&Array1<f64>> {
        self.eigenvalues.as_ref()
    }

    pub fn code_len(&self) -> usize {
        self.basis.nrows()
    }

    /// True for transforms that keep no training statistics.
    pub fn is_stateless(&self) -> bool {
        self.eigenvalues.is_none()
    }

    /// Full coefficient vector, before truncation.
    pub fn transform(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("sparsifier input", self.code_len(), x.len())?;
        Ok(self.basis.dot(&(&x - &self.mean)))
    }

    /// Transform, then keep the `k` largest-magnitude coefficients.
    pub fn encode(&self, x: ArrayView1<'_, f64>, k: usize) -> Result<SparseCode> {
        let coeffs = self.transform(x)?;
        shrink(coeffs.view(), k)
    }

    pub fn decode(&self, s: &SparseCode) -> Result<Array1<f64>> {
        self.decode_values(s.values())
    }

    pub(crate) fn decode_values(&self, s: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_len("sparsifier code", self.code_len(), s.len())?;
        Ok(self.basis.t().dot(&s) + &self.mean)
    }
}

/// Builds the transform for `x`'s sensor count. Only PCA looks at the data.
pub fn fit(kind: SparsifierKind, x: &DataMatrix) -> Result<Sparsifier> {
    let n = x.n_sensors();
    match kind {
        SparsifierKind::Dct => Ok(stateless(kind, dct_basis(n))),
        SparsifierKind::Dft => Ok(stateless(kind, dft_basis(n))),
        SparsifierKind::Pca => fit_pca(x),
    }
}

fn stateless(kind: SparsifierKind, basis: Array2<f64>) -> Sparsifier {
    let n = basis.nrows();
    Sparsifier {
        kind,
        basis,
        mean: Array1::zeros(n),
        eigenvalues: None,
    }
}

/// Orthonormal DCT-II: row `k` is `α_k cos(π (i + ½) k / N)`.
pub fn dct_basis(n: usize) -> Array2<f64> {
    let nf = n as f64;
    Array2::from_shape_fn((n, n), |(k, i)| {
        let alpha = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        alpha * (PI * (i as f64 + 0.5) * k as f64 / nf).cos()
    })
}

/// Real-valued orthonormal DFT.
///
/// Rows: DC, then `cos`/`sin` pairs for each positive frequency below
/// Nyquist, then the Nyquist row when `N` is even. A complex frequency
/// therefore takes two real slots.
pub fn dft_basis(n: usize) -> Array2<f64> {
    let nf = n as f64;
    let mut basis = Array2::zeros((n, n));
    basis.row_mut(0).fill((1.0 / nf).sqrt());
    let pairs = (n - 1) / 2;
    let scale = (2.0 / nf).sqrt();
    for freq in 1..=pairs {
        for i in 0..n {
            let angle = 2.0 * PI * (freq * i) as f64 / nf;
            basis[[2 * freq - 1, i]] = scale * angle.cos();
            basis[[2 * freq, i]] = -scale * angle.sin();
        }
    }
    if n.is_multiple_of(2) && n > 1 {
        for i in 0..n {
            basis[[n - 1, i]] = if i % 2 == 0 { 1.0 } else { -1.0 } / nf.sqrt();
        }
    }
    basis
}

fn fit_pca(x: &DataMatrix) -> Result<Sparsifier> {
    let (t, n) = (x.n_samples(), x.n_sensors());
    if t < n {
        return Err(invalid(
            "data",
            format!("PCA needs at least N = {n} rows, got {t}"),
        ));
    }
    let values = x.values();
    let mean = values.mean_axis(Axis(0)).expect("non-empty");
    let centered = &values - &mean;
    let cov = centered.t().dot(&centered) / t as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut basis = Array2::zeros((n, n));
    let mut eigenvalues = Array1::zeros(n);
    for (row, &k) in order.iter().enumerate() {
        eigenvalues[row] = eig.eigenvalues[k];
        let v = eig.eigenvectors.column(k);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..n)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[[row, i]] = sign * v[i];
        }
    }
    Ok(Sparsifier {
        kind: SparsifierKind::Pca,
        basis,
        mean,
        eigenvalues: Some(eigenvalues),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn gram_deviation(basis: &Array2<f64>) -> f64 {
        let gram = basis.dot(&basis.t());
        let n = basis.nrows();
        (&gram - &Array2::<f64>::eye(n))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn fixed_bases_are_orthonormal() {
        for n in [1, 2, 3, 8, 23, 24] {
            assert!(gram_deviation(&dct_basis(n)) < 1e-12, "dct {n}");
            assert!(gram_deviation(&dft_basis(n)) < 1e-12, "dft {n}");
        }
    }

    #[test]
    fn parses_kind_names() {
        assert_eq!(
            "PCA".parse::<SparsifierKind>().unwrap(),
            SparsifierKind::Pca
        );
        assert!("dl".parse::<SparsifierKind>().is_err());
    }

    #[test]
    fn dct_keeps_only_dc_for_constant_input() {
        let x = DataMatrix::new(Array2::zeros((1, 6))).unwrap();
        let sp = fit(SparsifierKind::Dct, &x).unwrap();
        assert!(sp.is_stateless());
        let v = Array1::from_elem(6, 3.25);
        let code = sp.encode(v.view(), 1).unwrap();
        assert!(code.values()[0] != 0.0);
        assert_abs_diff_eq!(sp.decode(&code).unwrap(), v, epsilon = 1e-12);
    }

    #[test]
    fn dct_single_frequency_survives_truncation() {
        let n = 10;
        let basis = dct_basis(n);
        let x = basis.row(3).to_owned() * 2.5;
        let sp = fit(
            SparsifierKind::Dct,
            &DataMatrix::new(Array2::zeros((1, n))).unwrap(),
        )
        .unwrap();
        let code = sp.encode(x.view(), 1).unwrap();
        assert_eq!(code.nnz(), 1);
        assert_abs_diff_eq!(sp.decode(&code).unwrap(), x, epsilon = 1e-12);
    }

    #[test]
    fn zero_code_decodes_to_mean() {
        let x = DataMatrix::new(array![[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]]).unwrap();
        let pca = fit(SparsifierKind::Pca, &x).unwrap();
        let zero = SparseCode::new(Array1::zeros(2), 1).unwrap();
        assert_abs_diff_eq!(
            pca.decode(&zero).unwrap(),
            array![3.0, 3.0],
            epsilon = 1e-12
        );
        let dct = fit(SparsifierKind::Dct, &x).unwrap();
        assert_eq!(dct.decode(&zero).unwrap(), array![0.0, 0.0]);
    }

    #[test]
    fn pca_needs_enough_rows() {
        let x = DataMatrix::new(Array2::ones((2, 3))).unwrap();
        assert!(fit(SparsifierKind::Pca, &x).is_err());
    }

    #[test]
    fn pca_on_planar_data_has_two_nonzero_eigenvalues() {
        let n = 6;
        let u = Array1::from_shape_fn(n, |i| (i as f64 * 0.4).cos());
        let v = Array1::from_shape_fn(n, |i| (i as f64).sqrt() - 1.0);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|t| {
                let a = (t as f64 * 0.37).sin() * 3.0;
                let b = (t as f64 * 0.11).cos() - 0.5;
                (&u * a + &v * b).to_vec()
            })
            .collect();
        let pca = fit(SparsifierKind::Pca, &DataMatrix::from_rows(&rows).unwrap()).unwrap();
        let eig = pca.eigenvalues().unwrap();
        assert!(eig[1] > 1e-3);
        assert!(eig.iter().skip(2).all(|e| e.abs() <= 1e-10), "{eig}");
        assert!(gram_deviation(pca.basis()) < 1e-10);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let sp = stateless(SparsifierKind::Dct, dct_basis(4));
        assert!(sp.encode(array![1.0, 2.0].view(), 1).is_err());
        let code = SparseCode::new(array![1.0], 1).unwrap();
        assert!(sp.decode(&code).is_err());
    }
}
