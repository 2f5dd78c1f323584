//! Sensor readings: CSV ingestion, a seeded correlated-field generator, and
//! the per-frame sphering transform that maps raw readings into `[-1, 1]`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Samples per simulated day (one reading every two minutes).
pub const DIURNAL_PERIOD: f64 = 720.0;

/// Lag-one autocorrelation of the latent spatial field.
const FIELD_PERSISTENCE: f64 = 0.98;

/// `T × N` readings, rows are time instants and columns are sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Empty("data matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("data matrix"));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let mut values = Array2::zeros((rows.len(), n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::CsvRow {
                    row: i + 1,
                    message: format!("expected {n} fields, found {}", row.len()),
                });
            }
            values.row_mut(i).assign(&ArrayView1::from(row.as_slice()));
        }
        Self::new(values)
    }

    /// Number of time instants.
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    /// Number of sensors.
    pub fn n_sensors(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataMatrix {
        DataMatrix {
            values: self.values.select(Axis(0), rows),
        }
    }
}

/// Additive i.i.d. Gaussian sensor noise `z ~ N(0, variance · I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> Result<Self> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(invalid(
                "variance",
                format!("must be finite and >= 0, got {variance}"),
            ));
        }
        Ok(Self { variance, seed })
    }

    pub fn none() -> Self {
        Self {
            variance: 0.0,
            seed: 0,
        }
    }

    /// Returns `x + z` with a fresh noise draw for every entry.
    pub fn apply(&self, x: &DataMatrix) -> DataMatrix {
        if self.variance == 0.0 {
            return x.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, self.variance.sqrt()).expect("variance checked");
        let mut values = x.values.clone();
        values
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
        DataMatrix { values }
    }
}

/// Parses a comma-separated table of numbers.
///
/// A first row made entirely of non-numeric cells is treated as a header.
/// Row and column numbers in errors are 1-based and count physical records.
pub fn load_csv<R: Read>(source: R) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::CsvRow {
            row,
            message: e.to_string(),
        })?;
        if idx == 0 && record.iter().all(|cell| cell.parse::<f64>().is_err()) {
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::CsvRow {
                row,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let parsed = record
            .iter()
            .enumerate()
            .map(|(col, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::CsvCell {
                    row,
                    col: col + 1,
                    cell: cell.to_string(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv source has no data rows"));
    }
    DataMatrix::from_rows(&rows)
}

/// Writes the matrix with 17 significant digits per value, so that
/// `load_csv(write_csv(x)) == x` bit for bit.
pub fn write_csv<W: Write>(x: &DataMatrix, mut sink: W) -> Result<()> {
    write_rows(x.values.view(), &mut sink)
}

pub(crate) fn write_rows<W: Write>(values: ArrayView2<'_, f64>, sink: &mut W) -> Result<()> {
    let mut line = String::new();
    for row in values.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format_f64(*v));
        }
        line.push('\n');
        sink.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Noisy readings together with the noiseless field they were drawn around.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub clean: DataMatrix,
    pub noisy: DataMatrix,
}

/// Generates `T × N` readings from a smooth, spatially correlated field plus
/// white noise. See [`generate_synthetic_parts`] for the field model.
pub fn generate_synthetic(
    n_sensors: usize,
    n_samples: usize,
    correlation_length: f64,
    base_signal_amplitude: f64,
    noise: NoiseSpec,
) -> Result<DataMatrix> {
    generate_synthetic_parts(
        n_sensors,
        n_samples,
        correlation_length,
        base_signal_amplitude,
        noise,
    )
    .map(|parts| parts.noisy)
}

/// Sensors sit at positions `1..=N` on a line. The noiseless reading is
///
/// ```text
/// x*[t, i] = A f[t, i] + (A / 2) sin(2πt / 720)
/// ```
///
/// where `f[t]` has unit marginal variance, spatial covariance
/// `exp(-(i - j)² / (2ℓ²))` and AR(1) temporal persistence. `ℓ = ∞` yields
/// identical columns. Noise is drawn from `noise` on a separate stream of the
/// same seed.
pub fn generate_synthetic_parts(
    n_sensors: usize,
    n_samples: usize,
    correlation_length: f64,
    base_signal_amplitude: f64,
    noise: NoiseSpec,
) -> Result<SyntheticData> {
    if n_sensors < 2 {
        return Err(invalid(
            "n_sensors",
            "spatial correlation needs at least 2 sensors",
        ));
    }
    if n_samples < 1 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    if !(correlation_length > 0.0) {
        return Err(invalid("correlation_length", "must be positive"));
    }
    if !base_signal_amplitude.is_finite() {
        return Err(Error::NonFinite("base_signal_amplitude"));
    }
    let noise = NoiseSpec::new(noise.variance, noise.seed)?;

    let mixing = spatial_mixing(n_sensors, correlation_length);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let innovation = (1.0 - FIELD_PERSISTENCE * FIELD_PERSISTENCE).sqrt();

    let mut latent = Array1::<f64>::zeros(n_sensors);
    latent
        .iter_mut()
        .for_each(|g| *g = StandardNormal.sample(&mut rng));
    let mut clean = Array2::<f64>::zeros((n_samples, n_sensors));
    for (t, mut row) in clean.rows_mut().into_iter().enumerate() {
        if t > 0 {
            latent.iter_mut().for_each(|g| {
                let e: f64 = StandardNormal.sample(&mut rng);
                *g = FIELD_PERSISTENCE * *g + innovation * e;
            });
        }
        let trend = (2.0 * std::f64::consts::PI * t as f64 / DIURNAL_PERIOD).sin();
        let field = mixing.dot(&latent);
        row.assign(&((field + 0.5 * trend) * base_signal_amplitude));
    }
    let clean = DataMatrix::new(clean)?;
    let noisy = noise.apply(&clean);
    Ok(SyntheticData { clean, noisy })
}

/// Symmetric square root of the squared-exponential covariance matrix.
fn spatial_mixing(n: usize, correlation_length: f64) -> Array2<f64> {
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let dist = i as f64 - j as f64;
        (-(dist * dist) / (2.0 * correlation_length * correlation_length)).exp()
    });
    let eig = SymmetricEigen::new(cov);
    let max_eig = eig.eigenvalues.max();
    let floor = 1e-10 * max_eig;
    let mut root = Array2::<f64>::zeros((n, n));
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= floor {
            continue;
        }
        let scale = lambda.sqrt();
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                root[[i, j]] += scale * v[i] * v[j];
            }
        }
    }
    root
}

/// A sphered frame: deviations from the frame mean scaled into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpheredFrame {
    pub d: Array1<f64>,
    pub mean: f64,
}

/// `d_i = clamp(x_i - mean(x), -3σ, 3σ) / 3σ`.
pub fn sphere(x: ArrayView1<'_, f64>, sigma: f64) -> Result<SpheredFrame> {
    check_sigma(sigma)?;
    if x.is_empty() {
        return Err(Error::Empty("frame"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("frame"));
    }
    let mean = x.sum() / x.len() as f64;
    let bound = 3.0 * sigma;
    let d = x.mapv(|v| (v - mean).clamp(-bound, bound) / bound);
    Ok(SpheredFrame { d, mean })
}

/// Inverse of [`sphere`] inside the clip region: `x̂_i = 3σ d̂_i + mean`.
pub fn desphere(d_hat: ArrayView1<'_, f64>, mean: f64, sigma: f64) -> Result<Array1<f64>> {
    check_sigma(sigma)?;
    let bound = 3.0 * sigma;
    Ok(d_hat.mapv(|v| bound * v + mean))
}

/// Spheres every row of `x`, returning the `T × N` matrix of `d` vectors and
/// the per-row means.
pub fn sphere_rows(x: ArrayView2<'_, f64>, sigma: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    let mut d = Array2::zeros(x.raw_dim());
    let mut means = Array1::zeros(x.nrows());
    for (t, row) in x.rows().into_iter().enumerate() {
        let frame = sphere(row, sigma)?;
        d.row_mut(t).assign(&frame.d);
        means[t] = frame.mean;
    }
    Ok((d, means))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            "sigma",
            format!("must be positive and finite, got {sigma}"),
        ))
    }
}

/// Population standard deviation pooled over every entry of `x`.
pub fn dataset_std(x: &DataMatrix) -> Result<f64> {
    let n = x.values.len();
    if n < 2 {
        return Err(invalid(
            "data",
            "need at least two entries to measure spread",
        ));
    }
    let mean = x.values.sum() / n as f64;
    let var = x.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std > 0.0 {
        Ok(std)
    } else {
        Err(invalid("data", "constant matrix has zero spread"))
    }
}

/// `sqrt(mean((a - b)²))` over all entries.
pub fn rmse(estimate: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>) -> Result<f64> {
    crate::error::check_len("rmse rows", truth.nrows(), estimate.nrows())?;
    crate::error::check_len("rmse columns", truth.ncols(), estimate.ncols())?;
    if truth.is_empty() {
        return Err(Error::Empty("rmse input"));
    }
    let sq: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sq / truth.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn parses_plain_matrix() {
        let x = load_csv("1.0,2.0\n3.0,4.0".as_bytes()).unwrap();
        assert_eq!(x.values(), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn skips_header_row() {
        let x = load_csv("s1,s2\n1,2\n".as_bytes()).unwrap();
        assert_eq!(x.n_samples(), 1);
        assert_eq!(x.n_sensors(), 2);
    }

    #[test]
    fn reports_bad_cell_coordinates() {
        match load_csv("a,2".as_bytes()) {
            Err(Error::CsvCell { row: 1, col: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match load_csv("1,2\n3,x\n".as_bytes()) {
            Err(Error::CsvCell { row: 2, col: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_ragged_row() {
        match load_csv("1,2\n3\n".as_bytes()) {
            Err(Error::CsvRow { row: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_source_is_an_error() {
        assert!(matches!(load_csv("".as_bytes()), Err(Error::Empty(_))));
        assert!(matches!(load_csv("a,b\n".as_bytes()), Err(Error::Empty(_))));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let x = generate_synthetic(23, 1440, 4.0, 10.0, NoiseSpec::new(0.25, 3).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_csv(&x, &mut buf).unwrap();
        let y = load_csv(buf.as_slice()).unwrap();
        assert_eq!(y.n_samples(), 1440);
        assert_eq!(y.n_sensors(), 23);
        assert!(x
            .values()
            .iter()
            .zip(y.values().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn generator_rejects_single_sensor() {
        assert!(generate_synthetic(1, 10, 2.0, 1.0, NoiseSpec::none()).is_err());
    }

    #[test]
    fn infinite_correlation_length_gives_identical_columns() {
        let x = generate_synthetic(6, 200, f64::INFINITY, 5.0, NoiseSpec::none()).unwrap();
        for row in x.values().rows() {
            for v in row.iter() {
                assert_abs_diff_eq!(*v, row[0], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn generator_is_seed_deterministic() {
        let noise = NoiseSpec::new(0.5, 42).unwrap();
        let a = generate_synthetic(8, 300, 3.0, 2.0, noise).unwrap();
        let b = generate_synthetic(8, 300, 3.0, 2.0, noise).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(8, 300, 3.0, 2.0, NoiseSpec::new(0.5, 43).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn injected_noise_has_configured_variance() {
        let parts =
            generate_synthetic_parts(5, 10_000, 3.0, 4.0, NoiseSpec::new(1.0, 9).unwrap()).unwrap();
        let diff = &parts.noisy.values() - &parts.clean.values();
        for col in diff.columns() {
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            assert!((var - 1.0).abs() < 0.2, "column variance {var}");
        }
    }

    #[test]
    fn pooled_std_tracks_generator_scale() {
        // Sinusoid contributes A²/2, the field (A/2)², noise σ_z².
        let amp = 4.0;
        let x = generate_synthetic(10, 20_000, 3.0, amp, NoiseSpec::new(1.0, 5).unwrap()).unwrap();
        let expected = (amp * amp / 2.0 + amp * amp / 4.0 + 1.0_f64).sqrt();
        let sigma = dataset_std(&x).unwrap();
        assert!(
            (sigma / expected - 1.0).abs() < 0.25,
            "{sigma} vs {expected}"
        );
    }

    #[test]
    fn sphere_examples() {
        let f = sphere(array![5.0, 5.0, 5.0].view(), 1.0).unwrap();
        assert_eq!(f.mean, 5.0);
        assert_eq!(f.d, array![0.0, 0.0, 0.0]);

        let f = sphere(array![10.0, 20.0, 30.0].view(), 10.0).unwrap();
        assert_eq!(f.mean, 20.0);
        assert_abs_diff_eq!(f.d, array![-1.0 / 3.0, 0.0, 1.0 / 3.0], epsilon = 1e-15);

        let f = sphere(array![0.0, 100.0].view(), 1.0).unwrap();
        assert_eq!(f.d, array![-1.0, 1.0]);
    }

    #[test]
    fn sphere_rejects_bad_input() {
        assert!(sphere(array![1.0].view(), 0.0).is_err());
        assert!(sphere(array![1.0].view(), -2.0).is_err());
        assert!(sphere(array![f64::NAN, 1.0].view(), 1.0).is_err());
        assert!(desphere(array![0.0].view(), 0.0, 0.0).is_err());
    }

    #[test]
    fn desphere_examples() {
        assert_eq!(
            desphere(array![0.0, 0.0].view(), 7.0, 2.0).unwrap(),
            array![7.0, 7.0]
        );
        let x = desphere(array![-1.0 / 3.0, 0.0, 1.0 / 3.0].view(), 20.0, 10.0).unwrap();
        assert_abs_diff_eq!(x, array![10.0, 20.0, 30.0], epsilon = 1e-12);
    }

    #[test]
    fn dataset_std_examples() {
        let flat = DataMatrix::new(array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(dataset_std(&flat).is_err());
        let two = DataMatrix::new(array![[0.0], [2.0]]).unwrap();
        assert_eq!(dataset_std(&two).unwrap(), 1.0);
    }

    #[test]
    fn rmse_of_constant_offset() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(rmse(a.view(), a.view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rmse((&a + 1.0).view(), a.view()).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    proptest! {
        #[test]
        fn sphere_is_bounded(x in prop::collection::vec(-1e6f64..1e6, 1..40), sigma in 1e-3f64..1e3) {
            let f = sphere(ArrayView1::from(x.as_slice()), sigma).unwrap();
            prop_assert!(f.d.iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn sphere_ignores_constant_shift(
            x in prop::collection::vec(-50f64..50.0, 2..30),
            shift in -1e3f64..1e3,
            sigma in 0.5f64..20.0,
        ) {
            let base = Array1::from(x);
            let a = sphere(base.view(), sigma).unwrap();
            let b = sphere((&base + shift).view(), sigma).unwrap();
            for (u, v) in a.d.iter().zip(b.d.iter()) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }
    }
}
