//! Gateway-side encoding, base-station-side decoding, and the model file.
//!
//! The gateway needs only `[W1, b1]`: sphere, activate, shrink, round, then
//! measure with `Φ`. The base station recovers the code with LASSO, decodes
//! with `[W2, b2]`, and despheres with the transmitted frame mean.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array1, Array2, ArrayView1};

use crate::cs::{lasso_recover, measure, LassoSettings, Measurement, SensingMatrix};
use crate::data::{desphere, format_f64, sphere};
use crate::error::{check_len, invalid, Error, Result};
use crate::ssae::{encode, SparseCode, SsaeParams};

/// Version written by [`save_model`] and the only one [`load_model`] reads.
pub const MODEL_FORMAT_VERSION: u32 = 1;

const MAGIC: &str = "# ssae model";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: SsaeParams,
    pub sigma: f64,
    pub k_max: usize,
    pub rounding_places: u32,
    /// `M`
    pub measurements: usize,
    pub sensing_seed: u64,
}

impl TrainedModel {
    pub fn new(
        params: SsaeParams,
        sigma: f64,
        k_max: usize,
        rounding_places: u32,
        measurements: usize,
        sensing_seed: u64,
    ) -> Result<Self> {
        let l = params.n_hidden();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if k_max < 1 || k_max > l {
            return Err(invalid(
                "k_max",
                format!("must satisfy 1 <= K <= L = {l}, got {k_max}"),
            ));
        }
        if measurements < 1 || measurements > l {
            return Err(invalid(
                "measurements",
                format!("must satisfy 1 <= M <= L = {l}, got {measurements}"),
            ));
        }
        Ok(Self {
            params,
            sigma,
            k_max,
            rounding_places,
            measurements,
            sensing_seed,
        })
    }

    pub fn n_visible(&self) -> usize {
        self.params.n_visible()
    }

    pub fn n_hidden(&self) -> usize {
        self.params.n_hidden()
    }

    /// Regenerates the shared `M × L` sensing matrix.
    pub fn sensing_matrix(&self) -> Result<SensingMatrix> {
        SensingMatrix::gaussian(self.measurements, self.n_hidden(), self.sensing_seed)
    }

    /// Sparse code of one raw frame together with its mean.
    pub fn encode_frame(&self, x: ArrayView1<'_, f64>) -> Result<(SparseCode, f64)> {
        check_len("frame length", self.n_visible(), x.len())?;
        let frame = sphere(x, self.sigma)?;
        let s = encode(
            &self.params,
            frame.d.view(),
            self.k_max,
            Some(self.rounding_places),
        )?;
        Ok((s, frame.mean))
    }

    /// Output layer plus desphering for a recovered code.
    pub fn decode_code(&self, s: ArrayView1<'_, f64>, frame_mean: f64) -> Result<Array1<f64>> {
        check_len("code length", self.n_hidden(), s.len())?;
        let d_hat = (self.params.w2.dot(&s) + &self.params.b2).mapv_into(f64::tanh);
        desphere(d_hat.view(), frame_mean, self.sigma)
    }
}

fn check_phi(model: &TrainedModel, phi: &SensingMatrix) -> Result<()> {
    if phi.code_len() != model.n_hidden() {
        return Err(invalid(
            "sensing matrix",
            format!(
                "has {} columns but the model code length is L = {}",
                phi.code_len(),
                model.n_hidden()
            ),
        ));
    }
    Ok(())
}

/// Gateway side: the `M + 1` values sent for one frame.
pub fn gw_encode(
    model: &TrainedModel,
    phi: &SensingMatrix,
    x: ArrayView1<'_, f64>,
) -> Result<Measurement> {
    check_phi(model, phi)?;
    let (s, mean) = model.encode_frame(x)?;
    measure(phi, &s, mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub x_hat: Array1<f64>,
    /// Recovered sparse code.
    pub code: Array1<f64>,
    /// False when LASSO hit its sweep limit.
    pub lasso_converged: bool,
}

/// Base-station side: recover the code, decode, desphere.
pub fn bs_decode(
    model: &TrainedModel,
    phi: &SensingMatrix,
    m: &Measurement,
    lasso: &LassoSettings,
) -> Result<Decoded> {
    check_phi(model, phi)?;
    if m.y.len() != phi.n_measurements() {
        return Err(invalid(
            "measurement",
            format!(
                "carries {} values but the sensing matrix has M = {} rows",
                m.y.len(),
                phi.n_measurements()
            ),
        ));
    }
    let sol = lasso_recover(phi, m.y.view(), lasso)?;
    let x_hat = model.decode_code(sol.s.view(), m.frame_mean)?;
    Ok(Decoded {
        x_hat,
        code: sol.s,
        lasso_converged: sol.converged,
    })
}

/// Writes the versioned text format: a `key = value` header, then the
/// `[w1]`, `[b1]`, `[w2]`, `[b2]` blocks row by row.
pub fn save_model<W: Write>(model: &TrainedModel, mut sink: W) -> Result<()> {
    let p = &model.params;
    writeln!(sink, "{MAGIC}")?;
    writeln!(sink, "version = {MODEL_FORMAT_VERSION}")?;
    writeln!(sink, "n_visible = {}", p.n_visible())?;
    writeln!(sink, "n_hidden = {}", p.n_hidden())?;
    writeln!(sink, "k_max = {}", model.k_max)?;
    writeln!(sink, "sigma = {}", format_f64(model.sigma))?;
    writeln!(sink, "rounding_places = {}", model.rounding_places)?;
    writeln!(sink, "measurements = {}", model.measurements)?;
    writeln!(sink, "sensing_seed = {}", model.sensing_seed)?;
    write_block(&mut sink, "w1", p.w1.rows().into_iter().map(|r| r.to_vec()))?;
    write_block(&mut sink, "b1", std::iter::once(p.b1.to_vec()))?;
    write_block(&mut sink, "w2", p.w2.rows().into_iter().map(|r| r.to_vec()))?;
    write_block(&mut sink, "b2", std::iter::once(p.b2.to_vec()))?;
    Ok(())
}

fn write_block<W: Write>(
    sink: &mut W,
    name: &str,
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    writeln!(sink, "[{name}]")?;
    for row in rows {
        let line: Vec<String> = row.into_iter().map(format_f64).collect();
        writeln!(sink, "{}", line.join(","))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    number: usize,
    peeked: Option<String>,
}

impl<R: Read> Lines<R> {
    fn next(&mut self) -> Result<Option<String>> {
        if let Some(line) = self.peeked.take() {
            return Ok(Some(line));
        }
        loop {
            match self.inner.next() {
                None => return Ok(None),
                Some(line) => {
                    self.number += 1;
                    let line = line?;
                    let trimmed = line.trim();
                    if !trimmed.is_empty() && !trimmed.starts_with('#') {
                        return Ok(Some(trimmed.to_string()));
                    }
                }
            }
        }
    }

    fn push_back(&mut self, line: String) {
        self.peeked = Some(line);
    }

    fn malformed(&self, message: impl Into<String>) -> Error {
        Error::Malformed {
            line: self.number,
            message: message.into(),
        }
    }
}

#[derive(Default)]
struct Header {
    version: Option<u32>,
    n_visible: Option<usize>,
    n_hidden: Option<usize>,
    k_max: Option<usize>,
    sigma: Option<f64>,
    rounding_places: Option<u32>,
    measurements: Option<usize>,
    sensing_seed: Option<u64>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| Error::Truncated(format!("header field `{field}`")))
}

/// Reads a model written by [`save_model`], checking every header field
/// against the payload.
pub fn load_model<R: Read>(source: R) -> Result<TrainedModel> {
    let mut lines = Lines {
        inner: BufReader::new(source).lines(),
        number: 0,
        peeked: None,
    };
    let mut header = Header::default();
    while let Some(line) = lines.next()? {
        if line.starts_with('[') {
            lines.push_back(line);
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| lines.malformed(format!("expected `key = value`, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let bad =
            |lines: &Lines<R>| lines.malformed(format!("invalid value {value:?} for `{key}`"));
        match key {
            "version" => {
                let v: u32 = value.parse().map_err(|_| bad(&lines))?;
                if v != MODEL_FORMAT_VERSION {
                    return Err(Error::UnsupportedVersion {
                        found: v,
                        supported: MODEL_FORMAT_VERSION,
                    });
                }
                header.version = Some(v);
            }
            "n_visible" => header.n_visible = Some(value.parse().map_err(|_| bad(&lines))?),
            "n_hidden" => header.n_hidden = Some(value.parse().map_err(|_| bad(&lines))?),
            "k_max" => header.k_max = Some(value.parse().map_err(|_| bad(&lines))?),
            "sigma" => header.sigma = Some(value.parse().map_err(|_| bad(&lines))?),
            "rounding_places" => {
                header.rounding_places = Some(value.parse().map_err(|_| bad(&lines))?)
            }
            "measurements" => header.measurements = Some(value.parse().map_err(|_| bad(&lines))?),
            "sensing_seed" => header.sensing_seed = Some(value.parse().map_err(|_| bad(&lines))?),
            other => return Err(lines.malformed(format!("unknown header field `{other}`"))),
        }
        if header.version.is_none() {
            return Err(lines.malformed("the first header field must be `version`"));
        }
    }
    required(header.version, "version")?;
    let n = required(header.n_visible, "n_visible")?;
    let l = required(header.n_hidden, "n_hidden")?;

    let w1 = read_block(&mut lines, "w1", l, n, ("n_hidden", "n_visible"))?;
    let b1 = read_block(&mut lines, "b1", 1, l, ("b1", "n_hidden"))?;
    let w2 = read_block(&mut lines, "w2", n, l, ("n_visible", "n_hidden"))?;
    let b2 = read_block(&mut lines, "b2", 1, n, ("b2", "n_visible"))?;
    if let Some(extra) = lines.next()? {
        return Err(lines.malformed(format!("unexpected trailing content {extra:?}")));
    }

    let params = SsaeParams::new(w1, b1.row(0).to_owned(), w2, b2.row(0).to_owned())?;
    TrainedModel::new(
        params,
        required(header.sigma, "sigma")?,
        required(header.k_max, "k_max")?,
        required(header.rounding_places, "rounding_places")?,
        required(header.measurements, "measurements")?,
        required(header.sensing_seed, "sensing_seed")?,
    )
}

/// Reads `[name]` followed by exactly `rows × cols` values. `fields` names
/// the header entries that fix the row and column counts.
fn read_block<R: Read>(
    lines: &mut Lines<R>,
    name: &str,
    rows: usize,
    cols: usize,
    fields: (&str, &str),
) -> Result<Array2<f64>> {
    let tag = format!("[{name}]");
    match lines.next()? {
        Some(line) if line == tag => {}
        Some(line) => return Err(lines.malformed(format!("expected {tag}, found {line:?}"))),
        None => return Err(Error::Truncated(format!("block {tag}"))),
    }
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        let line = match lines.next()? {
            Some(line) if line.starts_with('[') => {
                return Err(Error::HeaderMismatch {
                    field: fields.0.to_string(),
                    reason: format!("block {tag} has {r} rows, header implies {rows}"),
                })
            }
            Some(line) => line,
            None => return Err(Error::Truncated(format!("row {} of block {tag}", r + 1))),
        };
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != cols {
            return Err(Error::HeaderMismatch {
                field: fields.1.to_string(),
                reason: format!(
                    "block {tag} row {} has {} values, header implies {cols}",
                    r + 1,
                    values.len()
                ),
            });
        }
        for (c, v) in values.iter().enumerate() {
            out[[r, c]] = v
                .trim()
                .parse()
                .map_err(|_| lines.malformed(format!("cannot parse {v:?} in block {tag}")))?;
        }
    }
    if let Some(line) = lines.next()? {
        if !line.starts_with('[') {
            return Err(Error::HeaderMismatch {
                field: fields.0.to_string(),
                reason: format!("block {tag} has more than {rows} rows"),
            });
        }
        lines.push_back(line);
    }
    Ok(out)
}
