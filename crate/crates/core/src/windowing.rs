//! Supervised sample assembly: the label at `t` is predicted from feature
//! rows `t-T ..= t-1`, never from row `t` itself.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::LabelSeries;
use crate::market_data::FeaturePanel;
use crate::matrix::Matrix;

pub const DEFAULT_TIMESTEPS: usize = 7;
const TENSOR_MAGIC: &[u8; 4] = b"CWTN";

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("panel and label dates differ")]
    DateMismatch,
    #[error("timesteps must be at least 1")]
    ZeroTimesteps,
    #[error("training index set is empty")]
    EmptyTrainIndex,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `N x T x F` windows, timestep axis oldest to newest, with one binary
/// label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowTensor {
    n: usize,
    t: usize,
    f: usize,
    values: Vec<f64>,
    feature_names: Vec<String>,
    sample_dates: Vec<NaiveDate>,
    labels: Vec<u8>,
}

impl WindowTensor {
    pub fn new(
        t: usize,
        feature_names: Vec<String>,
        values: Vec<f64>,
        sample_dates: Vec<NaiveDate>,
        labels: Vec<u8>,
    ) -> Result<Self, WindowError> {
        let f = feature_names.len();
        let n = labels.len();
        if sample_dates.len() != n || values.len() != n * t * f {
            return Err(WindowError::ShapeMismatch(format!(
                "{} values, {} dates, {} labels for T={t}, F={f}",
                values.len(),
                sample_dates.len(),
                n
            )));
        }
        Ok(Self { n, t, f, values, feature_names, sample_dates, labels })
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn timesteps(&self) -> usize {
        self.t
    }

    pub fn features(&self) -> usize {
        self.f
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn sample_dates(&self) -> &[NaiveDate] {
        &self.sample_dates
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Sample `i` as `T` consecutive rows of `F` values.
    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.t * self.f;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.t * self.f);
        for &i in idx {
            values.extend_from_slice(self.window(i));
        }
        Self {
            n: idx.len(),
            t: self.t,
            f: self.f,
            values,
            feature_names: self.feature_names.clone(),
            sample_dates: idx.iter().map(|&i| self.sample_dates[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Indices of samples whose label date lies in `[start, end]`.
    pub fn indices_between(&self, start: NaiveDate, end: NaiveDate) -> Vec<usize> {
        (0..self.n).filter(|&i| self.sample_dates[i] >= start && self.sample_dates[i] <= end).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Flat binary dump: magic, little-endian `u64` header length, JSON
    /// header, then the `N*T*F` values as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), WindowError> {
        let header = TensorHeader {
            n: self.n,
            t: self.t,
            f: self.f,
            names: self.feature_names.clone(),
            dates: self.sample_dates.clone(),
            labels: self.labels.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(TENSOR_MAGIC)?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        write_f64s(&mut out, &self.values)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, WindowError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(WindowError::Format("bad magic".into()));
        }
        let header: TensorHeader = read_json_header(&mut input)?;
        let values = read_f64s(&mut input, header.n * header.t * header.f)?;
        if header.names.len() != header.f {
            return Err(WindowError::Format("feature name count differs from F".into()));
        }
        Self::new(header.t, header.names, values, header.dates, header.labels)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "F")]
    f: usize,
    names: Vec<String>,
    dates: Vec<NaiveDate>,
    labels: Vec<u8>,
}

pub(crate) fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub(crate) fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>, WindowError> {
    let mut buf = vec![0u8; count * 8];
    input.read_exact(&mut buf)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(WindowError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub(crate) fn read_json_header<R: Read, H: for<'de> Deserialize<'de>>(input: &mut R) -> Result<H, WindowError> {
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 31 {
        return Err(WindowError::Format("header too large".into()));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

/// Builds one sample per date whose `timesteps` preceding rows are complete.
pub fn make_windows(
    panel: &FeaturePanel,
    labels: &LabelSeries,
    timesteps: usize,
) -> Result<WindowTensor, WindowError> {
    if timesteps == 0 {
        return Err(WindowError::ZeroTimesteps);
    }
    if panel.dates() != labels.dates.as_slice() {
        return Err(WindowError::DateMismatch);
    }
    let n = panel.n_rows();
    let f = panel.n_cols();
    let complete: Vec<bool> = (0..n).map(|r| panel.row_complete(r)).collect();
    let mut values = Vec::new();
    let mut dates = Vec::new();
    let mut ys = Vec::new();
    // Run length of complete rows ending just before `t`.
    let mut run = 0usize;
    for t in 0..n {
        if t > 0 {
            run = if complete[t - 1] { run + 1 } else { 0 };
        }
        if run < timesteps {
            continue;
        }
        for r in t - timesteps..t {
            values.extend(panel.columns().iter().map(|c| c[r].expect("complete row")));
        }
        dates.push(panel.dates()[t]);
        ys.push(labels.labels[t]);
    }
    debug_assert_eq!(values.len(), dates.len() * timesteps * f);
    WindowTensor::new(timesteps, panel.names().to_vec(), values, dates, ys)
}

/// Column names of the flattened view: `feature@k` is the feature `k` rows
/// before the label date, ordered timestep-major from `@T` down to `@1`.
pub fn flat_feature_names(w: &WindowTensor) -> Vec<String> {
    (0..w.t)
        .flat_map(|step| w.feature_names.iter().map(move |name| format!("{name}@{}", w.t - step)))
        .collect()
}

/// `N x (T·F)` view, row-major by timestep then feature.
pub fn flatten_windows(w: &WindowTensor) -> Matrix {
    Matrix::new(w.n, w.t * w.f, w.values.clone())
}

/// Inverse of [`flatten_windows`].
pub fn unflatten_windows(
    m: &Matrix,
    labels: Vec<u8>,
    sample_dates: Vec<NaiveDate>,
    timesteps: usize,
    feature_names: Vec<String>,
) -> Result<WindowTensor, WindowError> {
    if m.cols() != timesteps * feature_names.len() {
        return Err(WindowError::ShapeMismatch(format!(
            "{} columns cannot hold T={timesteps} x F={}",
            m.cols(),
            feature_names.len()
        )));
    }
    WindowTensor::new(timesteps, feature_names, m.data().to_vec(), sample_dates, labels)
}

/// Per-feature z-score fit on training samples (pooled over timesteps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub input_names: Vec<String>,
    /// Input feature indices kept after dropping zero-variance features.
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub dropped: Vec<String>,
}

const MIN_STD: f64 = 1e-12;

pub fn fit_standardizer(w: &WindowTensor, train_index: &[usize]) -> Result<Standardizer, WindowError> {
    if train_index.is_empty() {
        return Err(WindowError::EmptyTrainIndex);
    }
    let count = (train_index.len() * w.t) as f64;
    let mut means = vec![0.0; w.f];
    for &i in train_index {
        for row in w.window(i).chunks_exact(w.f) {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    means.iter_mut().for_each(|m| *m /= count);
    let mut vars = vec![0.0; w.f];
    for &i in train_index {
        for row in w.window(i).chunks_exact(w.f) {
            for ((acc, v), m) in vars.iter_mut().zip(row).zip(&means) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let mut s = Standardizer {
        input_names: w.feature_names.clone(),
        kept: Vec::new(),
        means: Vec::new(),
        stds: Vec::new(),
        dropped: Vec::new(),
    };
    for j in 0..w.f {
        let std = (vars[j] / count).sqrt();
        if std > MIN_STD && std.is_finite() {
            s.kept.push(j);
            s.means.push(means[j]);
            s.stds.push(std);
        } else {
            s.dropped.push(w.feature_names[j].clone());
        }
    }
    if !s.dropped.is_empty() {
        log::warn!("dropping {} zero-variance features: {:?}", s.dropped.len(), s.dropped);
    }
    Ok(s)
}

pub fn apply_standardizer(s: &Standardizer, w: &WindowTensor) -> Result<WindowTensor, WindowError> {
    if w.feature_names != s.input_names {
        return Err(WindowError::ShapeMismatch(format!(
            "standardizer fit on {} features, tensor has {}",
            s.input_names.len(),
            w.f
        )));
    }
    let f_out = s.kept.len();
    let mut values = Vec::with_capacity(w.n * w.t * f_out);
    for row in w.values.chunks_exact(w.f.max(1)).take(w.n * w.t) {
        values.extend(s.kept.iter().zip(s.means.iter().zip(&s.stds)).map(|(&j, (m, sd))| (row[j] - m) / sd));
    }
    let names = s.kept.iter().map(|&j| w.feature_names[j].clone()).collect();
    WindowTensor::new(w.t, names, values, w.sample_dates.clone(), w.labels.clone())
}
