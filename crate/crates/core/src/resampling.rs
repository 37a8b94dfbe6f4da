//! SMOTE oversampling followed by Edited Nearest Neighbours cleaning.
//!
//! Operates on flattened training windows. All random draws come from one
//! seeded stream in synthetic-sample order, so neighbour searches can run in
//! parallel without changing the output.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{nearest_rows, Matrix};
use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("minority class has {0} samples; SMOTE needs at least 2")]
    MinorityTooSmall(usize),
    #[error("{rows} rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("invalid resampling config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub smote_k: usize,
    pub enn_k: usize,
    /// Desired minority/majority ratio after SMOTE.
    pub target_minority_ratio: f64,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self { smote_k: 5, enn_k: 3, target_minority_ratio: 1.0, seed: 0 }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<(), ResampleError> {
        if self.smote_k == 0 {
            return Err(ResampleError::InvalidConfig("smote_k must be >= 1".into()));
        }
        if self.enn_k % 2 == 0 {
            return Err(ResampleError::InvalidConfig("enn_k must be odd".into()));
        }
        if !(self.target_minority_ratio > 0.0 && self.target_minority_ratio <= 1.0) {
            return Err(ResampleError::InvalidConfig("target_minority_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub origin: Origin,
    pub label: u8,
    pub removed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub x: Matrix,
    pub y: Vec<u8>,
    /// One entry per row before cleaning; originals first, in input order.
    pub provenance: Vec<Provenance>,
}

impl Resampled {
    /// Writes `index,origin,label,removed`.
    pub fn write_audit_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "origin", "label", "removed"])?;
        for (i, p) in self.provenance.iter().enumerate() {
            let origin = match p.origin {
                Origin::Original => "original",
                Origin::Synthetic => "synthetic",
            };
            w.write_record([i.to_string(), origin.into(), p.label.to_string(), p.removed.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minority label (ties go to 1) and the class counts.
pub fn minority_class(y: &[u8]) -> (u8, usize, usize) {
    let pos = y.iter().filter(|&&l| l == 1).count();
    let neg = y.len() - pos;
    if pos <= neg {
        (1, pos, neg)
    } else {
        (0, neg, pos)
    }
}

fn check_lengths(x: &Matrix, y: &[u8]) -> Result<(), ResampleError> {
    if x.rows() != y.len() {
        return Err(ResampleError::LengthMismatch { rows: x.rows(), labels: y.len() });
    }
    Ok(())
}

/// Adds synthetic minority rows `x_i + u·(x_nn - x_i)` until the
/// minority/majority ratio reaches the target. Original rows come first,
/// unchanged.
pub fn smote(x: &Matrix, y: &[u8], cfg: &ResampleConfig) -> Result<Resampled, ResampleError> {
    cfg.validate()?;
    check_lengths(x, y)?;
    let (minority, n_min, n_maj) = minority_class(y);
    let target = (cfg.target_minority_ratio * n_maj as f64).round() as usize;
    let n_syn = target.saturating_sub(n_min);
    let mut out = x.clone();
    let mut labels = y.to_vec();
    let mut provenance: Vec<Provenance> =
        y.iter().map(|&label| Provenance { origin: Origin::Original, label, removed: false }).collect();
    if n_syn == 0 {
        return Ok(Resampled { x: out, y: labels, provenance });
    }
    if n_min < 2 {
        return Err(ResampleError::MinorityTooSmall(n_min));
    }
    let k = cfg.smote_k.min(n_min - 1);
    if k < cfg.smote_k {
        log::info!("smote_k clamped from {} to {k} ({n_min} minority samples)", cfg.smote_k);
    }
    let members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority).collect();
    let neighbours: Vec<Vec<usize>> = par::map_slice(&members, |&i| nearest_rows(x, &members, x.row(i), Some(i), k));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut row = vec![0.0; x.cols()];
    for _ in 0..n_syn {
        let b = rng.gen_range(0..members.len());
        let nn = neighbours[b][rng.gen_range(0..k)];
        let u: f64 = rng.gen();
        let (base, other) = (x.row(members[b]), x.row(nn));
        for ((r, a), o) in row.iter_mut().zip(base).zip(other) {
            *r = a + u * (o - a);
        }
        out.push_row(&row);
        labels.push(minority);
        provenance.push(Provenance { origin: Origin::Synthetic, label: minority, removed: false });
    }
    Ok(Resampled { x: out, y: labels, provenance })
}

/// Keep-mask from one pass of Edited Nearest Neighbours: a row is dropped
/// when the majority label among its `enn_k` nearest other rows disagrees
/// with its own. Every class is edited against the original graph.
pub fn enn_mask(x: &Matrix, y: &[u8], enn_k: usize) -> Vec<bool> {
    let n = y.len();
    if enn_k == 0 || enn_k >= n {
        if n > 0 {
            log::warn!("enn_k={enn_k} with {n} samples; skipping cleaning");
        }
        return vec![true; n];
    }
    let all: Vec<usize> = (0..n).collect();
    par::map_range(n, |i| {
        let nn = nearest_rows(x, &all, x.row(i), Some(i), enn_k);
        let ones = nn.iter().filter(|&&j| y[j] == 1).count();
        let majority = u8::from(2 * ones > nn.len());
        majority == y[i]
    })
}

pub fn enn(x: &Matrix, y: &[u8], cfg: &ResampleConfig) -> Result<(Matrix, Vec<u8>), ResampleError> {
    cfg.validate()?;
    check_lengths(x, y)?;
    let keep = enn_mask(x, y, cfg.enn_k);
    let idx: Vec<usize> = (0..y.len()).filter(|&i| keep[i]).collect();
    Ok((x.select_rows(&idx), idx.iter().map(|&i| y[i]).collect()))
}

/// SMOTE then ENN on the oversampled set.
pub fn smote_enn(x: &Matrix, y: &[u8], cfg: &ResampleConfig) -> Result<Resampled, ResampleError> {
    let over = smote(x, y, cfg)?;
    let keep = enn_mask(&over.x, &over.y, cfg.enn_k);
    let idx: Vec<usize> = (0..over.y.len()).filter(|&i| keep[i]).collect();
    let mut provenance = over.provenance;
    for (p, k) in provenance.iter_mut().zip(&keep) {
        p.removed = !k;
    }
    Ok(Resampled {
        x: over.x.select_rows(&idx),
        y: idx.iter().map(|&i| over.y[i]).collect(),
        provenance,
    })
}
