//! Crash labels from empirical Value-at-Risk thresholds.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHAS: [f64; 3] = [0.05, 0.025, 0.01];

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("alpha {0} outside (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("{have} observed returns, need at least {need} for alpha {alpha}")]
    InsufficientData { have: usize, need: usize, alpha: f64 },
    #[error("threshold must be finite")]
    NonFiniteThreshold,
    #[error("{dates} dates but {returns} returns")]
    LengthMismatch { dates: usize, returns: usize },
}

/// Empirical quantile estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Linear interpolation between order statistics at `h = (n-1)·alpha`.
    #[default]
    Linear,
    Lower,
    Higher,
    Nearest,
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarScenario {
    pub alpha: f64,
    pub threshold: f64,
}

/// Empirical `alpha`-quantile of the observed returns.
pub fn var_threshold(returns: &[Option<f64>], alpha: f64) -> Result<f64, LabelError> {
    var_threshold_with(returns, alpha, QuantileMethod::Linear)
}

pub fn var_threshold_with(
    returns: &[Option<f64>],
    alpha: f64,
    method: QuantileMethod,
) -> Result<f64, LabelError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabelError::AlphaOutOfRange(alpha));
    }
    let mut obs: Vec<f64> = returns.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let need = (1.0 / alpha).ceil() as usize;
    if obs.len() < need {
        return Err(LabelError::InsufficientData { have: obs.len(), need, alpha });
    }
    obs.sort_by(f64::total_cmp);
    let h = (obs.len() - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(obs.len() - 1);
    let frac = h - lo as f64;
    let q = match method {
        QuantileMethod::Linear => obs[lo] + frac * (obs[hi] - obs[lo]),
        QuantileMethod::Lower => obs[lo],
        QuantileMethod::Higher => {
            if frac > 0.0 {
                obs[hi]
            } else {
                obs[lo]
            }
        }
        QuantileMethod::Nearest => {
            // round half to even, matching the usual "nearest" estimator
            let r = h.round_ties_even() as usize;
            obs[r.min(obs.len() - 1)]
        }
        QuantileMethod::Midpoint => {
            if frac > 0.0 {
                0.5 * (obs[lo] + obs[hi])
            } else {
                obs[lo]
            }
        }
    };
    if q > 0.0 {
        log::warn!("VaR threshold {q} at alpha {alpha} is positive");
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeries {
    pub dates: Vec<NaiveDate>,
    pub returns: Vec<Option<f64>>,
    /// 1 = crash, 0 = normal.
    pub labels: Vec<u8>,
    /// Set where the return was missing (label forced to 0).
    pub missing: Vec<bool>,
    pub scenario: VarScenario,
}

impl LabelSeries {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn crash_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Writes `date,return,label,scenario_alpha,threshold`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "return", "label", "scenario_alpha", "threshold"])?;
        for i in 0..self.len() {
            w.write_record([
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.returns[i].map(|r| r.to_string()).unwrap_or_default(),
                self.labels[i].to_string(),
                self.scenario.alpha.to_string(),
                self.scenario.threshold.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `label_t = 1` iff `r_t < threshold`. Missing returns are labeled 0 and
/// flagged.
pub fn label_crashes(
    dates: &[NaiveDate],
    returns: &[Option<f64>],
    scenario: VarScenario,
) -> Result<LabelSeries, LabelError> {
    if !scenario.threshold.is_finite() {
        return Err(LabelError::NonFiniteThreshold);
    }
    if dates.len() != returns.len() {
        return Err(LabelError::LengthMismatch { dates: dates.len(), returns: returns.len() });
    }
    let labels = returns
        .iter()
        .map(|r| u8::from(r.is_some_and(|v| v < scenario.threshold)))
        .collect();
    Ok(LabelSeries {
        dates: dates.to_vec(),
        returns: returns.to_vec(),
        labels,
        missing: returns.iter().map(Option::is_none).collect(),
        scenario,
    })
}

#[derive(Debug, Error)]
pub enum LabelCsvError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn parse_cell(raw: &str, line: usize, what: &str) -> Result<Option<f64>, LabelCsvError> {
    match raw.trim() {
        "" | "NA" | "null" => Ok(None),
        v => v.parse().map(Some).map_err(|_| LabelCsvError::Parse { line, msg: format!("bad {what} `{v}`") }),
    }
}

fn parse_date(raw: &str, line: usize) -> Result<NaiveDate, LabelCsvError> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| LabelCsvError::Parse { line, msg: format!("bad date `{raw}`") })
}

fn check_header(r: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<(), LabelCsvError> {
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found.len() < expected.len() || found.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(LabelCsvError::Header { expected: expected.join(","), found: found.join(",") });
    }
    Ok(())
}

/// Writes `date,return`; missing returns are empty.
pub fn write_returns_csv<W: Write>(dates: &[NaiveDate], returns: &[Option<f64>], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "return"])?;
    for (d, r) in dates.iter().zip(returns) {
        w.write_record([d.format("%Y-%m-%d").to_string(), r.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_returns_csv(raw: &[u8]) -> Result<(Vec<NaiveDate>, Vec<Option<f64>>), LabelCsvError> {
    let mut r = csv::Reader::from_reader(raw);
    check_header(&mut r, &["date", "return"])?;
    let (mut dates, mut returns) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        dates.push(parse_date(&rec[0], i + 2)?);
        returns.push(parse_cell(&rec[1], i + 2, "return")?);
    }
    Ok((dates, returns))
}

impl LabelSeries {
    /// Reads the `write_csv` format.
    pub fn read_csv(raw: &[u8]) -> Result<Self, LabelCsvError> {
        let mut r = csv::Reader::from_reader(raw);
        check_header(&mut r, &["date", "return", "label", "scenario_alpha", "threshold"])?;
        let mut s = LabelSeries {
            dates: Vec::new(),
            returns: Vec::new(),
            labels: Vec::new(),
            missing: Vec::new(),
            scenario: VarScenario { alpha: f64::NAN, threshold: f64::NAN },
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |msg: &str| LabelCsvError::Parse { line, msg: msg.to_string() };
            s.dates.push(parse_date(&rec[0], line)?);
            let ret = parse_cell(&rec[1], line, "return")?;
            s.returns.push(ret);
            s.missing.push(ret.is_none());
            s.labels.push(match &rec[2] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad("label must be 0 or 1")),
            });
            let alpha = parse_cell(&rec[3], line, "alpha")?.ok_or_else(|| bad("missing alpha"))?;
            let threshold = parse_cell(&rec[4], line, "threshold")?.ok_or_else(|| bad("missing threshold"))?;
            s.scenario = VarScenario { alpha, threshold };
        }
        Ok(s)
    }

    /// Rows for `dates`, which must all be present.
    pub fn reindex(&self, dates: &[NaiveDate]) -> Option<Self> {
        let pos: std::collections::HashMap<NaiveDate, usize> = self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let idx: Vec<usize> = dates.iter().map(|d| pos.get(d).copied()).collect::<Option<_>>()?;
        Some(LabelSeries {
            dates: dates.to_vec(),
            returns: idx.iter().map(|&i| self.returns[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            missing: idx.iter().map(|&i| self.missing[i]).collect(),
            scenario: self.scenario,
        })
    }
}
