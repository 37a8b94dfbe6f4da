//! Technical indicators and the predictor catalog.
//!
//! Every indicator is causal: output at `t` depends only on inputs at `<= t`.
//! Warm-up positions are `None` rather than partial-window estimates, except
//! for the EMA family, which is seeded with its first observation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::FeaturePanel;
use crate::par;

pub type Series = Vec<Option<f64>>;

pub const DEFAULT_LAGS: [usize; 7] = [5, 10, 15, 20, 22, 50, 200];
/// The shorter lag list quoted alongside the 213-predictor count.
pub const SHORT_LAGS: [usize; 6] = [5, 10, 15, 22, 50, 200];
pub const RSI_PERIOD: usize = 14;
pub const MACD_FAST: usize = 12;
pub const MACD_SLOW: usize = 26;
pub const MACD_SIGNAL: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum IndicatorError {
    #[error("non-positive price {value} at position {index}")]
    NonPositivePrice { index: usize, value: f64 },
    #[error("series of length {len} is too short (need {need})")]
    TooShort { len: usize, need: usize },
    #[error("unknown source column `{0}`")]
    UnknownSourceColumn(String),
    #[error("window {0} is not in the configured lag set")]
    WindowNotInLagSet(usize),
    #[error("invalid lag set: {0}")]
    InvalidLagSet(String),
    #[error("window must be at least 1")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    Return,
    Ma,
    Ema,
    OpenCloseDiff,
    Rsi,
    Macd,
    MacdSignal,
    MacdHist,
}

impl IndicatorKind {
    fn label(self) -> &'static str {
        match self {
            Self::Return => "return",
            Self::Ma => "ma",
            Self::Ema => "ema",
            Self::OpenCloseDiff => "oc_diff",
            Self::Rsi => "rsi",
            Self::Macd => "macd",
            Self::MacdSignal => "macd_signal",
            Self::MacdHist => "macd_hist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub kind: IndicatorKind,
    /// MA/EMA: `None` expands over the whole lag set. RSI: period (default 14).
    #[serde(default)]
    pub window: Option<usize>,
    /// Panel column the indicator reads, e.g. `JKSE.adj_close`. Open–close
    /// difference reads the sibling `.open` and `.close` columns.
    pub source_column: String,
}

impl IndicatorSpec {
    pub fn new(kind: IndicatorKind, source_column: impl Into<String>) -> Self {
        Self { kind, window: None, source_column: source_column.into() }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = Some(window);
        self
    }
}

/// Strictly increasing moving-average windows, all at least 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet(Vec<usize>);

impl LagSet {
    pub fn new(windows: Vec<usize>) -> Result<Self, IndicatorError> {
        if windows.is_empty() {
            return Err(IndicatorError::InvalidLagSet("empty".into()));
        }
        if windows.iter().any(|&w| w < 2) {
            return Err(IndicatorError::InvalidLagSet("windows must be >= 2".into()));
        }
        if windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IndicatorError::InvalidLagSet("windows must be strictly increasing".into()));
        }
        Ok(Self(windows))
    }

    pub fn windows(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> usize {
        *self.0.last().expect("non-empty")
    }
}

impl Default for LagSet {
    fn default() -> Self {
        Self(DEFAULT_LAGS.to_vec())
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = IndicatorError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(l: LagSet) -> Self {
        l.0
    }
}

/// `r_t = (c_t - c_{t-1}) / c_{t-1}`; the first element is missing.
pub fn simple_return(close: &[Option<f64>]) -> Result<Series, IndicatorError> {
    if close.len() < 2 {
        return Err(IndicatorError::TooShort { len: close.len(), need: 2 });
    }
    if let Some((index, value)) = close
        .iter()
        .enumerate()
        .find_map(|(i, c)| c.filter(|v| *v <= 0.0).map(|v| (i, v)))
    {
        return Err(IndicatorError::NonPositivePrice { index, value });
    }
    let mut out = vec![None; close.len()];
    for t in 1..close.len() {
        if let (Some(prev), Some(cur)) = (close[t - 1], close[t]) {
            out[t] = Some((cur - prev) / prev);
        }
    }
    Ok(out)
}

/// Trailing mean over `w` observations; missing when any is absent.
pub fn moving_average(x: &[Option<f64>], w: usize) -> Result<Series, IndicatorError> {
    if w == 0 {
        return Err(IndicatorError::ZeroWindow);
    }
    let mut out = vec![None; x.len()];
    for t in (w - 1)..x.len() {
        let window = &x[t + 1 - w..=t];
        if window.iter().all(Option::is_some) {
            out[t] = Some(window.iter().flatten().sum::<f64>() / w as f64);
        }
    }
    Ok(out)
}

/// `alpha = 2/(w+1)`, seeded with the first observation. Missing inputs give
/// missing outputs and leave the state untouched.
pub fn exponential_moving_average(x: &[Option<f64>], w: usize) -> Result<Series, IndicatorError> {
    if w == 0 {
        return Err(IndicatorError::ZeroWindow);
    }
    let alpha = 2.0 / (w as f64 + 1.0);
    let mut state: Option<f64> = None;
    Ok(x.iter()
        .map(|v| {
            let v = (*v)?;
            let next = match state {
                None => v,
                Some(prev) => alpha * v + (1.0 - alpha) * prev,
            };
            state = Some(next);
            Some(next)
        })
        .collect())
}

/// Wilder-smoothed relative strength index in `[0, 100]`.
///
/// The first value appears once `period` price changes have been seen. A
/// window with no losses gives 100, one with no gains gives 0, and a flat
/// window gives 50.
pub fn rsi(close: &[Option<f64>], period: usize) -> Result<Series, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::ZeroWindow);
    }
    let mut out = vec![None; close.len()];
    let (mut gain_sum, mut loss_sum, mut seen) = (0.0, 0.0, 0usize);
    let (mut avg_gain, mut avg_loss) = (0.0, 0.0);
    let p = period as f64;
    for t in 1..close.len() {
        let (Some(prev), Some(cur)) = (close[t - 1], close[t]) else { continue };
        let delta = cur - prev;
        let (gain, loss) = (delta.max(0.0), (-delta).max(0.0));
        seen += 1;
        if seen < period {
            gain_sum += gain;
            loss_sum += loss;
            continue;
        }
        if seen == period {
            avg_gain = (gain_sum + gain) / p;
            avg_loss = (loss_sum + loss) / p;
        } else {
            avg_gain = (avg_gain * (p - 1.0) + gain) / p;
            avg_loss = (avg_loss * (p - 1.0) + loss) / p;
        }
        out[t] = Some(rsi_from_averages(avg_gain, avg_loss));
    }
    Ok(out)
}

fn rsi_from_averages(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        100.0 - 100.0 / (1.0 + avg_gain / avg_loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub macd: Series,
    pub signal: Series,
    pub histogram: Series,
}

/// MACD with the standard 12/26/9 parameters.
pub fn macd(close: &[Option<f64>]) -> Macd {
    macd_with(close, MACD_FAST, MACD_SLOW, MACD_SIGNAL)
}

pub fn macd_with(close: &[Option<f64>], fast: usize, slow: usize, signal: usize) -> Macd {
    let ema_fast = exponential_moving_average(close, fast.max(1)).expect("window >= 1");
    let ema_slow = exponential_moving_average(close, slow.max(1)).expect("window >= 1");
    let line: Series = ema_fast
        .iter()
        .zip(&ema_slow)
        .map(|(a, b)| Some((*a)? - (*b)?))
        .collect();
    let sig = exponential_moving_average(&line, signal.max(1)).expect("window >= 1");
    let histogram = line.iter().zip(&sig).map(|(m, s)| Some((*m)? - (*s)?)).collect();
    Macd { macd: line, signal: sig, histogram }
}

/// `close - open` per bar.
pub fn open_close_diff(open: &[Option<f64>], close: &[Option<f64>]) -> Series {
    open.iter().zip(close).map(|(o, c)| Some((*c)? - (*o)?)).collect()
}

fn split_source(source: &str) -> (&str, Option<&str>) {
    match source.rsplit_once('.') {
        Some((prefix, field)) if crate::market_data::FIELDS.contains(&field) => (prefix, Some(field)),
        _ => (source, None),
    }
}

/// Name prefix for indicators on `source`: price columns collapse to the
/// instrument id, other columns keep their full name.
fn instrument_label(source: &str) -> &str {
    match split_source(source) {
        (prefix, Some("close" | "adj_close")) => prefix,
        _ => source,
    }
}

fn column<'a>(panel: &'a FeaturePanel, name: &str) -> Result<&'a [Option<f64>], IndicatorError> {
    panel.column(name).ok_or_else(|| IndicatorError::UnknownSourceColumn(name.to_string()))
}

/// Output column names for `spec`, in catalog order.
pub fn spec_column_names(spec: &IndicatorSpec, lags: &LagSet) -> Vec<String> {
    let inst = instrument_label(&spec.source_column);
    let label = spec.kind.label();
    match spec.kind {
        IndicatorKind::Ma | IndicatorKind::Ema => match spec.window {
            Some(w) => vec![format!("{inst}.{label}.{w}")],
            None => lags.windows().iter().map(|w| format!("{inst}.{label}.{w}")).collect(),
        },
        IndicatorKind::Rsi => vec![format!("{inst}.{label}.{}", spec.window.unwrap_or(RSI_PERIOD))],
        _ => vec![format!("{inst}.{label}")],
    }
}

fn compute_spec(
    panel: &FeaturePanel,
    spec: &IndicatorSpec,
    lags: &LagSet,
) -> Result<Vec<(String, Series)>, IndicatorError> {
    let names = spec_column_names(spec, lags);
    let cols: Vec<Series> = match spec.kind {
        IndicatorKind::OpenCloseDiff => {
            let (prefix, _) = split_source(&spec.source_column);
            let open = column(panel, &format!("{prefix}.open"))?;
            let close = column(panel, &format!("{prefix}.close"))?;
            vec![open_close_diff(open, close)]
        }
        kind => {
            let x = column(panel, &spec.source_column)?;
            match kind {
                IndicatorKind::Return => vec![simple_return(x)?],
                IndicatorKind::Ma | IndicatorKind::Ema => {
                    let windows = match spec.window {
                        Some(w) if lags.windows().contains(&w) => vec![w],
                        Some(w) => return Err(IndicatorError::WindowNotInLagSet(w)),
                        None => lags.windows().to_vec(),
                    };
                    windows
                        .into_iter()
                        .map(|w| {
                            if kind == IndicatorKind::Ma {
                                moving_average(x, w)
                            } else {
                                exponential_moving_average(x, w)
                            }
                        })
                        .collect::<Result<_, _>>()?
                }
                IndicatorKind::Rsi => vec![rsi(x, spec.window.unwrap_or(RSI_PERIOD))?],
                IndicatorKind::Macd => vec![macd(x).macd],
                IndicatorKind::MacdSignal => vec![macd(x).signal],
                IndicatorKind::MacdHist => vec![macd(x).histogram],
                IndicatorKind::OpenCloseDiff => unreachable!(),
            }
        }
    };
    Ok(names.into_iter().zip(cols).collect())
}

/// Computes every spec against `panel`, one named column per expansion, in
/// spec order. Warm-up cells stay missing.
pub fn build_catalog(
    panel: &FeaturePanel,
    specs: &[IndicatorSpec],
    lags: &LagSet,
) -> Result<FeaturePanel, IndicatorError> {
    let computed = par::map_slice(specs, |spec| compute_spec(panel, spec, lags));
    let mut out = FeaturePanel::empty(panel.dates().to_vec());
    for block in computed {
        for (name, col) in block? {
            out.push_column(name, col)
                .map_err(|e| IndicatorError::InvalidLagSet(e.to_string()))?;
        }
    }
    Ok(out)
}

/// Indicator recipe applied per instrument when building market datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CatalogConfig {
    pub lags: LagSet,
    /// Price column each indicator reads.
    pub price_field: String,
    /// Computed for every instrument.
    pub per_instrument: Vec<IndicatorKind>,
    /// Computed additionally for the market's own index.
    pub anchor_extra: Vec<IndicatorKind>,
    pub rsi_period: usize,
    /// When set, dataset construction fails unless the catalog has exactly
    /// this many columns.
    pub expected_count: Option<usize>,
}

impl Default for CatalogConfig {
    /// Return plus MA/EMA over the lag set for every instrument, and
    /// open–close difference, RSI and MACD for the market's own index. Over
    /// the fourteen-instrument universe (five regional indices, five global
    /// indices, three commodity/bond series, the local currency) this gives
    /// `14 * 15 + 3 = 213` predictors.
    fn default() -> Self {
        Self {
            lags: LagSet::default(),
            price_field: "adj_close".into(),
            per_instrument: vec![IndicatorKind::Return, IndicatorKind::Ma, IndicatorKind::Ema],
            anchor_extra: vec![IndicatorKind::OpenCloseDiff, IndicatorKind::Rsi, IndicatorKind::Macd],
            rsi_period: RSI_PERIOD,
            expected_count: None,
        }
    }
}

impl CatalogConfig {
    /// Every indicator kind for every instrument.
    pub fn full() -> Self {
        use IndicatorKind::*;
        Self {
            per_instrument: vec![Return, Ma, Ema, OpenCloseDiff, Rsi, Macd, MacdSignal, MacdHist],
            anchor_extra: Vec::new(),
            ..Self::default()
        }
    }

    pub fn specs_for(&self, instrument: &str, is_anchor: bool) -> Vec<IndicatorSpec> {
        let source = format!("{instrument}.{}", self.price_field);
        let extra: &[IndicatorKind] = if is_anchor { &self.anchor_extra } else { &[] };
        self.per_instrument
            .iter()
            .chain(extra)
            .map(|&kind| {
                let spec = IndicatorSpec::new(kind, source.clone());
                if kind == IndicatorKind::Rsi {
                    spec.with_window(self.rsi_period)
                } else {
                    spec
                }
            })
            .collect()
    }

    /// Number of catalog columns for `n_instruments` instruments, one of
    /// which is the anchor.
    pub fn column_count(&self, n_instruments: usize) -> usize {
        let width = |k: &IndicatorKind| match k {
            IndicatorKind::Ma | IndicatorKind::Ema => self.lags.windows().len(),
            _ => 1,
        };
        let per: usize = self.per_instrument.iter().map(width).sum();
        let extra: usize = self.anchor_extra.iter().map(width).sum();
        per * n_instruments + if n_instruments > 0 { extra } else { 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn s(v: &[f64]) -> Series {
        v.iter().map(|x| Some(*x)).collect()
    }

    fn close(a: Option<f64>, b: f64) -> bool {
        a.is_some_and(|a| (a - b).abs() < 1e-12)
    }

    #[test]
    fn returns() {
        assert_eq!(simple_return(&s(&[100.0, 100.0, 100.0])).unwrap(), vec![None, Some(0.0), Some(0.0)]);
        let r = simple_return(&s(&[100.0, 98.38])).unwrap();
        assert!(close(r[1], -0.0162));
        let r = simple_return(&s(&[100.0, 110.0, 99.0])).unwrap();
        assert!(close(r[1], 0.10) && close(r[2], -0.10));
        assert!(matches!(simple_return(&s(&[1.0, 0.0])), Err(IndicatorError::NonPositivePrice { index: 1, .. })));
        assert!(simple_return(&s(&[1.0])).is_err());
    }

    #[test]
    fn moving_averages() {
        assert_eq!(moving_average(&s(&[1.0, 2.0, 3.0]), 3).unwrap(), vec![None, None, Some(2.0)]);
        assert_eq!(moving_average(&s(&[1.0, 5.0]), 1).unwrap(), s(&[1.0, 5.0]));
        let c = moving_average(&s(&[7.0; 20]), 5).unwrap();
        assert!(c[4..].iter().all(|v| *v == Some(7.0)));
        assert_eq!(exponential_moving_average(&s(&[1.0, 2.0, 3.0]), 3).unwrap(), s(&[1.0, 1.5, 2.25]));
        assert_eq!(exponential_moving_average(&s(&[7.0; 9]), 4).unwrap(), s(&[7.0; 9]));
    }

    #[test]
    fn long_ema_stays_near_seed() {
        let x: Series = (0..50).map(|i| Some(i as f64)).collect();
        let short = exponential_moving_average(&x, 5).unwrap();
        let long = exponential_moving_average(&x, 5000).unwrap();
        for t in 1..50 {
            assert!(long[t].unwrap() - x[0].unwrap() < short[t].unwrap() - x[0].unwrap());
        }
        let longer = exponential_moving_average(&x, 50_000).unwrap();
        assert!(longer[49].unwrap() < long[49].unwrap());
    }

    #[test]
    fn rsi_extremes() {
        let up: Series = (0..30).map(|i| Some(100.0 + i as f64)).collect();
        let r = rsi(&up, 14).unwrap();
        assert!(r[..14].iter().all(Option::is_none));
        assert!(r[14..].iter().all(|v| *v == Some(100.0)));
        let down: Series = (0..30).map(|i| Some(100.0 - i as f64)).collect();
        assert!(rsi(&down, 14).unwrap()[14..].iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn macd_of_constant_is_zero() {
        let m = macd(&s(&[42.0; 60]));
        for i in 0..60 {
            assert_eq!(m.macd[i], Some(0.0));
            assert_eq!(m.signal[i], Some(0.0));
            assert_eq!(m.histogram[i], Some(0.0));
        }
    }

    #[test]
    fn open_close() {
        assert_eq!(open_close_diff(&s(&[100.0, 5.0]), &s(&[103.0, 5.0])), s(&[3.0, 0.0]));
    }

    #[test]
    fn lag_set_validation() {
        assert!(LagSet::new(vec![5, 5]).is_err());
        assert!(LagSet::new(vec![1, 5]).is_err());
        assert!(LagSet::new(vec![]).is_err());
        assert_eq!(LagSet::default().windows(), DEFAULT_LAGS);
    }

    fn panel(n: usize, insts: &[&str]) -> FeaturePanel {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = (0..n).map(|i| start + chrono::Days::new(i as u64)).collect();
        let mut p = FeaturePanel::empty(dates);
        for inst in insts {
            for f in crate::market_data::FIELDS {
                p.push_column(format!("{inst}.{f}"), (0..n).map(|i| Some(50.0 + (i % 7) as f64)).collect())
                    .unwrap();
            }
        }
        p
    }

    #[test]
    fn catalog_counts_and_names() {
        let p = panel(30, &["A"]);
        let lags = LagSet::default();
        let one = build_catalog(&p, &[IndicatorSpec::new(IndicatorKind::Return, "A.adj_close")], &lags).unwrap();
        assert_eq!(one.names(), ["A.return"]);
        let specs = [
            IndicatorSpec::new(IndicatorKind::Ma, "A.close"),
            IndicatorSpec::new(IndicatorKind::Ema, "A.close"),
        ];
        let c = build_catalog(&p, &specs, &lags).unwrap();
        assert_eq!(c.n_cols(), 14);
        assert_eq!(c.names()[0], "A.ma.5");
        assert_eq!(c.names()[13], "A.ema.200");
        let bad = [IndicatorSpec::new(IndicatorKind::Return, "B.close")];
        assert_eq!(
            build_catalog(&p, &bad, &lags).unwrap_err(),
            IndicatorError::UnknownSourceColumn("B.close".into())
        );
        let off_lag = [IndicatorSpec::new(IndicatorKind::Ma, "A.close").with_window(7)];
        assert_eq!(build_catalog(&p, &off_lag, &lags).unwrap_err(), IndicatorError::WindowNotInLagSet(7));
    }

    #[test]
    fn default_catalog_over_fourteen_instruments_has_213_columns() {
        let insts = [
            "JKSE", "KLSE", "PSEI", "STI", "SET", "DJI", "IXIC", "STOXX50E", "N225", "FAN", "CL", "GC", "TNX",
            "IDR",
        ];
        let p = panel(40, &insts);
        let cfg = CatalogConfig::default();
        let specs: Vec<IndicatorSpec> =
            insts.iter().enumerate().flat_map(|(i, inst)| cfg.specs_for(inst, i == 0)).collect();
        let cat = build_catalog(&p, &specs, &cfg.lags).unwrap();
        assert_eq!(cat.n_cols(), 213);
        assert_eq!(cfg.column_count(insts.len()), 213);
        assert_eq!(CatalogConfig::full().column_count(1), 20);
        let again = build_catalog(&p, &specs, &cfg.lags).unwrap();
        assert_eq!(cat.names(), again.names());
    }
}
