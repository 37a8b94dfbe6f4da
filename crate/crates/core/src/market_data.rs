//! Daily market data: OHLCV parsing, calendar alignment, sparsity filtering
//! and KNN gap imputation.
//!
//! Missing values are `None` throughout. A [`FeaturePanel`] is column-major:
//! every column shares the panel's date index.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const CSV_HEADER: [&str; 7] = ["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"];

/// Raw field names, in the order they appear as panel columns.
pub const FIELDS: [&str; 6] = ["open", "high", "low", "close", "adj_close", "volume"];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("malformed header: expected `{}`, found `{found}`", CSV_HEADER.join(","))]
    MalformedHeader { found: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("line {line}: cannot parse date `{value}` (expected YYYY-MM-DD)")]
    MalformedDate { line: usize, value: String },
    #[error("line {line}: expected 7 fields, found {found}")]
    MalformedRow { line: usize, found: usize },
    #[error("anchor instrument `{0}` not in the series set")]
    AnchorNotFound(String),
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("panel column `{name}` has length {len}, expected {expected}")]
    LengthMismatch { name: String, len: usize, expected: usize },
    #[error("duplicate panel column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MarketDataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvBar {
    pub date: NaiveDate,
    pub open: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
    pub close: Option<f64>,
    pub adj_close: Option<f64>,
    pub volume: Option<f64>,
}

impl OhlcvBar {
    /// `low <= min(open, close) <= max(open, close) <= high` when all four are
    /// present, and volume is non-negative when present.
    pub fn is_consistent(&self) -> bool {
        let range_ok = match (self.open, self.high, self.low, self.close) {
            (Some(o), Some(h), Some(l), Some(c)) => l <= o.min(c) && o.max(c) <= h,
            _ => true,
        };
        range_ok && self.volume.is_none_or(|v| v >= 0.0)
    }

    pub fn field(&self, name: &str) -> Option<f64> {
        match name {
            "open" => self.open,
            "high" => self.high,
            "low" => self.low,
            "close" => self.close,
            "adj_close" => self.adj_close,
            "volume" => self.volume,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub instrument_id: String,
    bars: Vec<OhlcvBar>,
}

impl PriceSeries {
    /// Sorts the bars by date and rejects duplicates.
    pub fn new(instrument_id: impl Into<String>, mut bars: Vec<OhlcvBar>) -> Result<Self> {
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(MarketDataError::DuplicateDate(w[0].date));
        }
        Ok(Self { instrument_id: instrument_id.into(), bars })
    }

    pub fn bars(&self) -> &[OhlcvBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.bars.iter().map(|b| b.date).collect()
    }

    pub fn field(&self, name: &str) -> Vec<Option<f64>> {
        self.bars.iter().map(|b| b.field(name)).collect()
    }

    /// Writes the same layout [`parse_csv`] reads; missing values are `null`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let cell = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| x.to_string());
        for b in &self.bars {
            w.write_record([
                b.date.format("%Y-%m-%d").to_string(),
                cell(b.open),
                cell(b.high),
                cell(b.low),
                cell(b.close),
                cell(b.adj_close),
                cell(b.volume),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_number(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("null") || s.eq_ignore_ascii_case("nan") {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parses a `Date,Open,High,Low,Close,Adj Close,Volume` export.
///
/// Unparseable or `null` numeric fields become missing values; the row is
/// kept. Negative volumes are treated as missing.
pub fn parse_csv(raw: &[u8], instrument_id: &str) -> Result<PriceSeries> {
    let raw = raw.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(raw);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(raw);
    let mut records = reader.records();

    let header = match records.next() {
        None => return Err(MarketDataError::EmptyFile),
        Some(rec) => rec?,
    };
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != CSV_HEADER {
        return Err(MarketDataError::MalformedHeader { found: found.join(",") });
    }

    let mut bars = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != CSV_HEADER.len() {
            return Err(MarketDataError::MalformedRow { line, found: rec.len() });
        }
        let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d").map_err(|_| {
            MarketDataError::MalformedDate { line, value: rec[0].to_string() }
        })?;
        bars.push(OhlcvBar {
            date,
            open: parse_number(&rec[1]),
            high: parse_number(&rec[2]),
            low: parse_number(&rec[3]),
            close: parse_number(&rec[4]),
            adj_close: parse_number(&rec[5]),
            volume: parse_number(&rec[6]).filter(|v| *v >= 0.0),
        });
    }
    if bars.is_empty() {
        return Err(MarketDataError::EmptyFile);
    }
    let series = PriceSeries::new(instrument_id, bars)?;
    let inconsistent = series.bars.iter().filter(|b| !b.is_consistent()).count();
    if inconsistent > 0 {
        log::warn!("{instrument_id}: {inconsistent} bars violate low <= open/close <= high");
    }
    Ok(series)
}

/// Date-indexed named numeric columns, possibly with missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePanel {
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    columns: Vec<Vec<Option<f64>>>,
}

impl FeaturePanel {
    pub fn new(dates: Vec<NaiveDate>, columns: Vec<(String, Vec<Option<f64>>)>) -> Result<Self> {
        let mut panel = Self { dates, names: Vec::new(), columns: Vec::new() };
        for (name, col) in columns {
            panel.push_column(name, col)?;
        }
        Ok(panel)
    }

    pub fn empty(dates: Vec<NaiveDate>) -> Self {
        Self { dates, names: Vec::new(), columns: Vec::new() }
    }

    pub fn push_column(&mut self, name: impl Into<String>, col: Vec<Option<f64>>) -> Result<()> {
        let name = name.into();
        if col.len() != self.dates.len() {
            return Err(MarketDataError::LengthMismatch {
                name,
                len: col.len(),
                expected: self.dates.len(),
            });
        }
        if self.names.contains(&name) {
            return Err(MarketDataError::DuplicateColumn(name));
        }
        self.names.push(name);
        self.columns.push(col);
        Ok(())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<Option<f64>>] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().flatten().filter(|c| c.is_none()).count()
    }

    pub fn missing_fraction(&self, col: usize) -> f64 {
        if self.dates.is_empty() {
            return 0.0;
        }
        let missing = self.columns[col].iter().filter(|c| c.is_none()).count();
        missing as f64 / self.dates.len() as f64
    }

    /// True when every column is observed at `row`.
    pub fn row_complete(&self, row: usize) -> bool {
        self.columns.iter().all(|c| c[row].is_some())
    }

    /// Keeps the rows in `range`.
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
        }
    }

    /// Keeps the columns at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            dates: self.dates.clone(),
            names: indices.iter().map(|&i| self.names[i].clone()).collect(),
            columns: indices.iter().map(|&i| self.columns[i].clone()).collect(),
        }
    }

    /// Appends the columns of `other`, which must share this panel's dates.
    pub fn extend(&mut self, other: FeaturePanel) -> Result<()> {
        if other.dates != self.dates {
            return Err(MarketDataError::InvalidParameter(
                "cannot extend a panel with one on a different date index".into(),
            ));
        }
        for (name, col) in other.names.into_iter().zip(other.columns) {
            self.push_column(name, col)?;
        }
        Ok(())
    }

    /// Left-joins `other` onto `dates`: rows of `other` at dates absent from
    /// `dates` are discarded and `dates` missing from `other` become `None`.
    pub fn reindex(&self, dates: &[NaiveDate]) -> Self {
        let pos: HashMap<NaiveDate, usize> =
            self.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let rows: Vec<Option<usize>> = dates.iter().map(|d| pos.get(d).copied()).collect();
        Self {
            dates: dates.to_vec(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|r| r.and_then(|i| c[i])).collect())
                .collect(),
        }
    }

    /// Writes `date,<names...>` with empty cells for missing values.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (r, date) in self.dates.iter().enumerate() {
            let mut rec = vec![date.format("%Y-%m-%d").to_string()];
            rec.extend(self.columns.iter().map(|c| c[r].map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(raw: &[u8]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
        let header = reader.headers()?.clone();
        if header.get(0).map(str::trim) != Some("date") {
            return Err(MarketDataError::MalformedHeader {
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let date = NaiveDate::parse_from_str(rec[0].trim(), "%Y-%m-%d")
                .map_err(|_| MarketDataError::MalformedDate { line, value: rec[0].to_string() })?;
            dates.push(date);
            for (c, col) in columns.iter_mut().enumerate() {
                col.push(rec.get(c + 1).and_then(parse_number));
            }
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(MarketDataError::DuplicateDate(w[1]));
        }
        Self::new(dates, names.into_iter().zip(columns).collect())
    }
}

/// One column per instrument per raw field, named `<instrument>.<field>`.
pub fn series_panel(series: &PriceSeries) -> FeaturePanel {
    let mut panel = FeaturePanel::empty(series.dates());
    for field in FIELDS {
        panel
            .push_column(format!("{}.{}", series.instrument_id, field), series.field(field))
            .expect("fresh panel with unique field names");
    }
    panel
}

/// Aligns every series onto the anchor's trading dates. Dates absent from a
/// non-anchor series become missing cells; its extra dates are dropped.
pub fn align_calendars(series_set: &[PriceSeries], anchor: &str) -> Result<FeaturePanel> {
    let anchor_series = series_set
        .iter()
        .find(|s| s.instrument_id == anchor)
        .ok_or_else(|| MarketDataError::AnchorNotFound(anchor.to_string()))?;
    let dates = anchor_series.dates();
    let mut panel = FeaturePanel::empty(dates.clone());
    for series in series_set {
        panel.extend(series_panel(series).reindex(&dates))?;
    }
    Ok(panel)
}

/// Drops every column whose missing fraction exceeds `max_missing_frac`.
pub fn drop_sparse_columns(panel: &FeaturePanel, max_missing_frac: f64) -> Result<FeaturePanel> {
    if !(0.0..=1.0).contains(&max_missing_frac) {
        return Err(MarketDataError::InvalidParameter(format!(
            "max_missing_frac must lie in [0, 1], got {max_missing_frac}"
        )));
    }
    let keep: Vec<usize> = (0..panel.n_cols())
        .filter(|&c| panel.missing_fraction(c) <= max_missing_frac)
        .collect();
    let dropped = panel.n_cols() - keep.len();
    if dropped > 0 {
        log::info!("dropped {dropped} columns above {:.0}% missing", max_missing_frac * 100.0);
    }
    Ok(panel.select(&keep))
}

/// Removes leading rows until every column has been observed at least once,
/// discarding indicator warm-up periods.
pub fn trim_warmup(panel: &FeaturePanel) -> FeaturePanel {
    let start = panel
        .columns()
        .iter()
        .map(|c| c.iter().position(Option::is_some).unwrap_or(panel.n_rows()))
        .max()
        .unwrap_or(0);
    panel.slice_rows(start..panel.n_rows())
}

/// Fills every missing cell with the mean of its column over the `k` nearest
/// rows that observe that column.
///
/// Distances are Euclidean over z-scored columns, restricted to coordinates
/// observed in both rows; rows sharing no observed coordinate are infinitely
/// far apart. Ties go to the earlier date. A cell with no reachable neighbor
/// falls back to the column mean.
pub fn knn_impute(panel: &FeaturePanel, k: usize) -> Result<FeaturePanel> {
    if k == 0 {
        return Err(MarketDataError::InvalidParameter("k must be at least 1".into()));
    }
    let n = panel.n_rows();
    let m = panel.n_cols();
    let mut stats = Vec::with_capacity(m);
    for (c, col) in panel.columns.iter().enumerate() {
        let obs: Vec<f64> = col.iter().flatten().copied().collect();
        if obs.is_empty() && n > 0 {
            return Err(MarketDataError::AllMissingColumn(panel.names[c].clone()));
        }
        let mean = obs.iter().sum::<f64>() / obs.len().max(1) as f64;
        let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / obs.len().max(1) as f64;
        let std = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
        stats.push((mean, std));
    }
    if panel.missing_count() == 0 {
        return Ok(panel.clone());
    }

    // Row-major z-scores with NaN marking missing cells.
    let z: Vec<f64> = (0..n)
        .flat_map(|r| {
            panel
                .columns
                .iter()
                .zip(&stats)
                .map(move |(col, (mean, std))| col[r].map_or(f64::NAN, |v| (v - mean) / std))
        })
        .collect();

    let incomplete: Vec<usize> = (0..n).filter(|&r| !panel.row_complete(r)).collect();
    let fills: Vec<Vec<(usize, f64)>> = par::map_slice(&incomplete, |&r| {
        let row = &z[r * m..(r + 1) * m];
        let dist: Vec<f64> = (0..n)
            .map(|s| {
                if s == r {
                    return f64::INFINITY;
                }
                let other = &z[s * m..(s + 1) * m];
                let mut acc = 0.0;
                let mut shared = false;
                for (a, b) in row.iter().zip(other) {
                    if !a.is_nan() && !b.is_nan() {
                        acc += (a - b) * (a - b);
                        shared = true;
                    }
                }
                if shared {
                    acc.sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let mut out = Vec::new();
        for c in (0..m).filter(|&c| panel.columns[c][r].is_none()) {
            let col = &panel.columns[c];
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&s| col[s].is_some() && dist[s].is_finite())
                .map(|s| (dist[s], s))
                .collect();
            let value = if cand.is_empty() {
                stats[c].0
            } else {
                let kk = k.min(cand.len());
                let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if kk < cand.len() {
                    cand.select_nth_unstable_by(kk - 1, by_dist);
                    cand.truncate(kk);
                }
                cand.sort_by(by_dist);
                cand.iter().map(|&(_, s)| col[s].expect("observed")).sum::<f64>() / kk as f64
            };
            out.push((c, value));
        }
        out
    });

    let mut result = panel.clone();
    for (&r, row_fills) in incomplete.iter().zip(fills) {
        for (c, v) in row_fills {
            result.columns[c][r] = Some(v);
        }
    }
    Ok(result)
}

/// Distinct dates of the union of several series, sorted.
pub fn union_dates(series_set: &[PriceSeries]) -> Vec<NaiveDate> {
    let mut set: HashSet<NaiveDate> = HashSet::new();
    for s in series_set {
        set.extend(s.bars.iter().map(|b| b.date));
    }
    let mut v: Vec<NaiveDate> = set.into_iter().collect();
    v.sort();
    v
}
