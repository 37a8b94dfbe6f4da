//! Seeded synthetic data: OHLCV markets for offline fixtures and a
//! planted-signal panel whose crash labels are a threshold function of one
//! lagged feature.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market_data::{FeaturePanel, OhlcvBar, PriceSeries};

/// Monday-to-Friday dates in `[start, end]`.
pub fn business_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] keeps the log finite
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// GARCH(1,1) return path with unconditional daily volatility `vol`.
fn garch_returns(rng: &mut ChaCha8Rng, n: usize, vol: f64) -> Vec<f64> {
    let (a, b) = (0.08, 0.9);
    let omega = vol * vol * (1.0 - a - b);
    let mut var = vol * vol;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = var.sqrt() * normal(rng);
        out.push(r);
        var = omega + a * r * r + b * var;
    }
    out
}

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub index: String,
    /// Driver instruments; the index return loads on their previous-day
    /// returns.
    pub drivers: Vec<String>,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub seed: u64,
    /// Probability that an instrument skips a business day.
    pub holiday_rate: f64,
    /// Loading of the index return on each lagged driver return.
    pub beta: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            index: "SYNIDX".into(),
            drivers: vec!["WORLD".into(), "OIL".into()],
            start: NaiveDate::from_ymd_opt(2010, 1, 1).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2023, 12, 31).expect("valid date"),
            seed: 2024,
            holiday_rate: 0.02,
            beta: 0.5,
        }
    }
}

fn to_series(id: &str, dates: &[NaiveDate], returns: &[f64], keep: &[bool], rng: &mut ChaCha8Rng, start: f64) -> PriceSeries {
    let mut bars = Vec::new();
    let mut close = start;
    for (i, &date) in dates.iter().enumerate() {
        let prev = close;
        close = prev * (1.0 + returns[i]);
        if !keep[i] {
            continue;
        }
        let open = prev * (1.0 + 0.002 * normal(rng));
        let high = open.max(close) * (1.0 + 0.003 * normal(rng).abs());
        let low = open.min(close) * (1.0 - 0.003 * normal(rng).abs());
        let round = |v: f64| (v * 1e4).round() / 1e4;
        bars.push(OhlcvBar {
            date,
            open: Some(round(open)),
            high: Some(round(high)),
            low: Some(round(low)),
            close: Some(round(close)),
            adj_close: Some(round(close)),
            volume: Some((1e6 * (0.3 * normal(rng)).exp()).round()),
        });
    }
    PriceSeries::new(id, bars).expect("generated dates are unique")
}

/// Index series first, then drivers.
pub fn fixture_market(spec: &FixtureSpec) -> Vec<PriceSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dates = business_days(spec.start, spec.end);
    let n = dates.len();
    let drivers: Vec<Vec<f64>> = spec.drivers.iter().map(|_| garch_returns(&mut rng, n, 0.01)).collect();
    let own = garch_returns(&mut rng, n, 0.006);
    let index: Vec<f64> = (0..n)
        .map(|t| own[t] + if t > 0 { spec.beta * drivers.iter().map(|d| d[t - 1]).sum::<f64>() } else { 0.0 })
        .collect();
    let holidays = |rng: &mut ChaCha8Rng| -> Vec<bool> {
        (0..n).map(|t| t == 0 || t == n - 1 || rng.gen::<f64>() >= spec.holiday_rate).collect()
    };
    let mut out = Vec::new();
    let keep = holidays(&mut rng);
    out.push(to_series(&spec.index, &dates, &index, &keep, &mut rng, 1000.0));
    for (id, r) in spec.drivers.iter().zip(&drivers) {
        let keep = holidays(&mut rng);
        out.push(to_series(id, &dates, r, &keep, &mut rng, 100.0));
    }
    out
}

/// Feature panel with `r_t = scale * x0_{t-1}` as the return series, so the
/// crash label at `t` is a threshold function of feature `x0` one row back.
#[derive(Debug, Clone)]
pub struct PlantedSignal {
    pub panel: FeaturePanel,
    pub returns: Vec<Option<f64>>,
}

pub fn planted_signal(n_dates: usize, n_features: usize, seed: u64) -> PlantedSignal {
    assert!(n_features >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    let end = start + chrono::Days::new((n_dates as u64) * 2 + 14);
    let dates: Vec<NaiveDate> = business_days(start, end).into_iter().take(n_dates).collect();
    let phi: f64 = 0.3;
    let scale = (1.0 - phi * phi).sqrt();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_dates); n_features];
    for col in cols.iter_mut() {
        let mut x = normal(&mut rng);
        for _ in 0..n_dates {
            col.push(x);
            x = phi * x + scale * normal(&mut rng);
        }
    }
    let returns = (0..n_dates).map(|t| (t > 0).then(|| 0.01 * cols[0][t - 1])).collect();
    let columns = cols
        .into_iter()
        .enumerate()
        .map(|(j, c)| (format!("x{j}"), c.into_iter().map(Some).collect()))
        .collect();
    PlantedSignal { panel: FeaturePanel::new(dates, columns).expect("unique names"), returns }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn business_days_skip_weekends() {
        let d = business_days(NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), NaiveDate::from_ymd_opt(2024, 1, 9).unwrap());
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn fixture_is_seeded_and_consistent() {
        let spec = FixtureSpec { end: NaiveDate::from_ymd_opt(2010, 6, 30).unwrap(), ..FixtureSpec::default() };
        let a = fixture_market(&spec);
        assert_eq!(a, fixture_market(&spec));
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|s| s.bars().iter().all(OhlcvBar::is_consistent)));
    }

    #[test]
    fn planted_returns_follow_lagged_feature() {
        let p = planted_signal(50, 3, 1);
        let x0 = p.panel.column("x0").unwrap();
        assert_eq!(p.returns[0], None);
        for t in 1..50 {
            assert_eq!(p.returns[t], Some(0.01 * x0[t - 1].unwrap()));
        }
    }
}
