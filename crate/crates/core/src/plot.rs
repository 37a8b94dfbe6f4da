//! Crash-probability series as CSV and a deterministic SVG line chart.

use std::fmt::Write as _;
use std::io::Write;

use chrono::{Datelike, NaiveDate};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilitySeries {
    pub dates: Vec<NaiveDate>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("{dates} dates, {probs} probabilities, {labels} labels")]
    ShapeMismatch { dates: usize, probs: usize, labels: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ProbabilitySeries {
    pub fn new(dates: Vec<NaiveDate>, probabilities: Vec<f64>, labels: Vec<u8>) -> Result<Self, PlotError> {
        if dates.len() != probabilities.len() || dates.len() != labels.len() {
            return Err(PlotError::ShapeMismatch { dates: dates.len(), probs: probabilities.len(), labels: labels.len() });
        }
        Ok(Self { dates, probabilities, labels })
    }

    /// Writes `date,probability,label`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), PlotError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "probability", "label"])?;
        for i in 0..self.dates.len() {
            w.write_record([
                self.dates[i].format("%Y-%m-%d").to_string(),
                self.probabilities[i].to_string(),
                self.labels[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(raw: &[u8]) -> Result<Self, PlotError> {
        let mut r = csv::Reader::from_reader(raw);
        let (mut dates, mut probs, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let bad = |msg: &str| PlotError::Parse { line, msg: msg.to_string() };
            if rec.len() != 3 {
                return Err(bad("expected date,probability,label"));
            }
            dates.push(NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|_| bad("bad date"))?);
            probs.push(rec[1].parse::<f64>().map_err(|_| bad("bad probability"))?);
            labels.push(rec[2].parse::<u8>().map_err(|_| bad("bad label"))?);
        }
        Self::new(dates, probs, labels)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 940.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 310.0;

/// Line chart of the probabilities with crash markers and the decision
/// threshold. Output depends only on the inputs.
pub fn render_svg(series: &ProbabilitySeries, title: &str, threshold: f64) -> String {
    let n = series.probabilities.len();
    let x = |i: usize| if n <= 1 { (LEFT + RIGHT) / 2.0 } else { LEFT + (RIGHT - LEFT) * i as f64 / (n - 1) as f64 };
    let y = |p: f64| BOTTOM - (BOTTOM - TOP) * p.clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    for k in 0..=4 {
        let p = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{RIGHT}" y2="{0:.2}" stroke="#e5e5e5"/><text x="{1:.2}" y="{2:.2}" text-anchor="end" font-size="11">{p:.2}</text>"##,
            y(p),
            LEFT - 6.0,
            y(p) + 4.0
        );
    }
    let mut last_year = None;
    for (i, d) in series.dates.iter().enumerate() {
        if last_year != Some(d.year()) {
            last_year = Some(d.year());
            let _ = writeln!(
                s,
                r##"<line x1="{0:.2}" y1="{BOTTOM}" x2="{0:.2}" y2="{1:.2}" stroke="#888"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle" font-size="11">{3}</text>"##,
                x(i),
                BOTTOM + 5.0,
                BOTTOM + 18.0,
                d.year()
            );
        }
    }
    let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="#333"/>"##);
    let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{BOTTOM}" stroke="#333"/>"##);
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{0:.2}" x2="{RIGHT}" y2="{0:.2}" stroke="#d62728" stroke-dasharray="6 4"/>"##,
        y(threshold)
    );
    if n > 0 {
        let pts: Vec<String> = series.probabilities.iter().enumerate().map(|(i, &p)| format!("{:.2},{:.2}", x(i), y(p))).collect();
        let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.2" points="{}"/>"##, pts.join(" "));
    }
    for (i, (&p, &l)) in series.probabilities.iter().zip(&series.labels).enumerate() {
        if l == 1 {
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#d62728"/>"##, x(i), y(p));
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{RIGHT}" y="{:.2}" text-anchor="end" font-size="11">line: p(crash)  dots: actual crash  dashed: threshold {threshold}</text>"##,
        HEIGHT - 12.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(p: Vec<f64>, l: Vec<u8>) -> ProbabilitySeries {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let dates = (0..p.len()).map(|i| start + chrono::Days::new(i as u64)).collect();
        ProbabilitySeries::new(dates, p, l).unwrap()
    }

    #[test]
    fn flat_line_for_constant_model() {
        let svg = render_svg(&series(vec![0.5; 3], vec![0, 1, 0]), "t", 0.5);
        assert!(svg.contains(r#"points="60.00,175.00 500.00,175.00 940.00,175.00""#));
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn csv_roundtrip_rerenders_identically() {
        let s = series(vec![0.1, 0.123456789012345, 1.0], vec![0, 0, 1]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = ProbabilitySeries::read_csv(&buf).unwrap();
        assert_eq!(back, s);
        assert_eq!(render_svg(&back, "a<b", 0.5), render_svg(&s, "a<b", 0.5));
        assert!(render_svg(&s, "a<b", 0.5).contains("a&lt;b"));
    }
}
