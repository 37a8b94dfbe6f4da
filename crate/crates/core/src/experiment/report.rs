use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::Family;
use super::{alpha_tag, ExperimentConfig, ExperimentError, GridRecord, RunOutput, RunRecord};
use crate::evaluation::{fmt_opt, MetricsReport, REPORT_FIELDS};
use crate::plot::render_svg;

pub const RAW_FILE: &str = "results_raw.csv";
pub const AGGREGATE_FILE: &str = "results_agg.csv";
pub const GRID_FILE: &str = "gridsearch.csv";
pub const CONFIG_FILE: &str = "config.resolved.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

const METRICS: [&str; 4] = ["ifar", "hit_rate", "bal_acc", "auc_prc"];

fn metric(r: &MetricsReport, name: &str) -> Option<f64> {
    match name {
        "ifar" => r.ifar,
        "hit_rate" => r.hit_rate,
        "bal_acc" => r.bal_acc,
        "auc_prc" => r.auc_prc,
        _ => None,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Data(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

pub fn raw_header() -> Vec<String> {
    let mut h: Vec<String> = ["market", "alpha", "model", "run", "seed", "var_threshold"].map(String::from).to_vec();
    h.extend(REPORT_FIELDS.map(String::from));
    h.push("error".into());
    h
}

fn raw_row(r: &RunRecord) -> Vec<String> {
    let mut row = vec![
        r.market.clone(),
        alpha_tag(r.alpha),
        r.family.name().to_string(),
        r.run.to_string(),
        r.seed.to_string(),
        r.var_threshold.to_string(),
    ];
    match &r.report {
        Some(rep) => row.extend(rep.csv_fields()),
        None => row.extend(std::iter::repeat_n("NA".to_string(), REPORT_FIELDS.len())),
    }
    row.push(r.error.clone().unwrap_or_default());
    row
}

/// Mean and population standard deviation over defined values.
fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

pub fn aggregate_header() -> Vec<String> {
    let mut h: Vec<String> = ["market", "alpha", "model", "runs", "errors"].map(String::from).to_vec();
    for m in METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
        h.push(format!("{m}_n"));
    }
    h
}

/// Per-run metrics summarised per market, VaR level and model, followed by
/// rows pooled over markets (market `*`).
pub fn aggregate_rows(records: &[RunRecord]) -> Vec<Vec<String>> {
    type Key = (String, String, Family);
    let mut groups: BTreeMap<(bool, Key), Vec<&RunRecord>> = BTreeMap::new();
    let mut order: Vec<(bool, Key)> = Vec::new();
    for r in records {
        for key in [(false, (r.market.clone(), alpha_tag(r.alpha), r.family)), (true, ("*".to_string(), alpha_tag(r.alpha), r.family))] {
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(r);
        }
    }
    order.sort_by_key(|k| k.0);
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let (market, alpha, family) = key.1;
            let mut row = vec![
                market,
                alpha,
                family.name().to_string(),
                rs.len().to_string(),
                rs.iter().filter(|r| r.error.is_some()).count().to_string(),
            ];
            for m in METRICS {
                let vals: Vec<f64> = rs.iter().filter_map(|r| r.report.as_ref().and_then(|rep| metric(rep, m))).collect();
                let (mean, std) = mean_std(&vals);
                row.extend([fmt_opt(mean), fmt_opt(std), vals.len().to_string()]);
            }
            row
        })
        .collect()
}

pub const GRID_HEADER: [&str; 10] =
    ["market", "alpha", "model", "point", "params", "fold_auc_prc", "mean_auc_prc", "selected", "skipped", "errors"];

fn grid_rows(grids: &[GridRecord]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for g in grids {
        for (i, p) in g.outcome.points.iter().enumerate() {
            rows.push(vec![
                g.market.clone(),
                alpha_tag(g.alpha),
                g.outcome.family.name().to_string(),
                i.to_string(),
                p.hyper.grid_key(),
                p.fold_auc.iter().map(|a| fmt_opt(*a)).collect::<Vec<_>>().join(";"),
                fmt_opt(p.mean_auc),
                u8::from(i == g.outcome.best).to_string(),
                u8::from(g.outcome.skipped).to_string(),
                p.errors.join(" | "),
            ]);
        }
    }
    rows
}

pub fn write_raw_csv(records: &[RunRecord], path: &Path) -> Result<(), ExperimentError> {
    write_csv(path, &raw_header(), &records.iter().map(raw_row).collect::<Vec<_>>())
}

pub fn write_grid_csv(grids: &[GridRecord], path: &Path) -> Result<(), ExperimentError> {
    write_csv(path, &GRID_HEADER.map(String::from), &grid_rows(grids))
}

/// Family with the highest mean balanced accuracy for one market and VaR
/// level; ties go to the earlier family.
pub fn best_family(records: &[RunRecord], market: &str, alpha: f64) -> Option<Family> {
    let mut best: Option<(Family, f64)> = None;
    for fam in Family::ALL {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.market == market && r.alpha == alpha && r.family == fam)
            .filter_map(|r| r.report.as_ref().and_then(|rep| rep.bal_acc))
            .collect();
        if let (Some(m), _) = mean_std(&vals) {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((fam, m));
            }
        }
    }
    best.map(|b| b.0)
}

/// Writes every result file under `dir`; returns the paths written.
pub fn write_outputs(out: &RunOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join(RAW_FILE);
    write_raw_csv(&out.records, &path)?;
    written.push(path);

    let path = dir.join(AGGREGATE_FILE);
    write_csv(&path, &aggregate_header(), &aggregate_rows(&out.records))?;
    written.push(path);

    let path = dir.join(GRID_FILE);
    write_grid_csv(&out.grids, &path)?;
    written.push(path);

    let path = dir.join(CONFIG_FILE);
    let json = serde_json::to_string_pretty(cfg).map_err(|e| ExperimentError::Internal(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| ExperimentError::io(&path, e))?;
    written.push(path);

    for p in &out.probabilities {
        if best_family(&out.records, &p.market, p.alpha) != Some(p.family) {
            continue;
        }
        let stem = format!("probability_{}_{}", p.market, alpha_tag(p.alpha));
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = std::fs::File::create(&csv_path).map_err(|e| ExperimentError::io(&csv_path, e))?;
        p.series.write_csv(file).map_err(|e| ExperimentError::Data(format!("{}: {e}", csv_path.display())))?;
        written.push(csv_path);
        let svg_path = dir.join(format!("{stem}.svg"));
        let svg = render_svg(&p.series, &stem, cfg.decision_threshold);
        std::fs::write(&svg_path, svg).map_err(|e| ExperimentError::io(&svg_path, e))?;
        written.push(svg_path);
    }

    let ckpt = dir.join(CHECKPOINT_DIR);
    for (stem, bundle) in &out.bundles {
        written.push(bundle.save(&ckpt, stem)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(market: &str, family: Family, bal: Option<f64>) -> RunRecord {
        RunRecord {
            market: market.into(),
            alpha: 0.05,
            family,
            run: 0,
            seed: 1,
            var_threshold: -0.02,
            report: bal.map(|b| MetricsReport {
                ifar: Some(0.5),
                hit_rate: Some(0.5),
                bal_acc: Some(b),
                auc_prc: None,
                tp: 1,
                fp: 1,
                fn_: 1,
                tn: 1,
                threshold: 0.5,
            }),
            error: bal.is_none().then(|| "failed".to_string()),
        }
    }

    #[test]
    fn aggregate_skips_undefined_values_and_pools_markets() {
        let rs = vec![
            record("A", Family::Rnn, Some(0.6)),
            record("A", Family::Rnn, Some(0.8)),
            record("A", Family::Rnn, None),
            record("B", Family::Rnn, Some(0.4)),
        ];
        let rows = aggregate_rows(&rs);
        let h = aggregate_header();
        let col = |name: &str| h.iter().position(|x| x == name).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0][0], "A");
        assert_eq!(rows[0][col("runs")], "3");
        assert_eq!(rows[0][col("errors")], "1");
        assert_eq!(rows[0][col("bal_acc_n")], "2");
        assert!((rows[0][col("bal_acc_mean")].parse::<f64>().unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(rows[0][col("auc_prc_mean")], "NA");
        assert_eq!(rows[2][0], "*");
        assert!((rows[2][col("bal_acc_mean")].parse::<f64>().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn best_family_prefers_earlier_on_ties() {
        let rs = vec![record("A", Family::Forest, Some(0.7)), record("A", Family::Lstm, Some(0.7))];
        assert_eq!(best_family(&rs, "A", 0.05), Some(Family::Lstm));
        assert_eq!(best_family(&rs, "B", 0.05), None);
    }
}
