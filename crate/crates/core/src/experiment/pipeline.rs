use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::config::{Family, FoldRole, FoldSpec, Hyper, MarketSpec};
use super::{derive_seed, ExperimentError};
use crate::ensembles::{fit_boost, fit_forest, BoostModel, ForestModel};
use crate::evaluation;
use crate::indicators::{build_catalog, simple_return, CatalogConfig};
use crate::labeling::{label_crashes, var_threshold, VarScenario};
use crate::market_data::{drop_sparse_columns, knn_impute, parse_csv, trim_warmup, FeaturePanel, PriceSeries};
use crate::par;
use crate::resampling::{minority_class, smote_enn, ResampleConfig};
use crate::seqnet::{self, CheckpointMeta, RnnHyper, RnnNet, Sequences, TrainHistory};
use crate::windowing::{apply_standardizer, fit_standardizer, flatten_windows, make_windows, Standardizer, WindowTensor};

/// Reads `<data_dir>/<instrument>.csv` for the index and every listed
/// instrument, index first.
pub fn load_market_series(spec: &MarketSpec, data_dir: &Path) -> Result<Vec<PriceSeries>, ExperimentError> {
    std::iter::once(&spec.index)
        .chain(&spec.instruments)
        .map(|id| {
            let path = data_dir.join(format!("{id}.csv"));
            let raw = std::fs::read(&path).map_err(|e| ExperimentError::io(&path, e))?;
            parse_csv(&raw, id).map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Imputed feature panel on the index's trading calendar, plus the index
/// returns aligned to it.
#[derive(Debug, Clone)]
pub struct MarketData {
    pub name: String,
    /// Index calendar before warm-up trimming.
    pub calendar: Vec<NaiveDate>,
    pub features: FeaturePanel,
    pub returns: Vec<Option<f64>>,
}

/// Indicators per instrument on its own calendar, left-joined onto the
/// index's dates, sparse columns dropped, warm-up trimmed, KNN-imputed.
pub fn build_market_data(
    name: &str,
    series: &[PriceSeries],
    catalog: &CatalogConfig,
    max_missing_frac: f64,
    impute_k: usize,
) -> Result<MarketData, ExperimentError> {
    let anchor = series.first().ok_or_else(|| ExperimentError::Data(format!("{name}: no series")))?;
    let calendar = anchor.dates();
    let mut panel = FeaturePanel::empty(calendar.clone());
    for (i, s) in series.iter().enumerate() {
        let raw = crate::market_data::series_panel(s);
        let specs = catalog.specs_for(&s.instrument_id, i == 0);
        let block = build_catalog(&raw, &specs, &catalog.lags).map_err(|e| ExperimentError::Data(format!("{}: {e}", s.instrument_id)))?;
        panel.extend(block.reindex(&calendar)).map_err(|e| ExperimentError::Data(e.to_string()))?;
    }
    if let Some(expected) = catalog.expected_count {
        if panel.n_cols() != expected {
            return Err(ExperimentError::Config(format!("catalog built {} columns, expected {expected}", panel.n_cols())));
        }
    }
    let close = anchor.field(&catalog.price_field);
    let returns = simple_return(&close).map_err(|e| ExperimentError::Data(format!("{}: {e}", anchor.instrument_id)))?;
    let data_err = |e: crate::market_data::MarketDataError| ExperimentError::Data(e.to_string());
    let panel = drop_sparse_columns(&panel, max_missing_frac).map_err(data_err)?;
    let panel = trim_warmup(&panel);
    if panel.n_rows() == 0 {
        return Err(ExperimentError::Data(format!("{name}: no rows left after warm-up trimming")));
    }
    let features = knn_impute(&panel, impute_k).map_err(data_err)?;
    let offset = calendar.len() - features.n_rows();
    Ok(MarketData { name: name.to_string(), calendar, features, returns: returns[offset..].to_vec() })
}

/// VaR scenario from the returns whose dates fall in `range` (all if none).
pub fn scenario_for(md: &MarketData, alpha: f64, range: Option<(NaiveDate, NaiveDate)>) -> Result<VarScenario, ExperimentError> {
    let dates = md.features.dates();
    let sample: Vec<Option<f64>> = match range {
        None => md.returns.clone(),
        Some((a, b)) => dates.iter().zip(&md.returns).filter(|(d, _)| **d >= a && **d <= b).map(|(_, r)| *r).collect(),
    };
    let threshold = var_threshold(&sample, alpha).map_err(|e| ExperimentError::Data(format!("{}: {e}", md.name)))?;
    Ok(VarScenario { alpha, threshold })
}

pub fn windows_for(md: &MarketData, scenario: VarScenario, timesteps: usize) -> Result<WindowTensor, ExperimentError> {
    let labels = label_crashes(md.features.dates(), &md.returns, scenario).map_err(|e| ExperimentError::Data(e.to_string()))?;
    make_windows(&md.features, &labels, timesteps).map_err(|e| ExperimentError::Data(e.to_string()))
}

/// Standardized training and evaluation windows of one fold.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub fold: FoldSpec,
    pub scenario: VarScenario,
    pub standardizer: Standardizer,
    pub train: WindowTensor,
    pub eval: WindowTensor,
}

pub fn prepare_fold(w: &WindowTensor, fold: &FoldSpec, scenario: VarScenario) -> Result<FoldData, ExperimentError> {
    let train_idx = w.indices_between(fold.train_start, fold.train_end);
    let eval_idx = w.indices_between(fold.eval_start, fold.eval_end);
    if train_idx.is_empty() || eval_idx.is_empty() {
        return Err(ExperimentError::RangeOutsideData(format!(
            "fold {} has {} training and {} evaluation samples",
            fold.name,
            train_idx.len(),
            eval_idx.len()
        )));
    }
    let dates = w.sample_dates();
    let last_train = train_idx.iter().map(|&i| dates[i]).max().expect("non-empty");
    let first_eval = eval_idx.iter().map(|&i| dates[i]).min().expect("non-empty");
    if last_train >= first_eval {
        return Err(ExperimentError::Leakage(format!("fold {}: training ends {last_train}, evaluation starts {first_eval}", fold.name)));
    }
    let standardizer = fit_standardizer(w, &train_idx).map_err(|e| ExperimentError::Internal(e.to_string()))?;
    let std = |idx: &[usize]| apply_standardizer(&standardizer, &w.select(idx)).map_err(|e| ExperimentError::Internal(e.to_string()));
    Ok(FoldData { fold: fold.clone(), scenario, train: std(&train_idx)?, eval: std(&eval_idx)?, standardizer: standardizer.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Rnn { net: RnnNet, hyper: RnnHyper, history: TrainHistory },
    Forest(ForestModel),
    Boost(BoostModel),
}

impl TrainedModel {
    /// Probabilities for standardized windows, in sample order.
    pub fn predict(&self, w: &WindowTensor) -> Result<Vec<f64>, ExperimentError> {
        if w.is_empty() {
            return Ok(Vec::new());
        }
        match self {
            TrainedModel::Rnn { net, .. } => net.predict_proba(&Sequences::from_tensor(w)).map_err(ExperimentError::model),
            TrainedModel::Forest(m) => m.predict_proba(&flatten_windows(w)).map_err(ExperimentError::model),
            TrainedModel::Boost(m) => m.predict_proba(&flatten_windows(w)).map_err(ExperimentError::model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitInfo {
    pub train_samples: usize,
    pub fit_samples: usize,
    pub resampled_samples: usize,
    pub minority_share_before: f64,
    pub minority_share_after: f64,
}

fn minority_share(y: &[u8]) -> f64 {
    let (_, n_min, _) = minority_class(y);
    if y.is_empty() {
        0.0
    } else {
        n_min as f64 / y.len() as f64
    }
}

fn fnv1a(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Fits one model on standardized training windows. Recurrent families
/// hold out the chronological tail (`val_frac`) as the early-stopping
/// monitor; resampling, when given, touches only the fit portion.
pub fn fit_model(
    hyper: &Hyper,
    train: &WindowTensor,
    resampling: Option<&ResampleConfig>,
    val_frac: f64,
) -> Result<(TrainedModel, FitInfo), ExperimentError> {
    let n = train.samples();
    if n == 0 {
        return Err(ExperimentError::model("empty training set"));
    }
    let (fit_idx, monitor_idx): (Vec<usize>, Vec<usize>) = match hyper {
        Hyper::Rnn(_) => {
            let n_mon = ((n as f64 * val_frac).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            if n_mon >= n {
                return Err(ExperimentError::model("too few training samples for a monitor split"));
            }
            ((0..n - n_mon).collect(), (n - n_mon..n).collect())
        }
        _ => ((0..n).collect(), Vec::new()),
    };
    let fit = train.select(&fit_idx);
    let mut x = flatten_windows(&fit);
    let mut y = fit.labels().to_vec();
    let mut info = FitInfo {
        train_samples: n,
        fit_samples: y.len(),
        resampled_samples: y.len(),
        minority_share_before: minority_share(&y),
        minority_share_after: minority_share(&y),
    };
    if let Some(cfg) = resampling {
        let r = smote_enn(&x, &y, cfg).map_err(ExperimentError::model)?;
        x = r.x;
        y = r.y;
        info.resampled_samples = y.len();
        info.minority_share_after = minority_share(&y);
    }
    let model = match hyper {
        Hyper::Rnn(h) => {
            let monitor = train.select(&monitor_idx);
            let (t, f) = (train.timesteps(), train.features());
            let data = Sequences::new(x.data(), &y, t, f).map_err(ExperimentError::model)?;
            let net = RnnNet::from_hyper(h, f);
            let (net, history) = seqnet::train(net, &data, &Sequences::from_tensor(&monitor), h).map_err(ExperimentError::model)?;
            TrainedModel::Rnn { net, hyper: h.clone(), history }
        }
        Hyper::Forest(h) => TrainedModel::Forest(fit_forest(&x, &y, h).map_err(ExperimentError::model)?),
        Hyper::Boost(h) => TrainedModel::Boost(fit_boost(&x, &y, h).map_err(ExperimentError::model)?),
    };
    Ok((model, info))
}

/// Fits on the fold's training windows and scores its evaluation windows.
/// Fails if the evaluation windows change during fitting.
pub fn fit_and_predict(
    hyper: &Hyper,
    fold: &FoldData,
    resampling: Option<&ResampleConfig>,
    val_frac: f64,
) -> Result<(TrainedModel, FitInfo, Vec<f64>), ExperimentError> {
    let before = fnv1a(fold.eval.values());
    let (model, info) = fit_model(hyper, &fold.train, resampling, val_frac)?;
    if fnv1a(fold.eval.values()) != before {
        return Err(ExperimentError::Leakage("evaluation windows changed during fitting".into()));
    }
    let p = model.predict(&fold.eval)?;
    Ok((model, info, p))
}

/// Trained model plus everything needed to score raw windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub family: Family,
    pub timesteps: usize,
    pub decision_threshold: f64,
    pub var_threshold: f64,
    pub standardizer: Standardizer,
    pub model: TrainedModel,
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    format: String,
    version: u32,
    family: Family,
    timesteps: usize,
    decision_threshold: f64,
    var_threshold: f64,
    standardizer: Standardizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rnn_weights: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    forest: Option<ForestModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boost: Option<BoostModel>,
}

impl ModelBundle {
    /// Scores raw (unstandardized) windows.
    pub fn predict_raw(&self, w: &WindowTensor) -> Result<Vec<f64>, ExperimentError> {
        let z = apply_standardizer(&self.standardizer, w).map_err(|e| ExperimentError::Data(e.to_string()))?;
        self.model.predict(&z)
    }

    /// Writes `<stem>.model.json` (and `<stem>.rnn` for recurrent models);
    /// returns the JSON path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf, ExperimentError> {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        let mut file = BundleFile {
            format: "crashwatch-model".into(),
            version: 1,
            family: self.family,
            timesteps: self.timesteps,
            decision_threshold: self.decision_threshold,
            var_threshold: self.var_threshold,
            standardizer: self.standardizer.clone(),
            rnn_weights: None,
            forest: None,
            boost: None,
        };
        match &self.model {
            TrainedModel::Rnn { net, hyper, history } => {
                let name = format!("{stem}.rnn");
                let path = dir.join(&name);
                let meta = CheckpointMeta { hyper: hyper.clone(), epoch: history.best_epoch, init: history.init.clone() };
                let mut buf = Vec::new();
                net.save(&meta, &mut buf).map_err(ExperimentError::model)?;
                std::fs::write(&path, buf).map_err(|e| ExperimentError::io(&path, e))?;
                file.rnn_weights = Some(name);
            }
            TrainedModel::Forest(m) => file.forest = Some(m.clone()),
            TrainedModel::Boost(m) => file.boost = Some(m.clone()),
        }
        let path = dir.join(format!("{stem}.model.json"));
        let json = serde_json::to_string(&file).map_err(|e| ExperimentError::Internal(e.to_string()))?;
        std::fs::write(&path, json).map_err(|e| ExperimentError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let file: BundleFile = serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        if file.format != "crashwatch-model" || file.version != 1 {
            return Err(ExperimentError::Config(format!("{}: not a version-1 model bundle", path.display())));
        }
        let model = match (file.rnn_weights, file.forest, file.boost) {
            (Some(name), None, None) => {
                let wpath = path.parent().unwrap_or(Path::new(".")).join(name);
                let raw = std::fs::read(&wpath).map_err(|e| ExperimentError::io(&wpath, e))?;
                let (net, meta) = RnnNet::load(raw.as_slice()).map_err(|e| ExperimentError::Config(format!("{}: {e}", wpath.display())))?;
                let history = TrainHistory {
                    train_loss: Vec::new(),
                    val_score: Vec::new(),
                    monitor: seqnet::Monitor::ValAucPrc,
                    stopped_epoch: meta.epoch,
                    best_epoch: meta.epoch,
                    init: meta.init,
                };
                TrainedModel::Rnn { net, hyper: meta.hyper, history }
            }
            (None, Some(f), None) => TrainedModel::Forest(f),
            (None, None, Some(b)) => TrainedModel::Boost(b),
            _ => return Err(ExperimentError::Config(format!("{}: bundle must hold exactly one model", path.display()))),
        };
        Ok(Self {
            family: file.family,
            timesteps: file.timesteps,
            decision_threshold: file.decision_threshold,
            var_threshold: file.var_threshold,
            standardizer: file.standardizer,
            model,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub hyper: Hyper,
    /// Validation AUC-PRC per fold; `None` when undefined or failed.
    pub fold_auc: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub family: Family,
    pub points: Vec<GridPoint>,
    pub best: usize,
    /// A single-point grid is selected without evaluation.
    pub skipped: bool,
}

/// Trains every grid point on every validation fold and picks the highest
/// mean validation AUC-PRC; ties go to the earlier point. Folds without
/// positive evaluation labels are left out of the mean.
pub fn grid_search(
    family: Family,
    grid: &[Hyper],
    folds: &[FoldData],
    resampling: Option<&crate::experiment::config::ResamplingConfig>,
    val_frac: f64,
    seed: u64,
) -> GridOutcome {
    assert!(!grid.is_empty(), "grid must be non-empty");
    if grid.len() == 1 {
        let point = GridPoint { hyper: grid[0].clone(), fold_auc: Vec::new(), mean_auc: None, errors: Vec::new() };
        return GridOutcome { family, points: vec![point], best: 0, skipped: true };
    }
    let folds: Vec<&FoldData> = folds.iter().filter(|f| f.fold.role == FoldRole::Validation).collect();
    let tasks = grid.len() * folds.len();
    let results = par::map_range(tasks, |task| {
        let (p, k) = (task / folds.len(), task % folds.len());
        let s = derive_seed(seed, &[p as u64, k as u64]);
        let rs = resampling.map(|r| r.to_resample(derive_seed(s, &[3])));
        let fold = folds[k];
        fit_and_predict(&grid[p].with_seed(s), fold, rs.as_ref(), val_frac)
            .map(|(_, _, prob)| evaluation::auc_prc(fold.eval.labels(), &prob).ok())
    });
    let mut points = Vec::with_capacity(grid.len());
    for (p, hyper) in grid.iter().enumerate() {
        let mut fold_auc = Vec::new();
        let mut errors = Vec::new();
        for (k, r) in results[p * folds.len()..(p + 1) * folds.len()].iter().enumerate() {
            match r {
                Ok(a) => fold_auc.push(*a),
                Err(e) => {
                    errors.push(format!("{}: {e}", folds[k].fold.name));
                    fold_auc.push(None);
                }
            }
        }
        let defined: Vec<f64> = fold_auc.iter().flatten().copied().collect();
        let mean_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        points.push(GridPoint { hyper: hyper.clone(), fold_auc, mean_auc, errors });
    }
    let mut best = 0;
    for (i, pt) in points.iter().enumerate() {
        let score = pt.mean_auc.unwrap_or(f64::NEG_INFINITY);
        if score > points[best].mean_auc.unwrap_or(f64::NEG_INFINITY) {
            best = i;
        }
    }
    GridOutcome { family, points, best, skipped: false }
}
