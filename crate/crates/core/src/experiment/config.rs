use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::ensembles::{BoostHyper, FeatureSubset, ForestHyper};
use crate::evaluation::DEFAULT_THRESHOLD;
use crate::indicators::CatalogConfig;
use crate::labeling::DEFAULT_ALPHAS;
use crate::resampling::ResampleConfig;
use crate::seqnet::{Activation, CellKind, RnnHyper};
use crate::windowing::DEFAULT_TIMESTEPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub name: String,
    /// Instrument id of the market's own index; labels come from its returns.
    pub index: String,
    /// Other instruments whose indicators join the feature set.
    #[serde(default)]
    pub instruments: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldRole {
    Validation,
    Test,
}

/// Date ranges refer to label dates and are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldSpec {
    pub name: String,
    pub role: FoldRole,
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub eval_start: NaiveDate,
    pub eval_end: NaiveDate,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl FoldSpec {
    pub fn new(name: &str, role: FoldRole, train: (NaiveDate, NaiveDate), eval: (NaiveDate, NaiveDate)) -> Self {
        Self { name: name.into(), role, train_start: train.0, train_end: train.1, eval_start: eval.0, eval_end: eval.1 }
    }

    /// `(train, eval)` as `dd-mm-yyyy----dd-mm-yyyy`.
    pub fn table_label(&self) -> (String, String) {
        let f = |a: NaiveDate, b: NaiveDate| format!("{}----{}", a.format("%d-%m-%Y"), b.format("%d-%m-%Y"));
        (f(self.train_start, self.train_end), f(self.eval_start, self.eval_end))
    }
}

/// Expanding-window folds K1-K3 (validation) and K4 (test).
pub fn default_folds() -> Vec<FoldSpec> {
    let start = ymd(2010, 1, 1);
    vec![
        FoldSpec::new("K1", FoldRole::Validation, (start, ymd(2011, 12, 31)), (ymd(2012, 1, 1), ymd(2013, 12, 31))),
        FoldSpec::new("K2", FoldRole::Validation, (start, ymd(2013, 12, 31)), (ymd(2014, 1, 1), ymd(2015, 12, 31))),
        FoldSpec::new("K3", FoldRole::Validation, (start, ymd(2015, 12, 31)), (ymd(2016, 1, 1), ymd(2019, 12, 31))),
        FoldSpec::new("K4", FoldRole::Test, (start, ymd(2019, 12, 31)), (ymd(2020, 1, 1), ymd(2023, 12, 31))),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default = "default_folds")]
    pub folds: Vec<FoldSpec>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { folds: default_folds() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rnn,
    Lstm,
    Gru,
    Forest,
    Boost,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Rnn, Family::Lstm, Family::Gru, Family::Forest, Family::Boost];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rnn => "rnn",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
            Family::Forest => "forest",
            Family::Boost => "boost",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            Family::Rnn => Some(CellKind::Simple),
            Family::Lstm => Some(CellKind::Lstm),
            Family::Gru => Some(CellKind::Gru),
            _ => None,
        }
    }

    pub fn index(self) -> u64 {
        Self::ALL.iter().position(|&f| f == self).expect("listed") as u64
    }
}

/// One concrete hyperparameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Hyper {
    Rnn(RnnHyper),
    Forest(ForestHyper),
    Boost(BoostHyper),
}

impl Hyper {
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            Hyper::Rnn(h) => Hyper::Rnn(RnnHyper { seed, ..h.clone() }),
            Hyper::Forest(h) => Hyper::Forest(ForestHyper { seed, ..h.clone() }),
            Hyper::Boost(h) => Hyper::Boost(BoostHyper { seed, ..h.clone() }),
        }
    }

    /// The grid-searched fields only, as compact JSON.
    pub fn grid_key(&self) -> String {
        let v = match self {
            Hyper::Rnn(h) => serde_json::json!({"neurons": h.neurons, "layers": h.layers, "learning_rate": h.learning_rate}),
            Hyper::Forest(h) => serde_json::json!({"n_estimators": h.n_estimators, "max_depth": h.max_depth}),
            Hyper::Boost(h) => {
                serde_json::json!({"n_estimators": h.n_estimators, "learning_rate": h.learning_rate, "max_depth": h.max_depth})
            }
        };
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnGrid {
    pub neurons: Vec<usize>,
    pub layers: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub l1: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub activation: Activation,
    pub min_delta: f64,
}

impl Default for RnnGrid {
    fn default() -> Self {
        let base = RnnHyper::default();
        Self {
            neurons: vec![32, 64, 128],
            layers: vec![1, 2],
            learning_rate: vec![0.001, 0.01, 0.1],
            max_epochs: base.max_epochs,
            patience: base.patience,
            l1: base.l1,
            l2: base.l2,
            batch_size: base.batch_size,
            activation: base.activation,
            min_delta: base.min_delta,
        }
    }
}

impl RnnGrid {
    pub fn points(&self, cell: CellKind) -> Vec<Hyper> {
        let mut out = Vec::new();
        for &neurons in &self.neurons {
            for &layers in &self.layers {
                for &learning_rate in &self.learning_rate {
                    out.push(Hyper::Rnn(RnnHyper {
                        cell,
                        neurons,
                        layers,
                        learning_rate,
                        max_epochs: self.max_epochs,
                        patience: self.patience,
                        l1: self.l1,
                        l2: self.l2,
                        batch_size: self.batch_size,
                        seed: 0,
                        activation: self.activation,
                        min_delta: self.min_delta,
                    }));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeatureSubset,
}

impl Default for ForestGrid {
    fn default() -> Self {
        Self {
            n_estimators: vec![100, 200, 300],
            max_depth: vec![10, 20, 30],
            min_samples_leaf: 1,
            features_per_split: FeatureSubset::Sqrt,
        }
    }
}

impl ForestGrid {
    pub fn points(&self) -> Vec<Hyper> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                out.push(Hyper::Forest(ForestHyper {
                    n_estimators,
                    max_depth,
                    features_per_split: self.features_per_split,
                    min_samples_leaf: self.min_samples_leaf,
                    bootstrap: true,
                    seed: 0,
                }));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for BoostGrid {
    fn default() -> Self {
        let base = BoostHyper::default();
        Self {
            n_estimators: vec![100, 200, 300],
            learning_rate: vec![0.01, 0.1, 0.2],
            max_depth: vec![3, 4, 5],
            lambda: base.lambda,
            gamma: base.gamma,
            min_child_weight: base.min_child_weight,
        }
    }
}

impl BoostGrid {
    pub fn points(&self) -> Vec<Hyper> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &learning_rate in &self.learning_rate {
                for &max_depth in &self.max_depth {
                    out.push(Hyper::Boost(BoostHyper {
                        n_estimators,
                        learning_rate,
                        max_depth,
                        lambda: self.lambda,
                        gamma: self.gamma,
                        min_child_weight: self.min_child_weight,
                        seed: 0,
                    }));
                }
            }
        }
        out
    }
}

/// Families present in the config are run; absent ones are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rnn: Option<RnnGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm: Option<RnnGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gru: Option<RnnGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<ForestGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost: Option<BoostGrid>,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            rnn: Some(RnnGrid::default()),
            lstm: Some(RnnGrid::default()),
            gru: Some(RnnGrid::default()),
            forest: Some(ForestGrid::default()),
            boost: Some(BoostGrid::default()),
        }
    }
}

impl ModelsConfig {
    /// Enabled families with their grids, in fixed family order.
    pub fn grids(&self) -> Vec<(Family, Vec<Hyper>)> {
        let mut out = Vec::new();
        for fam in Family::ALL {
            let grid = match fam {
                Family::Rnn => self.rnn.as_ref().map(|g| g.points(CellKind::Simple)),
                Family::Lstm => self.lstm.as_ref().map(|g| g.points(CellKind::Lstm)),
                Family::Gru => self.gru.as_ref().map(|g| g.points(CellKind::Gru)),
                Family::Forest => self.forest.as_ref().map(ForestGrid::points),
                Family::Boost => self.boost.as_ref().map(BoostGrid::points),
            };
            if let Some(g) = grid {
                out.push((fam, g));
            }
        }
        out
    }

    /// Keeps only `family`.
    pub fn restrict(&mut self, family: Family) {
        if family != Family::Rnn {
            self.rnn = None;
        }
        if family != Family::Lstm {
            self.lstm = None;
        }
        if family != Family::Gru {
            self.gru = None;
        }
        if family != Family::Forest {
            self.forest = None;
        }
        if family != Family::Boost {
            self.boost = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResamplingConfig {
    pub enabled: bool,
    pub smote_k: usize,
    pub enn_k: usize,
    pub ratio: f64,
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        let r = ResampleConfig::default();
        Self { enabled: true, smote_k: r.smote_k, enn_k: r.enn_k, ratio: r.target_minority_ratio }
    }
}

impl ResamplingConfig {
    pub fn to_resample(&self, seed: u64) -> ResampleConfig {
        ResampleConfig { smote_k: self.smote_k, enn_k: self.enn_k, target_minority_ratio: self.ratio, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data: "data".into(), out: "out".into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdWindow {
    /// One VaR threshold from every return in the dataset.
    #[default]
    Full,
    /// Per-fold threshold from training-range returns only.
    Train,
}

impl std::str::FromStr for ThresholdWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "train" => Ok(Self::Train),
            other => Err(format!("unknown threshold window `{other}` (expected full or train)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub markets: Vec<MarketSpec>,
    pub alphas: Vec<f64>,
    pub plan: PlanConfig,
    pub models: ModelsConfig,
    pub resampling: ResamplingConfig,
    pub repetitions: usize,
    pub seed: u64,
    pub paths: PathsConfig,
    pub features: CatalogConfig,
    pub timesteps: usize,
    pub decision_threshold: f64,
    pub threshold_window: ThresholdWindow,
    pub impute_k: usize,
    pub max_missing_frac: f64,
    /// Chronological tail of each training range held out as the recurrent
    /// models' early-stopping monitor.
    pub val_frac: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            markets: Vec::new(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            plan: PlanConfig::default(),
            models: ModelsConfig::default(),
            resampling: ResamplingConfig::default(),
            repetitions: 10,
            seed: 0,
            paths: PathsConfig::default(),
            features: CatalogConfig::default(),
            timesteps: DEFAULT_TIMESTEPS,
            decision_threshold: DEFAULT_THRESHOLD,
            threshold_window: ThresholdWindow::Full,
            impute_k: 5,
            max_missing_frac: 0.2,
            val_frac: 0.2,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data/output paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.paths.data.is_relative() {
            cfg.paths.data = base.join(&cfg.paths.data);
        }
        if cfg.paths.out.is_relative() {
            cfg.paths.out = base.join(&cfg.paths.out);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.models.grids().is_empty() {
            return bad("at least one model family is required");
        }
        if self.models.grids().iter().any(|(_, g)| g.is_empty()) {
            return bad("every enabled model grid needs at least one point");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return bad("alphas must be non-empty and inside (0, 1)");
        }
        if self.timesteps == 0 {
            return bad("timesteps must be >= 1");
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return bad("val_frac must lie in (0, 1)");
        }
        if self.resampling.enabled {
            self.resampling.to_resample(0).validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        let mut names: Vec<&str> = self.markets.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("market names must be unique");
        }
        super::make_split_plan(&self.plan)?;
        Ok(())
    }
}
