//! Expanding-window experiments: per market and VaR level, grid search on
//! the validation folds, then repeated fits on the test fold.

pub mod config;
pub mod pipeline;
pub mod report;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};

pub use config::{ExperimentConfig, Family, FoldRole, FoldSpec, Hyper, MarketSpec, PlanConfig, ThresholdWindow};
pub use pipeline::{FoldData, GridOutcome, MarketData, ModelBundle, TrainedModel};
pub use report::write_outputs;

use crate::evaluation::{self, MetricsReport};
use crate::par;
use crate::plot::ProbabilitySeries;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("data: {0}")]
    Data(String),
    #[error("date range outside the data: {0}")]
    RangeOutsideData(String),
    #[error("model: {0}")]
    Model(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl ExperimentError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn model(e: impl Display) -> Self {
        Self::Model(e.to_string())
    }

    /// Bugs rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Self::Leakage(_) | Self::Internal(_))
    }
}

/// Mixes `parts` into `base` with splitmix64 so every run gets its own
/// reproducible stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub validation: Vec<FoldSpec>,
    pub test: FoldSpec,
}

impl SplitPlan {
    /// Validation folds then the test fold.
    pub fn folds(&self) -> Vec<FoldSpec> {
        self.validation.iter().cloned().chain(std::iter::once(self.test.clone())).collect()
    }
}

/// Checks fold ordering: each training range ends before its evaluation
/// range, at least one fold is for validation and exactly one is the test.
pub fn make_split_plan(plan: &PlanConfig) -> Result<SplitPlan, ExperimentError> {
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for f in &plan.folds {
        if f.train_start > f.train_end || f.eval_start > f.eval_end {
            return Err(ExperimentError::Config(format!("fold {}: range start after end", f.name)));
        }
        if f.train_end >= f.eval_start {
            return Err(ExperimentError::Config(format!(
                "fold {}: training ends {} but evaluation starts {}",
                f.name, f.train_end, f.eval_start
            )));
        }
        match f.role {
            FoldRole::Validation => validation.push(f.clone()),
            FoldRole::Test => test.push(f.clone()),
        }
    }
    if validation.is_empty() {
        return Err(ExperimentError::Config("plan needs at least one validation fold".into()));
    }
    if test.len() != 1 {
        return Err(ExperimentError::Config(format!("plan needs exactly one test fold, found {}", test.len())));
    }
    Ok(SplitPlan { validation, test: test.remove(0) })
}

const COVERAGE_SLACK: Days = Days::new(7);

/// Fails if an evaluation range reaches outside the dataset's dates.
pub fn check_coverage(plan: &SplitPlan, dates: &[NaiveDate]) -> Result<(), ExperimentError> {
    let (Some(&first), Some(&last)) = (dates.first(), dates.last()) else {
        return Err(ExperimentError::RangeOutsideData("dataset is empty".into()));
    };
    for f in plan.folds() {
        if f.eval_end > last + COVERAGE_SLACK || f.eval_start + COVERAGE_SLACK < first || f.train_end < first {
            return Err(ExperimentError::RangeOutsideData(format!(
                "fold {} ({} to {}) vs data {first} to {last}",
                f.name, f.train_start, f.eval_end
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the default pool.
    pub jobs: Option<usize>,
}

/// One test-fold fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub market: String,
    pub alpha: f64,
    pub family: Family,
    pub run: usize,
    pub seed: u64,
    pub var_threshold: f64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRecord {
    pub market: String,
    pub alpha: f64,
    pub outcome: GridOutcome,
}

/// Test-fold probabilities of the first repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityRecord {
    pub market: String,
    pub alpha: f64,
    pub family: Family,
    pub series: ProbabilitySeries,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub grids: Vec<GridRecord>,
    pub probabilities: Vec<ProbabilityRecord>,
    /// First-repetition models keyed by `<market>_<alpha>_<family>`.
    pub bundles: Vec<(String, ModelBundle)>,
}

pub fn alpha_tag(alpha: f64) -> String {
    format!("{alpha}")
}

/// Loads a market's files and builds its imputed feature panel.
pub fn load_market(cfg: &ExperimentConfig, market: &MarketSpec) -> Result<MarketData, ExperimentError> {
    let series = pipeline::load_market_series(market, &cfg.paths.data)?;
    pipeline::build_market_data(&market.name, &series, &cfg.features, cfg.max_missing_frac, cfg.impute_k)
}

/// Labels, windows and standardizes every fold of the plan (validation
/// folds first, test last).
pub fn prepare_folds(cfg: &ExperimentConfig, md: &MarketData, alpha: f64) -> Result<Vec<FoldData>, ExperimentError> {
    let plan = make_split_plan(&cfg.plan)?;
    check_coverage(&plan, md.features.dates())?;
    let folds = plan.folds();
    match cfg.threshold_window {
        ThresholdWindow::Full => {
            let scenario = pipeline::scenario_for(md, alpha, None)?;
            let w = pipeline::windows_for(md, scenario, cfg.timesteps)?;
            folds.iter().map(|f| pipeline::prepare_fold(&w, f, scenario)).collect()
        }
        ThresholdWindow::Train => folds
            .iter()
            .map(|f| {
                let scenario = pipeline::scenario_for(md, alpha, Some((f.train_start, f.train_end)))?;
                let w = pipeline::windows_for(md, scenario, cfg.timesteps)?;
                pipeline::prepare_fold(&w, f, scenario)
            })
            .collect(),
    }
}

/// One test-fold fit with its model and probabilities when it succeeded.
pub struct FinalFit {
    pub record: RunRecord,
    pub output: Option<(ModelBundle, Vec<f64>)>,
}

/// Grid search for one family on the validation folds, seeded by market
/// and VaR-level position in the config.
pub fn search_family(cfg: &ExperimentConfig, m: usize, a: usize, folds: &[FoldData], family: Family, grid: &[Hyper]) -> GridOutcome {
    let resampling = cfg.resampling.enabled.then_some(&cfg.resampling);
    let grid_seed = derive_seed(cfg.seed, &[1, m as u64, a as u64, family.index()]);
    let outcome = pipeline::grid_search(family, grid, folds, resampling, cfg.val_frac, grid_seed);
    for p in &outcome.points {
        for e in &p.errors {
            log::warn!("{} alpha={} {} grid {}: {e}", cfg.markets[m].name, cfg.alphas[a], family.name(), p.hyper.grid_key());
        }
    }
    outcome
}

/// Repetition `rep` of the final fit on the test fold. Model failures are
/// recorded; leakage and internal errors propagate.
pub fn fit_final(
    cfg: &ExperimentConfig,
    m: usize,
    a: usize,
    test: &FoldData,
    family: Family,
    hyper: &Hyper,
    rep: usize,
) -> Result<FinalFit, ExperimentError> {
    let market = &cfg.markets[m];
    let alpha = cfg.alphas[a];
    let seed = derive_seed(cfg.seed, &[2, m as u64, a as u64, family.index(), rep as u64]);
    let rs = cfg.resampling.enabled.then(|| cfg.resampling.to_resample(derive_seed(seed, &[3])));
    let mut record = RunRecord {
        market: market.name.clone(),
        alpha,
        family,
        run: rep,
        seed,
        var_threshold: test.scenario.threshold,
        report: None,
        error: None,
    };
    match pipeline::fit_and_predict(&hyper.with_seed(seed), test, rs.as_ref(), cfg.val_frac) {
        Ok((model, _, p)) => {
            match evaluation::evaluate(test.eval.labels(), &p, cfg.decision_threshold) {
                Ok(r) => record.report = Some(r),
                Err(e) => record.error = Some(e.to_string()),
            }
            let bundle = ModelBundle {
                family,
                timesteps: cfg.timesteps,
                decision_threshold: cfg.decision_threshold,
                var_threshold: test.scenario.threshold,
                standardizer: test.standardizer.clone(),
                model,
            };
            Ok(FinalFit { record, output: Some((bundle, p)) })
        }
        Err(e) if e.is_internal() => Err(e),
        Err(e) => {
            log::warn!("{} alpha={alpha} {} run {rep}: {e}", market.name, family.name());
            record.error = Some(e.to_string());
            Ok(FinalFit { record, output: None })
        }
    }
}

fn run_family(
    cfg: &ExperimentConfig,
    m: usize,
    a: usize,
    folds: &[FoldData],
    family: Family,
    grid: &[Hyper],
) -> Result<(GridOutcome, Vec<FinalFit>), ExperimentError> {
    let outcome = search_family(cfg, m, a, folds, family, grid);
    let best = &outcome.points[outcome.best].hyper;
    let test = folds.last().expect("plan has a test fold");
    let fits = par::map_range(cfg.repetitions, |rep| fit_final(cfg, m, a, test, family, best, rep));
    Ok((outcome, fits.into_iter().collect::<Result<_, _>>()?))
}

/// Stem shared by checkpoint files: `<market>_<alpha>_<family>`.
pub fn model_stem(market: &str, alpha: f64, family: Family) -> String {
    format!("{market}_{}_{}", alpha_tag(alpha), family.name())
}

/// Runs every market, VaR level and model family of the config.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    if cfg.markets.is_empty() {
        return Err(ExperimentError::Config("no markets configured".into()));
    }
    par::with_jobs(opts.jobs, || {
        let mut out = RunOutput { records: Vec::new(), grids: Vec::new(), probabilities: Vec::new(), bundles: Vec::new() };
        let grids = cfg.models.grids();
        for (m, market) in cfg.markets.iter().enumerate() {
            log::info!("market {}: building features", market.name);
            let md = load_market(cfg, market)?;
            for (a, &alpha) in cfg.alphas.iter().enumerate() {
                let folds = prepare_folds(cfg, &md, alpha)?;
                let test = folds.last().expect("plan has a test fold");
                for (family, grid) in &grids {
                    log::info!("market {} alpha {alpha}: {}", market.name, family.name());
                    let (outcome, fits) = run_family(cfg, m, a, &folds, *family, grid)?;
                    out.grids.push(GridRecord { market: market.name.clone(), alpha, outcome });
                    for fit in fits {
                        if let Some((bundle, p)) = fit.output.filter(|_| fit.record.run == 0) {
                            out.bundles.push((model_stem(&market.name, alpha, *family), bundle));
                            let series = ProbabilitySeries::new(test.eval.sample_dates().to_vec(), p, test.eval.labels().to_vec())
                                .map_err(|e| ExperimentError::Internal(e.to_string()))?;
                            out.probabilities.push(ProbabilityRecord { market: market.name.clone(), alpha, family: *family, series });
                        }
                        out.records.push(fit.record);
                    }
                }
            }
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_plan_is_valid() {
        let plan = make_split_plan(&PlanConfig::default()).unwrap();
        assert_eq!(plan.validation.len(), 3);
        assert_eq!(plan.test.name, "K4");
    }

    #[test]
    fn overlapping_fold_is_rejected() {
        let mut cfg = PlanConfig::default();
        cfg.folds[0].train_end = cfg.folds[0].eval_start;
        assert!(matches!(make_split_plan(&cfg), Err(ExperimentError::Config(_))));
        let mut cfg = PlanConfig::default();
        cfg.folds.pop();
        assert!(make_split_plan(&cfg).is_err());
    }

    #[test]
    fn seeds_depend_on_every_part() {
        let s = derive_seed(7, &[2, 0, 1, 3, 4]);
        assert_eq!(s, derive_seed(7, &[2, 0, 1, 3, 4]));
        assert_ne!(s, derive_seed(7, &[2, 0, 1, 3, 5]));
        assert_ne!(s, derive_seed(8, &[2, 0, 1, 3, 4]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
    }

    #[test]
    fn coverage_rejects_late_test_range() {
        let plan = make_split_plan(&PlanConfig::default()).unwrap();
        let dates = crate::synthetic::business_days(
            NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(),
            NaiveDate::from_ymd_opt(2021, 6, 30).unwrap(),
        );
        assert!(matches!(check_coverage(&plan, &dates), Err(ExperimentError::RangeOutsideData(_))));
        let dates = crate::synthetic::business_days(
            NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(),
            NaiveDate::from_ymd_opt(2023, 12, 29).unwrap(),
        );
        check_coverage(&plan, &dates).unwrap();
    }
}
