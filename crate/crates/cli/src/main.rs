use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crashwatch::evaluation::evaluate;
use crashwatch::experiment::config::ThresholdWindow;
use crashwatch::experiment::pipeline::{build_market_data, load_market_series, windows_for};
use crashwatch::experiment::report::{write_grid_csv, write_outputs};
use crashwatch::experiment::{
    fit_final, load_market, model_stem, prepare_folds, run_experiment, search_family, ExperimentConfig, ExperimentError, Family,
    GridRecord, ModelBundle, RunOptions,
};
use crashwatch::indicators::simple_return;
use crashwatch::labeling::{label_crashes, read_returns_csv, var_threshold, write_returns_csv, LabelSeries, VarScenario};
use crashwatch::market_data::{align_calendars, parse_csv, FeaturePanel, PriceSeries};
use crashwatch::plot::{render_svg, ProbabilitySeries};
use crashwatch::resampling::{smote_enn, ResampleConfig};
use crashwatch::windowing::{flat_feature_names, flatten_windows, make_windows, WindowTensor, DEFAULT_TIMESTEPS};

const SEED_ENV: &str = "CRASHWATCH_SEED";

#[derive(Parser)]
#[command(name = "crashwatch", version, about = "Early crash detection from daily market data")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse OHLCV CSVs; one input is normalized, several are aligned on the first one's calendar.
    Ingest(IngestArgs),
    /// Build the imputed indicator panel and index returns for one market.
    Features(FeaturesArgs),
    /// Label crashes below the VaR threshold of a returns or OHLCV file.
    Label(LabelArgs),
    /// Cut a feature panel and labels into T-day windows.
    Windows(WindowsArgs),
    /// Apply SMOTE-ENN to a window tensor.
    Resample(ResampleArgs),
    /// Grid-search one model family and fit it on the test fold's training range.
    Train(TrainArgs),
    /// Score a saved model on a window tensor.
    Evaluate(EvaluateArgs),
    /// Grid-search model families on the validation folds.
    Gridsearch(GridArgs),
    /// Run the full experiment described by a config file.
    Run(RunArgs),
    /// Write a crash-probability CSV and SVG chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// OHLCV CSV files; the file stem is the instrument id.
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Market name; may be omitted when the config has exactly one.
    #[arg(long)]
    market: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable SMOTE-ENN.
    #[arg(long)]
    baseline: bool,
    #[arg(long = "threshold-window")]
    threshold_window: Option<ThresholdWindow>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    /// Returns CSV path; defaults to `returns.csv` next to `--out`.
    #[arg(long)]
    returns: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    /// `date,return` CSV or an OHLCV CSV (returns from Adj Close).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WindowsArgs {
    /// Feature panel CSV.
    #[arg(long = "in")]
    input: PathBuf,
    /// Labels CSV covering every panel date.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TIMESTEPS)]
    timesteps: usize,
    /// Keep samples labeled on or after this date.
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Keep samples labeled on or before this date.
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Resampled rows as CSV (flattened features and label).
    #[arg(long)]
    out: PathBuf,
    /// Per-row provenance CSV; defaults to `<out stem>.audit.csv`.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    alpha: Option<f64>,
    /// rnn, lstm, gru, forest or boost.
    #[arg(long)]
    family: String,
    /// Directory for the model files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Model bundle (`*.model.json`).
    #[arg(long)]
    model: PathBuf,
    /// Window tensor of raw features.
    #[arg(long = "in")]
    input: PathBuf,
    /// Decision threshold; defaults to the model's.
    #[arg(long)]
    threshold: Option<f64>,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    alpha: Option<f64>,
    /// Restrict to one family.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    baseline: bool,
    #[arg(long = "threshold-window")]
    threshold_window: Option<ThresholdWindow>,
    /// Restrict to one family.
    #[arg(long)]
    family: Option<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Probability CSV to re-render, or a window tensor when `--model` is given.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Build windows from this config's market data (with `--model`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    market: Option<String>,
    /// Output path; `.csv` and `.svg` siblings are written.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug)]
enum CliError {
    User(String),
    Internal(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        if e.is_internal() {
            CliError::Internal(e.to_string())
        } else {
            CliError::User(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn user(e: impl std::fmt::Display) -> CliError {
    CliError::User(e.to_string())
}

fn at(path: &Path) -> impl Fn(&dyn std::fmt::Display) -> CliError + '_ {
    move |e| CliError::User(format!("{}: {e}", path.display()))
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| at(path)(&e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| at(dir)(&e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| at(path)(&e))
}

fn stem_id(path: &Path) -> CliResult<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).ok_or_else(|| user(format!("{}: no file name", path.display())))
}

fn seed_or_env(seed: Option<u64>) -> CliResult<Option<u64>> {
    if seed.is_some() {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| user(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: &Path, seed: Option<u64>, baseline: bool, window: Option<ThresholdWindow>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed_or_env(seed)? {
        cfg.seed = s;
    }
    if baseline {
        cfg.resampling.enabled = false;
    }
    if let Some(w) = window {
        cfg.threshold_window = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn market_index(cfg: &ExperimentConfig, name: Option<&str>) -> CliResult<usize> {
    match name {
        Some(n) => cfg.markets.iter().position(|m| m.name == n).ok_or_else(|| user(format!("market `{n}` not in config"))),
        None if cfg.markets.len() == 1 => Ok(0),
        None => Err(user("config has several markets; pass --market")),
    }
}

/// Position of `alpha` in the config's list, appending it when absent.
fn alpha_index(cfg: &mut ExperimentConfig, alpha: Option<f64>) -> usize {
    match alpha {
        None => 0,
        Some(a) => cfg.alphas.iter().position(|&x| x == a).unwrap_or_else(|| {
            cfg.alphas.push(a);
            cfg.alphas.len() - 1
        }),
    }
}

fn parse_family(name: &str) -> CliResult<Family> {
    Family::parse(name).ok_or_else(|| user(format!("unknown family `{name}` (expected rnn, lstm, gru, forest or boost)")))
}

fn read_tensor(path: &Path) -> CliResult<WindowTensor> {
    let f = File::open(path).map_err(|e| at(path)(&e))?;
    WindowTensor::read_from(BufReader::new(f)).map_err(|e| at(path)(&e))
}

fn write_tensor(w: &WindowTensor, path: &Path) -> CliResult<()> {
    w.write_to(create(path)?).map_err(|e| at(path)(&e))
}

/// One-line summary plus status fields.
struct Done {
    summary: String,
    status: Value,
}

fn ingest(a: IngestArgs) -> CliResult<Done> {
    let series: Vec<PriceSeries> = a
        .inputs
        .iter()
        .map(|p| parse_csv(&read(p)?, &stem_id(p)?).map_err(|e| at(p)(&e)))
        .collect::<CliResult<_>>()?;
    if let [single] = series.as_slice() {
        single.write_csv(create(&a.out)?).map_err(|e| at(&a.out)(&e))?;
        let missing: usize = single.bars().iter().map(|b| [b.open, b.high, b.low, b.close, b.adj_close, b.volume].iter().filter(|v| v.is_none()).count()).sum();
        return Ok(Done {
            summary: format!("{}: {} bars, {missing} missing cells -> {}", single.instrument_id, single.len(), a.out.display()),
            status: json!({"bars": single.len(), "missing_cells": missing, "out": a.out}),
        });
    }
    let panel = align_calendars(&series, &series[0].instrument_id).map_err(user)?;
    panel.write_csv(create(&a.out)?).map_err(|e| at(&a.out)(&e))?;
    Ok(Done {
        summary: format!("{} series aligned on {}: {} dates x {} columns, {} missing -> {}", series.len(), series[0].instrument_id, panel.n_rows(), panel.n_cols(), panel.missing_count(), a.out.display()),
        status: json!({"dates": panel.n_rows(), "columns": panel.n_cols(), "missing_cells": panel.missing_count(), "out": a.out}),
    })
}

fn features(a: FeaturesArgs) -> CliResult<Done> {
    let cfg = load_config(&a.cfg.config, a.cfg.seed, a.cfg.baseline, a.cfg.threshold_window)?;
    let m = market_index(&cfg, a.cfg.market.as_deref())?;
    let series = load_market_series(&cfg.markets[m], &cfg.paths.data)?;
    let md = build_market_data(&cfg.markets[m].name, &series, &cfg.features, cfg.max_missing_frac, cfg.impute_k)?;
    md.features.write_csv(create(&a.out)?).map_err(|e| at(&a.out)(&e))?;
    let returns = a.returns.unwrap_or_else(|| a.out.with_file_name("returns.csv"));
    write_returns_csv(md.features.dates(), &md.returns, create(&returns)?).map_err(|e| at(&returns)(&e))?;
    Ok(Done {
        summary: format!("{}: {} dates x {} features -> {}", md.name, md.features.n_rows(), md.features.n_cols(), a.out.display()),
        status: json!({"dates": md.features.n_rows(), "features": md.features.n_cols(), "out": a.out, "returns": returns}),
    })
}

fn read_returns_any(path: &Path) -> CliResult<(Vec<NaiveDate>, Vec<Option<f64>>)> {
    let raw = read(path)?;
    if raw.starts_with(b"Date,") {
        let s = parse_csv(&raw, &stem_id(path)?).map_err(|e| at(path)(&e))?;
        let r = simple_return(&s.field("adj_close")).map_err(|e| at(path)(&e))?;
        Ok((s.dates(), r))
    } else {
        read_returns_csv(&raw).map_err(|e| at(path)(&e))
    }
}

fn label(a: LabelArgs) -> CliResult<Done> {
    let (dates, returns) = read_returns_any(&a.input)?;
    let threshold = var_threshold(&returns, a.alpha).map_err(user)?;
    let labels = label_crashes(&dates, &returns, VarScenario { alpha: a.alpha, threshold }).map_err(user)?;
    labels.write_csv(create(&a.out)?).map_err(|e| at(&a.out)(&e))?;
    Ok(Done {
        summary: format!("alpha {} threshold {threshold}: {} crashes in {} days -> {}", a.alpha, labels.crash_count(), labels.len(), a.out.display()),
        status: json!({"alpha": a.alpha, "threshold": threshold, "crashes": labels.crash_count(), "days": labels.len(), "out": a.out}),
    })
}

fn windows(a: WindowsArgs) -> CliResult<Done> {
    let panel = FeaturePanel::read_csv(&read(&a.input)?).map_err(|e| at(&a.input)(&e))?;
    let labels = LabelSeries::read_csv(&read(&a.labels)?).map_err(|e| at(&a.labels)(&e))?;
    let labels = labels.reindex(panel.dates()).ok_or_else(|| user(format!("{}: does not cover every panel date", a.labels.display())))?;
    let mut w = make_windows(&panel, &labels, a.timesteps).map_err(user)?;
    if a.from.is_some() || a.to.is_some() {
        let idx = w.indices_between(a.from.unwrap_or(NaiveDate::MIN), a.to.unwrap_or(NaiveDate::MAX));
        w = w.select(&idx);
    }
    write_tensor(&w, &a.out)?;
    Ok(Done {
        summary: format!("{} windows of {}x{}, {} positive -> {}", w.samples(), w.timesteps(), w.features(), w.positives(), a.out.display()),
        status: json!({"samples": w.samples(), "timesteps": w.timesteps(), "features": w.features(), "positives": w.positives(), "out": a.out}),
    })
}

fn resample(a: ResampleArgs) -> CliResult<Done> {
    let w = read_tensor(&a.input)?;
    let cfg = ResampleConfig { seed: seed_or_env(a.seed)?.unwrap_or(0), ..ResampleConfig::default() };
    let r = smote_enn(&flatten_windows(&w), w.labels(), &cfg).map_err(user)?;
    let mut out = csv::Writer::from_writer(create(&a.out)?);
    let mut header = flat_feature_names(&w);
    header.push("label".into());
    out.write_record(&header).map_err(|e| at(&a.out)(&e))?;
    for i in 0..r.x.rows() {
        let mut rec: Vec<String> = r.x.row(i).iter().map(f64::to_string).collect();
        rec.push(r.y[i].to_string());
        out.write_record(&rec).map_err(|e| at(&a.out)(&e))?;
    }
    out.flush().map_err(|e| at(&a.out)(&e))?;
    let audit = a.audit.unwrap_or_else(|| a.out.with_extension("audit.csv"));
    r.write_audit_csv(create(&audit)?).map_err(|e| at(&audit)(&e))?;
    let pos = r.y.iter().filter(|&&y| y == 1).count();
    Ok(Done {
        summary: format!("{} -> {} rows ({} positive) -> {}", w.samples(), r.y.len(), pos, a.out.display()),
        status: json!({"rows_in": w.samples(), "rows_out": r.y.len(), "positives": pos, "out": a.out, "audit": audit}),
    })
}

fn train(a: TrainArgs) -> CliResult<Done> {
    let family = parse_family(&a.family)?;
    let mut cfg = load_config(&a.cfg.config, a.cfg.seed, a.cfg.baseline, a.cfg.threshold_window)?;
    let m = market_index(&cfg, a.cfg.market.as_deref())?;
    let ai = alpha_index(&mut cfg, a.alpha);
    let grid = cfg.models.grids().into_iter().find(|(f, _)| *f == family).map(|(_, g)| g);
    let grid = grid.ok_or_else(|| user(format!("family {} is not enabled in the config", family.name())))?;
    let md = load_market(&cfg, &cfg.markets[m])?;
    let folds = prepare_folds(&cfg, &md, cfg.alphas[ai])?;
    let outcome = search_family(&cfg, m, ai, &folds, family, &grid);
    let best = &outcome.points[outcome.best].hyper;
    let fit = fit_final(&cfg, m, ai, folds.last().expect("test fold"), family, best, 0)?;
    let Some((bundle, _)) = fit.output else {
        return Err(user(format!("training failed: {}", fit.record.error.unwrap_or_default())));
    };
    let path = bundle.save(&a.out, &model_stem(&cfg.markets[m].name, cfg.alphas[ai], family))?;
    let bal = fit.record.report.and_then(|r| r.bal_acc);
    Ok(Done {
        summary: format!("{} {}: test balanced accuracy {} -> {}", cfg.markets[m].name, family.name(), bal.map_or("NA".into(), |b| format!("{b:.4}")), path.display()),
        status: json!({"model": path, "hyper": best.grid_key(), "metrics": fit.record.report}),
    })
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult<Done> {
    let bundle = ModelBundle::load(&a.model)?;
    let w = read_tensor(&a.input)?;
    let p = bundle.predict_raw(&w)?;
    let threshold = a.threshold.unwrap_or(bundle.decision_threshold);
    let report = evaluate(w.labels(), &p, threshold).map_err(user)?;
    let text = report.to_json();
    match &a.out {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| at(path)(&e))?,
        None => println!("{text}"),
    }
    Ok(Done {
        summary: format!("{} samples: hit rate {}, balanced accuracy {}", w.samples(), crashwatch::evaluation::fmt_opt(report.hit_rate), crashwatch::evaluation::fmt_opt(report.bal_acc)),
        status: json!({"metrics": report, "out": a.out}),
    })
}

fn gridsearch(a: GridArgs) -> CliResult<Done> {
    let mut cfg = load_config(&a.cfg.config, a.cfg.seed, a.cfg.baseline, a.cfg.threshold_window)?;
    if let Some(f) = &a.family {
        cfg.models.restrict(parse_family(f)?);
    }
    let m = market_index(&cfg, a.cfg.market.as_deref())?;
    let ai = alpha_index(&mut cfg, a.alpha);
    let md = load_market(&cfg, &cfg.markets[m])?;
    let folds = prepare_folds(&cfg, &md, cfg.alphas[ai])?;
    let grids: Vec<GridRecord> = cfg
        .models
        .grids()
        .into_iter()
        .map(|(family, grid)| GridRecord {
            market: cfg.markets[m].name.clone(),
            alpha: cfg.alphas[ai],
            outcome: search_family(&cfg, m, ai, &folds, family, &grid),
        })
        .collect();
    if grids.is_empty() {
        return Err(user("no model family enabled"));
    }
    write_grid_csv(&grids, &a.out)?;
    let best: Vec<Value> = grids
        .iter()
        .map(|g| json!({"family": g.outcome.family.name(), "params": g.outcome.points[g.outcome.best].hyper.grid_key(), "mean_auc_prc": g.outcome.points[g.outcome.best].mean_auc}))
        .collect();
    Ok(Done { summary: format!("{} families searched -> {}", grids.len(), a.out.display()), status: json!({"best": best, "out": a.out}) })
}

fn run(a: RunArgs, jobs: Option<usize>) -> CliResult<Done> {
    let mut cfg = load_config(&a.config, a.seed, a.baseline, a.threshold_window)?;
    if let Some(f) = &a.family {
        cfg.models.restrict(parse_family(f)?);
    }
    if let Some(out) = a.out {
        cfg.paths.out = out;
    }
    let out = run_experiment(&cfg, &RunOptions { jobs })?;
    let written = write_outputs(&out, &cfg, &cfg.paths.out)?;
    let failed = out.records.iter().filter(|r| r.error.is_some()).count();
    Ok(Done {
        summary: format!("{} runs ({failed} failed), {} files -> {}", out.records.len(), written.len(), cfg.paths.out.display()),
        status: json!({"runs": out.records.len(), "failed": failed, "out": cfg.paths.out, "files": written}),
    })
}

fn plot(a: PlotArgs) -> CliResult<Done> {
    let csv_path = a.out.with_extension("csv");
    let svg_path = a.out.with_extension("svg");
    let (series, threshold, write_csv) = match (&a.model, &a.input, &a.config) {
        (None, Some(input), None) => {
            let s = ProbabilitySeries::read_csv(&read(input)?).map_err(|e| at(input)(&e))?;
            (s, a.threshold.unwrap_or(crashwatch::evaluation::DEFAULT_THRESHOLD), false)
        }
        (Some(model), input, config) => {
            let bundle = ModelBundle::load(model)?;
            let w = match (input, config) {
                (Some(t), None) => read_tensor(t)?,
                (None, Some(c)) => {
                    let cfg = load_config(c, None, false, None)?;
                    let m = market_index(&cfg, a.market.as_deref())?;
                    let md = load_market(&cfg, &cfg.markets[m])?;
                    let scenario = VarScenario { alpha: f64::NAN, threshold: bundle.var_threshold };
                    windows_for(&md, scenario, bundle.timesteps)?
                }
                _ => return Err(user("plot --model needs exactly one of --in <tensor> or --config")),
            };
            let p = bundle.predict_raw(&w)?;
            let s = ProbabilitySeries::new(w.sample_dates().to_vec(), p, w.labels().to_vec()).map_err(user)?;
            (s, a.threshold.unwrap_or(bundle.decision_threshold), true)
        }
        _ => return Err(user("plot needs --in <probability csv>, or --model with --in <tensor> or --config")),
    };
    if write_csv {
        series.write_csv(create(&csv_path)?).map_err(|e| at(&csv_path)(&e))?;
    }
    let title = a.title.unwrap_or_else(|| a.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let svg = render_svg(&series, &title, threshold);
    std::fs::write(&svg_path, svg).map_err(|e| at(&svg_path)(&e))?;
    Ok(Done {
        summary: format!("{} points -> {}", series.dates.len(), svg_path.display()),
        status: json!({"points": series.dates.len(), "svg": svg_path, "csv": write_csv.then_some(&csv_path)}),
    })
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Features(_) => "features",
        Command::Label(_) => "label",
        Command::Windows(_) => "windows",
        Command::Resample(_) => "resample",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Gridsearch(_) => "gridsearch",
        Command::Run(_) => "run",
        Command::Plot(_) => "plot",
    }
}

fn status(command: &str, ok: bool, fields: Value) {
    let mut v = json!({"command": command, "status": if ok { "ok" } else { "error" }});
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, fields) {
        dst.extend(src);
    }
    eprintln!("{v}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code != 0 {
                status("usage", false, json!({"kind": "user", "error": e.kind().to_string()}));
            }
            return ExitCode::from(code);
        }
    };
    let command = name(&cli.command);
    let jobs = cli.jobs;
    let result = crashwatch::par::with_jobs(jobs, move || match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Features(a) => features(a),
        Command::Label(a) => label(a),
        Command::Windows(a) => windows(a),
        Command::Resample(a) => resample(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Run(a) => run(a, jobs),
        Command::Plot(a) => plot(a),
    });
    match result {
        Ok(done) => {
            println!("{}", done.summary);
            status(command, true, done.status);
            ExitCode::SUCCESS
        }
        Err(CliError::User(msg)) => {
            eprintln!("error: {msg}");
            status(command, false, json!({"kind": "user", "error": msg}));
            ExitCode::from(1)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            status(command, false, json!({"kind": "internal", "error": msg}));
            ExitCode::from(2)
        }
    }
}
