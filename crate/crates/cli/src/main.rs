//! `mpi`: batch driver for the maintenance pressure pipeline.
//!
//! Stages exchange plain CSV and JSON files:
//!
//! ```text
//! synth/ingest -> env.csv -> featurize -> features.csv + features.json
//!                        \-> index -> daily_scores.csv
//! features.csv + daily_scores.csv -> train -> model.json -> predict / explain
//! daily_scores.csv + features.csv + shap.json -> forecast -> forecast.csv
//! ```
//!
//! Exit codes: 0 success, 1 file I/O error, 2 usage error, 3 input that
//! fails parsing or validation.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use mpi_core::evaluate::{confusion, report_with_labels, stratified_split};
use mpi_core::explain::{global_importance, tree_shap, waterfall, GlobalImportance, Waterfall};
use mpi_core::features::{FeatureMatrix, FeatureSpec};
use mpi_core::forecast::{predict, select_regressors, ForecastConfig};
use mpi_core::gbdt::{argmax, predict_margin, softmax, train_with_history, TrainParams, TreeEnsemble};
use mpi_core::index::{derive_eof_weights, parse_scores_csv, score_series, scores_to_csv, MpiConfig, RiskLabel, ScoreRow};
use mpi_core::ingest::{
    fetch_power, forward_fill, merge_aod, parse_env_csv, to_csv, validate, EnvSeries, Verdict,
};
use mpi_core::pipeline::{align_labels, fit_forecaster, FeatureArtifact};
use mpi_core::synth::{generate, ScenarioSpec};
use mpi_core::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::io::{read, read_json, write_atomic, write_json, FileError, ValidationFailure};

#[derive(Debug, Parser)]
#[command(name = "mpi", version, about = "Maintenance pressure index pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic daily weather series.
    Synth(SynthArgs),
    /// Validate a daily CSV, or fetch POWER meteorology and merge AOD into it.
    Ingest(IngestArgs),
    /// Build the scaled feature matrix.
    Featurize(FeaturizeArgs),
    /// Score each day and assign risk bands.
    Index(IndexArgs),
    /// Train the boosted-tree risk classifier.
    Train(TrainArgs),
    /// Predict risk bands with a trained classifier.
    Predict(PredictArgs),
    /// Global and per-sample Shapley explanations.
    Explain(ExplainArgs),
    /// Fit the weekly forecaster and predict ahead.
    Forecast(ForecastArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Classification report for predicted vs true bands.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    days: Option<usize>,
    /// First date, YYYY-MM-DD.
    #[arg(long)]
    start: Option<NaiveDate>,
    /// Scenario JSON; any field may be omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Daily CSV. With --power only its `aod` column is used.
    #[arg(long)]
    input: PathBuf,
    /// `lat,lon,start,end` with dates as YYYY-MM-DD.
    #[arg(long)]
    power: Option<String>,
    /// Forward-fill missing calendar days.
    #[arg(long)]
    fill: bool,
    /// Also write the validation report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Feature spec JSON. Defaults to the 14-column immediate/rolling/month set.
    #[arg(long, conflicts_with = "lags")]
    spec: Option<PathBuf>,
    /// Add 1, 3 and 7 day lags to the default spec.
    #[arg(long)]
    lags: bool,
    /// Fit scaling ranges on the first N days only.
    #[arg(long)]
    train_days: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the spec and scaling ranges.
    #[arg(long)]
    scaler_out: PathBuf,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    input: PathBuf,
    /// MPI config JSON. Defaults to the reference weights and thresholds.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the configured weights with EOF weights derived from the input.
    #[arg(long)]
    derive_eof: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the effective config (after --derive-eof).
    #[arg(long)]
    config_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// `date,score,label` CSV as written by `index`.
    #[arg(long)]
    labels: PathBuf,
    /// Training parameters JSON, optionally with a `holdout` split.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Only predict the dates held out during training.
    #[arg(long)]
    holdout: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    /// Feature CSV to explain.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of forecaster regressors to select.
    #[arg(long, default_value_t = 4)]
    top_k: usize,
    /// Add a waterfall for this date (repeatable).
    #[arg(long = "sample")]
    samples: Vec<NaiveDate>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Feature CSV supplying regressor columns.
    #[arg(long)]
    regressors: Option<PathBuf>,
    /// Explain output whose `selected_regressors` are used.
    #[arg(long, requires = "regressors")]
    select: Option<PathBuf>,
    /// Regressor column name (repeatable); overrides --select.
    #[arg(long = "regressor", requires = "regressors")]
    regressor_names: Vec<String>,
    /// Forecaster config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weeks ahead.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=mpi_service::MAX_HORIZON as u64))]
    horizon: u64,
    #[arg(long)]
    out: PathBuf,
    /// Write JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Also write the fitted model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured bind address.
    #[arg(long)]
    bind: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// CSV with `date` and `label` columns.
    #[arg(long)]
    pred: PathBuf,
    /// CSV with `date` and `label` columns, such as `index` output.
    #[arg(long = "true")]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the fixed-width text report.
    #[arg(long)]
    text: Option<PathBuf>,
}

fn invalid(message: impl Into<String>) -> anyhow::Error {
    ValidationFailure(message.into()).into()
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> anyhow::Error {
    invalid(format!("cannot parse {}: {e}", path.display()))
}

fn read_env(path: &Path) -> Result<EnvSeries> {
    parse_env_csv(&read(path)?).map_err(|e| parse_error(path, e))
}

fn read_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::from_csv(&read(path)?).map_err(|e| parse_error(path, e))
}

fn read_scores(path: &Path) -> Result<Vec<ScoreRow>> {
    parse_scores_csv(&read(path)?).map_err(|e| parse_error(path, e))
}

fn read_model(path: &Path) -> Result<TreeEnsemble> {
    let text = io::read_string(path)?;
    TreeEnsemble::from_json(&text).map_err(|e| parse_error(path, e))
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: ScenarioSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(days) = args.days {
        spec.days = days;
    }
    if let Some(start) = args.start {
        spec.start = start;
    }
    let series = generate(&spec).map_err(|e| invalid(e.to_string()))?;
    write_atomic(&args.out, to_csv(&series).as_bytes())
}

fn parse_power(arg: &str) -> Result<(f64, f64, NaiveDate, NaiveDate)> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    let [lat, lon, start, end] = parts[..] else {
        return Err(invalid(format!("--power expects lat,lon,start,end, got `{arg}`")));
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| invalid(format!("--power `{s}`: {e}")));
    let date = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| invalid(format!("--power `{s}`: {e}")));
    Ok((num(lat)?, num(lon)?, date(start)?, date(end)?))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let input = read_env(&args.input)?;
    let mut series = match &args.power {
        Some(spec) => {
            let (lat, lon, start, end) = parse_power(spec)?;
            let met = fetch_power(lat, lon, start, end).map_err(|e| anyhow!("POWER request failed: {e}"))?;
            merge_aod(&met, &input).map_err(|e| invalid(e.to_string()))?
        }
        None => input,
    };
    if args.fill {
        series = forward_fill(&series);
    }
    let report = validate(&series);
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    match report.verdict {
        Verdict::Fail => {
            let first = &report.out_of_range[0];
            return Err(invalid(format!(
                "{} out-of-range value(s), first {} {}={}",
                report.out_of_range.len(),
                first.date,
                first.field,
                first.value
            )));
        }
        Verdict::Warn => log::warn!("{} missing day(s) in {} rows", report.gap_dates.len(), report.row_count),
        Verdict::Pass => {}
    }
    write_atomic(&args.out, to_csv(&series).as_bytes())
}

fn featurize(args: FeaturizeArgs) -> Result<()> {
    let series = read_env(&args.input)?;
    let spec = match &args.spec {
        Some(p) => read_json(p)?,
        None if args.lags => FeatureSpec::with_default_lags(),
        None => FeatureSpec::default(),
    };
    let fit_on = match args.train_days {
        Some(n) if n == 0 || n > series.len() => {
            return Err(invalid(format!("--train-days {n} outside 1..={}", series.len())));
        }
        Some(n) => series.slice(0..n),
        None => series.clone(),
    };
    let artifact = FeatureArtifact::fit(&fit_on, spec).map_err(|e| invalid(e.to_string()))?;
    let fm = artifact.apply(&series).map_err(|e| invalid(e.to_string()))?;
    log::info!("{} rows x {} features", fm.n_rows(), fm.n_cols());
    write_json(&args.scaler_out, &artifact)?;
    write_atomic(&args.out, fm.to_csv().as_bytes())
}

fn index(args: IndexArgs) -> Result<()> {
    let series = read_env(&args.input)?;
    let mut config: MpiConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => MpiConfig::default(),
    };
    if args.derive_eof {
        config.weights = derive_eof_weights(&series, &config.thresholds).map_err(|e| invalid(e.to_string()))?;
        log::info!("EOF weights {:?}", config.weights.as_array());
    }
    let scored = score_series(&series, &config).map_err(|e| invalid(e.to_string()))?;
    if let Some(path) = &args.config_out {
        write_json(path, &config)?;
    }
    let rows: Vec<ScoreRow> = scored.scores.iter().map(ScoreRow::from).collect();
    write_atomic(&args.out, scores_to_csv(&rows).as_bytes())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Holdout {
    fraction: f64,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TrainFile {
    #[serde(flatten)]
    params: TrainParams,
    #[serde(default)]
    holdout: Option<Holdout>,
}

fn train(args: TrainArgs) -> Result<()> {
    let fm = read_features(&args.features)?;
    let labels = read_scores(&args.labels)?;
    let file: TrainFile = match &args.params {
        Some(p) => read_json(p)?,
        None => TrainFile::default(),
    };
    let (x, y) = align_labels(&fm, &labels).map_err(|e| invalid(e.to_string()))?;
    let (x_train, y_train, held_out) = match file.holdout {
        Some(h) => {
            let (train_idx, test_idx) = stratified_split(&y, h.fraction, h.seed).map_err(|e| invalid(e.to_string()))?;
            let y_train: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
            let dates: Vec<NaiveDate> = test_idx.iter().map(|&i| x.dates[i]).collect();
            (x.select_rows(&train_idx), y_train, Some(dates))
        }
        None => (x, y, None),
    };
    let (mut model, losses) = train_with_history(&x_train, &y_train, &file.params).map_err(|e| invalid(e.to_string()))?;
    log::info!(
        "trained {} rounds on {} rows, log-loss {:.6} -> {:.6}",
        model.rounds.len(),
        x_train.n_rows(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    model.metadata.insert("train_rows".into(), x_train.n_rows().into());
    if let Some(dates) = held_out {
        model.metadata.insert("holdout_dates".into(), serde_json::to_value(dates)?);
    }
    let mut text = model.to_json()?;
    text.push('\n');
    write_atomic(&args.out, text.as_bytes())
}

fn holdout_dates(model: &TreeEnsemble) -> Result<BTreeSet<NaiveDate>> {
    let value = model
        .metadata
        .get("holdout_dates")
        .ok_or_else(|| invalid("model was trained without a holdout split"))?;
    serde_json::from_value(value.clone()).map_err(|e| invalid(format!("holdout_dates: {e}")))
}

fn check_columns(model: &TreeEnsemble, fm: &FeatureMatrix) -> Result<()> {
    model
        .check_features(&fm.feature_names)
        .map_err(|e| invalid(format!("model does not match feature file: {e}")))
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let fm = read_features(&args.features)?;
    check_columns(&model, &fm)?;
    let keep = if args.holdout { Some(holdout_dates(&model)?) } else { None };
    let mut out = String::from("date,label\n");
    for (i, date) in fm.dates.iter().enumerate() {
        if keep.as_ref().is_some_and(|k| !k.contains(date)) {
            continue;
        }
        let class = argmax(&predict_margin(&model, fm.row(i))?);
        let label = RiskLabel::from_class_index(class).ok_or_else(|| invalid(format!("class {class} has no risk band")))?;
        out.push_str(&format!("{},{}\n", date.format("%Y-%m-%d"), label.as_str()));
    }
    write_atomic(&args.out, out.as_bytes())
}

#[derive(Debug, Serialize)]
struct SampleOut {
    date: NaiveDate,
    predicted: usize,
    probabilities: Vec<f64>,
    waterfall: Waterfall,
}

#[derive(Debug, Serialize)]
struct ExplainOut {
    global_importance: GlobalImportance,
    selected_regressors: Vec<String>,
    samples: Vec<SampleOut>,
}

fn explain(args: ExplainArgs) -> Result<()> {
    let model = read_model(&args.model)?;
    let fm = read_features(&args.data)?;
    check_columns(&model, &fm)?;
    let importance = global_importance(&model, &fm).map_err(|e| invalid(e.to_string()))?;
    let mut samples = Vec::new();
    for date in &args.samples {
        let i = fm
            .dates
            .iter()
            .position(|d| d == date)
            .ok_or_else(|| invalid(format!("--sample {date} not in {}", args.data.display())))?;
        let x = fm.row(i);
        let margins = predict_margin(&model, x)?;
        let predicted = argmax(&margins);
        let attr = tree_shap(&model, x)?;
        samples.push(SampleOut {
            date: *date,
            predicted,
            probabilities: softmax(&margins),
            waterfall: waterfall(&attr, predicted)?,
        });
    }
    let out = ExplainOut {
        selected_regressors: select_regressors(&importance, args.top_k),
        global_importance: importance,
        samples,
    };
    log::info!("top features {:?}", out.global_importance.top(args.top_k));
    write_json(&args.out, &out)
}

#[derive(Debug, Deserialize)]
struct Selection {
    selected_regressors: Vec<String>,
}

fn forecast_cmd(args: ForecastArgs) -> Result<()> {
    let scores = read_scores(&args.scores)?;
    let config: ForecastConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => ForecastConfig::default(),
    };
    let features = args.regressors.as_deref().map(read_features).transpose()?;
    let names = if !args.regressor_names.is_empty() {
        args.regressor_names.clone()
    } else if let Some(p) = &args.select {
        read_json::<Selection>(p)?.selected_regressors
    } else {
        if features.is_some() {
            log::warn!("--regressors given without --select or --regressor; fitting without regressors");
        }
        Vec::new()
    };
    let daily: Vec<(NaiveDate, f64)> = scores.iter().map(|r| (r.date, r.score)).collect();
    let model = fit_forecaster(&daily, features.as_ref(), &names, &config).map_err(|e| invalid(e.to_string()))?;
    let result = predict(&model, args.horizon as usize).map_err(|e| invalid(e.to_string()))?;
    if let Some(path) = &args.model_out {
        let mut text = model.to_json()?;
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
    }
    let body = if args.json {
        let mut text = result.to_json()?;
        text.push('\n');
        text
    } else {
        result.to_csv()
    };
    write_atomic(&args.out, body.as_bytes())
}

fn serve(args: ServeArgs) -> Result<()> {
    let mut config = mpi_service::ServiceConfig::from_file(&args.config).map_err(startup_error)?;
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    let runtime = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
    runtime.block_on(mpi_service::serve(config)).map_err(startup_error)
}

fn startup_error(e: mpi_service::StartupError) -> anyhow::Error {
    match e {
        mpi_service::StartupError::Io { path, source } => FileError {
            path,
            action: "read",
            source,
        }
        .into(),
        mpi_service::StartupError::Bind { .. } => anyhow!(e),
        other => invalid(other.to_string()),
    }
}

fn read_labels(path: &Path) -> Result<BTreeMap<NaiveDate, RiskLabel>> {
    let bytes = read(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| invalid(format!("{}: {e}", path.display())))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("{} has no `{name}` column", path.display())))
    };
    let (date_col, label_col) = (col("date")?, col("label")?);
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let line = row.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(&row[date_col], "%Y-%m-%d")
            .map_err(|e| invalid(format!("{}:{line}: date: {e}", path.display())))?;
        let label = RiskLabel::parse(&row[label_col])
            .ok_or_else(|| invalid(format!("{}:{line}: unknown label `{}`", path.display(), &row[label_col])))?;
        if out.insert(date, label).is_some() {
            return Err(invalid(format!("{}:{line}: duplicate date {date}", path.display())));
        }
    }
    Ok(out)
}

fn eval(args: EvalArgs) -> Result<()> {
    let pred = read_labels(&args.pred)?;
    let truth = read_labels(&args.truth)?;
    let mut y_true = Vec::with_capacity(pred.len());
    let mut y_pred = Vec::with_capacity(pred.len());
    for (date, p) in &pred {
        let t = truth
            .get(date)
            .ok_or_else(|| invalid(format!("{date} has a prediction but no true label")))?;
        y_true.push(t.class_index());
        y_pred.push(p.class_index());
    }
    let names: Vec<&str> = RiskLabel::ALL.iter().map(|l| l.as_str()).collect();
    let cm = confusion(&y_true, &y_pred, names.len()).map_err(|e| invalid(e.to_string()))?;
    let report = report_with_labels(&cm, &names)?;
    log::info!("accuracy {:.4} on {} days", report.accuracy, report.total);
    if let Some(path) = &args.text {
        write_atomic(path, report.to_text().as_bytes())?;
    }
    write_json(&args.out, &report)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Featurize(a) => featurize(a),
        Command::Index(a) => index(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Explain(a) => explain(a),
        Command::Forecast(a) => forecast_cmd(a),
        Command::Serve(a) => serve(a),
        Command::Eval(a) => eval(a),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<FileError>()) {
        1
    } else if e.chain().any(|c| c.is::<ValidationFailure>()) {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPI_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
