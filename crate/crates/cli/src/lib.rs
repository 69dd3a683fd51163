//! Command-line front end: ingestion, training, one-shot scheduling and the
//! simulation experiments, all emitting JSON (and CSV where tabular).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use dr_core::flexoffer::ProbabilisticFlexOffer;
use dr_core::forecast::{forecast_activity, ForecastModels};
use dr_core::load_data::{extract_events, extract_signature, ingest_load_csv, DeviceSignature, EventSeries, LoadSeries};
use dr_core::market::{ingest_market_csv, MarketSeries};
use dr_core::scheduler::{schedule, ScheduleProposal};
use dr_core::simulation::config::ExperimentConfig;
use dr_core::simulation::experiments::{run_comparisons, simulate, ComparisonBundle, ForecastScore};
use dr_core::simulation::prequential::DeviceData;
use dr_core::simulation::report::RunReport;
use dr_core::user_flex::{fit_offline_intervals, ContextKey, OfflineFit, UserFlexModel};

pub const DEFAULT_SEED: u64 = 42;
const ON_THRESHOLD: f64 = 0.05;
const IDLE_GAP: u32 = 1;
const DEFAULT_MU0: f64 = 0.08;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<dr_core::Error> for CliError {
    fn from(e: dr_core::Error) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "drsched", version, about = "Day-ahead demand-response scheduling and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; defaults to 42.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Device identifier.
    #[arg(long, global = true)]
    pub device: Option<String>,
    /// Day to schedule (YYYY-MM-DD).
    #[arg(long, global = true)]
    pub date: Option<NaiveDate>,
    /// Print progress and warnings to stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Input data file.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Market data file (CSV or JSON written by `ingest`).
    #[arg(long, global = true)]
    pub market: Option<PathBuf>,
    /// Trained models file written by `train`.
    #[arg(long, global = true)]
    pub models: Option<PathBuf>,
    /// Kind of input for `ingest`.
    #[arg(long, global = true, value_enum)]
    pub kind: Option<InputKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    Load,
    Market,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a load or market CSV and store it as JSON.
    Ingest,
    /// Extract the device signature from load data or an event series.
    Signature,
    /// Fit forecast and user-flexibility models on a device's load data.
    Train,
    /// Propose a start time for one device on one day.
    Schedule,
    /// Run the prequential evaluation and write a report.
    Simulate,
    /// Run the comparison experiments and write a report bundle.
    Compare,
}

/// Parsed device load and what segmentation found in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceStore {
    pub load: LoadSeries,
    pub events: EventSeries,
}

/// Everything `schedule` needs about one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModels {
    pub device_id: String,
    pub trained_through: NaiveDate,
    pub signature: DeviceSignature,
    pub forecast: ForecastModels,
    pub flexibility: UserFlexModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOutput {
    pub device_id: String,
    pub date: NaiveDate,
    pub proposal: Option<ScheduleProposal>,
    pub reason: Option<String>,
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code != 0 {
                eprintln!("error_code={code}");
            }
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("error_code={}", e.exit_code());
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest => ingest(cli),
        Command::Signature => signature(cli),
        Command::Train => train(cli),
        Command::Schedule => schedule_day(cli),
        Command::Simulate => run_simulate(cli),
        Command::Compare => run_compare(cli),
    }
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn device_id(cli: &Cli, path: &Path) -> String {
    cli.device.clone().unwrap_or_else(|| {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "device".into())
    })
}

fn read_store(cli: &Cli, path: &Path) -> CliResult<DeviceStore> {
    if is_csv(path) {
        let load = ingest_load_csv(open(path)?, &device_id(cli, path))?;
        let events = extract_events(&load, ON_THRESHOLD, IDLE_GAP);
        return Ok(DeviceStore { load, events });
    }
    Ok(serde_json::from_reader(open(path)?)?)
}

fn read_market(path: &Path) -> CliResult<MarketSeries> {
    if is_csv(path) {
        return Ok(ingest_market_csv(open(path)?)?);
    }
    Ok(serde_json::from_reader(open(path)?)?)
}

fn ingest(cli: &Cli) -> CliResult<()> {
    let input = require(&cli.input, "input")?;
    match cli.kind.unwrap_or(InputKind::Load) {
        InputKind::Load => {
            let store = read_store(cli, input)?;
            if cli.verbose {
                let gaps = store.load.gaps.iter().filter(|g| **g).count();
                eprintln!("{} hours, {} zero-filled, {} operations", store.load.values.len(), gaps, store.events.events.len());
            }
            write_json(&store, cli.out.as_deref())
        }
        InputKind::Market => {
            let market = ingest_market_csv(open(input)?)?;
            if cli.verbose {
                eprintln!("{} market hours, {} with negative prices", market.len(), market.negative_price_hours.len());
            }
            write_json(&market, cli.out.as_deref())
        }
    }
}

/// Accepts a load CSV, a store written by `ingest`, or a bare event series.
fn read_events(cli: &Cli, path: &Path) -> CliResult<EventSeries> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Input {
        Store(DeviceStore),
        Events(EventSeries),
    }
    if is_csv(path) {
        return Ok(read_store(cli, path)?.events);
    }
    Ok(match serde_json::from_reader(open(path)?)? {
        Input::Store(s) => s.events,
        Input::Events(e) => e,
    })
}

fn signature(cli: &Cli) -> CliResult<()> {
    let events = read_events(cli, require(&cli.input, "input")?)?;
    let sig = extract_signature(&events)?;
    write_json(&sig, cli.out.as_deref())
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let cfg: ExperimentConfig =
                serde_json::from_reader(open(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            cfg
        }
        None => ExperimentConfig::builtin(DEFAULT_SEED),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(cli: &Cli) -> CliResult<()> {
    let store = read_store(cli, require(&cli.input, "input")?)?;
    let cfg = cli.config.as_ref().map(|_| load_config(cli)).transpose()?;
    let start = store.load.start.date_naive();
    let n_days = (store.load.values.len() / 24) as u32;
    if n_days == 0 {
        return Err(CliError::Data("load data covers less than one day".into()));
    }
    let data = DeviceData::from_events(start, n_days, store.events.clone(), None)?;
    let days: Vec<_> = (0..data.n_days()).map(|d| data.observation(d)).collect();
    let (alpha, window, mu0, offline) = match &cfg {
        Some(c) => (c.alpha, c.window_days, c.mu0, c.offline),
        None => (1.0, None, DEFAULT_MU0, OfflineFit { seed: cli.seed.unwrap_or(DEFAULT_SEED), ..OfflineFit::default() }),
    };
    let forecast = ForecastModels::train(&days, alpha, window)?;
    let intervals = data.training_intervals(data.n_days());
    let flexibility = fit_offline_intervals(&intervals, mu0, &offline)?;
    let models = TrainedModels {
        device_id: store.load.device_id.clone(),
        trained_through: data.days[data.n_days() - 1].date,
        signature: data.signature.clone(),
        forecast,
        flexibility,
    };
    if cli.verbose {
        eprintln!("trained on {} days, {} operations", data.n_days(), store.events.events.len());
    }
    write_json(&models, cli.out.as_deref())
}

fn schedule_day(cli: &Cli) -> CliResult<()> {
    let models: TrainedModels = serde_json::from_reader(open(require(&cli.models, "models")?)?)?;
    let market = read_market(require(&cli.market, "market")?)?;
    let date = *require(&cli.date, "date")?;
    if let Some(d) = &cli.device {
        if *d != models.device_id {
            return Err(CliError::Data(format!("models belong to `{}`, not `{d}`", models.device_id)));
        }
    }
    let fc = forecast_activity(&models.forecast, date, models.signature.len())?;
    let out = match fc {
        None => ScheduleOutput {
            device_id: models.device_id.clone(),
            date,
            proposal: None,
            reason: Some("no predicted activation".into()),
        },
        Some(fc) => {
            let day_start =
                market.hour_of(date).ok_or_else(|| CliError::Data(format!("market does not cover {date}")))?;
            let pfo = ProbabilisticFlexOffer::from_forecast(&fc, &models.signature);
            let ctx = ContextKey::of_date(date);
            let p = schedule(&pfo, &market, day_start, &models.flexibility, ctx, &models.device_id, true)?;
            ScheduleOutput { device_id: models.device_id.clone(), date, proposal: Some(p), reason: None }
        }
    };
    write_json(&out, cli.out.as_deref())
}

fn out_dir(cli: &Cli) -> CliResult<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn run_simulate(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let report = simulate(&cfg)?;
    if cli.verbose {
        eprintln!(
            "{} proposals, acceptance {:.3}, spot {:.2}%, regulation {:.2}%",
            report.n_proposals, report.acceptance_rate, report.spot_savings_pct, report.reg_savings_pct
        );
    }
    write_report(&report, &out_dir(cli)?.join("simulate.json"))
}

const SUMMARY_HEADER: [&str; 10] = [
    "label",
    "acceptance_rate",
    "spot_savings_pct",
    "reg_savings_pct",
    "accepted_savings",
    "raw_savings",
    "n_proposals",
    "n_accepted",
    "n_rejected",
    "lambda_rel_error",
];

fn write_summary_csv<'a>(path: &Path, reports: impl IntoIterator<Item = &'a RunReport>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| CliError::Data(e.to_string()))?;
    for r in reports {
        w.write_record([
            r.label.clone(),
            r.acceptance_rate.to_string(),
            r.spot_savings_pct.to_string(),
            r.reg_savings_pct.to_string(),
            r.accepted_savings.to_string(),
            r.raw_savings.to_string(),
            r.n_proposals.to_string(),
            r.n_accepted.to_string(),
            r.n_rejected.to_string(),
            r.lambda_rel_error.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn prediction_row(w: &mut csv::Writer<File>, name: &str, two: &ForecastScore, one: &ForecastScore) -> CliResult<()> {
    w.write_record([
        name.to_string(),
        two.day_accuracy.to_string(),
        two.hour_rmse.to_string(),
        one.day_accuracy.to_string(),
        one.hour_rmse.to_string(),
    ])
    .map_err(|e| CliError::Data(e.to_string()))
}

fn write_bundle(bundle: &ComparisonBundle, dir: &Path) -> CliResult<()> {
    write_json(bundle, Some(&dir.join("compare.json")))?;
    write_summary_csv(&dir.join("learning_rate.csv"), &bundle.learning_rate)?;
    write_summary_csv(&dir.join("offer_kind.csv"), &bundle.offer_kind)?;
    write_summary_csv(
        &dir.join("flexibility.csv"),
        bundle.flexibility.iter().flat_map(|p| [&p.ideal, &p.predicted]),
    )?;
    let mut w = csv::Writer::from_path(dir.join("prediction.csv")).map_err(|e| CliError::Data(e.to_string()))?;
    w.write_record(["device", "two_level_day_accuracy", "two_level_hour_rmse", "one_level_day_accuracy", "one_level_hour_rmse"])
        .map_err(|e| CliError::Data(e.to_string()))?;
    prediction_row(&mut w, "all", &bundle.prediction.two_level, &bundle.prediction.one_level)?;
    for r in &bundle.prediction.per_device {
        prediction_row(&mut w, &r.device, &r.two_level, &r.one_level)?;
    }
    w.flush()?;
    Ok(())
}

fn run_compare(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let bundle = run_comparisons(&cfg)?;
    for r in bundle.learning_rate.iter().chain(&bundle.offer_kind) {
        if !r.validate() {
            return Err(CliError::Internal(format!("report `{}` failed validation", r.label)));
        }
        if cli.verbose {
            eprintln!("{:<24} acceptance {:.3}", r.label, r.acceptance_rate);
        }
    }
    write_bundle(&bundle, &out_dir(cli)?)
}

pub const REPORT_CSV_HEADER: [&str; 9] =
    ["device", "date", "t_es", "chosen_t", "delay", "delta_spot", "delta_reg", "acceptance_prob", "outcome"];

/// Writes `report` as JSON to `path` and its proposals as CSV next to it.
pub fn write_report(report: &RunReport, path: &Path) -> CliResult<()> {
    if !report.validate() {
        return Err(CliError::Internal(format!("report `{}` failed validation", report.label)));
    }
    write_json(report, Some(path))?;
    let csv_path = path.with_extension("csv");
    let file = File::create(&csv_path).map_err(|e| CliError::Data(format!("{}: {e}", csv_path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(REPORT_CSV_HEADER).map_err(io)?;
    for p in &report.proposals {
        w.write_record([
            p.device.clone(),
            p.date.to_string(),
            p.t_es.to_string(),
            p.chosen_t.to_string(),
            p.delay.to_string(),
            p.delta_spot.to_string(),
            p.delta_reg.to_string(),
            p.acceptance_prob.to_string(),
            p.outcome.clone(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
