//! Pooled runs over devices and market shuffles, and the comparison suite.

use std::fs::File;

use chrono::Duration;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    builtin_categories, builtin_category, AcceptanceKind, DatasetSource, ExperimentConfig, MarketSource, OfferKind,
    RunSettings, Scenario,
};
use super::prequential::{forecast_trace, run_with_trace, DeviceData, ForecastTrace, RunOutcome};
use super::report::{config_digest, ProposalRecord, RunReport, ShuffleSummary, Tally};
use crate::forecast::{
    build_distribution, clamp_hour, encode_features, predict_hour, select_top_decile, train_hour_model,
};
use crate::load_data::{calendar_features, ingest_load_csv};
use crate::market::{ingest_market_csv, shuffle_market, synthetic_market, MarketSeries};
use crate::{Error, Result, MAX_HOUR};

const DEFAULT_ON_THRESHOLD: f64 = 0.05;
const DEFAULT_IDLE_GAP: u32 = 1;

fn device_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(1_000).wrapping_add(index as u64)
}

/// Oracle seed of one device within one shuffle.
fn oracle_seed(shuffle_seed: u64, index: usize) -> u64 {
    shuffle_seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Loads or generates the devices described by the config.
pub fn load_devices(cfg: &ExperimentConfig) -> Result<Vec<DeviceData>> {
    let configs = match &cfg.dataset {
        DatasetSource::Builtin { categories: None } => builtin_categories(),
        DatasetSource::Builtin { categories: Some(names) } => names
            .iter()
            .map(|n| builtin_category(n).ok_or_else(|| Error::Config(format!("unknown built-in category `{n}`"))))
            .collect::<Result<_>>()?,
        DatasetSource::Synthetic { devices } => devices.clone(),
        DatasetSource::Csv { path, device_id, lambda_true } => {
            let load = ingest_load_csv(File::open(path)?, device_id)?;
            let start = load.start.date_naive();
            let n_days = (load.values.len() / 24) as u32;
            let data = DeviceData::from_load(
                &load,
                start,
                n_days,
                cfg.on_threshold.unwrap_or(DEFAULT_ON_THRESHOLD),
                cfg.idle_gap.unwrap_or(DEFAULT_IDLE_GAP),
                lambda_true.clone(),
            )?;
            return Ok(vec![data]);
        }
    };
    configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| DeviceData::synthetic(c, device_seed(cfg.seed, i), cfg.start_date, cfg.n_days))
        .collect()
}

/// The unshuffled market covering every device's span plus the forecast horizon.
pub fn build_market(cfg: &ExperimentConfig, devices: &[DeviceData]) -> Result<MarketSeries> {
    let start = devices.iter().map(|d| d.start).min().unwrap_or(cfg.start_date);
    let end = devices.iter().map(|d| d.start + Duration::days(d.n_days() as i64)).max().unwrap_or(start);
    let days = (end - start).num_days() as usize + 2;
    let mut market = match &cfg.market {
        MarketSource::Synthetic { params } => synthetic_market(
            &params.unwrap_or_default(),
            start.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc(),
            days,
            cfg.seed,
        ),
        MarketSource::Csv { path } => ingest_market_csv(File::open(path)?)?,
    };
    let needed_end = end + Duration::days(2);
    let covered_end = market.start + Duration::hours(market.len() as i64);
    if market.hour_of(start).is_none() || covered_end.date_naive() < needed_end {
        return Err(Error::Config(format!(
            "market must cover {start} to {needed_end}, it covers {} to {}",
            market.start.date_naive(),
            covered_end.date_naive()
        )));
    }
    market.reg_skip_first_hour = cfg.reg_skip_first_hour;
    Ok(market)
}

/// Forecast traces of every device; `None` for the ideal scenario.
pub fn forecast_traces(devices: &[DeviceData], settings: &RunSettings) -> Result<Vec<Option<ForecastTrace>>> {
    match settings.scenario {
        Scenario::Ideal => Ok(vec![None; devices.len()]),
        Scenario::Predicted => devices.par_iter().map(|d| forecast_trace(d, settings).map(Some)).collect(),
    }
}

/// Devices, traces and market shared by every run of a suite.
pub struct Suite {
    pub devices: Vec<DeviceData>,
    pub traces: Vec<Option<ForecastTrace>>,
    pub market: MarketSeries,
    pub shuffles: u32,
    pub base_seed: u64,
    pub digest: String,
}

impl Suite {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let devices = load_devices(cfg)?;
        let market = build_market(cfg, &devices)?;
        let mut predicted = cfg.run_settings(0);
        predicted.scenario = Scenario::Predicted;
        let traces = forecast_traces(&devices, &predicted)?;
        Ok(Self { devices, traces, market, shuffles: cfg.shuffles, base_seed: cfg.seed, digest: config_digest(cfg) })
    }

    pub fn shuffle_seeds(&self) -> Vec<u64> {
        (0..self.shuffles as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }

    /// Runs every device on every shuffled market and pools the results in
    /// shuffle then device order.
    pub fn run(&self, label: &str, settings: &RunSettings, keep_records: bool) -> Result<RunReport> {
        let seeds = self.shuffle_seeds();
        let markets: Vec<MarketSeries> = seeds.par_iter().map(|s| shuffle_market(&self.market, *s)).collect();
        let jobs: Vec<(usize, usize)> =
            (0..seeds.len()).flat_map(|s| (0..self.devices.len()).map(move |d| (s, d))).collect();
        let outcomes: Vec<RunOutcome> = jobs
            .par_iter()
            .map(|&(s, d)| {
                let trace = match settings.scenario {
                    Scenario::Predicted => self.traces[d].as_ref(),
                    Scenario::Ideal => None,
                };
                let run = RunSettings { oracle_seed: oracle_seed(seeds[s], d), ..settings.clone() };
                run_with_trace(&self.devices[d], trace, &markets[s], &run, seeds[s])
            })
            .collect::<Result<_>>()?;

        let mut total = Tally::default();
        let mut per_shuffle = Vec::with_capacity(seeds.len());
        let mut records: Vec<ProposalRecord> = Vec::new();
        for (s, chunk) in outcomes.chunks(self.devices.len().max(1)).enumerate() {
            let mut shuffle = Tally::default();
            for o in chunk {
                shuffle.merge(&o.tally);
                if keep_records {
                    records.extend(o.records.iter().cloned());
                }
            }
            per_shuffle.push(ShuffleSummary {
                seed: seeds[s],
                acceptance_rate: shuffle.acceptance_rate(),
                accepted_savings: shuffle.spot_saved + shuffle.reg_saved,
                n_proposals: shuffle.proposals,
            });
            total.merge(&shuffle);
        }
        let digest = config_digest(&(&self.digest, settings));
        Ok(RunReport::from_tally(label, &total, outcomes.len() as u64, seeds, digest, per_shuffle, records))
    }
}

/// Day accuracy and hour error of the two-level forecaster over the test span.
pub fn forecast_tally(data: &DeviceData, trace: &ForecastTrace) -> Tally {
    let mut t = Tally::default();
    for (i, fc) in trace.forecasts.iter().enumerate() {
        let truth = &data.days[trace.split + i];
        t.test_days += 1;
        if fc.is_some() == truth.ready.is_some() {
            t.day_correct += 1;
        }
        if let (Some(fc), Some(a)) = (fc, truth.ready) {
            t.hour_sq_err += (fc.t_es_point - a as f64).powi(2);
            t.hour_n += 1;
        }
    }
    t
}

/// Single-step baseline: one regression of the hours until the next ready
/// action, no day model. The probability of activity is the predicted
/// mass inside the day, and only the top decile of test days is called active.
pub fn one_level_baseline(data: &DeviceData, train_fraction: f64) -> Result<Tally> {
    let split = data.split(train_fraction)?;
    let features = |d: usize| encode_features(&calendar_features(data.days[d].date));
    let target = |d: usize| data.days[d].hours_to_ready.unwrap_or(MAX_HOUR as i64).min(MAX_HOUR as i64) as f64;
    let samples: Vec<(Vec<f64>, f64)> = (0..split).map(|d| (features(d), target(d))).collect();
    let model = train_hour_model(&samples)?;

    let mut preds = Vec::with_capacity(data.n_days() - split);
    let mut scored = Vec::with_capacity(data.n_days() - split);
    for d in split..data.n_days() {
        let pred = clamp_hour(predict_hour(&model, &features(d))?);
        let dist = build_distribution(pred, model.residual_std, 0, MAX_HOUR as i64)?;
        let in_day: f64 = dist.iter().filter(|(h, _)| *h <= 23).map(|(_, p)| p).sum();
        preds.push(pred);
        scored.push((d, in_day));
    }
    let mut selected = vec![false; data.n_days()];
    for (d, _) in select_top_decile(&scored) {
        selected[d] = true;
    }

    let mut t = Tally::default();
    for (i, d) in (split..data.n_days()).enumerate() {
        let actual = data.days[d].ready;
        t.test_days += 1;
        if selected[d] == actual.is_some() {
            t.day_correct += 1;
        }
        if let (true, Some(a)) = (selected[d], actual) {
            t.hour_sq_err += (preds[i] - a as f64).powi(2);
            t.hour_n += 1;
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastScore {
    pub day_accuracy: f64,
    pub hour_rmse: f64,
    pub test_days: u64,
    pub scored_hours: u64,
}

impl From<&Tally> for ForecastScore {
    fn from(t: &Tally) -> Self {
        use super::report::sig9;
        Self {
            day_accuracy: sig9(t.day_accuracy()),
            hour_rmse: sig9(t.hour_rmse()),
            test_days: t.test_days,
            scored_hours: t.hour_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub device: String,
    pub two_level: ForecastScore,
    pub one_level: ForecastScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionComparison {
    pub two_level: ForecastScore,
    pub one_level: ForecastScore,
    pub per_device: Vec<PredictionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityPoint {
    pub flexibility: u32,
    pub ideal: RunReport,
    pub predicted: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBundle {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    /// Uniform model first, then the adaptive model for each learning rate.
    pub learning_rate: Vec<RunReport>,
    pub prediction: PredictionComparison,
    pub flexibility: Vec<FlexibilityPoint>,
    /// Probabilistic offers first, then standard offers.
    pub offer_kind: Vec<RunReport>,
}

pub fn compare_prediction(suite: &Suite, train_fraction: f64) -> Result<PredictionComparison> {
    let rows: Vec<(Tally, Tally)> = suite
        .devices
        .par_iter()
        .zip(suite.traces.par_iter())
        .map(|(d, tr)| {
            let tr = tr.as_ref().ok_or_else(|| Error::Config("prediction comparison needs forecast traces".into()))?;
            Ok((forecast_tally(d, tr), one_level_baseline(d, train_fraction)?))
        })
        .collect::<Result<_>>()?;
    let mut two = Tally::default();
    let mut one = Tally::default();
    let mut per_device = Vec::with_capacity(rows.len());
    for (d, (t2, t1)) in suite.devices.iter().zip(&rows) {
        two.merge(t2);
        one.merge(t1);
        per_device.push(PredictionRow { device: d.device_id.clone(), two_level: t2.into(), one_level: t1.into() });
    }
    Ok(PredictionComparison { two_level: (&two).into(), one_level: (&one).into(), per_device })
}

pub fn compare_learning_rates(suite: &Suite, base: &RunSettings, mu_grid: &[f64]) -> Result<Vec<RunReport>> {
    let mut out = vec![suite.run("uniform", &RunSettings { acceptance: AcceptanceKind::Uniform, ..base.clone() }, false)?];
    for mu in mu_grid {
        let s = RunSettings { acceptance: AcceptanceKind::Adaptive { mu0: *mu }, ..base.clone() };
        out.push(suite.run(&format!("adaptive mu={mu}"), &s, false)?);
    }
    Ok(out)
}

pub fn compare_flexibility(suite: &Suite, base: &RunSettings, grid: &[u32]) -> Result<Vec<FlexibilityPoint>> {
    grid.iter()
        .map(|f| {
            let run = |scenario: Scenario| {
                let s = RunSettings { scenario, manual_flex: Some(*f), ..base.clone() };
                suite.run(&format!("{scenario:?} flex={f}").to_lowercase(), &s, false)
            };
            Ok(FlexibilityPoint { flexibility: *f, ideal: run(Scenario::Ideal)?, predicted: run(Scenario::Predicted)? })
        })
        .collect()
}

pub fn compare_offer_kinds(suite: &Suite, base: &RunSettings) -> Result<Vec<RunReport>> {
    [OfferKind::Probabilistic, OfferKind::Standard]
        .iter()
        .map(|k| {
            let s = RunSettings { offer: *k, scenario: Scenario::Predicted, ..base.clone() };
            suite.run(&format!("{k:?}").to_lowercase(), &s, false)
        })
        .collect()
}

/// The four comparison experiments on one suite.
pub fn run_comparisons(cfg: &ExperimentConfig) -> Result<ComparisonBundle> {
    let suite = Suite::prepare(cfg)?;
    let base = cfg.run_settings(0);
    Ok(ComparisonBundle {
        config_digest: suite.digest.clone(),
        seeds: suite.shuffle_seeds(),
        learning_rate: compare_learning_rates(&suite, &base, &cfg.mu_grid)?,
        prediction: compare_prediction(&suite, cfg.train_fraction)?,
        flexibility: compare_flexibility(&suite, &base, &cfg.flex_grid)?,
        offer_kind: compare_offer_kinds(&suite, &base)?,
    })
}

/// One pooled run with the config's own settings, keeping every proposal.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunReport> {
    let suite = Suite::prepare(cfg)?;
    suite.run("simulate", &cfg.run_settings(0), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::SyntheticMarket;

    fn small(categories: &[&str], days: u32, shuffles: u32) -> ExperimentConfig {
        let mut c = ExperimentConfig::builtin(7);
        c.dataset = DatasetSource::Builtin { categories: Some(categories.iter().map(|s| s.to_string()).collect()) };
        c.n_days = days;
        c.shuffles = shuffles;
        c
    }

    #[test]
    fn one_shuffle_equals_the_first_of_five() {
        let one = simulate(&small(&["regular", "working_couple"], 120, 1)).unwrap();
        let five = simulate(&small(&["regular", "working_couple"], 120, 5)).unwrap();
        assert_eq!(one.per_shuffle[0], five.per_shuffle[0]);
        let first: Vec<_> = five.proposals.iter().filter(|r| r.shuffle_seed == five.seeds[0]).cloned().collect();
        assert_eq!(one.proposals, first);
    }

    #[test]
    fn pooled_report_is_consistent() {
        let r = simulate(&small(&["regular", "family_with_children"], 150, 3)).unwrap();
        assert!(r.validate());
        assert_eq!(r.n_runs, 6);
        assert_eq!(r.proposals.len() as u64, r.n_proposals);
        assert_eq!(r.per_shuffle.iter().map(|s| s.n_proposals).sum::<u64>(), r.n_proposals);
    }

    #[test]
    fn zero_flexibility_scenarios_agree_on_acceptance() {
        let cfg = small(&["regular"], 150, 2);
        let suite = Suite::prepare(&cfg).unwrap();
        let pts = compare_flexibility(&suite, &cfg.run_settings(0), &[0]).unwrap();
        // Without slack nothing moves, so every proposal on a real operation is accepted.
        assert_eq!(pts[0].ideal.acceptance_rate, 1.0);
        assert_eq!(pts[0].ideal.accepted_savings, 0.0);
        assert!(pts[0].predicted.acceptance_rate <= 1.0);
    }

    #[test]
    fn baseline_selects_a_tenth_of_test_days() {
        let cfg = small(&["regular"], 200, 1);
        let devices = load_devices(&cfg).unwrap();
        let t = one_level_baseline(&devices[0], 0.8).unwrap();
        assert_eq!(t.test_days, 40);
        assert!(t.hour_n <= 4);
    }

    #[test]
    fn market_too_short_is_rejected() {
        let mut cfg = small(&["regular"], 60, 1);
        let devices = load_devices(&cfg).unwrap();
        let path = std::env::temp_dir().join(format!("short-market-{}.csv", std::process::id()));
        let m = synthetic_market(&SyntheticMarket::default(), "2017-01-01T00:00:00Z".parse().unwrap(), 30, 1);
        m.write_csv(File::create(&path).unwrap()).unwrap();
        cfg.market = MarketSource::Csv { path: path.to_string_lossy().into_owned() };
        assert!(matches!(build_market(&cfg, &devices), Err(Error::Config(_))));
        std::fs::remove_file(path).unwrap();
    }
}
