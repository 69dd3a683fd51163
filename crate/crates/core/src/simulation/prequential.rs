//! Test-then-train evaluation of one device against one market.

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AcceptanceKind, LambdaSpec, OfferKind, ReinitPolicy, RunSettings, Scenario, SyntheticDeviceConfig};
use super::oracle::{simulate_user_decision, Decision, GroundTruth, OracleUser};
use super::report::{outcome_label, ProposalRecord, Tally};
use super::synthetic::generate_synthetic;
use crate::flexoffer::{collapse_to_standard, energies, ProbabilisticFlexOffer};
use crate::forecast::{forecast_activity, ActivityForecast, DayObservation, ForecastDistribution, ForecastModels};
use crate::load_data::{extract_events, extract_signature, DeviceSignature, EventSeries, LoadSeries};
use crate::market::{reg_contribution, spot_cost, MarketSeries};
use crate::scheduler::{schedule, AcceptanceModel, UniformAcceptance};
use crate::user_flex::{fit_offline_intervals, ContextKey, FeedbackObservation, Outcome, UserFlexModel};
use crate::{Error, Result, MAX_HOUR};

/// Ground truth of one calendar day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayTruth {
    pub date: NaiveDate,
    /// Hour of the first ready action of the day.
    pub ready: Option<u32>,
    /// Hours from midnight to the ready action following that one.
    pub next_ready: Option<i64>,
    /// Hours from midnight to the first ready action at or after midnight.
    pub hours_to_ready: Option<i64>,
}

/// One device's events, signature and per-day truth.
#[derive(Debug, Clone)]
pub struct DeviceData {
    pub device_id: String,
    pub start: NaiveDate,
    pub events: EventSeries,
    pub signature: DeviceSignature,
    pub lambda_true: Option<LambdaSpec>,
    pub days: Vec<DayTruth>,
}

impl DeviceData {
    pub fn from_events(
        start: NaiveDate,
        n_days: u32,
        events: EventSeries,
        lambda_true: Option<LambdaSpec>,
    ) -> Result<Self> {
        let signature = extract_signature(&events)?;
        let origin = start.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
        let ready_hours: Vec<i64> = events.events.iter().map(|e| (e.ready_time - origin).num_hours()).collect();
        let mut days = Vec::with_capacity(n_days as usize);
        for d in 0..n_days as i64 {
            let midnight = d * 24;
            let first = ready_hours.partition_point(|h| *h < midnight);
            let hours_to_ready = ready_hours.get(first).map(|h| h - midnight);
            let ready = hours_to_ready.filter(|h| *h < 24).map(|h| h as u32);
            let next_ready = ready.and_then(|_| ready_hours.get(first + 1)).map(|h| h - midnight);
            days.push(DayTruth { date: start + Duration::days(d), ready, next_ready, hours_to_ready });
        }
        Ok(Self { device_id: events.device_id.clone(), start, events, signature, lambda_true, days })
    }

    /// Generates the device and runs the data through segmentation.
    pub fn synthetic(cfg: &SyntheticDeviceConfig, seed: u64, start: NaiveDate, n_days: u32) -> Result<Self> {
        let (load, _) = generate_synthetic(cfg, seed, start, n_days)?;
        Self::from_load(&load, start, n_days, 0.05, 1, Some(cfg.lambda_true.clone()))
    }

    pub fn from_load(
        load: &LoadSeries,
        start: NaiveDate,
        n_days: u32,
        on_threshold: f64,
        idle_gap: u32,
        lambda_true: Option<LambdaSpec>,
    ) -> Result<Self> {
        let events = extract_events(load, on_threshold, idle_gap);
        Self::from_events(start, n_days, events, lambda_true)
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn op_len(&self) -> usize {
        self.signature.len()
    }

    pub fn observation(&self, day: usize) -> DayObservation {
        let t = &self.days[day];
        DayObservation {
            date: t.date,
            active: t.ready.is_some(),
            t_es: t.ready,
            t_le: t.ready.map(|_| t.next_ready.unwrap_or(MAX_HOUR as i64).min(MAX_HOUR as i64) as u32),
        }
    }

    pub fn split(&self, train_fraction: f64) -> Result<usize> {
        if self.days.len() < 30 {
            return Err(Error::Config(format!("dataset must span >= 30 days, got {}", self.days.len())));
        }
        Ok(((self.days.len() as f64) * train_fraction).floor() as usize)
    }

    /// Inter-ready gaps whose both ends fall before day `split`.
    pub fn training_intervals(&self, split: usize) -> Vec<(NaiveDate, f64)> {
        let end = self.start + Duration::days(split as i64);
        self.events
            .inter_ready_intervals()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| self.events.events[i + 1].ready_time.date_naive() < end)
            .map(|(_, iv)| iv)
            .collect()
    }
}

/// Day-ahead forecasts of every test day; independent of market and user.
#[derive(Debug, Clone)]
pub struct ForecastTrace {
    pub split: usize,
    pub forecasts: Vec<Option<ActivityForecast>>,
}

pub fn forecast_trace(data: &DeviceData, settings: &RunSettings) -> Result<ForecastTrace> {
    let split = data.split(settings.train_fraction)?;
    let train: Vec<DayObservation> = (0..split).map(|d| data.observation(d)).collect();
    let mut models = ForecastModels::train(&train, settings.alpha, settings.window_days)?;
    let mut forecasts = Vec::with_capacity(data.n_days() - split);
    for d in split..data.n_days() {
        forecasts.push(forecast_activity(&models, data.days[d].date, data.op_len())?);
        models.prequential_update(data.observation(d))?;
    }
    Ok(ForecastTrace { split, forecasts })
}

/// Counters and records of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub tally: Tally,
    pub records: Vec<ProposalRecord>,
    pub flex: Option<UserFlexModel>,
}

fn period_key(policy: ReinitPolicy, date: NaiveDate) -> Option<(i32, u32)> {
    match policy {
        ReinitPolicy::Never => None,
        ReinitPolicy::Season => {
            let s = crate::load_data::Season::of_month(date.month());
            // December belongs to the next year's winter.
            let year = if date.month() == 12 { date.year() + 1 } else { date.year() };
            Some((year, s.index() as u32))
        }
        ReinitPolicy::Month => Some((date.year(), date.month())),
    }
}

fn with_manual_flex(fc: &ActivityForecast, flex: u32, k: u32) -> BTreeMap<u32, ForecastDistribution> {
    fc.t_es_dist
        .support
        .iter()
        .map(|t| (*t, ForecastDistribution::point_mass((t + flex + k).min(MAX_HOUR))))
        .collect()
}

pub fn run_prequential(data: &DeviceData, market: &MarketSeries, settings: &RunSettings) -> Result<RunOutcome> {
    let trace = match settings.scenario {
        Scenario::Predicted => Some(forecast_trace(data, settings)?),
        Scenario::Ideal => None,
    };
    run_with_trace(data, trace.as_ref(), market, settings, 0)
}

/// Runs the test span; `trace` must come from [`forecast_trace`] with the
/// same settings when the scenario is predicted.
pub fn run_with_trace(
    data: &DeviceData,
    trace: Option<&ForecastTrace>,
    market: &MarketSeries,
    settings: &RunSettings,
    shuffle_seed: u64,
) -> Result<RunOutcome> {
    let split = data.split(settings.train_fraction)?;
    let k = data.op_len() as u32;
    let profile = energies(&crate::flexoffer::profile_of(&data.signature));

    let intervals = data.training_intervals(split);
    let mut flex = match settings.acceptance {
        AcceptanceKind::Adaptive { mu0 } => {
            let mut m = fit_offline_intervals(&intervals, mu0, &settings.offline)?;
            m.rejection_target = settings.rejection_target;
            Some(m)
        }
        AcceptanceKind::Uniform => None,
    };
    let oracle = OracleUser { mode: settings.oracle, lambda_true: data.lambda_true.clone() };
    if oracle.lambda_true.is_none() && settings.oracle != super::config::OracleMode::Deadline {
        return Err(Error::Config("the stochastic oracle needs a true flexibility rate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.oracle_seed);
    let mut tally = Tally::default();
    let mut records = Vec::new();
    let mut feedback_per_bucket = [0u64; 8];
    let mut period: Option<(i32, u32)> = None;

    for d in split..data.n_days() {
        let truth = data.days[d];
        let date = truth.date;
        let ctx = ContextKey::of_date(date);
        if let Some(f) = flex.as_mut() {
            let key = period_key(settings.reinit, date);
            if key.is_some() && key != period {
                f.reinitialize(date);
                period = key;
            }
        }

        let pfo = match settings.scenario {
            Scenario::Predicted => {
                let fc = trace.ok_or_else(|| Error::Config("predicted scenario needs a forecast trace".into()))?.forecasts
                    [d - split]
                    .as_ref();
                if let (Some(fc), Some(a)) = (fc, truth.ready) {
                    let err = fc.t_es_point - a as f64;
                    tally.hour_sq_err += err * err;
                    tally.hour_n += 1;
                }
                fc.map(|fc| {
                    let mut p = ProbabilisticFlexOffer::from_forecast(fc, &data.signature);
                    if let Some(f) = settings.manual_flex {
                        p.t_le_conditional = with_manual_flex(fc, f, k);
                    }
                    p
                })
            }
            Scenario::Ideal => truth.ready.map(|a| {
                let le = match settings.manual_flex {
                    Some(f) => a + f + k,
                    None => truth.next_ready.unwrap_or(MAX_HOUR as i64).min(MAX_HOUR as i64) as u32,
                };
                ProbabilisticFlexOffer::point(a, le.min(MAX_HOUR), &data.signature)
            }),
        };
        tally.test_days += 1;
        if pfo.is_some() == truth.ready.is_some() {
            tally.day_correct += 1;
        }
        let (Some(pfo), Some(actual)) = (pfo, truth.ready) else { continue };
        let pfo = match settings.offer {
            OfferKind::Probabilistic => pfo,
            OfferKind::Standard => match collapse_to_standard(&pfo) {
                Ok(fo) => ProbabilisticFlexOffer::from(&fo),
                Err(_) => continue,
            },
        };
        let day_start = market
            .hour_of(date)
            .ok_or_else(|| Error::Config(format!("market starts after {date}")))?;
        let model: &dyn AcceptanceModel = match &flex {
            Some(m) => m,
            None => &UniformAcceptance,
        };
        let proposal = match schedule(&pfo, market, day_start, model, ctx, &data.device_id, settings.detailed) {
            Ok(p) => p,
            Err(Error::NoFeasibleSchedule) => continue,
            Err(e) => return Err(e),
        };

        let gt = GroundTruth { actual_ready: actual, deadline: truth.next_ready, op_len: k };
        let decision = simulate_user_decision(&oracle, ctx, proposal.chosen_t, &gt, &mut rng);

        let base_at = (day_start + actual as usize) as i64;
        let moved_at = (day_start + proposal.chosen_t as usize) as i64;
        let base_spot = spot_cost(&profile, base_at, market)?;
        let base_reg = reg_contribution(&profile, base_at, market)?;
        let ds = base_spot - spot_cost(&profile, moved_at, market)?;
        let dr = base_reg - reg_contribution(&profile, moved_at, market)?;

        tally.proposals += 1;
        tally.raw_savings += ds + dr;
        let delay = proposal.chosen_t as i64 - actual as i64;
        match decision {
            Decision::Accepted => {
                tally.accepted += 1;
                tally.spot_saved += ds;
                tally.reg_saved += dr;
                tally.spot_base += base_spot;
                tally.reg_base += base_reg.abs();
            }
            Decision::Rejected { .. } => tally.rejected += 1,
            Decision::NotReady => {
                tally.rejected += 1;
                tally.not_ready += 1;
            }
        }
        if let Some(f) = flex.as_mut() {
            let outcome = match decision {
                Decision::Accepted => Some(Outcome::Accepted),
                Decision::Rejected { manual_delay } => Some(Outcome::Rejected { manual_delay: manual_delay as f64 }),
                Decision::NotReady => None,
            };
            if let Some(outcome) = outcome {
                f.update_online(&FeedbackObservation { context: ctx, delay: delay as f64, outcome })?;
                tally.feedback += 1;
                feedback_per_bucket[ctx.index()] += 1;
            }
        }
        let (label, manual_delay) = outcome_label(&decision);
        records.push(
            ProposalRecord {
                device: data.device_id.clone(),
                date,
                shuffle_seed,
                t_es: actual,
                reference_t_es: proposal.reference_t_es,
                chosen_t: proposal.chosen_t,
                delay,
                delta_spot: ds,
                delta_reg: dr,
                expected_utility: proposal.expected_utility,
                acceptance_prob: proposal.acceptance_prob,
                outcome: label.to_string(),
                manual_delay,
            }
            .rounded(),
        );
    }

    if let (Some(f), Some(truth)) = (&flex, &data.lambda_true) {
        if let Some(err) = f.relative_error(|c| truth.get(c), &feedback_per_bucket) {
            tally.lambda_err_sum += err;
            tally.lambda_runs += 1;
        }
    }
    Ok(RunOutcome { tally, records, flex })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{synthetic_market, SyntheticMarket};
    use crate::simulation::config::{builtin_category, MixtureComponent, OracleMode};

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2017, 1, 1).unwrap()
    }

    fn market(days: usize, seed: u64) -> MarketSeries {
        synthetic_market(&SyntheticMarket::default(), start().and_hms_opt(0, 0, 0).unwrap().and_utc(), days, seed)
    }

    fn fixed_device(lambda: f64) -> SyntheticDeviceConfig {
        SyntheticDeviceConfig {
            category: "fixed".into(),
            activation: [1.0; 7],
            ready_hours: vec![MixtureComponent { weight: 1.0, mean: 10.0, std: 0.0 }],
            weekend_ready_hours: None,
            lambda_true: LambdaSpec::Constant(lambda),
            signature: vec![1.0, 1.0],
            jitter: [0.0, 1.0, 0.0],
        }
    }

    #[test]
    fn day_truth_records_next_ready() {
        let data = DeviceData::synthetic(&fixed_device(0.2), 1, start(), 40).unwrap();
        assert_eq!(data.days[0].ready, Some(10));
        assert_eq!(data.days[0].next_ready, Some(34));
        assert_eq!(data.days[39].next_ready, None);
        assert_eq!(data.observation(0).t_le, Some(34));
        assert_eq!(data.observation(39).t_le, Some(47));
        assert_eq!(data.training_intervals(32).len(), 31);
    }

    #[test]
    fn short_dataset_is_a_configuration_error() {
        let data = DeviceData::synthetic(&fixed_device(0.2), 1, start(), 20).unwrap();
        let err = run_prequential(&data, &market(22, 1), &RunSettings::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn accounting_identity_holds() {
        let cfg = builtin_category("working_couple").unwrap();
        let data = DeviceData::synthetic(&cfg, 3, start(), 200).unwrap();
        let out = run_prequential(&data, &market(202, 2), &RunSettings::default()).unwrap();
        let t = &out.tally;
        assert_eq!(t.accepted + t.rejected, t.proposals);
        assert!(t.not_ready <= t.rejected);
        assert_eq!(t.test_days, 40);
        let predicted_active_test_days = t.proposals; // proposals only on predicted-active days
        assert!(predicted_active_test_days <= t.test_days);
        assert_eq!(out.records.len() as u64, t.proposals);
        // Rejected proposals never accrue savings.
        let accepted: f64 = out
            .records
            .iter()
            .filter(|r| r.outcome == "accepted")
            .map(|r| r.delta_spot + r.delta_reg)
            .sum();
        assert!((accepted - (t.spot_saved + t.reg_saved)).abs() < 1e-6);
    }

    #[test]
    fn infinitely_flexible_user_with_perfect_forecasts_accepts_everything() {
        let data = DeviceData::synthetic(&fixed_device(1e-12), 4, start(), 60).unwrap();
        let settings = RunSettings { scenario: Scenario::Ideal, oracle: OracleMode::Stochastic, ..Default::default() };
        let out = run_prequential(&data, &market(62, 3), &settings).unwrap();
        assert!(out.tally.proposals > 0);
        assert_eq!(out.tally.accepted, out.tally.proposals);
    }

    #[test]
    fn zero_flexibility_never_moves() {
        let cfg = builtin_category("regular").unwrap();
        let data = DeviceData::synthetic(&cfg, 4, start(), 120).unwrap();
        let settings = RunSettings { scenario: Scenario::Ideal, manual_flex: Some(0), ..Default::default() };
        let out = run_prequential(&data, &market(122, 3), &settings).unwrap();
        assert!(out.tally.proposals > 0);
        assert_eq!(out.tally.accepted, out.tally.proposals);
        assert!(out.records.iter().all(|r| r.chosen_t == r.t_es && r.delta_spot == 0.0 && r.delta_reg == 0.0));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = builtin_category("family_with_children").unwrap();
        let data = DeviceData::synthetic(&cfg, 5, start(), 150).unwrap();
        let m = market(152, 9);
        let s = RunSettings { oracle_seed: 17, ..Default::default() };
        let a = run_prequential(&data, &m, &s).unwrap();
        let b = run_prequential(&data, &m, &s).unwrap();
        assert_eq!(a.tally, b.tally);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn uniform_model_learns_nothing() {
        let cfg = builtin_category("regular").unwrap();
        let data = DeviceData::synthetic(&cfg, 6, start(), 120).unwrap();
        let s = RunSettings { acceptance: AcceptanceKind::Uniform, ..Default::default() };
        let out = run_prequential(&data, &market(122, 1), &s).unwrap();
        assert!(out.flex.is_none());
        assert_eq!(out.tally.feedback, 0);
    }
}
