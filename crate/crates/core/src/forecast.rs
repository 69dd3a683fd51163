//! Two-level device activity forecasting.
//!
//! A naive-Bayes classifier decides whether a device will run on a given day.
//! Two linear regressions then predict the hour of the first ready action
//! (earliest start) and of the following one (latest end); the latter also
//! sees the earliest start as an input. Point predictions are widened into
//! discretised truncated normals using the training residual spread.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::load_data::{calendar_features, CalendarFeatures};
use crate::{Error, Result, MAX_HOUR};

/// Floor applied to the residual standard deviation of hour models.
pub const MIN_RESIDUAL_STD: f64 = 0.5;
/// Probabilities below this are trimmed from forecast distributions.
pub const PMF_TRIM: f64 = 1e-4;
/// Day-level decision threshold.
pub const ACTIVE_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------------------
// Day level

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub name: String,
    /// Per-class value counts, `[inactive, active]`.
    pub counts: [Vec<f64>; 2],
}

/// Naive-Bayes day activity classifier with additive smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayModel {
    pub kind: String,
    pub alpha: f64,
    /// `[inactive, active]` day counts.
    pub class_counts: [f64; 2],
    pub tables: Vec<FeatureTable>,
}

const DAY_FEATURES: [(&str, usize); 5] =
    [("day_of_week", 7), ("week_of_year", 53), ("month", 12), ("is_weekend", 2), ("season", 4)];

fn day_feature_values(f: &CalendarFeatures) -> [usize; 5] {
    [
        f.day_of_week as usize,
        (f.week_of_year.clamp(1, 53) - 1) as usize,
        (f.month.clamp(1, 12) - 1) as usize,
        f.is_weekend as usize,
        f.season.index(),
    ]
}

impl DayModel {
    fn empty(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("smoothing alpha must be > 0, got {alpha}")));
        }
        let tables = DAY_FEATURES
            .iter()
            .map(|(name, card)| FeatureTable { name: name.to_string(), counts: [vec![0.0; *card], vec![0.0; *card]] })
            .collect();
        Ok(Self { kind: "naive_bayes_day".into(), alpha, class_counts: [0.0; 2], tables })
    }

    pub fn observe(&mut self, features: &CalendarFeatures, active: bool) {
        let class = active as usize;
        self.class_counts[class] += 1.0;
        for (table, value) in self.tables.iter_mut().zip(day_feature_values(features)) {
            table.counts[class][value] += 1.0;
        }
    }

    pub fn prior_active(&self) -> f64 {
        let n = self.class_counts[0] + self.class_counts[1];
        (self.class_counts[1] + self.alpha) / (n + 2.0 * self.alpha)
    }

    /// Smoothed `P(feature = value | class)`.
    pub fn conditional(&self, table: usize, value: usize, active: bool) -> f64 {
        let class = active as usize;
        let t = &self.tables[table];
        let card = t.counts[class].len() as f64;
        (t.counts[class][value] + self.alpha) / (self.class_counts[class] + self.alpha * card)
    }

    /// Posterior `P(active | values)`, with `values` aligned to `tables`.
    pub fn posterior(&self, values: &[usize]) -> f64 {
        let mut log = [0.0f64; 2];
        for (class, slot) in log.iter_mut().enumerate() {
            let active = class == 1;
            let prior = if active { self.prior_active() } else { 1.0 - self.prior_active() };
            *slot = prior.ln()
                + values
                    .iter()
                    .enumerate()
                    .map(|(t, v)| self.conditional(t, *v, active).ln())
                    .sum::<f64>();
        }
        // Two-class softmax.
        1.0 / (1.0 + (log[0] - log[1]).exp())
    }
}

pub fn train_day_model(days: &[(CalendarFeatures, bool)], alpha: f64) -> Result<DayModel> {
    if days.is_empty() {
        return Err(Error::InsufficientData("day model needs at least one training day".into()));
    }
    let mut model = DayModel::empty(alpha)?;
    for (f, active) in days {
        model.observe(f, *active);
    }
    Ok(model)
}

pub fn predict_day(model: &DayModel, features: &CalendarFeatures) -> f64 {
    model.posterior(&day_feature_values(features))
}

// ---------------------------------------------------------------------------
// Hour level

/// Width of [`encode_features`].
pub const ENCODED_WIDTH: usize = 7 + 12 + 4 + 1 + 1;

/// One-hot day of week, month and season, raw ISO week, weekend flag.
pub fn encode_features(f: &CalendarFeatures) -> Vec<f64> {
    let mut x = vec![0.0; ENCODED_WIDTH];
    x[f.day_of_week as usize] = 1.0;
    x[7 + (f.month.clamp(1, 12) - 1) as usize] = 1.0;
    x[19 + f.season.index()] = 1.0;
    x[23] = f.week_of_year as f64;
    x[24] = if f.is_weekend { 1.0 } else { 0.0 };
    x
}

/// Linear regression of an hour target on encoded features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourModel {
    pub kind: String,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub residual_std: f64,
    pub n_train: usize,
    /// Numerical rank of the centred design was below its width.
    pub rank_deficient: bool,
    /// No feature varied, so the model is the target mean.
    pub intercept_only: bool,
}

/// Least-squares fit.
///
/// Features are centred and the weights taken as the minimum-norm solution
/// (SVD pseudo-inverse), so the intercept is never shrunk and collinear
/// one-hot blocks still give the OLS fitted values.
pub fn train_hour_model(samples: &[(Vec<f64>, f64)]) -> Result<HourModel> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!("hour model needs >= 2 samples, got {}", samples.len())));
    }
    let p = samples[0].0.len();
    for (x, y) in samples {
        if x.len() != p {
            return Err(Error::Dimension { expected: p, got: x.len() });
        }
        if !(0.0..=MAX_HOUR as f64).contains(y) {
            return Err(Error::Domain(format!("hour target {y} outside [0, {MAX_HOUR}]")));
        }
    }
    let n = samples.len();
    let y_mean = samples.iter().map(|(_, y)| y).sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| samples.iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();

    let design = DMatrix::from_fn(n, p, |i, j| samples[i].0[j] - x_mean[j]);
    let target = DVector::from_iterator(n, samples.iter().map(|(_, y)| y - y_mean));

    let (weights, rank) = if p == 0 {
        (Vec::new(), 0)
    } else {
        let svd = design.svd(true, true);
        let max_sv = svd.singular_values.max();
        let tol = max_sv * (n.max(p) as f64) * 1e-12;
        let rank = svd.singular_values.iter().filter(|s| **s > tol && **s > 1e-12).count();
        if rank == 0 {
            (vec![0.0; p], 0)
        } else {
            let w = svd
                .solve(&target, tol.max(1e-12))
                .map_err(|e| Error::Domain(format!("least squares failed: {e}")))?;
            (w.iter().copied().collect(), rank)
        }
    };
    let weights: Vec<f64> =
        if weights.iter().all(|w| w.is_finite()) { weights } else { vec![0.0; p] };
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();

    let mut model = HourModel {
        kind: "linear_hour".into(),
        weights,
        intercept,
        residual_std: MIN_RESIDUAL_STD,
        n_train: n,
        rank_deficient: rank < p,
        intercept_only: rank == 0,
    };
    let sse: f64 = samples
        .iter()
        .map(|(x, y)| {
            let r = y - model.raw_predict(x);
            r * r
        })
        .sum();
    model.residual_std = (sse / n as f64).sqrt().max(MIN_RESIDUAL_STD);
    Ok(model)
}

impl HourModel {
    fn raw_predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Unclamped prediction; callers clamp with [`clamp_hour`].
pub fn predict_hour(model: &HourModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.weights.len() {
        return Err(Error::Dimension { expected: model.weights.len(), got: features.len() });
    }
    Ok(model.raw_predict(features))
}

pub fn clamp_hour(h: f64) -> f64 {
    h.clamp(0.0, MAX_HOUR as f64)
}

// ---------------------------------------------------------------------------
// Distributions

/// Discrete distribution over integer hours of the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub support: Vec<u32>,
    pub pmf: Vec<f64>,
}

impl ForecastDistribution {
    pub fn point_mass(hour: u32) -> Self {
        Self { support: vec![hour], pmf: vec![1.0] }
    }

    /// Builds a distribution from `(hour, weight)` pairs, normalising the weights.
    pub fn from_weights(mut pairs: Vec<(u32, f64)>) -> Result<Self> {
        pairs.sort_by_key(|(h, _)| *h);
        pairs.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        pairs.retain(|(_, w)| *w > 0.0);
        let total: f64 = pairs.iter().map(|(_, w)| w).sum();
        if pairs.is_empty() || !(total > 0.0) || !total.is_finite() {
            return Err(Error::Domain("distribution needs positive finite mass".into()));
        }
        Ok(Self {
            support: pairs.iter().map(|(h, _)| *h).collect(),
            pmf: pairs.iter().map(|(_, w)| w / total).collect(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.pmf.iter().copied())
    }

    pub fn prob(&self, hour: u32) -> f64 {
        self.support.binary_search(&hour).map(|i| self.pmf[i]).unwrap_or(0.0)
    }

    /// Most likely hour, earliest on ties.
    pub fn mode(&self) -> u32 {
        let mut best = 0;
        for i in 1..self.pmf.len() {
            if self.pmf[i] > self.pmf[best] {
                best = i;
            }
        }
        self.support[best]
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(h, p)| h as f64 * p).sum()
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() || self.support.len() != self.pmf.len() {
            return Err(Error::Domain("distribution support and pmf disagree".into()));
        }
        if self.support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("distribution support not strictly increasing".into()));
        }
        if self.support.iter().any(|h| *h > MAX_HOUR) {
            return Err(Error::Domain("distribution support leaves the horizon".into()));
        }
        if self.pmf.iter().any(|p| !(*p >= 0.0)) || (self.total() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("pmf is not a probability distribution".into()));
        }
        Ok(())
    }
}

/// Discretised normal `N(mean, std)` over the integer hours `[lo, hi]`,
/// trimmed below [`PMF_TRIM`] and renormalised.
pub fn build_distribution(mean: f64, std: f64, lo: i64, hi: i64) -> Result<ForecastDistribution> {
    if hi < lo {
        return Err(Error::EmptySupport { lo, hi });
    }
    if !(std > 0.0) || !mean.is_finite() {
        return Err(Error::Domain(format!("distribution needs finite mean and std > 0 (mean {mean}, std {std})")));
    }
    if lo < 0 || hi > MAX_HOUR as i64 {
        return Err(Error::Domain(format!("support [{lo}, {hi}] leaves the horizon")));
    }
    let log_density: Vec<f64> = (lo..=hi)
        .map(|h| {
            let z = (h as f64 - mean) / std;
            -0.5 * z * z
        })
        .collect();
    let top = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_density.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();

    let kept: Vec<(u32, f64)> = (lo..=hi)
        .zip(weights)
        .map(|(h, w)| (h as u32, w / total))
        .filter(|(_, p)| *p >= PMF_TRIM)
        .collect();
    ForecastDistribution::from_weights(kept)
}

// ---------------------------------------------------------------------------
// Forecast assembly

/// Day-ahead activity forecast of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityForecast {
    pub date: NaiveDate,
    pub day_probability: f64,
    /// Clamped point prediction the earliest-start distribution is centred on.
    pub t_es_point: f64,
    pub t_es_dist: ForecastDistribution,
    pub t_le_conditional: BTreeMap<u32, ForecastDistribution>,
}

impl ActivityForecast {
    /// `P(T_le | e)`: conditional latest-end pmfs mixed by the earliest-start pmf.
    pub fn latest_end_marginal(&self) -> Result<ForecastDistribution> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (t_es, p_es) in self.t_es_dist.iter() {
            if let Some(cond) = self.t_le_conditional.get(&t_es) {
                for (t_le, p_le) in cond.iter() {
                    *acc.entry(t_le).or_default() += p_es * p_le;
                }
            }
        }
        ForecastDistribution::from_weights(acc.into_iter().collect())
    }
}

/// One fully observed day for training and prequential updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayObservation {
    pub date: NaiveDate,
    pub active: bool,
    /// Hour of the first ready action of the day.
    pub t_es: Option<u32>,
    /// Hour of the next ready action, counted from the same midnight, capped at the horizon.
    pub t_le: Option<u32>,
}

/// Day model plus both hour models and the history they are refit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModels {
    pub day: DayModel,
    pub earliest_start: HourModel,
    pub latest_end: HourModel,
    /// Refit hour models on the last `window_days` days only.
    pub window_days: Option<u32>,
    pub history: Vec<DayObservation>,
}

fn le_features(f: &CalendarFeatures, t_es: f64) -> Vec<f64> {
    let mut x = encode_features(f);
    x.push(t_es);
    x
}

type Samples = Vec<(Vec<f64>, f64)>;

fn hour_samples(history: &[DayObservation]) -> (Samples, Samples) {
    let mut es = Vec::new();
    let mut le = Vec::new();
    for obs in history.iter().filter(|o| o.active) {
        let (Some(t_es), Some(t_le)) = (obs.t_es, obs.t_le) else { continue };
        let f = calendar_features(obs.date);
        es.push((encode_features(&f), t_es as f64));
        le.push((le_features(&f, t_es as f64), t_le as f64));
    }
    (es, le)
}

impl ForecastModels {
    pub fn train(days: &[DayObservation], alpha: f64, window_days: Option<u32>) -> Result<Self> {
        let labelled: Vec<_> = days.iter().map(|d| (calendar_features(d.date), d.active)).collect();
        let day = train_day_model(&labelled, alpha)?;
        let mut history = days.to_vec();
        history.sort_by_key(|d| d.date);
        let windowed = Self::windowed(&history, window_days);
        let (es, le) = hour_samples(windowed);
        Ok(Self {
            day,
            earliest_start: train_hour_model(&es)?,
            latest_end: train_hour_model(&le)?,
            window_days,
            history,
        })
    }

    fn windowed(history: &[DayObservation], window_days: Option<u32>) -> &[DayObservation] {
        match (window_days, history.last()) {
            (Some(w), Some(last)) => {
                let cutoff = last.date - chrono::Duration::days(w as i64);
                let first = history.partition_point(|d| d.date <= cutoff);
                &history[first..]
            }
            _ => history,
        }
    }

    /// Test-then-train step: counts the day and refits both hour models.
    ///
    /// Hour models are kept unchanged when the window holds fewer than two
    /// active days.
    pub fn prequential_update(&mut self, obs: DayObservation) -> Result<()> {
        self.day.observe(&calendar_features(obs.date), obs.active);
        let pos = self.history.partition_point(|d| d.date <= obs.date);
        self.history.insert(pos, obs);
        if obs.active {
            let (es, le) = hour_samples(Self::windowed(&self.history, self.window_days));
            if es.len() >= 2 {
                self.earliest_start = train_hour_model(&es)?;
                self.latest_end = train_hour_model(&le)?;
            }
        }
        Ok(())
    }

    pub fn predict_earliest_start(&self, date: NaiveDate) -> Result<f64> {
        predict_hour(&self.earliest_start, &encode_features(&calendar_features(date))).map(clamp_hour)
    }

    pub fn predict_latest_end(&self, date: NaiveDate, t_es: f64) -> Result<f64> {
        predict_hour(&self.latest_end, &le_features(&calendar_features(date), t_es)).map(clamp_hour)
    }
}

/// Day-ahead forecast; `None` when the day is not predicted active.
///
/// `op_len` is the signature length `k`; each conditional latest-end
/// distribution is restricted to hours after `t_es + k`.
pub fn forecast_activity(models: &ForecastModels, date: NaiveDate, op_len: usize) -> Result<Option<ActivityForecast>> {
    let features = calendar_features(date);
    let day_probability = predict_day(&models.day, &features);
    if day_probability <= ACTIVE_THRESHOLD {
        return Ok(None);
    }
    let t_es_point = models.predict_earliest_start(date)?;
    let t_es_dist = build_distribution(t_es_point, models.earliest_start.residual_std, 0, 23)?;
    let mut t_le_conditional = BTreeMap::new();
    for t_es in t_es_dist.support.iter().copied() {
        let mean = models.predict_latest_end(date, t_es as f64)?;
        let lo = t_es as i64 + op_len as i64 + 1;
        let dist = build_distribution(mean, models.latest_end.residual_std, lo, MAX_HOUR as i64)?;
        t_le_conditional.insert(t_es, dist);
    }
    Ok(Some(ActivityForecast { date, day_probability, t_es_point, t_es_dist, t_le_conditional }))
}

/// The `ceil(0.1 * N)` items with the highest probability; ties go to the smaller id.
pub fn select_top_decile<I: Ord + Clone>(predictions: &[(I, f64)]) -> Vec<(I, f64)> {
    let take = (predictions.len() as f64 * 0.1).ceil() as usize;
    let mut sorted = predictions.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    sorted.truncate(take);
    sorted
}
