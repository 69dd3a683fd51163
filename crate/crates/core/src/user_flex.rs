//! Per-user tolerance of schedule delays.
//!
//! The probability that a user accepts a delay `d` is the survival function
//! `exp(-lambda * d)` of an exponential waiting time. One rate is kept per
//! context bucket (weekday class x season). Rates are fitted offline from the
//! gaps between consecutive ready actions and then nudged online by
//! stochastic gradient steps on accept/reject feedback.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::load_data::{calendar_features, EventSeries, Season};
use crate::{Error, Result};

/// Lower bound applied to every rate after an update.
pub const LAMBDA_FLOOR: f64 = 1e-6;
/// Observation count at which the online learning rate has halved.
pub const RATE_HALF_LIFE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeekdayClass {
    Weekday,
    Weekend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContextKey {
    pub weekday_class: WeekdayClass,
    pub season: Season,
}

impl ContextKey {
    pub fn of_date(date: NaiveDate) -> Self {
        let f = calendar_features(date);
        Self {
            weekday_class: if f.is_weekend { WeekdayClass::Weekend } else { WeekdayClass::Weekday },
            season: f.season,
        }
    }

    pub fn all() -> impl Iterator<Item = ContextKey> {
        [WeekdayClass::Weekday, WeekdayClass::Weekend]
            .into_iter()
            .flat_map(|w| Season::ALL.into_iter().map(move |s| ContextKey { weekday_class: w, season: s }))
    }

    pub fn index(self) -> usize {
        (self.weekday_class as usize) * 4 + self.season.index()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub weekday_class: WeekdayClass,
    pub season: Season,
    pub lambda: f64,
    pub mu0: f64,
    pub n: u64,
    /// Intervals the offline fit saw for this bucket; fewer than two means the global rate was inherited.
    pub n_offline: usize,
    pub last_reset: Option<NaiveDate>,
}

/// What a rejected proposal is regressed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionTarget {
    /// Failure (`y = 0`) at the proposed delay.
    #[default]
    ProposedDelay,
    /// Failure at the delay after which the user started the device by hand.
    ManualDelay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFlexModel {
    pub global_lambda: f64,
    #[serde(default)]
    pub rejection_target: RejectionTarget,
    /// Always eight entries, ordered by [`ContextKey::index`].
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected { manual_delay: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackObservation {
    pub context: ContextKey,
    pub delay: f64,
    pub outcome: Outcome,
}

/// Settings of the offline rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfflineFit {
    pub mu0: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OfflineFit {
    fn default() -> Self {
        Self { mu0: 1e-4, epochs: 5, seed: 0 }
    }
}

/// Gradient of `(y - exp(-lambda x))^2` with respect to `lambda`.
pub fn sgd_gradient(lambda: f64, x: f64, y: f64) -> f64 {
    let s = (-lambda * x).exp();
    2.0 * (y - s) * x * s
}

pub fn sgd_step(lambda: f64, mu: f64, x: f64, y: f64) -> f64 {
    (lambda - mu * sgd_gradient(lambda, x, y)).max(LAMBDA_FLOOR)
}

pub fn survival(lambda: f64, delay: f64) -> f64 {
    (-lambda * delay).exp()
}

impl UserFlexModel {
    /// Every bucket starts at `lambda`.
    pub fn uniform(lambda: f64, mu0: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(mu0 > 0.0) {
            return Err(Error::Domain(format!("need lambda > 0 and mu0 > 0, got {lambda}, {mu0}")));
        }
        let buckets = ContextKey::all()
            .map(|k| Bucket {
                weekday_class: k.weekday_class,
                season: k.season,
                lambda,
                mu0,
                n: 0,
                n_offline: 0,
                last_reset: None,
            })
            .collect();
        Ok(Self { global_lambda: lambda, rejection_target: RejectionTarget::default(), buckets })
    }

    pub fn bucket(&self, ctx: ContextKey) -> &Bucket {
        &self.buckets[ctx.index()]
    }

    pub fn lambda(&self, ctx: ContextKey) -> f64 {
        self.bucket(ctx).lambda
    }

    pub fn acceptance_probability(&self, ctx: ContextKey, delay: f64) -> Result<f64> {
        if !(delay >= 0.0) {
            return Err(Error::Domain(format!("delay must be >= 0, got {delay}")));
        }
        Ok(survival(self.lambda(ctx), delay))
    }

    /// One online gradient step with rate `mu0 / (1 + n / 50)`.
    pub fn update_online(&mut self, obs: &FeedbackObservation) -> Result<()> {
        if !(obs.delay >= 0.0) {
            return Err(Error::InvalidObservation(format!("negative delay {}", obs.delay)));
        }
        let (x, y) = match obs.outcome {
            Outcome::Accepted => (obs.delay, 1.0),
            Outcome::Rejected { manual_delay } => {
                if !(manual_delay >= 0.0) || manual_delay >= obs.delay {
                    return Err(Error::InvalidObservation(format!(
                        "manual delay {manual_delay} must lie in [0, {})",
                        obs.delay
                    )));
                }
                match self.rejection_target {
                    RejectionTarget::ProposedDelay => (obs.delay, 0.0),
                    RejectionTarget::ManualDelay => (manual_delay, 0.0),
                }
            }
        };
        let b = &mut self.buckets[obs.context.index()];
        let mu = b.mu0 / (1.0 + b.n as f64 / RATE_HALF_LIFE);
        b.lambda = sgd_step(b.lambda, mu, x, y);
        b.n += 1;
        Ok(())
    }

    /// Restarts the learning-rate schedule of every bucket; rates are kept.
    pub fn reinitialize(&mut self, period_start: NaiveDate) {
        for b in &mut self.buckets {
            b.n = 0;
            b.last_reset = Some(period_start);
        }
    }

    /// Feedback-weighted mean of `|lambda - truth| / truth` over buckets that received feedback.
    pub fn relative_error(&self, truth: impl Fn(ContextKey) -> f64, counts: &[u64; 8]) -> Option<f64> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return None;
        }
        let sum: f64 = ContextKey::all()
            .map(|k| {
                let t = truth(k);
                counts[k.index()] as f64 * (self.lambda(k) - t).abs() / t
            })
            .sum();
        Some(sum / total as f64)
    }
}

/// Least-squares fit of `exp(-lambda x)` to the empirical survival of `intervals`.
///
/// The survival at `x` counts ties with `x` (the point itself included) as
/// half surviving, so the largest gap is not pinned to zero. Starts at
/// `1 / mean` and runs `epochs` shuffled passes with rate `mu0 / (1 + i / 50)`
/// at global step `i`.
pub fn fit_rate(intervals: &[f64], fit: &OfflineFit, rng: &mut ChaCha8Rng) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::InsufficientData("no inter-ready intervals".into()));
    }
    if intervals.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain("inter-ready intervals must be positive".into()));
    }
    let n = intervals.len() as f64;
    let mean = intervals.iter().sum::<f64>() / n;
    let mut points: Vec<(f64, f64)> = intervals
        .iter()
        .map(|x| {
            let above = intervals.iter().filter(|o| *o > x).count() as f64;
            let tied = intervals.iter().filter(|o| *o == x).count() as f64;
            (*x, (above + 0.5 * tied) / n)
        })
        .collect();
    let mut lambda = 1.0 / mean;
    let mut step = 0usize;
    for _ in 0..fit.epochs {
        points.shuffle(rng);
        for (x, y) in &points {
            let mu = fit.mu0 / (1.0 + step as f64 / RATE_HALF_LIFE);
            lambda = sgd_step(lambda, mu, *x, *y);
            step += 1;
        }
    }
    Ok(lambda)
}

/// Offline fit of every context bucket from the gaps between ready actions.
///
/// Buckets with fewer than two intervals inherit the global rate.
pub fn fit_offline(events: &EventSeries, online_mu0: f64, fit: &OfflineFit) -> Result<UserFlexModel> {
    fit_offline_intervals(&events.inter_ready_intervals(), online_mu0, fit)
}

pub fn fit_offline_intervals(intervals: &[(NaiveDate, f64)], online_mu0: f64, fit: &OfflineFit) -> Result<UserFlexModel> {
    if intervals.is_empty() {
        return Err(Error::InsufficientData("need at least two events to fit user flexibility".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fit.seed);
    let all: Vec<f64> = intervals.iter().map(|(_, x)| *x).collect();
    let global = fit_rate(&all, fit, &mut rng)?;
    let mut model = UserFlexModel::uniform(global, online_mu0)?;
    for key in ContextKey::all() {
        let xs: Vec<f64> =
            intervals.iter().filter(|(d, _)| ContextKey::of_date(*d) == key).map(|(_, x)| *x).collect();
        let b = &mut model.buckets[key.index()];
        b.n_offline = xs.len();
        if xs.len() >= 2 {
            b.lambda = fit_rate(&xs, fit, &mut rng)?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Exp};
    use std::f64::consts::LN_2;

    fn ctx() -> ContextKey {
        ContextKey { weekday_class: WeekdayClass::Weekday, season: Season::Winter }
    }

    #[test]
    fn acceptance_examples() {
        let m = UserFlexModel::uniform(0.1, 0.1).unwrap();
        assert_eq!(m.acceptance_probability(ctx(), 0.0).unwrap(), 1.0);
        assert!(m.acceptance_probability(ctx(), 200.0).unwrap() < 1e-8);
        let half = UserFlexModel::uniform(LN_2 / 24.0, 0.1).unwrap();
        assert!((half.acceptance_probability(ctx(), 24.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(m.acceptance_probability(ctx(), -1.0).is_err());
    }

    #[test]
    fn sgd_examples() {
        let lambda = 0.2;
        let x = 4.0;
        assert_eq!(sgd_step(lambda, 0.5, x, (-lambda * x).exp()), lambda);
        assert_eq!(sgd_step(lambda, 0.5, 0.0, 0.3), lambda);
        // s = e^-1, gradient 2 (1 - s) 10 s ~ 4.651, so the step overshoots zero.
        let s = (-1.0f64).exp();
        assert!((sgd_gradient(0.1, 10.0, 1.0) - 2.0 * (1.0 - s) * 10.0 * s).abs() < 1e-12);
        assert!((sgd_gradient(0.1, 10.0, 1.0) - 4.651).abs() < 1e-3);
        assert_eq!(sgd_step(0.1, 0.5, 10.0, 1.0), LAMBDA_FLOOR);
    }

    #[test]
    fn context_keys_are_distinct() {
        let keys: Vec<_> = ContextKey::all().collect();
        assert_eq!(keys.len(), 8);
        for (i, k) in keys.iter().enumerate() {
            assert_eq!(k.index(), i);
        }
        let sat = NaiveDate::from_ymd_opt(2017, 7, 15).unwrap();
        assert_eq!(ContextKey::of_date(sat), ContextKey { weekday_class: WeekdayClass::Weekend, season: Season::Summer });
    }

    #[test]
    fn acceptance_run_drives_acceptance_up() {
        let mut m = UserFlexModel::uniform(0.2, 0.1).unwrap();
        let obs = FeedbackObservation { context: ctx(), delay: 5.0, outcome: Outcome::Accepted };
        let mut last = m.lambda(ctx());
        for _ in 0..2000 {
            m.update_online(&obs).unwrap();
            let l = m.lambda(ctx());
            assert!(l <= last);
            last = l;
        }
        assert!(m.acceptance_probability(ctx(), 5.0).unwrap() > 0.8);
    }

    #[test]
    fn rejection_run_drives_acceptance_down() {
        for target in [RejectionTarget::ProposedDelay, RejectionTarget::ManualDelay] {
            let mut m = UserFlexModel::uniform(0.05, 0.1).unwrap();
            m.rejection_target = target;
            let obs = FeedbackObservation { context: ctx(), delay: 6.0, outcome: Outcome::Rejected { manual_delay: 4.0 } };
            let start = m.acceptance_probability(ctx(), 4.0).unwrap();
            for _ in 0..2000 {
                m.update_online(&obs).unwrap();
            }
            let end = m.acceptance_probability(ctx(), 4.0).unwrap();
            assert!(end < start && end < 0.2, "{target:?}: {start} -> {end}");
        }
    }

    #[test]
    fn matching_target_leaves_rate_unchanged() {
        let mut m = UserFlexModel::uniform(0.3, 0.1).unwrap();
        let before = m.lambda(ctx());
        m.update_online(&FeedbackObservation { context: ctx(), delay: 0.0, outcome: Outcome::Accepted }).unwrap();
        assert_eq!(m.lambda(ctx()), before);
        assert_eq!(m.bucket(ctx()).n, 1);
    }

    #[test]
    fn invalid_rejection_is_refused() {
        let mut m = UserFlexModel::uniform(0.3, 0.1).unwrap();
        let bad = FeedbackObservation { context: ctx(), delay: 3.0, outcome: Outcome::Rejected { manual_delay: 3.0 } };
        assert!(matches!(m.update_online(&bad), Err(Error::InvalidObservation(_))));
    }

    #[test]
    fn reinitialize_resets_schedule_only() {
        let mut m = UserFlexModel::uniform(0.3, 0.1).unwrap();
        let obs = FeedbackObservation { context: ctx(), delay: 2.0, outcome: Outcome::Accepted };
        for _ in 0..10 {
            m.update_online(&obs).unwrap();
        }
        let lambda = m.lambda(ctx());
        let d = NaiveDate::from_ymd_opt(2017, 3, 1).unwrap();
        m.reinitialize(d);
        assert_eq!(m.lambda(ctx()), lambda);
        let once = m.clone();
        m.reinitialize(d);
        assert_eq!(m, once);

        // After a reset the first step uses the full base rate.
        let mut stepped = m.clone();
        stepped.update_online(&obs).unwrap();
        assert_eq!(stepped.lambda(ctx()), sgd_step(lambda, 0.1, 2.0, 1.0));
    }

    fn exp_sample(rate: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Exp::new(rate).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn offline_fit_tracks_the_mle() {
        let xs = exp_sample(0.05, 500, 7);
        let mle = xs.len() as f64 / xs.iter().sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_rate(&xs, &OfflineFit::default(), &mut rng).unwrap();
        assert!((fit - mle).abs() / mle <= 0.10, "{fit} vs {mle}");
    }

    #[test]
    fn offline_fit_on_constant_gaps_stays_near_inverse_mean() {
        let xs = vec![24.0; 200];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fit = fit_rate(&xs, &OfflineFit::default(), &mut rng).unwrap();
        assert!((fit - 1.0 / 24.0).abs() / (1.0 / 24.0) <= 0.5, "{fit}");
    }

    #[test]
    fn buckets_fit_independently() {
        let monday = NaiveDate::from_ymd_opt(2017, 1, 2).unwrap();
        let saturday = NaiveDate::from_ymd_opt(2017, 1, 7).unwrap();
        let mut intervals: Vec<_> = exp_sample(0.05, 300, 1).into_iter().map(|x| (monday, x)).collect();
        intervals.extend(exp_sample(0.5, 300, 2).into_iter().map(|x| (saturday, x)));
        let m = fit_offline_intervals(&intervals, 0.1, &OfflineFit::default()).unwrap();
        let wd = m.lambda(ContextKey::of_date(monday));
        let we = m.lambda(ContextKey::of_date(saturday));
        assert!((wd - 0.05).abs() / 0.05 < 0.2, "{wd}");
        assert!((we - 0.5).abs() / 0.5 < 0.2, "{we}");
        let summer = ContextKey { weekday_class: WeekdayClass::Weekday, season: Season::Summer };
        assert_eq!(m.lambda(summer), m.global_lambda);
        assert_eq!(m.bucket(summer).n_offline, 0);
    }

    #[test]
    fn fit_needs_intervals() {
        assert!(matches!(fit_offline_intervals(&[], 0.1, &OfflineFit::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn model_json_lists_buckets() {
        let m = UserFlexModel::uniform(0.2, 0.08).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        let b = &v["buckets"][5];
        assert_eq!(b["weekday_class"], "weekend");
        assert_eq!(b["season"], "spring");
        assert_eq!(b["lambda"], 0.2);
        let back: UserFlexModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn survival_properties(lambda in 1e-4f64..5.0, d1 in 0.0f64..100.0, gap in 0.0f64..100.0, eps in 1e-9f64..0.5) {
            let m = UserFlexModel::uniform(lambda, 0.1).unwrap();
            let a1 = m.acceptance_probability(ctx(), d1).unwrap();
            let a2 = m.acceptance_probability(ctx(), d1 + gap).unwrap();
            prop_assert!(a1 >= a2);
            prop_assert_eq!(m.acceptance_probability(ctx(), 0.0).unwrap(), 1.0);
            let beyond = -eps.ln() / lambda * 1.0001 + 1e-9;
            prop_assert!(m.acceptance_probability(ctx(), beyond).unwrap() < eps);
        }

        #[test]
        fn gradient_matches_finite_difference(lambda in 0.01f64..2.0, x in 0.1f64..30.0, y in 0.0f64..1.0) {
            let q = |l: f64| {
                let r = y - (-l * x).exp();
                r * r
            };
            let h = 1e-6 * lambda;
            let numeric = (q(lambda + h) - q(lambda - h)) / (2.0 * h);
            let analytic = sgd_gradient(lambda, x, y);
            let scale = analytic.abs().max(1e-3);
            prop_assert!((numeric - analytic).abs() / scale < 1e-6, "{} vs {}", numeric, analytic);
        }

        #[test]
        fn updates_keep_rates_positive(lambda in 1e-6f64..3.0, delay in 0.0f64..48.0, frac in 0.0f64..1.0, accept in any::<bool>(), mu0 in 1e-3f64..5.0) {
            let mut m = UserFlexModel::uniform(lambda, mu0).unwrap();
            let outcome = if accept || delay < 1.0 { Outcome::Accepted } else { Outcome::Rejected { manual_delay: (delay * frac).floor().min(delay - 1.0) } };
            m.update_online(&FeedbackObservation { context: ctx(), delay, outcome }).unwrap();
            prop_assert!(m.lambda(ctx()) >= LAMBDA_FLOOR);
        }
    }
}
