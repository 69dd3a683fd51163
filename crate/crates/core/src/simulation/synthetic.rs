//! Seeded generator of synthetic device activity.

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{MixtureComponent, SyntheticDeviceConfig};
use crate::load_data::{EventSeries, LoadSeries, OperationEvent};
use crate::Result;

const HOUR_DRAWS: usize = 1000;
const PLACEMENT_TRIES: usize = 20;

fn sample_hour(mix: &[MixtureComponent], rng: &mut ChaCha8Rng) -> u32 {
    let mut u: f64 = rng.random();
    let comp = mix
        .iter()
        .find(|c| {
            u -= c.weight;
            u < 0.0
        })
        .unwrap_or(&mix[mix.len() - 1]);
    if comp.std <= 0.0 {
        return comp.mean.round().clamp(0.0, 23.0) as u32;
    }
    let normal = Normal::new(comp.mean, comp.std).expect("std checked positive");
    for _ in 0..HOUR_DRAWS {
        let h = normal.sample(rng).round();
        if (0.0..=23.0).contains(&h) {
            return h as u32;
        }
    }
    comp.mean.round().clamp(0.0, 23.0) as u32
}

fn sample_duration(cfg: &SyntheticDeviceConfig, rng: &mut ChaCha8Rng) -> usize {
    let k = cfg.signature.len() as i64;
    let u: f64 = rng.random();
    let shift = if u < cfg.jitter[0] {
        -1
    } else if u < cfg.jitter[0] + cfg.jitter[1] {
        0
    } else {
        1
    };
    (k + shift).max(1) as usize
}

fn energy_profile(signature: &[f64], duration: usize) -> Vec<f64> {
    (0..duration).map(|i| signature[i.min(signature.len() - 1)]).collect()
}

/// Generates `n_days` of device activity starting at midnight of `start`.
///
/// At most one operation per day; operations are kept at least one idle
/// hour apart so they segment back exactly from the rendered load.
pub fn generate_synthetic(
    cfg: &SyntheticDeviceConfig,
    seed: u64,
    start: NaiveDate,
    n_days: u32,
) -> Result<(LoadSeries, EventSeries)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = start.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc();
    let span_end = origin + Duration::hours(n_days as i64 * 24);
    let mut events: Vec<OperationEvent> = Vec::new();
    for day in 0..n_days {
        let date = start + Duration::days(day as i64);
        let dow = date.weekday().num_days_from_monday() as usize;
        if rng.random::<f64>() >= cfg.activation[dow] {
            continue;
        }
        let mix = match (&cfg.weekend_ready_hours, dow >= 5) {
            (Some(w), true) => w,
            _ => &cfg.ready_hours,
        };
        let midnight = origin + Duration::days(day as i64);
        for _ in 0..PLACEMENT_TRIES {
            let hour = sample_hour(mix, &mut rng);
            let duration = sample_duration(cfg, &mut rng);
            let ready = midnight + Duration::hours(hour as i64);
            let ev = OperationEvent::new(ready, energy_profile(&cfg.signature, duration));
            let clear_of_previous = events.last().is_none_or(|p| p.end_time() + Duration::hours(1) <= ready);
            if clear_of_previous && ev.end_time() <= span_end {
                events.push(ev);
                break;
            }
        }
    }
    let events = EventSeries { device_id: cfg.category.clone(), events };
    let load = events.render(origin, n_days as usize * 24)?;
    Ok((load, events))
}
