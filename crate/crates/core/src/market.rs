//! Hourly spot and regulation market data, and the cost of running a
//! profile at a given start hour.
//!
//! All positions are absolute hour indices into a [`MarketSeries`].

use std::io::{Read, Write};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::load_data::{check_header, parse_number, parse_timestamp};
use crate::{Error, Result};

pub const MARKET_HEADER: [&str; 5] = ["timestamp", "spot", "up_price", "down_price", "reg_volume"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketRecord {
    pub spot: f64,
    pub up_price: f64,
    pub down_price: f64,
    /// Signed imbalance: positive is an up-regulation deficit, negative a surplus.
    pub reg_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub start: DateTime<Utc>,
    pub records: Vec<MarketRecord>,
    /// Hours with at least one negative price.
    pub negative_price_hours: Vec<usize>,
    /// Leave the first operating hour out of the regulation sum.
    #[serde(default)]
    pub reg_skip_first_hour: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SavingsBreakdown {
    pub delta_spot: f64,
    pub delta_reg: f64,
}

impl SavingsBreakdown {
    pub fn total(&self) -> f64 {
        self.delta_spot + self.delta_reg
    }
}

impl MarketSeries {
    pub fn new(start: DateTime<Utc>, records: Vec<MarketRecord>) -> Result<Self> {
        let mut negative_price_hours = Vec::new();
        for (h, r) in records.iter().enumerate() {
            if ![r.spot, r.up_price, r.down_price, r.reg_volume].iter().all(|v| v.is_finite()) {
                return Err(Error::Domain(format!("market hour {h} has a non-finite value")));
            }
            if r.spot < 0.0 || r.up_price < 0.0 || r.down_price < 0.0 {
                negative_price_hours.push(h);
            }
        }
        Ok(Self { start, records, negative_price_hours, reg_skip_first_hour: false })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has_warnings(&self) -> bool {
        !self.negative_price_hours.is_empty()
    }

    /// Hour index of midnight of `date`, if the series starts at or before it.
    pub fn hour_of(&self, date: NaiveDate) -> Option<usize> {
        let midnight = date.and_hms_opt(0, 0, 0)?.and_utc();
        let hours = (midnight - self.start).num_hours();
        (hours >= 0 && midnight >= self.start).then_some(hours as usize)
    }

    fn window(&self, start: i64, len: usize) -> Result<&[MarketRecord]> {
        let end = start + len as i64;
        if start < 0 || end > self.records.len() as i64 {
            return Err(Error::Range { start, end, len: self.records.len() });
        }
        Ok(&self.records[start as usize..end as usize])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MARKET_HEADER).map_err(csv_io)?;
        for (h, r) in self.records.iter().enumerate() {
            let ts = (self.start + Duration::hours(h as i64)).format("%Y-%m-%dT%H:%M:%SZ").to_string();
            w.write_record([
                ts,
                r.spot.to_string(),
                r.up_price.to_string(),
                r.down_price.to_string(),
                r.reg_volume.to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads the hourly market CSV; any missing hour is an error naming it.
pub fn ingest_market_csv<R: Read>(source: R) -> Result<MarketSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = match reader.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        Ok(_) => return Err(Error::EmptyInput),
        Err(e) => return Err(Error::Parse { line: 1, message: e.to_string() }),
    };
    check_header(&headers, &MARKET_HEADER)?;

    let mut start: Option<DateTime<Utc>> = None;
    let mut prev: Option<DateTime<Utc>> = None;
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != MARKET_HEADER.len() {
            return Err(Error::Parse { line, message: format!("expected 5 fields, got {}", record.len()) });
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| Error::Parse { line, message: format!("bad timestamp `{}`", &record[0]) })?;
        if ts.timestamp() % 3600 != 0 {
            return Err(Error::Parse { line, message: format!("timestamp `{}` is not on the hour", &record[0]) });
        }
        if let Some(p) = prev {
            if ts <= p {
                return Err(Error::Ordering { line, timestamp: record[0].to_string() });
            }
            let expected = p + Duration::hours(1);
            if ts != expected {
                return Err(Error::Gap { missing: expected.format("%Y-%m-%dT%H:%M:%SZ").to_string() });
            }
        }
        records.push(MarketRecord {
            spot: parse_number(record.get(1), line, "spot")?,
            up_price: parse_number(record.get(2), line, "up_price")?,
            down_price: parse_number(record.get(3), line, "down_price")?,
            reg_volume: parse_number(record.get(4), line, "reg_volume")?,
        });
        start.get_or_insert(ts);
        prev = Some(ts);
    }
    match start {
        Some(s) => MarketSeries::new(s, records),
        None => Err(Error::EmptyInput),
    }
}

/// `S(x) = sum_i e_i * spot(x + i)`.
pub fn spot_cost(profile: &[f64], start: i64, m: &MarketSeries) -> Result<f64> {
    let w = m.window(start, profile.len())?;
    Ok(profile.iter().zip(w).map(|(e, r)| e * r.spot).sum())
}

/// Spot savings of moving an operation from `t_es` to `t`.
pub fn spot_savings(profile: &[f64], t_es: i64, t: i64, m: &MarketSeries) -> Result<f64> {
    Ok(spot_cost(profile, t_es, m)? - spot_cost(profile, t, m)?)
}

/// Regulation cost of consuming `e` in hour `r`.
pub fn hour_reg_cost(r: &MarketRecord, e: f64) -> f64 {
    if r.reg_volume > 0.0 {
        e * (r.up_price - r.spot).abs()
    } else if r.reg_volume < 0.0 {
        -e.min(r.reg_volume.abs()) * (r.spot - r.down_price).abs()
    } else {
        0.0
    }
}

pub fn reg_contribution(profile: &[f64], start: i64, m: &MarketSeries) -> Result<f64> {
    let w = m.window(start, profile.len())?;
    let skip = usize::from(m.reg_skip_first_hour);
    Ok(profile.iter().zip(w).skip(skip).map(|(e, r)| hour_reg_cost(r, *e)).sum())
}

pub fn reg_savings(profile: &[f64], t_es: i64, t: i64, m: &MarketSeries) -> Result<f64> {
    Ok(reg_contribution(profile, t_es, m)? - reg_contribution(profile, t, m)?)
}

pub fn savings(profile: &[f64], t_es: i64, t: i64, m: &MarketSeries) -> Result<SavingsBreakdown> {
    Ok(SavingsBreakdown {
        delta_spot: spot_savings(profile, t_es, t, m)?,
        delta_reg: reg_savings(profile, t_es, t, m)?,
    })
}

/// Permutes whole days; a trailing partial day is dropped.
pub fn shuffle_market(m: &MarketSeries, seed: u64) -> MarketSeries {
    let days = m.records.len() / 24;
    let mut order: Vec<usize> = (0..days).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let records: Vec<MarketRecord> =
        order.iter().flat_map(|d| m.records[d * 24..(d + 1) * 24].iter().copied()).collect();
    let mut out = MarketSeries::new(m.start, records).expect("values were already validated");
    out.reg_skip_first_hour = m.reg_skip_first_hour;
    out
}

/// Parameters of the synthetic market generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMarket {
    /// Mean spot price.
    pub base_price: f64,
    /// Amplitude of the morning and evening peaks relative to the night trough.
    pub daily_swing: f64,
    /// Standard deviation of the per-day price level.
    pub day_noise: f64,
    /// Standard deviation of hourly price noise.
    pub hour_noise: f64,
    /// Standard deviation of the signed imbalance volume, kWh.
    pub volume_std: f64,
    /// Lag-one autocorrelation of the imbalance volume.
    pub volume_ar: f64,
    /// Mean absolute gap between regulation and spot prices.
    pub mean_spread: f64,
}

impl Default for SyntheticMarket {
    fn default() -> Self {
        Self {
            base_price: 0.30,
            daily_swing: 0.12,
            day_noise: 0.04,
            hour_noise: 0.03,
            volume_std: 3.0,
            volume_ar: 0.8,
            mean_spread: 0.06,
        }
    }
}

fn daily_shape(hour: usize) -> f64 {
    let h = hour as f64;
    let bump = |centre: f64, width: f64| (-0.5 * ((h - centre) / width).powi(2)).exp();
    // Night trough, morning and larger evening peak.
    -0.6 * bump(3.5, 2.5) + 0.6 * bump(8.0, 1.5) + 1.0 * bump(18.5, 2.0)
}

pub fn synthetic_market(cfg: &SyntheticMarket, start: DateTime<Utc>, days: usize, seed: u64) -> MarketSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(days * 24);
    let mut volume = 0.0;
    for _ in 0..days {
        let level = cfg.base_price + cfg.day_noise * std_normal.sample(&mut rng);
        for h in 0..24 {
            let spot = (level + cfg.daily_swing * daily_shape(h) + cfg.hour_noise * std_normal.sample(&mut rng)).max(0.0);
            volume = cfg.volume_ar * volume
                + cfg.volume_std * (1.0 - cfg.volume_ar * cfg.volume_ar).sqrt() * std_normal.sample(&mut rng);
            let spread = cfg.mean_spread * (std_normal.sample(&mut rng).abs() * 1.25);
            let (up, down) = if volume > 0.0 { (spot + spread, spot) } else { (spot, (spot - spread).max(0.0)) };
            records.push(MarketRecord { spot, up_price: up, down_price: down, reg_volume: volume });
        }
    }
    MarketSeries::new(start, records).expect("generated values are finite")
}
