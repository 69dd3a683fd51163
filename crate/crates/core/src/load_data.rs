//! Device load ingestion, operation segmentation and calendar evidence.

use std::io::Read;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default on-threshold for operation detection, in kWh per hour.
pub const DEFAULT_ON_THRESHOLD: f64 = 0.05;
/// Default number of idle hours that separate two operations.
pub const DEFAULT_IDLE_GAP: u32 = 1;

/// Hourly energy readings of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub device_id: String,
    /// First hour of the series, hour aligned.
    pub start: DateTime<Utc>,
    /// kWh per hour, one entry per hour.
    pub values: Vec<f64>,
    /// `true` where the hour had no samples and was zero filled.
    pub gaps: Vec<bool>,
    /// Raw sub-hourly samples, kept only when the source was finer than hourly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<FineSamples>,
}

/// Sub-hourly samples retained so operation durations can be measured
/// below the hourly resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineSamples {
    pub step_minutes: u32,
    /// `(minutes since series start, kWh per hour)`.
    pub samples: Vec<(i64, f64)>,
}

impl LoadSeries {
    /// Builds an hourly series without gaps.
    pub fn from_hourly(device_id: impl Into<String>, start: DateTime<Utc>, values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("load value {bad} is not a finite non-negative number")));
        }
        let gaps = vec![false; values.len()];
        Ok(Self {
            device_id: device_id.into(),
            start: floor_hour(start),
            values,
            gaps,
            fine: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::hours(index as i64)
    }

    pub fn gap_count(&self) -> usize {
        self.gaps.iter().filter(|g| **g).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationEvent {
    pub ready_time: DateTime<Utc>,
    pub duration_hours: u32,
    pub energy_per_hour: Vec<f64>,
    /// Duration measured on the raw samples; equals `duration_hours` for hourly data.
    pub measured_hours: f64,
}

impl OperationEvent {
    pub fn new(ready_time: DateTime<Utc>, energy_per_hour: Vec<f64>) -> Self {
        let duration_hours = energy_per_hour.len() as u32;
        Self {
            ready_time,
            duration_hours,
            energy_per_hour,
            measured_hours: duration_hours as f64,
        }
    }

    pub fn end_time(&self) -> DateTime<Utc> {
        self.ready_time + Duration::hours(self.duration_hours as i64)
    }
}

/// Ready events of one device in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub device_id: String,
    pub events: Vec<OperationEvent>,
}

impl EventSeries {
    /// Checks ordering, non-overlap and positivity.
    pub fn validate(&self) -> Result<()> {
        for (i, ev) in self.events.iter().enumerate() {
            if ev.duration_hours == 0 || ev.energy_per_hour.len() != ev.duration_hours as usize {
                return Err(Error::Domain(format!("event {i} has inconsistent duration")));
            }
            if ev.energy_per_hour.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(Error::Domain(format!("event {i} has a non-positive energy value")));
            }
            if let Some(next) = self.events.get(i + 1) {
                if ev.end_time() > next.ready_time {
                    return Err(Error::Domain(format!("events {i} and {} overlap", i + 1)));
                }
            }
        }
        Ok(())
    }

    /// Hours between consecutive ready actions, tagged with the date of the earlier one.
    pub fn inter_ready_intervals(&self) -> Vec<(NaiveDate, f64)> {
        self.events
            .windows(2)
            .map(|w| {
                let hours = (w[1].ready_time - w[0].ready_time).num_minutes() as f64 / 60.0;
                (w[0].ready_time.date_naive(), hours)
            })
            .collect()
    }

    /// Renders the events as an hourly load on a zero baseline covering `[start, start + hours)`.
    pub fn render(&self, start: DateTime<Utc>, hours: usize) -> Result<LoadSeries> {
        let start = floor_hour(start);
        let mut values = vec![0.0; hours];
        for ev in &self.events {
            let offset = (ev.ready_time - start).num_hours();
            for (i, e) in ev.energy_per_hour.iter().enumerate() {
                let idx = offset + i as i64;
                if idx >= 0 && (idx as usize) < hours {
                    values[idx as usize] += e;
                }
            }
        }
        LoadSeries::from_hourly(self.device_id.clone(), start, values)
    }
}

/// Canonical operation profile: mean energy per operating hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSignature {
    pub per_hour_demand: Vec<f64>,
}

impl DeviceSignature {
    pub fn new(per_hour_demand: Vec<f64>) -> Result<Self> {
        if per_hour_demand.is_empty() {
            return Err(Error::Domain("signature needs at least one hour".into()));
        }
        if per_hour_demand.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::Domain("signature demands must be positive".into()));
        }
        Ok(Self { per_hour_demand })
    }

    /// Operation length `k` in hours.
    pub fn len(&self) -> usize {
        self.per_hour_demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_hour_demand.is_empty()
    }

    pub fn total_energy(&self) -> f64 {
        self.per_hour_demand.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    /// Meteorological season of a month (Dec-Feb is winter).
    pub fn of_month(month: u32) -> Season {
        match month {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CalendarFeatures {
    /// Monday = 0.
    pub day_of_week: u32,
    /// ISO week, 1-53.
    pub week_of_year: u32,
    pub month: u32,
    pub is_weekend: bool,
    pub season: Season,
}

pub fn calendar_features(date: NaiveDate) -> CalendarFeatures {
    let day_of_week = date.weekday().num_days_from_monday();
    let month = date.month();
    CalendarFeatures {
        day_of_week,
        week_of_year: date.iso_week().week(),
        month,
        is_weekend: day_of_week >= 5,
        season: Season::of_month(month),
    }
}

pub(crate) fn floor_hour(ts: DateTime<Utc>) -> DateTime<Utc> {
    ts.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("zeroing sub-hour fields is always valid")
}

/// Parses RFC 3339 / ISO-8601 timestamps; offset-less values are taken as UTC.
pub(crate) fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Some(ts.with_timezone(&Utc));
    }
    const NAIVE: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];
    NAIVE
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|naive| Utc.from_utc_datetime(&naive))
}

pub(crate) fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

pub(crate) fn parse_number(field: Option<&str>, line: u64, name: &str) -> Result<f64> {
    let field = field.ok_or_else(|| Error::Parse { line, message: format!("missing column {name}") })?;
    let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {name}: `{}` is not a number", field.trim()),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse { line, message: format!("column {name} is not finite") });
    }
    Ok(value)
}

/// Reads a `timestamp,kwh` CSV and averages samples into hourly values.
pub fn ingest_load_csv<R: Read>(source: R, device_id: &str) -> Result<LoadSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = match reader.headers() {
        Ok(h) if !h.is_empty() => h.clone(),
        Ok(_) => return Err(Error::EmptyInput),
        Err(e) => return Err(Error::Parse { line: 1, message: e.to_string() }),
    };
    check_header(&headers, &["timestamp", "kwh"])?;

    let mut samples: Vec<(DateTime<Utc>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected 2 fields, got {}", record.len()) });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad timestamp `{}`", &record[0]),
        })?;
        let kwh = parse_number(record.get(1), line, "kwh")?;
        if kwh < 0.0 {
            return Err(Error::Parse { line, message: "negative energy reading".into() });
        }
        if let Some((prev, _)) = samples.last() {
            if ts <= *prev {
                return Err(Error::Ordering { line, timestamp: record[0].to_string() });
            }
        }
        samples.push((ts, kwh));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    aggregate_hourly(device_id, &samples)
}

fn aggregate_hourly(device_id: &str, samples: &[(DateTime<Utc>, f64)]) -> Result<LoadSeries> {
    let start = floor_hour(samples[0].0);
    let last = floor_hour(samples[samples.len() - 1].0);
    let hours = (last - start).num_hours() as usize + 1;
    let mut sums = vec![0.0; hours];
    let mut counts = vec![0u32; hours];
    for (ts, kwh) in samples {
        let idx = (floor_hour(*ts) - start).num_hours() as usize;
        sums[idx] += kwh;
        counts[idx] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| if *c == 0 { 0.0 } else { s / *c as f64 })
        .collect();
    let gaps = counts.iter().map(|c| *c == 0).collect();

    let step = samples
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).num_minutes())
        .filter(|m| *m > 0)
        .min()
        .unwrap_or(60);
    let fine = (step < 60).then(|| FineSamples {
        step_minutes: step as u32,
        samples: samples.iter().map(|(ts, kwh)| ((*ts - start).num_minutes(), *kwh)).collect(),
    });

    Ok(LoadSeries { device_id: device_id.to_string(), start, values, gaps, fine })
}

/// Segments a load series into operations.
///
/// An operation starts at the first hour at or above `on_threshold` that
/// follows at least `idle_gap` hours below it (the start of the series counts
/// as idle), and ends at the last hour at or above the threshold before the
/// next such idle stretch. Shorter dips are absorbed into the operation.
pub fn extract_events(series: &LoadSeries, on_threshold: f64, idle_gap: u32) -> EventSeries {
    let idle_gap = idle_gap.max(1) as usize;
    let on: Vec<bool> = series.values.iter().map(|v| *v >= on_threshold).collect();
    let mut events = Vec::new();
    let mut i = 0;
    while i < on.len() {
        if !on[i] {
            i += 1;
            continue;
        }
        let start = i;
        let mut end = i; // last on-hour, inclusive
        let mut j = i + 1;
        let mut idle = 0;
        while j < on.len() {
            if on[j] {
                end = j;
                idle = 0;
            } else {
                idle += 1;
                if idle >= idle_gap {
                    break;
                }
            }
            j += 1;
        }
        let energy: Vec<f64> = series.values[start..=end].to_vec();
        let duration = (end - start + 1) as u32;
        let measured_hours = series
            .fine
            .as_ref()
            .map(|fine| measured_duration(fine, start, end, on_threshold))
            .unwrap_or(duration as f64);
        events.push(OperationEvent {
            ready_time: series.timestamp(start),
            duration_hours: duration,
            energy_per_hour: energy,
            measured_hours,
        });
        i = end + 1;
    }
    EventSeries { device_id: series.device_id.clone(), events }
}

fn measured_duration(fine: &FineSamples, start_hour: usize, end_hour: usize, threshold: f64) -> f64 {
    let lo = start_hour as i64 * 60;
    let hi = (end_hour as i64 + 1) * 60;
    let on = fine
        .samples
        .iter()
        .filter(|(m, v)| *m >= lo && *m < hi && *v >= threshold)
        .count();
    (on as f64 * fine.step_minutes as f64 / 60.0).min((end_hour - start_hour + 1) as f64)
}

/// Averages the activations into a device signature.
///
/// `k` is the ceiling of the mean measured duration; hour `i` of the profile is
/// the mean energy at operating hour `i`, with shorter events contributing zero.
pub fn extract_signature(events: &EventSeries) -> Result<DeviceSignature> {
    let n = events.events.len();
    if n == 0 {
        return Err(Error::InsufficientData("no events to build a signature from".into()));
    }
    let mean_duration = events.events.iter().map(|e| e.measured_hours).sum::<f64>() / n as f64;
    // Guard against 2.0000000001 from float summation.
    let k = ((mean_duration - 1e-9).ceil() as usize).max(1);
    let per_hour_demand = (0..k)
        .map(|i| {
            events
                .events
                .iter()
                .map(|e| e.energy_per_hour.get(i).copied().unwrap_or(0.0))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    DeviceSignature::new(per_hour_demand)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: &str) -> DateTime<Utc> {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn quarter_hours_are_averaged() {
        let csv = "timestamp,kwh\n\
                   2017-01-02T10:00:00Z,0.2\n\
                   2017-01-02T10:15:00Z,0.2\n\
                   2017-01-02T10:30:00Z,0.6\n\
                   2017-01-02T10:45:00Z,0.6\n";
        let series = ingest_load_csv(csv.as_bytes(), "dw").unwrap();
        assert_eq!(series.values.len(), 1);
        assert!((series.values[0] - 0.4).abs() < 1e-12);
        assert_eq!(series.fine.as_ref().unwrap().step_minutes, 15);
    }

    #[test]
    fn hourly_input_is_identity() {
        let csv = "timestamp,kwh\r\n2017-01-02T00:00:00,0.1\r\n2017-01-02T01:00:00,0.0\r\n2017-01-02T02:00:00,1.5\r\n";
        let series = ingest_load_csv(csv.as_bytes(), "dw").unwrap();
        assert_eq!(series.values, vec![0.1, 0.0, 1.5]);
        assert!(series.fine.is_none());
        assert_eq!(series.gap_count(), 0);
    }

    #[test]
    fn missing_hour_is_zero_filled_and_flagged() {
        let csv = "timestamp,kwh\n2017-01-02T00:00:00Z,0.3\n2017-01-02T02:00:00Z,0.4\n";
        let series = ingest_load_csv(csv.as_bytes(), "dw").unwrap();
        assert_eq!(series.values, vec![0.3, 0.0, 0.4]);
        assert_eq!(series.gaps, vec![false, true, false]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "timestamp,kwh\n2017-01-02T00:00:00Z,0.3\n2017-01-02T01:00:00Z,abc\n";
        match ingest_load_csv(csv.as_bytes(), "dw") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_monotone_rows_are_rejected() {
        let csv = "timestamp,kwh\n2017-01-02T01:00:00Z,0.3\n2017-01-02T00:00:00Z,0.3\n";
        assert!(matches!(ingest_load_csv(csv.as_bytes(), "dw"), Err(Error::Ordering { line: 3, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(ingest_load_csv("".as_bytes(), "dw"), Err(Error::EmptyInput)));
        assert!(matches!(ingest_load_csv("timestamp,kwh\n".as_bytes(), "dw"), Err(Error::EmptyInput)));
    }

    fn hourly(values: &[f64]) -> LoadSeries {
        LoadSeries::from_hourly("dw", ts("2017-01-02T00:00:00Z"), values.to_vec()).unwrap()
    }

    #[test]
    fn single_burst_becomes_one_event() {
        let events = extract_events(&hourly(&[0.0, 0.0, 1.2, 0.9, 0.0, 0.0]), 0.1, 1);
        assert_eq!(events.events.len(), 1);
        let ev = &events.events[0];
        assert_eq!(ev.ready_time, ts("2017-01-02T02:00:00Z"));
        assert_eq!(ev.duration_hours, 2);
        assert_eq!(ev.energy_per_hour, vec![1.2, 0.9]);
    }

    #[test]
    fn all_zero_series_has_no_events() {
        assert!(extract_events(&hourly(&[0.0; 24]), 0.1, 1).events.is_empty());
    }

    #[test]
    fn idle_gap_boundary_splits_bursts() {
        // Two idle hours between the bursts: exactly idle_gap = 2.
        let series = hourly(&[1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(extract_events(&series, 0.1, 2).events.len(), 2);
        // One idle hour is shorter than the gap, so the dip is absorbed.
        let series = hourly(&[1.0, 0.0, 1.0, 0.0, 0.0]);
        let events = extract_events(&series, 0.1, 2);
        assert_eq!(events.events.len(), 1);
        assert_eq!(events.events[0].duration_hours, 3);
    }

    #[test]
    fn sub_hourly_durations_feed_the_signature() {
        // 1.5 h and 2.25 h operations at 15 minute resolution.
        let mut csv = String::from("timestamp,kwh\n");
        let mut push = |day: u32, on_quarters: u32| {
            for q in 0..16 {
                let v = if q < on_quarters { 1.0 } else { 0.0 };
                csv.push_str(&format!("2017-01-{:02}T{:02}:{:02}:00Z,{v}\n", day, 10 + q / 4, (q % 4) * 15));
            }
        };
        push(2, 6);
        push(3, 9);
        let series = ingest_load_csv(csv.as_bytes(), "wm").unwrap();
        let events = extract_events(&series, 0.1, 1);
        assert_eq!(events.events.len(), 2);
        assert!((events.events[0].measured_hours - 1.5).abs() < 1e-12);
        assert!((events.events[1].measured_hours - 2.25).abs() < 1e-12);
        // ceil((1.5 + 2.25) / 2) = ceil(1.875) = 2
        assert_eq!(extract_signature(&events).unwrap().len(), 2);
    }

    #[test]
    fn signature_examples() {
        let start = ts("2017-01-02T00:00:00Z");
        let mut a = OperationEvent::new(start, vec![1.0, 1.0]);
        a.measured_hours = 1.5;
        let mut b = OperationEvent::new(start + Duration::hours(24), vec![1.0, 1.0, 1.0]);
        b.measured_hours = 2.2;
        let sig = extract_signature(&EventSeries { device_id: "x".into(), events: vec![a, b] }).unwrap();
        assert_eq!(sig.len(), 2);

        let one = EventSeries { device_id: "x".into(), events: vec![OperationEvent::new(start, vec![1.0, 0.5])] };
        assert_eq!(extract_signature(&one).unwrap().per_hour_demand, vec![1.0, 0.5]);

        let two = EventSeries {
            device_id: "x".into(),
            events: vec![
                OperationEvent::new(start, vec![2.0]),
                OperationEvent::new(start + Duration::hours(5), vec![1.0, 1.0]),
            ],
        };
        let sig = extract_signature(&two).unwrap();
        assert_eq!(sig.per_hour_demand, vec![1.5, 0.5]);
    }

    #[test]
    fn empty_events_have_no_signature() {
        let empty = EventSeries { device_id: "x".into(), events: vec![] };
        assert!(matches!(extract_signature(&empty), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn calendar_examples() {
        let f = calendar_features(NaiveDate::from_ymd_opt(2017, 1, 2).unwrap());
        assert_eq!((f.day_of_week, f.month, f.is_weekend, f.season), (0, 1, false, Season::Winter));
        let f = calendar_features(NaiveDate::from_ymd_opt(2017, 7, 15).unwrap());
        assert!(f.is_weekend);
        assert_eq!(f.season, Season::Summer);
        let f = calendar_features(NaiveDate::from_ymd_opt(2017, 12, 31).unwrap());
        assert_eq!((f.month, f.season), (12, Season::Winter));
    }

    fn arb_events() -> impl Strategy<Value = (u32, Vec<(u32, Vec<f64>)>)> {
        (1u32..4).prop_flat_map(|gap| {
            let ev = (0u32..6, prop::collection::vec(0.2f64..3.0, 1..5));
            (Just(gap), prop::collection::vec(ev, 0..12))
        })
    }

    proptest! {
        #[test]
        fn render_then_extract_round_trips((gap, raw) in arb_events()) {
            let start = ts("2017-03-01T00:00:00Z");
            let mut cursor = 0i64;
            let mut events = Vec::new();
            for (pause, energy) in raw {
                cursor += (gap + pause) as i64;
                let ev = OperationEvent::new(start + Duration::hours(cursor), energy);
                cursor += ev.duration_hours as i64;
                events.push(ev);
            }
            let series = EventSeries { device_id: "rt".into(), events };
            let load = series.render(start, cursor as usize + gap as usize + 1).unwrap();
            let back = extract_events(&load, 0.1, gap);
            prop_assert_eq!(back, series);
        }

        #[test]
        fn signature_length_is_bounded(durations in prop::collection::vec(1u32..8, 1..20)) {
            let start = ts("2017-03-01T00:00:00Z");
            let events: Vec<_> = durations
                .iter()
                .enumerate()
                .map(|(i, d)| OperationEvent::new(start + Duration::hours(24 * i as i64), vec![0.5; *d as usize]))
                .collect();
            let sig = extract_signature(&EventSeries { device_id: "s".into(), events }).unwrap();
            let lo = *durations.iter().min().unwrap() as usize;
            let hi = *durations.iter().max().unwrap() as usize;
            prop_assert!(lo <= sig.len() && sig.len() <= hi + 1);
        }

        #[test]
        fn hourly_aggregation_keeps_span(offsets in prop::collection::btree_set(0i64..(72 * 4), 1..60)) {
            let start = ts("2017-03-01T00:00:00Z");
            let mut csv = String::from("timestamp,kwh\n");
            for q in &offsets {
                let t = start + Duration::minutes(q * 15);
                csv.push_str(&format!("{},0.5\n", t.to_rfc3339()));
            }
            let series = ingest_load_csv(csv.as_bytes(), "a").unwrap();
            let first = offsets.iter().next().unwrap() / 4;
            let last = offsets.iter().next_back().unwrap() / 4;
            prop_assert_eq!(series.values.len() as i64, last - first + 1);
        }
    }
}
