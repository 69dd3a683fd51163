use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{Duration, NaiveDate};
use dr_cli::{run, DeviceStore, ScheduleOutput, TrainedModels, REPORT_CSV_HEADER};
use dr_core::forecast::forecast_activity;
use dr_core::load_data::DeviceSignature;
use dr_core::market::{synthetic_market, SyntheticMarket};
use dr_core::simulation::config::builtin_category;
use dr_core::simulation::synthetic::generate_synthetic;

fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 1, 1).unwrap()
}

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("drsched").chain(args.iter().copied()).map(String::from).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_load_csv(dir: &Path, days: u32) -> PathBuf {
    let cfg = builtin_category("regular").unwrap();
    let (load, _) = generate_synthetic(&cfg, 3, start(), days).unwrap();
    let mut text = String::from("timestamp,kwh\n");
    for (i, v) in load.values.iter().enumerate() {
        text.push_str(&format!("{},{v}\n", load.timestamp(i).format("%Y-%m-%dT%H:%M:%SZ")));
    }
    let path = dir.join("washer.csv");
    fs::write(&path, text).unwrap();
    path
}

fn write_market_csv(dir: &Path, days: usize) -> PathBuf {
    let origin = start().and_hms_opt(0, 0, 0).unwrap().and_utc();
    let m = synthetic_market(&SyntheticMarket::default(), origin, days, 5);
    let path = dir.join("market.csv");
    m.write_csv(fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn ingest_load_then_signature() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_load_csv(dir.path(), 60);
    let store = dir.path().join("store.json");
    assert_eq!(run(argv(&["ingest", "--kind", "load", "--input", p(&csv), "--out", p(&store)])), 0);
    let s: DeviceStore = serde_json::from_str(&fs::read_to_string(&store).unwrap()).unwrap();
    assert_eq!(s.load.device_id, "washer");
    assert_eq!(s.load.values.len(), 60 * 24);
    assert!(!s.events.events.is_empty());

    let sig_path = dir.path().join("sig.json");
    assert_eq!(run(argv(&["signature", "--input", p(&store), "--out", p(&sig_path)])), 0);
    let sig: DeviceSignature = serde_json::from_str(&fs::read_to_string(&sig_path).unwrap()).unwrap();
    let from_csv = dir.path().join("sig2.json");
    assert_eq!(run(argv(&["signature", "--input", p(&csv), "--out", p(&from_csv)])), 0);
    assert_eq!(fs::read(&sig_path).unwrap(), fs::read(&from_csv).unwrap());
    assert!(sig.per_hour_demand.iter().all(|e| *e > 0.0));
}

#[test]
fn market_gap_is_a_data_error_naming_the_hour() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(
        &path,
        "timestamp,spot,up_price,down_price,reg_volume\n\
         2017-01-01T00:00:00Z,30,31,29,0\n\
         2017-01-01T02:00:00Z,30,31,29,0\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_drsched"))
        .args(["ingest", "--kind", "market", "--input", p(&path)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2017-01-01T01:00:00Z"), "{err}");
    assert!(err.contains("error_code=2"), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(run(argv(&["simulate", "--frobnicate"])), 1);
    assert_eq!(run(argv(&["nonsense"])), 1);
    assert_eq!(run(argv(&["schedule"])), 1);
}

#[test]
fn missing_input_file_is_a_data_error() {
    assert_eq!(run(argv(&["signature", "--input", "/nonexistent/x.csv"])), 2);
}

#[test]
fn invalid_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"dataset":{"kind":"builtin"},"market":{"kind":"synthetic"},"n_days":10}"#).unwrap();
    assert_eq!(run(argv(&["simulate", "--config", p(&cfg), "--out", p(dir.path())])), 2);
    fs::write(&cfg, r#"{"dataset":{"kind":"builtin"},"market":{"kind":"synthetic"},"bogus":1}"#).unwrap();
    assert_eq!(run(argv(&["simulate", "--config", p(&cfg), "--out", p(dir.path())])), 2);
}

#[test]
fn train_then_schedule_active_and_inactive_days() {
    let dir = tempfile::tempdir().unwrap();
    let days = 120;
    let csv = write_load_csv(dir.path(), days);
    let market = write_market_csv(dir.path(), days as usize + 30);
    let models_path = dir.path().join("models.json");
    assert_eq!(run(argv(&["train", "--input", p(&csv), "--out", p(&models_path)])), 0);
    let models: TrainedModels = serde_json::from_str(&fs::read_to_string(&models_path).unwrap()).unwrap();
    assert_eq!(models.trained_through, start() + Duration::days(days as i64 - 1));

    let k = models.signature.len();
    let mut seen_active = false;
    let mut seen_inactive = false;
    for d in 0..21 {
        let date = models.trained_through + Duration::days(1 + d);
        let fc = forecast_activity(&models.forecast, date, k).unwrap();
        if (fc.is_some() && seen_active) || (fc.is_none() && seen_inactive) {
            continue;
        }
        let out = dir.path().join(format!("s{d}.json"));
        let date_s = date.to_string();
        let code = run(argv(&[
            "schedule",
            "--models",
            p(&models_path),
            "--market",
            p(&market),
            "--date",
            &date_s,
            "--out",
            p(&out),
        ]));
        assert_eq!(code, 0);
        let s: ScheduleOutput = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        match fc {
            None => {
                assert!(s.proposal.is_none());
                assert_eq!(s.reason.as_deref(), Some("no predicted activation"));
                seen_inactive = true;
            }
            Some(fc) => {
                let p = s.proposal.expect("active day has a proposal");
                let lo = fc.t_es_dist.iter().map(|(h, _)| h).min().unwrap();
                assert!(p.chosen_t >= lo && p.chosen_t as usize + k <= 48);
                assert!((0.0..=1.0).contains(&p.acceptance_prob));
                seen_active = true;
            }
        }
    }
    assert!(seen_active && seen_inactive);
}

#[test]
fn schedule_rejects_foreign_device() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_load_csv(dir.path(), 60);
    let market = write_market_csv(dir.path(), 90);
    let models = dir.path().join("models.json");
    assert_eq!(run(argv(&["train", "--input", p(&csv), "--out", p(&models)])), 0);
    let code = run(argv(&[
        "schedule",
        "--models",
        p(&models),
        "--market",
        p(&market),
        "--date",
        "2017-03-05",
        "--device",
        "dryer",
    ]));
    assert_eq!(code, 2);
}

fn small_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("small.json");
    fs::write(
        &cfg,
        r#"{"dataset":{"kind":"builtin","categories":["regular","weekend_launderer"]},
            "market":{"kind":"synthetic"},"n_days":120,"shuffles":2,
            "mu_grid":[0.04,0.08],"flex_grid":[0,4]}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn simulate_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    assert_eq!(run(argv(&["simulate", "--config", p(&cfg), "--seed", "9", "--out", p(&out)])), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("simulate.json")).unwrap()).unwrap();
    assert_eq!(json["seeds"], serde_json::json!([9, 10]));
    let n = json["n_proposals"].as_u64().unwrap();
    assert!(n > 0);
    let mut r = csv::Reader::from_path(out.join("simulate.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, REPORT_CSV_HEADER);
    assert_eq!(r.records().count() as u64, n);
}

#[test]
fn compare_writes_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(run(argv(&["compare", "--config", p(&cfg), "--out", p(dir.path())])), 0);
    for f in ["compare.json", "learning_rate.csv", "offer_kind.csv", "flexibility.csv", "prediction.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let mut r = csv::Reader::from_path(dir.path().join("learning_rate.csv")).unwrap();
    let labels: Vec<String> = r.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(labels.len(), 3);
    assert_eq!(labels[0], "uniform");
    let mut r = csv::Reader::from_path(dir.path().join("flexibility.csv")).unwrap();
    assert_eq!(r.records().count(), 4);
}
