mod common;

use std::path::Path;

use cached_dfl::metrics::{format_g6, parse_csv, read_csv, read_json, round_g6, to_csv, write_csv, write_json, CSV_HEADER};
use cached_dfl::{run, EpochMetrics, Error, Policy};
use common::small_config;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        -1e9f64..1e9,
        (-1.0f64..1.0).prop_map(|m| m * 1e-7),
        (0.0f64..1.0),
    ]
}

prop_compose! {
    fn metrics()(epoch in 0usize..100_000, f in prop::collection::vec(finite(), 7), contacts in 0usize..1_000_000) -> EpochMetrics {
        EpochMetrics {
            epoch,
            mean_acc: f[0],
            var_acc: f[1],
            cache_count_mean: f[2],
            cache_count_var: f[3],
            cache_age_mean: f[4],
            cache_age_var: f[5],
            lr: f[6],
            contacts,
        }
    }
}

/// Relative distance between `x` and its six-digit rendering.
fn six_digit_close(x: f64, y: f64) -> bool {
    (x - y).abs() <= 5e-6 * x.abs()
}

proptest! {
    #[test]
    fn csv_round_trip_keeps_six_digits(series in prop::collection::vec(metrics(), 0..20)) {
        let text = to_csv(&series);
        let back = parse_csv(&text, Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back.len(), series.len());
        for (a, b) in series.iter().zip(&back) {
            prop_assert_eq!(a.epoch, b.epoch);
            prop_assert_eq!(a.contacts, b.contacts);
            for (x, y) in [
                (a.mean_acc, b.mean_acc),
                (a.var_acc, b.var_acc),
                (a.cache_count_mean, b.cache_count_mean),
                (a.cache_count_var, b.cache_count_var),
                (a.cache_age_mean, b.cache_age_mean),
                (a.cache_age_var, b.cache_age_var),
                (a.lr, b.lr),
            ] {
                prop_assert!(six_digit_close(x, y), "{} -> {}", x, y);
                prop_assert_eq!(round_g6(x), y);
            }
        }
        // a second pass is exact
        prop_assert_eq!(to_csv(&back), text);
    }

    #[test]
    fn g6_never_exceeds_six_significant_digits(x in finite()) {
        let s = format_g6(x);
        let mantissa = s.split('e').next().unwrap();
        let digits = mantissa.trim_start_matches('-').replace('.', "");
        prop_assert!(digits.trim_start_matches('0').len() <= 6, "{}", s);
    }
}

#[test]
fn csv_has_the_documented_header() {
    let text = to_csv(&[]);
    assert_eq!(text, format!("{CSV_HEADER}\n"));
}

#[test]
fn json_echoes_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(Policy::Lru);
    cfg.seed = 424242;
    cfg.epochs = 3;
    let r = run(&cfg).unwrap();
    let path = dir.path().join("run.json");
    write_json(&cfg, &r.series, &path).unwrap();
    let record = read_json(&path).unwrap();
    assert_eq!(record.config, cfg);
    assert_eq!(record.config.seed, 424242);
    assert_eq!(record.series, r.series);
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(raw["config"]["seed"], 424242);
    assert_eq!(raw["config"]["policy"], "lru");
}

#[test]
fn csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(&small_config(Policy::None)).unwrap();
    let path = dir.path().join("m.csv");
    write_csv(&r.series, &path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(to_csv(&back), to_csv(&r.series));
}

#[test]
fn io_errors_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/m.csv");
    let err = write_csv(&[], &missing).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("no/such/dir/m.csv"), "{err}");
    let err = read_json(&dir.path().join("absent.json")).unwrap_err();
    assert!(err.to_string().contains("absent.json"), "{err}");
    std::fs::write(dir.path().join("bad.csv"), "epoch,x\n").unwrap();
    let err = read_csv(&dir.path().join("bad.csv")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }));
    assert!(err.to_string().contains("bad.csv"), "{err}");
}
