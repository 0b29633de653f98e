//! Per-epoch measurements and their CSV / JSON serialization.
//!
//! Variances are population variances (divide by the number of agents, or by
//! the number of cache entries for ages).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::{mean_var, CacheStats};
use crate::error::{Error, Result};
use crate::protocol::ExperimentConfig;

pub const CSV_HEADER: &str =
    "epoch,mean_acc,var_acc,cache_count_mean,cache_count_var,cache_age_mean,cache_age_var,lr,contacts";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Number of completed epochs (1 for the first row).
    pub epoch: usize,
    pub mean_acc: f64,
    pub var_acc: f64,
    pub cache_count_mean: f64,
    pub cache_count_var: f64,
    pub cache_age_mean: f64,
    pub cache_age_var: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Meetings that triggered an exchange during this epoch.
    pub contacts: usize,
}

impl EpochMetrics {
    pub fn from_parts(epoch: usize, accuracies: &[f64], cache: CacheStats, lr: f64, contacts: usize) -> EpochMetrics {
        let (mean_acc, var_acc) = mean_var(accuracies);
        EpochMetrics {
            epoch,
            mean_acc,
            var_acc,
            cache_count_mean: cache.count_mean,
            cache_count_var: cache.count_var,
            cache_age_mean: cache.age_mean,
            cache_age_var: cache.age_var,
            lr,
            contacts,
        }
    }

    fn floats(&self) -> [f64; 7] {
        [
            self.mean_acc,
            self.var_acc,
            self.cache_count_mean,
            self.cache_count_var,
            self.cache_age_mean,
            self.cache_age_var,
            self.lr,
        ]
    }
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed,
/// scientific notation outside `[1e-4, 1e6)`.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Rounds to six significant digits, the precision kept by the CSV.
pub fn round_g6(x: f64) -> f64 {
    format!("{x:.5e}").parse().unwrap_or(x)
}

pub fn to_csv(series: &[EpochMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for m in series {
        write!(out, "{}", m.epoch).expect("write to string");
        for v in m.floats() {
            write!(out, ",{}", format_g6(v)).expect("write to string");
        }
        writeln!(out, ",{}", m.contacts).expect("write to string");
    }
    out
}

pub fn write_csv(series: &[EpochMetrics], path: &Path) -> Result<()> {
    fs::write(path, to_csv(series)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<EpochMetrics>> {
    let bad = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(bad(1, format!("unexpected header {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 9 {
            return Err(bad(lineno, format!("expected 9 fields, found {}", cells.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(lineno, format!("`{s}`: {e}")));
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(lineno, format!("`{s}`: {e}")));
        out.push(EpochMetrics {
            epoch: int(cells[0])?,
            mean_acc: float(cells[1])?,
            var_acc: float(cells[2])?,
            cache_count_mean: float(cells[3])?,
            cache_count_var: float(cells[4])?,
            cache_age_mean: float(cells[5])?,
            cache_age_var: float(cells[6])?,
            lr: float(cells[7])?,
            contacts: int(cells[8])?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

/// A run as written to JSON: the fully resolved configuration and the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub series: Vec<EpochMetrics>,
}

pub fn write_json(cfg: &ExperimentConfig, series: &[EpochMetrics], path: &Path) -> Result<()> {
    let record = RunRecord {
        config: cfg.clone(),
        series: series.to_vec(),
    };
    let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (0.123456789, "0.123457"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (100.0, "100"),
            (0.1, "0.1"),
            (999999.5, "1e+06"),
        ];
        for (x, want) in cases {
            assert_eq!(format_g6(x), want, "{x}");
        }
    }

    #[test]
    fn from_parts_uses_population_variance() {
        let m = EpochMetrics::from_parts(3, &[0.5, 0.7], CacheStats::default(), 0.1, 4);
        assert!((m.mean_acc - 0.6).abs() < 1e-15);
        assert!((m.var_acc - 0.01).abs() < 1e-15);
        let single = EpochMetrics::from_parts(1, &[0.3], CacheStats::default(), 0.1, 0);
        assert_eq!(single.var_acc, 0.0);
    }

    #[test]
    fn empty_series_is_header_only() {
        assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let p = Path::new("m.csv");
        assert!(parse_csv("epoch\n", p).is_err());
        let text = format!("{CSV_HEADER}\n1,2,3\n");
        assert!(matches!(parse_csv(&text, p), Err(Error::Format { .. })));
    }
}
