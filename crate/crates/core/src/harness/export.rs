//! results.json / results.csv / weights.csv writers and readers.

use std::fs;
use std::path::Path;

use super::experiment::{AggregateResult, ExperimentOutput, WeightRecord};
use super::fmt_f64;
use crate::error::{Error, Result};

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const WEIGHTS_CSV: &str = "weights.csv";

pub const RESULTS_HEADER: [&str; 10] = [
    "variant",
    "setting",
    "coverage_mean",
    "coverage_std",
    "width_mean",
    "width_std",
    "accuracy_mean",
    "accuracy_std",
    "dice_mean",
    "dice_std",
];

pub const WEIGHTS_HEADER: [&str; 5] = [
    "variant",
    "setting",
    "sample_id",
    "covariate_value",
    "weight",
];

/// Writes results.json (the full output) and results.csv (one row per
/// variant and setting) into `dir`, creating it if needed.
pub fn export_results(output: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(RESULTS_JSON),
        serde_json::to_string_pretty(output)?,
    )?;
    write_results_csv(&output.aggregate, &dir.join(RESULTS_CSV))
}

pub fn read_results_json(path: &Path) -> Result<ExperimentOutput> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Width columns use the finite-trial statistics; they are `inf` only when
/// every trial had an unbounded interval. Accuracy is empty for Standard CP.
pub fn write_results_csv(agg: &AggregateResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for row in &agg.rows {
        let (width_mean, width_std) = match &row.width {
            Some(s) => (fmt_f64(s.mean), fmt_f64(s.std)),
            None => ("inf".to_string(), "nan".to_string()),
        };
        let (acc_mean, acc_std) = match &row.accuracy {
            Some(s) => (fmt_f64(s.mean), fmt_f64(s.std)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            row.variant.name().to_string(),
            row.setting.name().to_string(),
            fmt_f64(row.coverage.mean),
            fmt_f64(row.coverage.std),
            width_mean,
            width_std,
            acc_mean,
            acc_std,
            fmt_f64(row.dice.mean),
            fmt_f64(row.dice.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_weight_profile(weights: &[WeightRecord], path: &Path) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Config(
            "no weighted CP variant in the weight profile".into(),
        ));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(WEIGHTS_HEADER)?;
    for r in weights {
        w.write_record([
            r.variant.name().to_string(),
            r.setting.name().to_string(),
            r.sample_id.to_string(),
            fmt_f64(r.covariate_value),
            fmt_f64(r.weight),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_weight_profile(path: &Path) -> Result<Vec<WeightRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    if rdr.headers()?.iter().ne(WEIGHTS_HEADER) {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("expected header {}", WEIGHTS_HEADER.join(",")),
        });
    }
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
