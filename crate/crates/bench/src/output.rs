//! CSV and JSON files written by the `benchmark` command.
//!
//! `results.csv`, `stability.csv` and `rates.csv` depend only on the config
//! and seeds; wall-clock data goes to `timings.csv` and `summary.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::experiment::{ExperimentResults, TimingRow};
use crate::rates::{rate_check, Quantity};
use crate::stability;
use crate::Result;

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub method: u8,
    pub quantity: Quantity,
    pub slope: f64,
    pub expected: f64,
    pub window_low: f64,
    pub window_high: f64,
    pub pass: bool,
}

/// Rate fits for every method with enough data.
pub fn rate_rows(results: &ExperimentResults) -> Vec<RateRow> {
    let mut methods: Vec<u8> = results.rows.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();
    let mut out = Vec::new();
    for m in methods {
        for q in [Quantity::FrobeniusSq, Quantity::PiSq] {
            if let Ok(rc) = rate_check(&results.rows, m, q) {
                out.push(RateRow {
                    method: m,
                    quantity: q,
                    slope: rc.slope,
                    expected: rc.expected,
                    window_low: rc.window.0,
                    window_high: rc.window.1,
                    pass: rc.pass,
                });
            }
        }
    }
    out
}

/// Writes every output file under `dir`, returning their paths.
pub fn write_results(results: &ExperimentResults, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str| -> PathBuf {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_csv(&put("results.csv"), &results.rows)?;
    let timings: Vec<TimingRow> = results.rows.iter().map(TimingRow::from).collect();
    write_csv(&put("timings.csv"), &timings)?;
    write_csv(&put("summary.csv"), &results.summary())?;
    write_csv(&put("rates.csv"), &rate_rows(results))?;
    if let Some(p) = &results.population {
        fs::write(put("population.json"), serde_json::to_string_pretty(p)?)?;
    }
    if let Some(rows) = &results.stability {
        write_csv(&put("stability.csv"), rows)?;
        write_csv(&put("stability_summary.csv"), &stability::summarise(rows))?;
    }
    Ok(written)
}
