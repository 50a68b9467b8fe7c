//! Log-log slope of median error against sample size.

use serde::Serialize;

use crate::experiment::ResultRow;
use crate::{median, BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `||A_hat - A||_F^2`, expected slope -1.
    FrobeniusSq,
    /// `||A_hat - A||_F`, expected slope -1/2.
    Frobenius,
    /// `||pi_hat - pi||_2^2`, expected slope -1.
    PiSq,
    /// `||pi_hat - pi||_2`, expected slope -1/2.
    Pi,
}

impl Quantity {
    pub fn expected_slope(self) -> f64 {
        match self {
            Quantity::FrobeniusSq | Quantity::PiSq => -1.0,
            Quantity::Frobenius | Quantity::Pi => -0.5,
        }
    }

    /// Acceptance window around the expected slope.
    pub fn window(self) -> (f64, f64) {
        match self {
            Quantity::FrobeniusSq | Quantity::PiSq => (-1.35, -0.65),
            Quantity::Frobenius | Quantity::Pi => (-0.675, -0.325),
        }
    }

    fn value(self, r: &ResultRow) -> f64 {
        match self {
            Quantity::FrobeniusSq => r.frobenius_sq_error,
            Quantity::Frobenius => r.frobenius_error,
            Quantity::PiSq => r.pi_sq_error,
            Quantity::Pi => r.pi_sq_error.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub method: u8,
    pub quantity: Quantity,
    /// `(T, median error)` per grid point.
    pub points: Vec<(u64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub expected: f64,
    pub window: (f64, f64),
    pub pass: bool,
}

pub const MIN_T_VALUES: usize = 3;
pub const MIN_SEEDS: usize = 10;

/// Least-squares line through `(ln T, ln median)`.
///
/// Needs at least 3 sample sizes with at least 10 successful seeds each.
pub fn rate_check(rows: &[ResultRow], method: u8, quantity: Quantity) -> Result<RateCheck> {
    let mut ts: Vec<u64> = rows
        .iter()
        .filter(|r| r.method == method)
        .map(|r| r.t)
        .collect();
    ts.sort_unstable();
    ts.dedup();
    let mut points = Vec::new();
    for &t in &ts {
        let mut vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.method == method && r.t == t && r.ok())
            .map(|r| quantity.value(r))
            .filter(|v| v.is_finite())
            .collect();
        if vals.len() < MIN_SEEDS {
            return Err(BenchError::InsufficientData(format!(
                "method {method}, T = {t}: {} usable seeds, need {MIN_SEEDS}",
                vals.len()
            )));
        }
        let m = median(&mut vals);
        if !(m > 0.0) {
            return Err(BenchError::InsufficientData(format!(
                "method {method}, T = {t}: median error {m} has no logarithm"
            )));
        }
        points.push((t, m));
    }
    if points.len() < MIN_T_VALUES {
        return Err(BenchError::InsufficientData(format!(
            "method {method}: {} sample sizes, need {MIN_T_VALUES}",
            points.len()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let window = quantity.window();
    Ok(RateCheck {
        method,
        quantity,
        points,
        slope,
        intercept: my - slope * mx,
        expected: quantity.expected_slope(),
        window,
        pass: slope >= window.0 && slope <= window.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::StageTimes;

    fn row(t: u64, seed: u64, err: f64) -> ResultRow {
        ResultRow {
            method: 2,
            t,
            seed,
            status: "ok".into(),
            frobenius_sq_error: err,
            frobenius_error: err.sqrt(),
            pi_sq_error: err,
            alignment: String::new(),
            bw_iterations_trace: String::new(),
            times: StageTimes::default(),
        }
    }

    fn grid(f: impl Fn(u64, u64) -> f64) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for t in [1_000, 10_000, 100_000, 1_000_000] {
            for s in 0..10 {
                rows.push(row(t, s, f(t, s)));
            }
        }
        rows
    }

    #[test]
    fn exact_power_law() {
        let rows = grid(|t, _| 3.7 / t as f64);
        let r = rate_check(&rows, 2, Quantity::FrobeniusSq).unwrap();
        assert!((r.slope + 1.0).abs() < 1e-12);
        assert!(r.pass);
        let r = rate_check(&rows, 2, Quantity::Frobenius).unwrap();
        assert!((r.slope + 0.5).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn constant_error_fails() {
        let rows = grid(|_, _| 0.02);
        let r = rate_check(&rows, 2, Quantity::FrobeniusSq).unwrap();
        assert!(r.slope.abs() < 1e-12);
        assert!(!r.pass);
    }

    #[test]
    fn insufficient_data() {
        let rows: Vec<_> = grid(|t, _| 1.0 / t as f64)
            .into_iter()
            .filter(|r| r.t <= 10_000)
            .collect();
        assert!(matches!(
            rate_check(&rows, 2, Quantity::FrobeniusSq),
            Err(BenchError::InsufficientData(_))
        ));
        let few: Vec<_> = grid(|t, _| 1.0 / t as f64)
            .into_iter()
            .filter(|r| r.seed < 5)
            .collect();
        assert!(rate_check(&few, 2, Quantity::FrobeniusSq).is_err());
    }
}
