//! Ingestion, noise protocol, bundled mysteries and report files.

mod io;
mod report;
pub mod suite;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

pub use io::{load_table, parse_table, LoadError, LoadedTable, TableFormat};
pub use report::{emit_report, frontier_csv, frontier_svg, result_json, write_trace, ReportFiles, RunInfo, SCHEMA_VERSION};
pub use suite::{suite, BenchmarkCase, SUITES};

use crate::data::DataTable;
use crate::solver::{fit, OracleChoice, SolveConfig};

#[derive(Debug, Error, PartialEq)]
#[error("noise exponent must be negative, got {0}")]
pub struct NoiseExponent(pub i32);

/// Gaussian noise of standard deviation `10^r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseSpec {
    r: i32,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(r: i32, seed: u64) -> Result<NoiseSpec, NoiseExponent> {
        if r < 0 {
            Ok(NoiseSpec { r, seed })
        } else {
            Err(NoiseExponent(r))
        }
    }

    pub fn r(&self) -> i32 {
        self.r
    }

    pub fn std(&self) -> f64 {
        10f64.powi(self.r)
    }
}

/// `y + N(0, 10^r)`; inputs are untouched.
pub fn add_noise(table: &DataTable, spec: NoiseSpec) -> DataTable {
    let normal = Normal::new(0.0, spec.std()).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let y: Vec<f64> = table.y().iter().map(|v| v + normal.sample(&mut rng)).collect();
    table.with_y(y).expect("same row count")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ToleranceOracle {
    Exact,
    Net,
}

#[derive(Clone, Debug)]
pub struct ToleranceConfig {
    pub solve: SolveConfig,
    pub oracle: ToleranceOracle,
    /// Most negative exponent tried.
    pub min_exp: i32,
    pub rows: usize,
    pub seed: u64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            solve: SolveConfig::default(),
            oracle: ToleranceOracle::Net,
            min_exp: -10,
            rows: suite::DEFAULT_ROWS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseAttempt {
    pub r: i32,
    pub success: bool,
    pub top: Option<String>,
    pub max_relative_error: Option<f64>,
    pub partial: bool,
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ToleranceResult {
    pub case: String,
    /// Largest exponent that succeeded; `None` when none did.
    pub r: Option<i32>,
    pub attempts: Vec<NoiseAttempt>,
}

/// Scans `r = −1, −2, …, min_exp` and stops at the first success, which is
/// the largest tolerated exponent.
pub fn noise_tolerance(case: &BenchmarkCase, cfg: &ToleranceConfig) -> ToleranceResult {
    let clean = case.sample(cfg.rows, cfg.seed);
    let truth = case.generator();
    let mut attempts = Vec::new();
    let mut found = None;
    for r in (cfg.min_exp..=-1).rev() {
        let spec = NoiseSpec::new(r, cfg.seed ^ ((r.unsigned_abs() as u64) << 32)).expect("negative");
        let noisy = add_noise(&clean, spec);
        let oracle = match cfg.oracle {
            ToleranceOracle::Exact => OracleChoice::Exact(truth.clone()),
            ToleranceOracle::Net => OracleChoice::Net,
        };
        let attempt = match fit(&noisy, &oracle, Some(&truth), &cfg.solve) {
            Ok(out) => NoiseAttempt {
                r,
                success: out.ranked.success == Some(true),
                top: out.ranked.top_model().map(|m| m.model.expr.to_infix(noisy.names())),
                max_relative_error: out.ranked.max_relative_error,
                partial: out.partial,
                elapsed_secs: out.elapsed.as_secs_f64(),
            },
            Err(e) => {
                log::warn!("{}: r = {r}: {e}", case.id);
                NoiseAttempt {
                    r,
                    success: false,
                    top: None,
                    max_relative_error: None,
                    partial: false,
                    elapsed_secs: 0.0,
                }
            }
        };
        log::info!("{}: r = {r}: success {}", case.id, attempt.success);
        let ok = attempt.success;
        attempts.push(attempt);
        if ok {
            found = Some(r);
            break;
        }
    }
    ToleranceResult {
        case: case.id.to_string(),
        r: found,
        attempts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::std_dev;

    fn ramp(n: usize) -> DataTable {
        DataTable::new(vec!["x".into()], (0..n).map(|i| (vec![i as f64], i as f64))).unwrap().0
    }

    #[test]
    fn exponent_must_be_negative() {
        assert_eq!(NoiseSpec::new(0, 1), Err(NoiseExponent(0)));
        assert!(NoiseSpec::new(-1, 1).is_ok());
    }

    #[test]
    fn tiny_noise_is_tiny() {
        let t = ramp(1000);
        let n = add_noise(&t, NoiseSpec::new(-30, 5).unwrap());
        let max = t.y().iter().zip(n.y()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-25);
        assert_eq!(n.x_flat(), t.x_flat());
    }

    #[test]
    fn noise_std_matches() {
        let t = ramp(10_000);
        let n = add_noise(&t, NoiseSpec::new(-2, 5).unwrap());
        let d: Vec<f64> = t.y().iter().zip(n.y()).map(|(a, b)| b - a).collect();
        assert!((std_dev(&d) / 1e-2 - 1.0).abs() < 0.05);
    }

    #[test]
    fn same_seed_same_noise() {
        let t = ramp(100);
        let s = NoiseSpec::new(-1, 9).unwrap();
        assert_eq!(add_noise(&t, s), add_noise(&t, s));
    }
}
