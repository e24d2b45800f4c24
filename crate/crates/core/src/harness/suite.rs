//! Desk-scale benchmark mysteries with declared sampling ranges.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DataTable;
use crate::expr::{BasisSet, Expression};

/// Rows drawn per case unless a caller asks otherwise.
pub const DEFAULT_ROWS: usize = 10_000;

#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkCase {
    pub id: &'static str,
    pub description: &'static str,
    /// Generator in infix over `variables`.
    pub formula: &'static str,
    /// Name and uniform sampling range of each input.
    pub variables: Vec<(&'static str, f64, f64)>,
    pub rows: usize,
    /// Modularity letters expected to apply, e.g. "AG".
    pub tags: &'static str,
    /// Targets shifted after sampling, see [`BenchmarkCase::table`].
    pub outliers: Option<Outliers>,
}

/// A seeded `fraction` of the rows get `shift` added to the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Outliers {
    pub fraction: f64,
    pub shift: f64,
}

impl BenchmarkCase {
    fn new(
        id: &'static str,
        description: &'static str,
        formula: &'static str,
        variables: &[(&'static str, f64, f64)],
        tags: &'static str,
    ) -> BenchmarkCase {
        BenchmarkCase {
            id,
            description,
            formula,
            variables: variables.to_vec(),
            rows: DEFAULT_ROWS,
            tags,
            outliers: None,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.0.to_string()).collect()
    }

    pub fn generator(&self) -> Expression {
        let basis = BasisSet::with_variables(self.names()).expect("case variable names are valid");
        Expression::parse_infix(self.formula, &basis).expect("case formulas parse")
    }

    /// Uniform samples over the declared ranges. Draws where the generator
    /// is undefined are redrawn.
    pub fn sample(&self, rows: usize, seed: u64) -> DataTable {
        let e = self.generator();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stack = Vec::new();
        let mut out = Vec::with_capacity(rows);
        let mut attempts = 0;
        while out.len() < rows && attempts < 100 * rows.max(1) {
            attempts += 1;
            let x: Vec<f64> = self
                .variables
                .iter()
                .map(|&(_, lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect();
            let y = e.eval_with(&x, &mut stack);
            if y.is_finite() {
                out.push((x, y));
            }
        }
        DataTable::new(self.names(), out).expect("valid names").0
    }

    /// [`BenchmarkCase::sample`] with the declared outliers applied.
    pub fn table(&self, rows: usize, seed: u64) -> DataTable {
        let clean = self.sample(rows, seed);
        let Some(o) = self.outliers else { return clean };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0017_1e55);
        let mut idx: Vec<usize> = (0..clean.len()).collect();
        idx.shuffle(&mut rng);
        let bad = ((o.fraction * clean.len() as f64).round() as usize).min(clean.len());
        let mut y = clean.y().to_vec();
        for &i in &idx[..bad] {
            y[i] += o.shift;
        }
        clean.with_y(y).expect("same row count")
    }
}

/// Kinetic energy, relativistic, with its Newtonian limit on the frontier.
pub fn kinetic_energy() -> BenchmarkCase {
    BenchmarkCase::new(
        "kinetic",
        "relativistic kinetic energy",
        "m*c*c*(1/sqrt(1-v*v/(c*c))-1)",
        &[("m", 1.0, 5.0), ("v", 0.5, 2.0), ("c", 3.0, 10.0)],
        "MGS",
    )
}

/// `f(x, y, z) = g[h(x, y), z]` with `h = x·y`.
pub fn symmetry_demo() -> BenchmarkCase {
    BenchmarkCase::new(
        "symmetry-demo",
        "nested pair inside an outer function",
        "exp(x*y/3)*z+z*z*sin(x*y)",
        &[("x", 0.5, 2.0), ("y", 0.5, 2.0), ("z", 0.5, 2.0)],
        "G",
    )
}

/// `a·x³/(e^{x/b} − 1)` at `a = b = 1`, with a tenth of the targets
/// shifted up by 5.
pub fn planck_outliers() -> BenchmarkCase {
    BenchmarkCase {
        rows: 100,
        outliers: Some(Outliers { fraction: 0.1, shift: 5.0 }),
        ..BenchmarkCase::new("outlier", "spectrum with injected outliers", "x*x*x/(exp(x)-1)", &[("x", 0.0, 10.0)], "")
    }
}

/// Cases that need at least one decomposition step.
pub fn modular_cases() -> Vec<BenchmarkCase> {
    let unit = |n: &'static str| (n, -1.0, 1.0);
    vec![
        BenchmarkCase::new(
            "affine-ratio",
            "affine ratio",
            "[0.23]+[14.2]*(alpha+beta)/(3*gamma)",
            &[("alpha", 1.0, 5.0), ("beta", 1.0, 5.0), ("gamma", 1.0, 5.0)],
            "TS",
        ),
        BenchmarkCase::new(
            "parallel-resistors",
            "parallel resistors",
            "i0*cos(w*t)/(1/r1+1/r2+1/r3+1/r4)",
            &[
                ("r1", 1.0, 5.0),
                ("r2", 1.0, 5.0),
                ("r3", 1.0, 5.0),
                ("r4", 1.0, 5.0),
                ("i0", 1.0, 5.0),
                ("w", 1.0, 5.0),
                ("t", 1.0, 5.0),
            ],
            "PGSM",
        ),
        BenchmarkCase::new(
            "velocity-addition",
            "triple velocity addition, c = 1",
            "(u+v+w+u*v*w)/(1+u*v+u*w+v*w)",
            &[("u", 0.0, 0.9), ("v", 0.0, 0.9), ("w", 0.0, 0.9)],
            "AG",
        ),
        BenchmarkCase::new(
            "l4-norm",
            "L4 norm",
            "sqrt(sqrt(x*x*x*x+y*y*y*y))",
            &[unit("x"), unit("y")],
            "AC",
        ),
        BenchmarkCase::new(
            "sine-addition",
            "sine addition",
            "y*sqrt(1-x*x)+x*sqrt(1-y*y)",
            &[unit("x"), unit("y")],
            "A",
        ),
    ]
}

/// Short physics formulas, used by the noise scan.
pub fn noise_cases() -> Vec<BenchmarkCase> {
    vec![
        BenchmarkCase::new("charge-force", "force on a charge", "q2*ef", &[("q2", 1.0, 5.0), ("ef", 1.0, 5.0)], "M"),
        BenchmarkCase::new("capacitor-voltage", "capacitor voltage", "q/cap", &[("q", 1.0, 5.0), ("cap", 1.0, 5.0)], "M"),
        BenchmarkCase::new(
            "potential-energy",
            "potential energy",
            "m*g*z",
            &[("m", 1.0, 5.0), ("g", 1.0, 5.0), ("z", 1.0, 5.0)],
            "M",
        ),
        BenchmarkCase::new(
            "normal-density",
            "standard normal density",
            "exp(-theta*theta/2)/sqrt(2*pi)",
            &[("theta", 1.0, 3.0)],
            "",
        ),
        BenchmarkCase::new("wave-number", "wave number", "omega/c", &[("omega", 1.0, 10.0), ("c", 1.0, 10.0)], "M"),
    ]
}

pub const SUITES: [&str; 4] = ["demos", "modular", "noise", "all"];

pub fn suite(name: &str) -> Option<Vec<BenchmarkCase>> {
    let demos = || vec![kinetic_energy(), symmetry_demo(), planck_outliers()];
    Some(match name {
        "demos" => demos(),
        "modular" => modular_cases(),
        "noise" => noise_cases(),
        "all" => demos().into_iter().chain(modular_cases()).chain(noise_cases()).collect(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_reproduce_stored_targets() {
        for case in suite("all").unwrap() {
            let t = case.sample(200, 3);
            assert_eq!(t.len(), 200, "{}", case.id);
            let e = case.generator();
            for (x, y) in t.rows() {
                let v = e.evaluate(x).unwrap().unwrap();
                assert!((v - y).abs() <= 1e-12 * y.abs().max(1.0), "{}", case.id);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let c = kinetic_energy();
        assert_eq!(c.sample(50, 1), c.sample(50, 1));
        assert_ne!(c.sample(50, 1), c.sample(50, 2));
    }

    #[test]
    fn outliers_are_shifted() {
        let case = planck_outliers();
        let clean = case.sample(100, 4);
        let dirty = case.table(100, 4);
        let moved = clean.y().iter().zip(dirty.y()).filter(|(a, b)| (*b - *a - 5.0).abs() < 1e-12).count();
        assert_eq!(moved, 10);
        assert_eq!(clean.x_flat(), dirty.x_flat());
        assert!(clean.rows().all(|(x, _)| x[0] > 0.0 && x[0] < 10.0));
    }

    #[test]
    fn suite_names() {
        for s in SUITES {
            assert!(suite(s).is_some_and(|c| !c.is_empty()));
        }
        assert!(suite("nope").is_none());
    }
}
