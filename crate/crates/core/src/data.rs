//! Numeric tables of (x, y) rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{valid_variable_name, Expression};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("table has no rows")]
    Empty,
    #[error("row {row} has {got} inputs, expected {expected}")]
    Width {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("invalid column name '{0}'")]
    Name(String),
    #[error("expression uses variable {0}, outside the substituted subset")]
    OutsideSubset(usize),
}

/// Rows stored row-major: `x[i*n .. (i+1)*n]` are the inputs of row `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    names: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl DataTable {
    /// Builds a table, dropping rows with any non-finite entry. Returns the
    /// table and how many rows were dropped.
    pub fn new(
        names: Vec<String>,
        rows: impl IntoIterator<Item = (Vec<f64>, f64)>,
    ) -> Result<(DataTable, usize), DataError> {
        if let Some(bad) = names.iter().find(|n| !valid_variable_name(n)) {
            return Err(DataError::Name(bad.clone()));
        }
        let n = names.len();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut dropped = 0;
        for (row, (xs, yv)) in rows.into_iter().enumerate() {
            if xs.len() != n {
                return Err(DataError::Width {
                    row,
                    expected: n,
                    got: xs.len(),
                });
            }
            if !yv.is_finite() || xs.iter().any(|v| !v.is_finite()) {
                dropped += 1;
                continue;
            }
            x.extend_from_slice(&xs);
            y.push(yv);
        }
        if y.is_empty() {
            return Err(DataError::Empty);
        }
        Ok((DataTable { names, x, y }, dropped))
    }

    /// Assembles from already-validated flat storage.
    pub fn from_flat(names: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<DataTable, DataError> {
        let pairs: Vec<(Vec<f64>, f64)> = if names.is_empty() {
            y.iter().map(|&v| (Vec::new(), v)).collect()
        } else {
            x.chunks(names.len()).map(<[f64]>::to_vec).zip(y).collect()
        };
        DataTable::new(names, pairs).map(|(t, _)| t)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_vars();
        &self.x[i * n..(i + 1) * n]
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[j]).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.row(i), self.y[i]))
    }

    pub fn with_y(&self, y: Vec<f64>) -> Result<DataTable, DataError> {
        DataTable::from_flat(self.names.clone(), self.x.clone(), y)
    }

    pub fn map_y(&self, f: impl Fn(f64) -> f64) -> Result<DataTable, DataError> {
        self.with_y(self.y.iter().map(|&v| f(v)).collect())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<DataTable, DataError> {
        let n = self.n_vars();
        let mut x = Vec::with_capacity(idx.len() * n);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        if y.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(DataTable {
            names: self.names.clone(),
            x,
            y,
        })
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> DataTable {
        let mut x = Vec::with_capacity(self.len() * cols.len());
        for i in 0..self.len() {
            let r = self.row(i);
            x.extend(cols.iter().map(|&j| r[j]));
        }
        DataTable {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            x,
            y: self.y.clone(),
        }
    }

    /// Seeded train/test split. Both parts are nonempty when the table has
    /// at least two rows.
    pub fn split(&self, test_fraction: f64, seed: u64) -> (DataTable, Option<DataTable>) {
        let n = self.len();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(n.saturating_sub(1));
        if n_test == 0 {
            return (self.clone(), None);
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (test, train) = idx.split_at(n_test);
        let mut train = train.to_vec();
        let mut test = test.to_vec();
        train.sort_unstable();
        test.sort_unstable();
        (
            self.select_rows(&train).expect("nonempty"),
            Some(self.select_rows(&test).expect("nonempty")),
        )
    }

    /// Per-column (min, max).
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.n_vars())
            .map(|j| {
                self.rows().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (r, _)| {
                    (lo.min(r[j]), hi.max(r[j]))
                })
            })
            .collect()
    }

    /// Per-column sample standard deviation.
    pub fn column_std(&self) -> Vec<f64> {
        (0..self.n_vars()).map(|j| std_dev(&self.column(j))).collect()
    }

    pub fn y_mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.len() as f64
    }

    /// Replaces the columns in `subset` by the single column `h(x)`, placed
    /// first, followed by the remaining columns in order. `h` is written
    /// over this table's variables and may use only those in `subset`.
    /// Rows where `h` is invalid are dropped and counted.
    pub fn substitute_variable(
        &self,
        h: &Expression,
        subset: &[usize],
        name: &str,
    ) -> Result<(DataTable, usize), DataError> {
        if let Some(&v) = h.variables_used().iter().find(|v| !subset.contains(v)) {
            return Err(DataError::OutsideSubset(v));
        }
        let rest: Vec<usize> = (0..self.n_vars()).filter(|j| !subset.contains(j)).collect();
        let mut names = vec![name.to_string()];
        names.extend(rest.iter().map(|&j| self.names[j].clone()));
        let mut stack = Vec::new();
        let rows = self.rows().map(|(r, y)| {
            let mut xs = vec![h.eval_with(r, &mut stack)];
            xs.extend(rest.iter().map(|&j| r[j]));
            (xs, y)
        });
        DataTable::new(names, rows)
    }
}

pub fn std_dev(v: &[f64]) -> f64 {
    crate::mdl::mean_std(v).1
}

/// Index of the row closest (in per-column standardized distance) to the
/// column-wise median.
pub fn median_row(t: &DataTable) -> usize {
    let n = t.n_vars();
    let med: Vec<f64> = (0..n).map(|j| median(&t.column(j))).collect();
    let sd: Vec<f64> = t.column_std().iter().map(|s| s.max(1e-300)).collect();
    (0..t.len())
        .min_by(|&a, &b| {
            let da: f64 = (0..n).map(|j| ((t.row(a)[j] - med[j]) / sd[j]).powi(2)).sum();
            let db: f64 = (0..n).map(|j| ((t.row(b)[j] - med[j]) / sd[j]).powi(2)).sum();
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BasisSet;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn drops_non_finite_rows() {
        let rows = vec![(vec![1.0], 2.0), (vec![f64::NAN], 1.0), (vec![3.0], f64::INFINITY)];
        let (t, dropped) = DataTable::new(names(&["x"]), rows).unwrap();
        assert_eq!((t.len(), dropped), (1, 2));
        let err = DataTable::new(names(&["x"]), vec![(vec![1.0, 2.0], 0.0)]).unwrap_err();
        assert!(matches!(err, DataError::Width { row: 0, .. }));
    }

    #[test]
    fn substitution_follows_generator() {
        let b = BasisSet::with_variables(["x", "y"]).unwrap();
        let rows: Vec<_> = (0..50)
            .map(|i| {
                let (x, y) = (i as f64 * 0.1, 1.0 - i as f64 * 0.03);
                (vec![x, y], (x + y).sin())
            })
            .collect();
        let (t, _) = DataTable::new(names(&["x", "y"]), rows).unwrap();
        let h = Expression::parse_rpn("x y +", &b).unwrap();
        let (s, dropped) = t.substitute_variable(&h, &[0, 1], "u").unwrap();
        assert_eq!((s.n_vars(), s.len(), dropped), (1, 50, 0));
        for (r, y) in s.rows() {
            assert!((r[0].sin() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn substitution_counts_invalid_rows() {
        let b = BasisSet::with_variables(["x"]).unwrap();
        let rows: Vec<_> = (0..100).map(|i| (vec![i as f64 - 2.0], 1.0)).collect();
        let (t, _) = DataTable::new(names(&["x"]), rows).unwrap();
        let h = Expression::parse_rpn("x L", &b).unwrap();
        let (s, dropped) = t.substitute_variable(&h, &[0], "u").unwrap();
        // x = -2, -1, 0 are outside the log domain.
        assert_eq!((s.len(), dropped), (97, 3));
        let id = Expression::parse_rpn("x", &b).unwrap();
        let (same, _) = t.substitute_variable(&id, &[0], "x").unwrap();
        assert_eq!(same, t);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let rows: Vec<_> = (0..100).map(|i| (vec![i as f64], i as f64)).collect();
        let (t, _) = DataTable::new(names(&["x"]), rows).unwrap();
        let (a, b) = t.split(0.1, 7);
        let b = b.unwrap();
        assert_eq!((a.len(), b.len()), (90, 10));
        assert!(b.y().iter().all(|v| !a.y().contains(v)));
        assert_eq!(t.split(0.1, 7).1.unwrap(), b);
    }
}
