//! Smooth stand-ins for the unknown function: trained networks or exact
//! expressions, exposing values, first derivatives and mixed second
//! derivatives in the original coordinates.

mod additive;
pub mod derived;
mod mlp;
mod net;

use std::sync::Arc;

pub use additive::{train_modular_additive, ModularAdditive, ScalarOracle};
pub use mlp::{train, Activation, NetDump, NetSpec, TrainedNet};

use crate::data::{std_dev, DataTable};
use crate::expr::{Expression, GradWrt};
use crate::par::Exec;

#[derive(Debug, thiserror::Error)]
pub enum SurrogateError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}, learning rate {lr}")]
    Diverged { epoch: usize, loss: f64, lr: f64 },
    #[error("modular net did not converge: validation rmse {rmse:.3e} (relative {relative:.3e})")]
    NotConverged { rmse: f64, relative: f64 },
    #[error("expected {expected} input variables, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("bad network spec: {0}")]
    Spec(String),
    #[error("weight file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OracleKind {
    TrainedNet,
    ExactExpr,
    /// Built from another oracle by a change of variables.
    Derived,
}

/// A differentiable scalar function of `n_vars` inputs. Invalid points are
/// reported as NaN values or a `false` gradient.
pub trait FunctionOracle: Send + Sync {
    fn kind(&self) -> OracleKind;
    fn n_vars(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool;

    /// Typical spread of each input; sets finite-difference steps.
    fn scales(&self) -> &[f64];

    /// Row-major batch of values.
    fn values(&self, rows: &[f64]) -> Vec<f64> {
        rows.chunks(self.n_vars().max(1)).map(|x| self.value(x)).collect()
    }

    /// Row-major batch of gradients; returns per-row validity.
    fn gradients(&self, rows: &[f64], out: &mut [f64]) -> Vec<bool> {
        let n = self.n_vars();
        rows.chunks(n)
            .zip(out.chunks_mut(n))
            .map(|(x, g)| self.gradient(x, g))
            .collect()
    }

    /// ∂²f/∂xᵢ∂xⱼ by central differences of the gradient along j.
    fn second_partial(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let n = self.n_vars();
        let h = 1e-3 * self.scales()[j];
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        if !self.gradient(&xp, &mut gp) || !self.gradient(&xm, &mut gm) {
            return f64::NAN;
        }
        (gp[i] - gm[i]) / (2.0 * h)
    }
}

pub type SharedOracle = Arc<dyn FunctionOracle>;

/// Per-column std with zero spreads replaced by one.
pub(crate) fn positive_scales(table: &DataTable) -> Vec<f64> {
    table
        .column_std()
        .into_iter()
        .map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 })
        .collect()
}

/// Wraps a known formula. Gradients are exact (forward-mode).
#[derive(Clone, Debug)]
pub struct ExactOracle {
    expr: Expression,
    n: usize,
    scales: Vec<f64>,
}

impl ExactOracle {
    pub fn new(expr: Expression, n_vars: usize, scales: Vec<f64>) -> ExactOracle {
        assert_eq!(scales.len(), n_vars);
        ExactOracle {
            expr,
            n: n_vars,
            scales,
        }
    }

    /// Steps scaled to the spread of `table`'s inputs.
    pub fn for_table(expr: Expression, table: &DataTable) -> ExactOracle {
        ExactOracle::new(expr, table.n_vars(), positive_scales(table))
    }

    pub fn expression(&self) -> &Expression {
        &self.expr
    }
}

pub fn exact_oracle(expr: Expression, table: &DataTable) -> SharedOracle {
    Arc::new(ExactOracle::for_table(expr, table))
}

impl FunctionOracle for ExactOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::ExactExpr
    }

    fn n_vars(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self.expr.evaluate(x) {
            Ok(Some(v)) => v,
            _ => f64::NAN,
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        match self.expr.eval_grad(x, GradWrt::Vars(self.n)) {
            Some((_, g)) => {
                out.copy_from_slice(&g);
                true
            }
            None => false,
        }
    }

    fn scales(&self) -> &[f64] {
        &self.scales
    }
}

/// Unit gradients for every row of a table.
#[derive(Clone, Debug)]
pub struct GradientBatch {
    pub n_vars: usize,
    /// Row-major ∇f/|∇f|; zeros on degenerate rows.
    pub unit: Vec<f64>,
    /// Raw gradients, row-major.
    pub raw: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl GradientBatch {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn len(&self) -> usize {
        self.degenerate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degenerate.is_empty()
    }

    pub fn n_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }
}

const GRADIENT_CHUNK: usize = 256;

/// Normalized gradients at the table's rows. A row is degenerate when the
/// gradient is invalid or its scaled norm `|∇f ⊙ σₓ|` is below `1e-8·σ_y`.
pub fn gradient_batch(oracle: &dyn FunctionOracle, table: &DataTable, exec: Exec) -> GradientBatch {
    let n = oracle.n_vars();
    assert_eq!(n, table.n_vars(), "oracle and table disagree on width");
    let sx = positive_scales(table);
    let floor = 1e-8 * std_dev(table.y());
    let rows = table.x_flat();
    let n_rows = table.len();
    let chunks = n_rows.div_ceil(GRADIENT_CHUNK);
    let parts = exec.map_range(chunks, |c| {
        let lo = c * GRADIENT_CHUNK;
        let hi = (lo + GRADIENT_CHUNK).min(n_rows);
        let mut g = vec![0.0; (hi - lo) * n];
        let ok = oracle.gradients(&rows[lo * n..hi * n], &mut g);
        (g, ok)
    });
    let mut raw = Vec::with_capacity(n_rows * n);
    let mut valid = Vec::with_capacity(n_rows);
    for (g, ok) in parts {
        raw.extend(g);
        valid.extend(ok);
    }
    let mut unit = vec![0.0; n_rows * n];
    let mut degenerate = vec![true; n_rows];
    for i in 0..n_rows {
        let g = &raw[i * n..(i + 1) * n];
        if !valid[i] || g.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let scaled: f64 = g.iter().zip(&sx).map(|(v, s)| (v * s) * (v * s)).sum::<f64>().sqrt();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scaled <= floor || norm == 0.0 {
            continue;
        }
        degenerate[i] = false;
        for j in 0..n {
            unit[i * n + j] = g[j] / norm;
        }
    }
    GradientBatch {
        n_vars: n,
        unit,
        raw,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BasisSet;

    fn exact(text: &str, names: &[&str], rows: Vec<Vec<f64>>) -> (ExactOracle, DataTable) {
        let basis = BasisSet::with_variables(names.iter().copied()).unwrap();
        let expr = Expression::parse_infix(text, &basis).unwrap();
        let y = rows
            .iter()
            .map(|r| expr.evaluate(r).unwrap().unwrap_or(f64::NAN))
            .collect::<Vec<_>>();
        let names = names.iter().map(|s| s.to_string()).collect();
        let table = DataTable::new(names, rows.into_iter().zip(y)).unwrap().0;
        (ExactOracle::for_table(expr, &table), table)
    }

    fn grid2() -> Vec<Vec<f64>> {
        (0..25).map(|i| vec![0.3 + (i % 5) as f64 * 0.2, 0.4 + (i / 5) as f64 * 0.3]).collect()
    }

    #[test]
    fn exact_gradients() {
        let (o, _) = exact("x+y", &["x", "y"], grid2());
        let mut g = [0.0; 2];
        assert!(o.gradient(&[0.7, -3.0], &mut g));
        assert_eq!(g, [1.0, 1.0]);

        let (o, _) = exact("sin(x*y)", &["x", "y"], grid2());
        assert!(o.gradient(&[1.0, 2.0], &mut g));
        assert!((g[0] - 2.0 * 2f64.cos()).abs() < 1e-12);
        assert!((g[1] - 2f64.cos()).abs() < 1e-12);

        let (o, _) = exact("x^2*y", &["x", "y"], grid2());
        assert!((o.second_partial(&[1.0, 1.0], 0, 1) - 2.0).abs() < 1e-6);
        assert!((o.second_partial(&[1.0, 1.0], 0, 0) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_points_are_flagged() {
        let (o, _) = exact("ln(x)+y", &["x", "y"], grid2());
        let mut g = [0.0; 2];
        assert!(!o.gradient(&[-1.0, 0.0], &mut g));
        assert!(o.value(&[-1.0, 0.0]).is_nan());
    }

    #[test]
    fn unit_gradient_rows() {
        let (o, t) = exact("x+y", &["x", "y"], grid2());
        let b = gradient_batch(&o, &t, Exec::Sequential);
        let r = 1.0 / 2f64.sqrt();
        for i in 0..b.len() {
            assert!(!b.degenerate[i]);
            assert!((b.row(i)[0] - r).abs() < 1e-15 && (b.row(i)[1] - r).abs() < 1e-15);
        }

        let (o, t) = exact("x^2+y^2", &["x", "y"], vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0]]);
        let b = gradient_batch(&o, &t, Exec::Sequential);
        assert_eq!(b.row(0), &[1.0, 0.0]);
        assert_eq!(b.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn constant_function_is_all_degenerate() {
        let basis = BasisSet::with_variables(["x", "y"]).unwrap();
        let expr = Expression::parse_infix("2+pi", &basis).unwrap();
        let rows = grid2().into_iter().map(|r| (r, 2.0 + std::f64::consts::PI));
        let t = DataTable::new(vec!["x".into(), "y".into()], rows).unwrap().0;
        let o = ExactOracle::for_table(expr, &t);
        let b = gradient_batch(&o, &t, Exec::Sequential);
        assert_eq!(b.n_degenerate(), b.len());
    }
}
