//! Rectangle tests for separability and explicit level-set moves for the
//! four simple symmetries.

use rand::Rng;

use super::{Decomposition, DecompositionKind, ModularityConfig, Payload, Sample, SymOp};
use crate::data::{median_row, DataTable};
use crate::expr::Expression;
use crate::surrogate::FunctionOracle;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SepMode {
    Additive,
    Multiplicative,
}

/// Left sides of every nontrivial bipartition, each listed once (the side
/// holding variable 0). Wide tables only try sides of one or two variables.
pub(crate) fn partitions(n: usize) -> Vec<Vec<usize>> {
    if n < 2 {
        return Vec::new();
    }
    if n > 10 {
        let mut out: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for i in 0..n {
            out.extend((i + 1..n).map(|j| vec![i, j]));
        }
        return out;
    }
    (1u32..1 << (n - 1))
        .map(|mask| {
            // Bit k of mask puts variable k+1 on the right.
            std::iter::once(0)
                .chain((1..n).filter(|&k| mask & (1 << (k - 1)) == 0))
                .collect::<Vec<_>>()
        })
        .filter(|left| left.len() < n)
        .collect()
}

fn mix(a: &[f64], b: &[f64], left: &[usize]) -> Vec<f64> {
    (0..a.len()).map(|j| if left.contains(&j) { a[j] } else { b[j] }).collect()
}

/// Rectangle errors: each anchor `a` pairs with anchor `b`, and f at `a` is
/// predicted from the corners `(a′, b″)`, `(b′, a″)` and `b`.
pub(crate) fn score_partition(s: &Sample, left: &[usize], mode: SepMode) -> Decomposition {
    let n = s.table.n_vars();
    let mut pts = Vec::with_capacity(2 * s.len() * n);
    for k in 0..s.len() {
        let (a, b) = (s.row(k), s.row(s.partner(k)));
        pts.extend(mix(a, b, left));
        pts.extend(mix(b, a, left));
    }
    let v = s.oracle.values(&pts);
    let rms = (s.f0.iter().filter(|f| f.is_finite()).map(|f| f * f).sum::<f64>() / s.len() as f64).sqrt();
    let floor = 1e-3 * rms;
    let eps: Vec<f64> = (0..s.len())
        .map(|k| {
            let (fa, fb) = (s.f0[k], s.f0[s.partner(k)]);
            let (fab, fba) = (v[2 * k], v[2 * k + 1]);
            match mode {
                SepMode::Additive => fa - (fab + fba - fb),
                SepMode::Multiplicative if fb.abs() > floor => fa - fab * fba / fb,
                SepMode::Multiplicative => f64::NAN,
            }
        })
        .collect();
    let rest = (0..n).filter(|j| !left.contains(j)).collect();
    Decomposition {
        kind: match mode {
            SepMode::Additive => DecompositionKind::AdditiveSep,
            SepMode::Multiplicative => DecompositionKind::MultiplicativeSep,
        },
        subset: left.to_vec(),
        score_bits: s.score(&eps),
        payload: Payload::Partition {
            rest,
            anchor: s.table.row(median_row(s.table)).to_vec(),
        },
    }
}

/// Moves `(xᵢ, xⱼ)` along a level set of `xᵢ ⊙ xⱼ` and compares f.
pub(crate) fn score_symmetry(s: &Sample, i: usize, j: usize, op: SymOp) -> Decomposition {
    let mut rng = s.rng(0x5e_0000 + (i as u64) * 1024 + j as u64 * 8 + op as u64);
    let mut pts = Vec::new();
    let mut which = Vec::new();
    for k in 0..s.len() {
        let x = s.row(k);
        let (di, dj) = (0.2 * s.stds[i], 0.2 * s.stds[j]);
        let (xi, xj) = match op {
            SymOp::Add | SymOp::Sub => {
                // One shift, scaled to both spreads so either may be the
                // narrow one; the pair sum or difference is exact.
                let d = rng.random_range(-1.0..1.0) * di.min(dj);
                (x[i] + d, if op == SymOp::Add { x[j] - d } else { x[j] + d })
            }
            SymOp::Mul | SymOp::Div => {
                let c: f64 = rng.random_range(0.8..1.25);
                (x[i] * c, if op == SymOp::Mul { x[j] / c } else { x[j] * c })
            }
        };
        if !s.inside(i, xi) || !s.inside(j, xj) {
            continue;
        }
        let mut p = x.to_vec();
        p[i] = xi;
        p[j] = xj;
        pts.extend(p);
        which.push(k);
    }
    let v = s.oracle.values(&pts);
    let mut eps = vec![f64::NAN; s.len()];
    for (&k, fv) in which.iter().zip(v) {
        eps[k] = fv - s.f0[k];
    }
    Decomposition {
        kind: DecompositionKind::SimpleSymmetry(op),
        subset: vec![i, j],
        score_bits: s.score(&eps),
        payload: Payload::Inner(Expression::var(i).combine(&Expression::var(j), op.opcode())),
    }
}

pub fn separability_test(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    left: &[usize],
    mode: SepMode,
    cfg: &ModularityConfig,
) -> Decomposition {
    score_partition(&Sample::new(oracle, table, cfg), left, mode)
}

pub fn simple_symmetry_test(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    (i, j): (usize, usize),
    op: SymOp,
    cfg: &ModularityConfig,
) -> Decomposition {
    score_symmetry(&Sample::new(oracle, table, cfg), i, j, op)
}
