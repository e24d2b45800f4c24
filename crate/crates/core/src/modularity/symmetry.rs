//! Generalized symmetry and compositionality: find an inner function whose
//! gradient is parallel to f's, then check f is constant on its level sets.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use super::{Decomposition, DecompositionKind, ModularityConfig, Payload, Sample};
use crate::brute::{self, SearchData};
use crate::data::{median, DataTable};
use crate::expr::{BasisSet, Expression};
use crate::pareto::ParetoFrontier;
use crate::surrogate::derived::level_root;
use crate::surrogate::{gradient_batch, FunctionOracle};

/// Inner-function candidates checked on level sets per search.
const TOP_MODELS: usize = 3;

#[derive(Clone, Debug, Serialize)]
pub struct SymmetryReport {
    pub subset: Vec<usize>,
    /// One value per anchor with enough valid companions.
    pub values: Vec<f64>,
    pub median_v: f64,
    pub m: usize,
    /// Anchors left out for lack of valid gradients.
    pub skipped: usize,
}

/// `1 − λ_max` of the mean outer product of unit vectors of width `k`.
pub(crate) fn v_statistic(units: &[f64], k: usize) -> f64 {
    let m = units.len() / k;
    let mut mean = DMatrix::<f64>::zeros(k, k);
    for v in units.chunks(k) {
        for r in 0..k {
            for c in 0..k {
                mean[(r, c)] += v[r] * v[c];
            }
        }
    }
    mean /= m as f64;
    let lmax = SymmetricEigen::new(mean).eigenvalues.max();
    (1.0 - lmax).clamp(0.0, 1.0 - 1.0 / k as f64)
}

pub(crate) fn symmetry_report(s: &Sample, subset: &[usize], m: usize) -> SymmetryReport {
    let n = s.table.n_vars();
    let k = subset.len();
    let mut rng = s.rng(subset.iter().fold(0x51_u64, |h, &j| h.wrapping_mul(31).wrapping_add(j as u64 + 1)));
    let mut pts = Vec::with_capacity(s.len() * m * n);
    for a in 0..s.len() {
        let x = s.row(a);
        for _ in 0..m {
            let other = s.table.row(rng.random_range(0..s.table.len()));
            pts.extend((0..n).map(|j| if subset.contains(&j) { x[j] } else { other[j] }));
        }
    }
    let mut grads = vec![0.0; pts.len()];
    let ok = s.oracle.gradients(&pts, &mut grads);
    let mut values = Vec::with_capacity(s.len());
    let mut skipped = 0;
    let mut units = Vec::with_capacity(m * k);
    for a in 0..s.len() {
        units.clear();
        for c in 0..m {
            let idx = a * m + c;
            if !ok[idx] {
                continue;
            }
            let g = &grads[idx * n..(idx + 1) * n];
            let sub: Vec<f64> = subset.iter().map(|&j| g[j]).collect();
            let norm = sub.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                units.extend(sub.iter().map(|v| v / norm));
            }
        }
        if units.len() < 2 * k {
            skipped += 1;
            continue;
        }
        values.push(v_statistic(&units, k));
    }
    let median_v = if values.is_empty() { f64::INFINITY } else { median(&values) };
    SymmetryReport {
        subset: subset.to_vec(),
        values,
        median_v,
        m,
        skipped,
    }
}

/// Subsets of size 2..=n_g, smaller and lexicographically earlier first.
pub(crate) fn subsets(n: usize, n_g: usize) -> Vec<Vec<usize>> {
    if n == 2 {
        return vec![vec![0, 1]];
    }
    let mut out = Vec::new();
    for size in 2..=n_g.min(n - 1) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.clone());
            let Some(p) = (0..size).rev().find(|&p| idx[p] < n - size + p) else { break };
            idx[p] += 1;
            for q in p + 1..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    out
}

pub(crate) fn select_subset(s: &Sample, cfg: &ModularityConfig) -> SymmetryReport {
    let all = subsets(s.table.n_vars(), cfg.n_g);
    let reports = cfg.exec.map(&all, |sub| symmetry_report(s, sub, cfg.neighbors));
    let mut best: Option<SymmetryReport> = None;
    for r in reports {
        // Earlier subsets keep near ties.
        if best.as_ref().is_none_or(|b| r.median_v < b.median_v - 1e-9) {
            best = Some(r);
        }
    }
    best.expect("at least one subset")
}

pub fn gen_symmetry_score(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    subset: &[usize],
    cfg: &ModularityConfig,
) -> SymmetryReport {
    symmetry_report(&Sample::new(oracle, table, cfg), subset, cfg.neighbors)
}

pub fn select_symmetry_subset(oracle: &dyn FunctionOracle, table: &DataTable, cfg: &ModularityConfig) -> SymmetryReport {
    select_subset(&Sample::new(oracle, table, cfg), cfg)
}

/// Brute-force search for `h(x_subset)` with `∇h ∥ ∇_subset f`, one pass
/// per configured operator set. Returns the merged frontier over the
/// subset's own variables.
pub fn gradient_search(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    subset: &[usize],
    basis: &BasisSet,
    cfg: &ModularityConfig,
) -> ParetoFrontier {
    let n = table.n_vars();
    let k = subset.len();
    let batch = gradient_batch(oracle, table, cfg.exec);
    let mut unit = vec![f64::NAN; table.len() * k];
    for i in 0..table.len() {
        if batch.degenerate[i] {
            continue;
        }
        let g = batch.raw_row(i);
        let sub: Vec<f64> = subset.iter().map(|&j| g[j]).collect();
        let norm = sub.iter().map(|v| v * v).sum::<f64>().sqrt();
        let full = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 * full && norm.is_finite() {
            for (u, v) in unit[i * k..(i + 1) * k].iter_mut().zip(&sub) {
                *u = v / norm;
            }
        }
    }
    let sub_table = table.select_columns(subset);
    let data = SearchData::gradients(&sub_table, &unit, cfg.seed);
    let mut frontier = ParetoFrontier::new();
    if data.len() < 2 || n == 0 {
        return frontier;
    }
    let names = sub_table.names().to_vec();
    for pass in &cfg.gradient_passes {
        let Ok(full) = basis.rebind(names.clone()) else { continue };
        let pass_basis = match &pass.ops {
            None => full,
            Some(ops) => {
                let keep = full.ops().iter().copied().filter(|o| ops.contains(o)).collect();
                match BasisSet::new(keep, names.clone(), full.literals().to_vec()) {
                    Ok(b) => b,
                    Err(_) => continue,
                }
            }
        };
        let bcfg = brute::BruteConfig {
            max_complexity_bits: pass.max_bits.min(cfg.brute.max_complexity_bits),
            ..cfg.brute.clone()
        };
        match brute::search(&data, &pass_basis, &bcfg) {
            Ok(r) => frontier.merge(r.frontier),
            Err(e) => log::warn!("inner-function search failed: {e}"),
        }
        if cfg.expired() {
            break;
        }
    }
    frontier
}

/// Errors of f under moves that keep `inner` fixed: shift one subset
/// variable by up to 20% of its spread, re-solve another for the same
/// inner value, compare f.
pub(crate) fn level_set_errors(s: &Sample, inner: &Expression, subset: &[usize], salt: u64) -> Vec<f64> {
    let mut rng = s.rng(salt);
    let mut stack = Vec::new();
    let mut pts = Vec::new();
    let mut which = Vec::new();
    for a in 0..s.len() {
        let x = s.row(a);
        let u = inner.eval_with(x, &mut stack);
        if !u.is_finite() {
            continue;
        }
        let mover = subset[rng.random_range(0..subset.len())];
        let d = rng.random_range(-0.2..0.2) * s.stds[mover];
        let mut p = x.to_vec();
        p[mover] = if s.inside(mover, x[mover] + d) { x[mover] + d } else { x[mover] - d };
        if !s.inside(mover, p[mover]) {
            continue;
        }
        let start = rng.random_range(0..subset.len());
        for off in 0..subset.len() {
            let pivot = subset[(start + off) % subset.len()];
            if pivot == mover {
                continue;
            }
            if let Some(t) = level_root(inner, &mut p, pivot, u, s.bounds[pivot], &mut stack) {
                p[pivot] = t;
                pts.extend_from_slice(&p);
                which.push(a);
                break;
            }
        }
    }
    let v = s.oracle.values(&pts);
    let mut eps = vec![f64::NAN; s.len()];
    for (&a, fv) in which.iter().zip(v) {
        eps[a] = fv - s.f0[a];
    }
    eps
}

/// Searches for an inner function on `subset` and scores the best few on
/// level sets. Inner functions must use at least two variables.
pub(crate) fn inner_candidate(
    s: &Sample,
    subset: &[usize],
    kind: DecompositionKind,
    basis: &BasisSet,
    cfg: &ModularityConfig,
) -> Option<Decomposition> {
    let frontier = gradient_search(s.oracle, s.table, subset, basis, cfg);
    let mut models: Vec<_> = frontier
        .models()
        .iter()
        .filter(|m| m.expr.variables_used().len() >= 2 && m.score.medl_bits.is_finite())
        .collect();
    models.sort_by(|a, b| a.score.medl_bits.total_cmp(&b.score.medl_bits));
    models
        .into_iter()
        .take(TOP_MODELS)
        .enumerate()
        .map(|(r, m)| {
            let inner = m.expr.remap_vars(subset);
            let eps = level_set_errors(s, &inner, subset, 0x1e7e1 + r as u64);
            Decomposition {
                kind,
                subset: subset.to_vec(),
                score_bits: s.score(&eps),
                payload: Payload::Inner(inner),
            }
        })
        .min_by(|a, b| a.score_bits.total_cmp(&b.score_bits))
}

/// `f = F(h(x))` over all variables.
pub fn compositionality_search(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    basis: &BasisSet,
    cfg: &ModularityConfig,
) -> Option<Decomposition> {
    let n = table.n_vars();
    if n < 2 {
        return None;
    }
    let all: Vec<usize> = (0..n).collect();
    inner_candidate(&Sample::new(oracle, table, cfg), &all, DecompositionKind::Compositionality, basis, cfg)
}
