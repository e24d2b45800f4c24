//! Least-squares multivariate polynomials of each total degree.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{convergents, scored};
use crate::data::DataTable;
use crate::expr::{Node, OpCode, Param};
use crate::mdl::MdlConfig;
use crate::pareto::ParetoModel;

#[derive(Clone, Debug, PartialEq)]
pub struct PolyFitConfig {
    pub max_degree: usize,
    pub mdl: MdlConfig,
    /// Coefficient denominators tried when snapping.
    pub max_den: u64,
}

impl Default for PolyFitConfig {
    fn default() -> Self {
        PolyFitConfig {
            max_degree: 4,
            mdl: MdlConfig::default(),
            max_den: 100,
        }
    }
}

/// Design columns above this are not attempted.
const MAX_TERMS: usize = 400;
/// Rows used for the fit itself; scoring always uses the whole table.
const FIT_ROWS: usize = 4000;

/// Exponent vectors of total degree exactly `d` in `n` variables.
fn exponents(n: usize, d: usize) -> Vec<Vec<u32>> {
    if n == 0 {
        return if d == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for mut rest in exponents(n - 1, d - first) {
            rest.insert(0, first as u32);
            out.push(rest);
        }
    }
    out
}

fn power(var: usize, k: u32) -> Node {
    let x = Node::Var(var);
    let sq = |a: Node| Node::op1(OpCode::Square, a);
    match k {
        1 => x,
        2 => sq(x),
        3 => Node::op2(OpCode::Mul, x.clone(), sq(x)),
        4 => sq(sq(x)),
        _ => {
            let half = power(var, k / 2);
            let even = sq(half);
            if k % 2 == 1 {
                Node::op2(OpCode::Mul, x, even)
            } else {
                even
            }
        }
    }
}

fn monomial(e: &[u32]) -> Option<Node> {
    e.iter()
        .enumerate()
        .filter(|(_, &k)| k > 0)
        .map(|(v, &k)| power(v, k))
        .reduce(|a, b| Node::op2(OpCode::Mul, a, b))
}

fn monomial_value(x: &[f64], e: &[u32]) -> f64 {
    x.iter().zip(e).map(|(v, &k)| v.powi(k as i32)).product()
}

fn build(terms: &[Vec<u32>], coefs: &[Param]) -> Option<crate::expr::Expression> {
    let mut acc: Option<Node> = None;
    for (e, &c) in terms.iter().zip(coefs) {
        if c.value() == 0.0 {
            continue;
        }
        let term = match monomial(e) {
            None => Node::Const(c),
            Some(m) if c.value() == 1.0 => m,
            Some(m) => Node::op2(OpCode::Mul, Node::Const(c), m),
        };
        acc = Some(match acc {
            None => term,
            Some(a) => Node::op2(OpCode::Add, a, term),
        });
    }
    acc.unwrap_or(Node::int(0)).simplify_identities().to_expression().ok()
}

fn snap_coefficient(c: f64, max_den: u64) -> Param {
    let best = convergents(c, max_den)
        .into_iter()
        .min_by(|a, b| (c - a.0 as f64 / a.1 as f64).abs().total_cmp(&(c - b.0 as f64 / b.1 as f64).abs()));
    best.and_then(|(m, n)| Param::rational(m, n as i64).ok()).unwrap_or(Param::Real(c))
}

/// One raw and one snapped model per total degree 0..=max_degree, each
/// scored on the whole table. Rank-deficient degrees are skipped.
pub fn polyfit(table: &DataTable, cfg: &PolyFitConfig) -> Vec<ParetoModel> {
    let n = table.n_vars();
    if table.is_empty() {
        return Vec::new();
    }
    let rows: Vec<usize> = if table.len() > FIT_ROWS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9017);
        let mut r = sample(&mut rng, table.len(), FIT_ROWS).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..table.len()).collect()
    };
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| table.y()[i]));
    let mut terms: Vec<Vec<u32>> = Vec::new();
    let mut out = Vec::new();
    for d in 0..=cfg.max_degree {
        terms.extend(exponents(n, d));
        if terms.len() > MAX_TERMS || terms.len() > rows.len() {
            log::warn!("polyfit: degree {d} needs {} terms, skipping", terms.len());
            break;
        }
        let mut a = DMatrix::from_fn(rows.len(), terms.len(), |i, j| monomial_value(table.row(rows[i]), &terms[j]));
        // Column scaling keeps the singular values comparable.
        let scales: Vec<f64> = a.column_iter().map(|c| c.norm().max(f64::MIN_POSITIVE)).collect();
        for (j, s) in scales.iter().enumerate() {
            a.column_mut(j).unscale_mut(*s);
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-10 * smax) {
            log::warn!("polyfit: degree {d} design is rank deficient, skipping");
            continue;
        }
        let Ok(sol) = svd.solve(&y, 0.0) else { continue };
        let raw: Vec<f64> = sol.iter().zip(&scales).map(|(c, s)| c / s).collect();
        if raw.iter().any(|c| !c.is_finite()) {
            continue;
        }
        let reals: Vec<Param> = raw.iter().map(|&c| Param::Real(c)).collect();
        let snapped: Vec<Param> = raw.iter().map(|&c| snap_coefficient(c, cfg.max_den)).collect();
        for (coefs, tag) in [(reals, "polyfit"), (snapped, "polyfit:snapped")] {
            if let Some(e) = build(&terms, &coefs) {
                out.push(scored(e, table, &cfg.mdl, tag));
            }
        }
    }
    out
}
