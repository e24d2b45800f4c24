//! Sub-mystery construction and reassembly of sub-frontiers on the
//! parent's variables.

use std::sync::Arc;

use crate::data::DataTable;
use crate::expr::{Expression, OpCode};
use crate::mdl::MdlConfig;
use crate::modularity::{Decomposition, DecompositionKind, Payload};
use crate::pareto::{merge_compose, ParetoFrontier, ParetoModel};
use crate::refine::scored;
use crate::surrogate::derived::SliceOracle;
use crate::surrogate::{FunctionOracle, ModularAdditive, SharedOracle};

/// Most accurate members of each 1-D frontier tried in `F(g + h)`.
const MODULAR_TOP: usize = 3;

/// Slices through `anchor`: the left part is `f(x′, x″₀)`; the right part
/// is `f(x′₀, x″) − f₀` for sums and `f(x′₀, x″) / f₀` for products.
pub(crate) fn slice_oracles(
    oracle: &SharedOracle,
    anchor: &[f64],
    left: &[usize],
    rest: &[usize],
    multiplicative: bool,
) -> Option<(SharedOracle, SharedOracle)> {
    let f0 = oracle.value(anchor);
    if !f0.is_finite() || (multiplicative && f0 == 0.0) {
        return None;
    }
    let lo = SliceOracle::new(oracle.clone(), anchor.to_vec(), left.to_vec(), 1.0, 0.0);
    let ro = if multiplicative {
        SliceOracle::new(oracle.clone(), anchor.to_vec(), rest.to_vec(), 1.0 / f0, 0.0)
    } else {
        SliceOracle::new(oracle.clone(), anchor.to_vec(), rest.to_vec(), 1.0, -f0)
    };
    Some((Arc::new(lo), Arc::new(ro)))
}

/// The parent's rows restricted to `cols`, with targets from `oracle`.
pub(crate) fn slice_table(t: &DataTable, cols: &[usize], oracle: &dyn FunctionOracle) -> Option<DataTable> {
    let sub = t.select_columns(cols);
    let y = oracle.values(sub.x_flat());
    let rows = (0..sub.len()).map(|i| (sub.row(i).to_vec(), y[i]));
    DataTable::new(sub.names().to_vec(), rows).ok().map(|(t, _)| t).filter(|t| !t.is_empty())
}

/// Tables for `g(x₁)`, `h(x₂)` and `F(u)` with `u = g(x₁) + h(x₂)`.
pub(crate) fn modular_tables(t: &DataTable, parts: &ModularAdditive) -> Option<(DataTable, DataTable, DataTable)> {
    let (c1, c2) = (t.column(0), t.column(1));
    let (g, h) = (parts.g.values(&c1), parts.h.values(&c2));
    let one = |name: &str, xs: &[f64], ys: &[f64]| {
        let rows = xs.iter().zip(ys).map(|(&x, &y)| (vec![x], y));
        DataTable::new(vec![name.to_string()], rows).ok().map(|(t, _)| t).filter(|t| !t.is_empty())
    };
    let u: Vec<f64> = g.iter().zip(&h).map(|(a, b)| a + b).collect();
    let name = super::fresh_name(t.names());
    Some((
        one(&t.names()[0], &c1, &g)?,
        one(&t.names()[1], &c2, &h)?,
        one(&name, &u, t.y())?,
    ))
}

fn tag(kind: DecompositionKind) -> &'static str {
    match kind {
        DecompositionKind::AdditiveSep => "add",
        DecompositionKind::MultiplicativeSep => "mul",
        DecompositionKind::SimpleSymmetry(_) => "sym",
        DecompositionKind::GeneralizedSymmetry => "gensym",
        DecompositionKind::GeneralizedAdditivity => "genadd",
        DecompositionKind::Compositionality => "comp",
    }
}

fn top(f: &ParetoFrontier, k: usize) -> &[ParetoModel] {
    let m = f.models();
    &m[m.len().saturating_sub(k)..]
}

/// Rebuilds parent-level models from the sub-frontiers, in the order the
/// sub-mysteries were produced, and rescores each on `parent`.
pub fn compose_decomposition(
    d: &Decomposition,
    subs: &[ParetoFrontier],
    parent: &DataTable,
    mdl: &MdlConfig,
) -> ParetoFrontier {
    let name = tag(d.kind);
    let finish = |e: Expression, prov: String| {
        let m = scored(e.simplified(), parent, mdl, prov);
        m.score.is_finite().then_some(m)
    };
    match (&d.payload, subs) {
        (Payload::Partition { rest, .. }, [left, right]) => {
            let op = if d.kind == DecompositionKind::MultiplicativeSep { OpCode::Mul } else { OpCode::Add };
            merge_compose(left, right, |a, b| {
                let e = a.expr.remap_vars(&d.subset).combine(&b.expr.remap_vars(rest), op);
                finish(e, format!("{name}+({},{})", a.provenance, b.provenance))
            })
        }
        (Payload::Inner(h), [outer]) => {
            let n = parent.n_vars();
            let rest: Vec<usize> = (0..n).filter(|j| !d.subset.contains(j)).collect();
            let mut map = vec![h.clone()];
            map.extend(rest.iter().map(|&j| Expression::var(j)));
            ParetoFrontier::from_models(outer.models().iter().filter_map(|m| {
                let e = m.expr.substitute_vars(&|i| map.get(i));
                finish(e, format!("{name}+({})", m.provenance))
            }))
        }
        (Payload::Modular(_), [g, h, f]) => {
            let mut out = ParetoFrontier::new();
            for gm in top(g, MODULAR_TOP) {
                for hm in top(h, MODULAR_TOP) {
                    let u = gm.expr.combine(&hm.expr.remap_vars(&[1]), OpCode::Add);
                    for fm in top(f, MODULAR_TOP) {
                        let e = fm.expr.substitute_var(0, &u);
                        let prov = format!("{name}+({},{},{})", fm.provenance, gm.provenance, hm.provenance);
                        if let Some(m) = finish(e, prov) {
                            let _ = out.insert(m);
                        }
                    }
                }
            }
            out
        }
        _ => ParetoFrontier::new(),
    }
}
