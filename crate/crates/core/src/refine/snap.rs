//! Snapping real constants to 0, integers or small rationals.

use super::{medl_on, reoptimize, scored, RefineConfig};
use crate::data::DataTable;
use crate::expr::Param;
use crate::pareto::ParetoModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapKind {
    Zero,
    Integer,
    Rational,
}

impl SnapKind {
    pub fn name(self) -> &'static str {
        match self {
            SnapKind::Zero => "zero",
            SnapKind::Integer => "integer",
            SnapKind::Rational => "rational",
        }
    }
}

/// Real parameters ordered by distance to their snap target, with the
/// targets themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapPlan {
    pub kind: SnapKind,
    pub ranked_indices: Vec<usize>,
    pub targets: Vec<Param>,
}

/// Continued-fraction convergents of `x` with denominators up to `max_den`.
pub fn convergents(x: f64, max_den: u64) -> Vec<(i64, u64)> {
    let mut out = Vec::new();
    if !x.is_finite() || x.abs() > 1e15 {
        return out;
    }
    let (mut h0, mut h1) = (1i128, x.floor() as i128);
    let (mut k0, mut k1) = (0i128, 1i128);
    let mut rest = x - x.floor();
    out.push((h1 as i64, 1));
    for _ in 0..64 {
        if rest.abs() < 1e-12 {
            break;
        }
        let inv = 1.0 / rest;
        let a = inv.floor();
        rest = inv - a;
        let a = a as i128;
        let (h2, k2) = (a * h1 + h0, a * k1 + k0);
        if k2 > max_den as i128 || h2.abs() > i64::MAX as i128 {
            break;
        }
        out.push((h2 as i64, k2 as u64));
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    out
}

fn integer(p: f64) -> Option<Param> {
    (p.abs() < 9e15).then(|| Param::Integer(p.round() as i64))
}

/// The snap target of parameter `k` of `model`. Rational targets pick the
/// convergent with the smallest total description length change.
fn target(model: &ParetoModel, k: usize, kind: SnapKind, table: &DataTable, cfg: &RefineConfig) -> Option<Param> {
    let p = model.expr.params()[k].value();
    match kind {
        SnapKind::Zero => Some(Param::Integer(0)),
        SnapKind::Integer => integer(p),
        SnapKind::Rational => {
            let base = model.score.medl_bits;
            let rows = table.len() as f64;
            convergents(p, cfg.max_den)
                .into_iter()
                .filter_map(|(m, n)| {
                    let q = Param::rational(m, n as i64).ok()?;
                    let mut params = model.expr.params().to_vec();
                    params[k] = q;
                    let e = model.expr.with_params(params).ok()?;
                    let dl = q.description_length(&cfg.mdl) - model.expr.params()[k].description_length(&cfg.mdl);
                    let cost = dl + rows * (medl_on(&e, table, &cfg.mdl) - base);
                    cost.is_finite().then_some((cost, q))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, q)| q)
        }
    }
}

pub fn snap_plan(model: &ParetoModel, kind: SnapKind, table: &DataTable, cfg: &RefineConfig) -> SnapPlan {
    let params = model.expr.params();
    let mut ranked: Vec<(f64, usize, Param)> = model
        .expr
        .real_param_indices()
        .into_iter()
        .map(|k| {
            let t = target(model, k, kind, table, cfg);
            let d = t.map_or(f64::INFINITY, |t| (params[k].value() - t.value()).abs());
            (d, k, t.unwrap_or(params[k]))
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    SnapPlan {
        kind,
        ranked_indices: ranked.iter().map(|r| r.1).collect(),
        targets: ranked.iter().map(|r| r.2).collect(),
    }
}

/// For p real parameters, p models: the j closest parameters snapped for
/// j = 1..p, remaining reals reoptimized, identities simplified away.
pub fn snap(model: &ParetoModel, kind: SnapKind, table: &DataTable, cfg: &RefineConfig) -> Vec<ParetoModel> {
    let plan = snap_plan(model, kind, table, cfg);
    let mut params = model.expr.params().to_vec();
    let mut out = Vec::with_capacity(plan.ranked_indices.len());
    for (&k, &t) in plan.ranked_indices.iter().zip(&plan.targets) {
        params[k] = t;
        let Ok(e) = model.expr.with_params(params.clone()) else { continue };
        let provenance = format!("{}+snap:{}", model.provenance, kind.name());
        let snapped = scored(e.simplified(), table, &cfg.mdl, provenance);
        out.push(if snapped.expr.real_param_indices().is_empty() {
            snapped
        } else {
            reoptimize(&snapped, table, cfg)
        });
    }
    out
}


#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    fn model(text: &str, t: &DataTable) -> ParetoModel {
        scored(parse(text, &["x"]), t, &RefineConfig::default().mdl, "test")
    }

    #[test]
    fn convergents_of_third_and_pi() {
        assert_eq!(convergents(0.3333333, 100), vec![(0, 1), (1, 3)]);
        assert_eq!(convergents(std::f64::consts::PI, 200), vec![(3, 1), (22, 7), (333, 106), (355, 113)]);
        assert_eq!(convergents(-0.5, 100), vec![(-1, 1), (-1, 2)]);
    }

    #[test]
    fn integer_snap_ranks_by_distance() {
        let t = table("2*x+[0.7]*x*x+[3.14]", &["x"], 0.0, 1.0, 100);
        let m = model("[2.0001]*x+[0.7]*x*x+[3.14]", &t);
        let plan = snap_plan(&m, SnapKind::Integer, &t, &RefineConfig::default());
        assert_eq!(plan.ranked_indices, vec![0, 2, 1]);
        let out = snap(&m, SnapKind::Integer, &t, &RefineConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].expr.params()[0], Param::Integer(2));
    }

    #[test]
    fn zero_snap_removes_term() {
        let t = table("x", &["x"], 0.0, 1.0, 100);
        let m = model("x+[1e-9]", &t);
        let out = snap(&m, SnapKind::Zero, &t, &RefineConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].expr.to_infix(t.names()), "x");
    }

    #[test]
    fn rational_snap_finds_third() {
        let t = table("x/3", &["x"], 0.0, 1.0, 100);
        let m = model("[0.3333333]*x", &t);
        let out = snap(&m, SnapKind::Rational, &t, &RefineConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].expr.params()[0], Param::Rational(1, 3));
    }

    #[test]
    fn output_count_matches_real_parameters() {
        let t = table("x", &["x"], 0.0, 1.0, 50);
        let m = model("[0.5]*x+[0.25]+sin([1.5]*x)", &t);
        for kind in [SnapKind::Zero, SnapKind::Integer, SnapKind::Rational] {
            assert_eq!(snap(&m, kind, &t, &RefineConfig::default()).len(), 3);
        }
    }
}
