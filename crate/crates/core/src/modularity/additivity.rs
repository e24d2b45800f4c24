//! Generalized additivity `f = F(g(x₁) + h(x₂))`: then `s = f₁/f₂ =
//! g′(x₁)/h′(x₂)` so `ln|s|` is additively separable, which the S score
//! detects from its mixed second partial.

use std::sync::Arc;

use serde::Serialize;

use super::integrate::symbolic_integrate;
use super::symmetry::level_set_errors;
use super::{Decomposition, DecompositionKind, ModularityConfig, Payload, Sample, Solve1d};
use crate::data::{median, DataTable};
use crate::expr::{Expression, OpCode};
use crate::surrogate::{train_modular_additive, FunctionOracle};

/// FD step for the second partials of `ln|s|`, as a fraction of spread.
const STEP: f64 = 1e-2;
/// Grid sizes for the 1-D tables and for the lines averaged over.
const FINE: usize = 200;
const COARSE: usize = 16;

#[derive(Clone, Debug, Serialize)]
pub struct AdditivityReport {
    pub values: Vec<f64>,
    pub median_s: f64,
    pub threshold: f64,
    pub skipped: usize,
    /// Too few valid points to decide.
    pub inconclusive: bool,
}

/// `φxy² / (|φxx·φyy| + φxy²)`, zero when all three vanish.
pub fn s_score(dxx: f64, dyy: f64, dxy: f64) -> f64 {
    let num = dxy * dxy;
    let den = (dxx * dyy).abs() + num;
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `ln|f₁/f₂|` per row; NaN where either partial is (near) zero.
fn log_ratio(oracle: &dyn FunctionOracle, pts: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; pts.len()];
    let ok = oracle.gradients(pts, &mut g);
    ok.iter()
        .zip(g.chunks(2))
        .map(|(&ok, d)| {
            let small = 1e-12 * (d[0].abs() + d[1].abs());
            if ok && d[0].abs() > small && d[1].abs() > small {
                (d[0] / d[1]).abs().ln()
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// The sign of `f₁/f₂` per row, zero where undefined.
fn ratio_sign(oracle: &dyn FunctionOracle, pts: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; pts.len()];
    let ok = oracle.gradients(pts, &mut g);
    ok.iter()
        .zip(g.chunks(2))
        .map(|(&ok, d)| if ok && d[1] != 0.0 { (d[0] / d[1]).signum() } else { 0.0 })
        .collect()
}

fn s_values(s: &Sample) -> (Vec<f64>, usize) {
    let (h1, h2) = (STEP * s.stds[0].max(1e-300), STEP * s.stds[1].max(1e-300));
    let offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];
    let mut pts = Vec::with_capacity(s.len() * 18);
    for a in 0..s.len() {
        let x = s.row(a);
        for (i, j) in offsets {
            pts.push(x[0] + i as f64 * h1);
            pts.push(x[1] + j as f64 * h2);
        }
    }
    let psi = log_ratio(s.oracle, &pts);
    let mut out = Vec::with_capacity(s.len());
    let mut skipped = 0;
    for p in psi.chunks(9) {
        if p.iter().any(|v| !v.is_finite()) {
            skipped += 1;
            continue;
        }
        let at = |i: i32, j: i32| p[((i + 1) * 3 + (j + 1)) as usize];
        // Values below ten times the rounding error of each stencil are zero.
        let noise = 1e-13 * (1.0 + p.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let cut = |d: f64, tol: f64| if d.abs() < 10.0 * tol { 0.0 } else { d };
        let dxx = cut((at(1, 0) - 2.0 * at(0, 0) + at(-1, 0)) / (h1 * h1), 4.0 * noise / (h1 * h1));
        let dyy = cut((at(0, 1) - 2.0 * at(0, 0) + at(0, -1)) / (h2 * h2), 4.0 * noise / (h2 * h2));
        let dxy = cut(
            (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h1 * h2),
            noise / (h1 * h2),
        );
        out.push(s_score(dxx, dyy, dxy));
    }
    (out, skipped)
}

/// `count` values spread over the central 96% of `col`.
fn quantile_grid(col: &[f64], count: usize) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    let last = (v.len() - 1) as f64;
    (0..count)
        .map(|k| {
            let q = 0.02 + 0.96 * k as f64 / (count - 1).max(1) as f64;
            v[(q * last).round() as usize]
        })
        .collect()
}

/// Mean of `ln|s|` over each row of a `rows × cols` grid, with `x₁` from
/// `g1` and `x₂` from `g2`; NaN when fewer than half are valid.
fn line_means(oracle: &dyn FunctionOracle, g1: &[f64], g2: &[f64], by_first: bool, shift: &dyn Fn(usize, usize) -> f64) -> Vec<f64> {
    let (outer, inner) = if by_first { (g1, g2) } else { (g2, g1) };
    let mut pts = Vec::with_capacity(outer.len() * inner.len() * 2);
    for &o in outer {
        for &i in inner {
            if by_first {
                pts.extend([o, i]);
            } else {
                pts.extend([i, o]);
            }
        }
    }
    let psi = log_ratio(oracle, &pts);
    psi.chunks(inner.len())
        .enumerate()
        .map(|(r, row)| {
            let ok: Vec<f64> = row.iter().enumerate().filter(|(_, v)| v.is_finite()).map(|(c, v)| v - shift(r, c)).collect();
            if 2 * ok.len() < inner.len() {
                f64::NAN
            } else {
                ok.iter().sum::<f64>() / ok.len() as f64
            }
        })
        .collect()
}

/// Tables of `g′ = a(x₁)` (gauge `a(x₁⁰) = 1`) and `h′ = 1/b(x₂)`.
fn derivative_tables(s: &Sample) -> Option<(DataTable, DataTable)> {
    let (c1, c2) = (s.table.column(0), s.table.column(1));
    let (m1, m2) = (median(&c1), median(&c2));
    let (f1, k1) = (quantile_grid(&c1, FINE), quantile_grid(&c1, COARSE));
    let (f2, k2) = (quantile_grid(&c2, FINE), quantile_grid(&c2, COARSE));
    let o = s.oracle;

    // ln|a(x₁)| = mean over x₂ of ln|s(x₁,x₂)| − the same at x₁⁰.
    let zero = |_: usize, _: usize| 0.0;
    let base = line_means(o, &[m1], &k2, true, &zero)[0];
    if !base.is_finite() {
        return None;
    }
    let log_a = |g: &[f64]| -> Vec<f64> { line_means(o, g, &k2, true, &zero).iter().map(|v| v - base).collect() };
    let (la_fine, la_coarse) = (log_a(&f1), log_a(&k1));
    let sign_pts = |g: &[f64], other: f64, first: bool| -> Vec<f64> {
        g.iter().flat_map(|&v| if first { [v, other] } else { [other, v] }).collect()
    };
    let sign0 = ratio_sign(o, &[m1, m2])[0];
    let sa: Vec<f64> = ratio_sign(o, &sign_pts(&f1, m2, true)).iter().map(|v| v * sign0).collect();

    // ln|b(x₂)| = mean over x₁ of ln|s(x₁,x₂)| − ln|a(x₁)|.
    let shift = |_: usize, c: usize| la_coarse[c];
    let lb = line_means(o, &k1, &f2, false, &shift);
    let sb = ratio_sign(o, &sign_pts(&f2, m1, false));

    let rows = |xs: &[f64], ys: Vec<f64>| -> Vec<(Vec<f64>, f64)> {
        xs.iter().zip(ys).filter(|(_, y)| y.is_finite() && *y != 0.0).map(|(&x, y)| (vec![x], y)).collect()
    };
    let a: Vec<f64> = la_fine.iter().zip(&sa).map(|(l, sg)| sg * l.exp()).collect();
    let hp: Vec<f64> = lb.iter().zip(&sb).map(|(l, sg)| sg * (-l).exp()).collect();
    let (ra, rh) = (rows(&f1, a), rows(&f2, hp));
    if ra.len() < FINE / 2 || rh.len() < FINE / 2 {
        return None;
    }
    let names = s.table.names();
    let ta = DataTable::new(vec![names[0].clone()], ra).ok()?.0;
    let th = DataTable::new(vec![names[1].clone()], rh).ok()?.0;
    Some((ta, th))
}

/// Integrates both derivative fits into `u = g(x₁) + h(x₂)`.
fn symbolic_inner(s: &Sample, solve_1d: Solve1d) -> Option<Expression> {
    let (ta, th) = derivative_tables(s)?;
    let g = symbolic_integrate(&solve_1d(&ta)?, 0)?;
    let h = symbolic_integrate(&solve_1d(&th)?, 0)?;
    Some(g.combine(&h.remap_vars(&[1]), OpCode::Add))
}

pub(crate) fn run(
    s: &Sample,
    cfg: &ModularityConfig,
    solve_1d: Solve1d,
) -> (AdditivityReport, Option<Decomposition>) {
    let (values, skipped) = s_values(s);
    let inconclusive = values.len() < (s.len() / 4).max(10);
    let median_s = if values.is_empty() { f64::NAN } else { median(&values) };
    let report = AdditivityReport {
        values,
        median_s,
        threshold: cfg.additivity_threshold,
        skipped,
        inconclusive,
    };
    if inconclusive || !(median_s < cfg.additivity_threshold) {
        return (report, None);
    }
    if let Some(u) = symbolic_inner(s, solve_1d) {
        let eps = level_set_errors(s, &u, &[0, 1], 0xadd);
        let d = Decomposition {
            kind: DecompositionKind::GeneralizedAdditivity,
            subset: vec![0, 1],
            score_bits: s.score(&eps),
            payload: Payload::Inner(u),
        };
        return (report, Some(d));
    }
    // Fallback: a network of the modular form, fit to the oracle's values.
    let Ok(target) = s.table.with_y(s.oracle.values(s.table.x_flat())) else {
        return (report, None);
    };
    let m = match train_modular_additive(&target, &cfg.modular_net) {
        Ok(m) => m,
        Err(e) => {
            log::info!("modular network not used: {e}");
            return (report, None);
        }
    };
    let eps: Vec<f64> = (0..s.len())
        .map(|a| {
            let x = s.row(a);
            let u = m.g.value(&x[..1]) + m.h.value(&x[1..]);
            s.f0[a] - m.f.value(&[u])
        })
        .collect();
    let d = Decomposition {
        kind: DecompositionKind::GeneralizedAdditivity,
        subset: vec![0, 1],
        score_bits: s.score(&eps),
        payload: Payload::Modular(Arc::new(m)),
    };
    (report, Some(d))
}

pub fn gen_additivity_test(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    cfg: &ModularityConfig,
    solve_1d: Solve1d,
) -> (AdditivityReport, Option<Decomposition>) {
    if table.n_vars() != 2 {
        let report = AdditivityReport {
            values: Vec::new(),
            median_s: f64::NAN,
            threshold: cfg.additivity_threshold,
            skipped: 0,
            inconclusive: true,
        };
        return (report, None);
    }
    run(&Sample::new(oracle, table, cfg), cfg, solve_1d)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{exact, quick_cfg};
    use super::*;
    use crate::expr::BasisSet;

    /// Least-squares line `c·x + d` with exact small rationals, good
    /// enough to stand in for the 1-D solver on linear derivatives.
    fn fit_line(t: &DataTable) -> Option<Expression> {
        let xs = t.column(0);
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, t.y_mean());
        let sxy: f64 = xs.iter().zip(t.y()).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let c = sxy / sxx;
        let d = my - c * mx;
        let resid = xs.iter().zip(t.y()).map(|(x, y)| (y - c * x - d).abs()).fold(0.0, f64::max);
        if resid > 1e-6 {
            return None;
        }
        let b = BasisSet::with_variables(["x"]).unwrap();
        let e = Expression::parse_infix(&format!("[{c}]*x+[{d}]"), &b).ok()?;
        Some(e)
    }

    fn none(_: &DataTable) -> Option<Expression> {
        None
    }

    #[test]
    fn s_of_product_is_one() {
        let (o, _) = exact("x*y", &["x", "y"], 1.0, 2.0, 50);
        let x = [1.3, 1.7];
        let s = s_score(o.second_partial(&x, 0, 0), o.second_partial(&x, 1, 1), o.second_partial(&x, 0, 1));
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn s_of_sum_is_zero() {
        let (o, _) = exact("x^2+sin(y)", &["x", "y"], 1.0, 2.0, 50);
        let x = [1.3, 1.7];
        let s = s_score(o.second_partial(&x, 0, 0), o.second_partial(&x, 1, 1), o.second_partial(&x, 0, 1));
        assert!(s < 1e-3, "{s}");
    }

    #[test]
    fn tanh_of_squares_integrates_symbolically() {
        let (o, t) = exact("tanh(x^2+y^2)", &["x", "y"], 0.3, 1.2, 400);
        let cfg = quick_cfg();
        let (r, d) = gen_additivity_test(&o, &t, &cfg, &fit_line);
        assert!(r.median_s < 1e-3, "{}", r.median_s);
        assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let d = d.unwrap();
        let Payload::Inner(u) = &d.payload else { panic!("expected symbolic inner") };
        // u ∝ x² + y² up to an additive constant.
        let at = |x: f64, y: f64| u.evaluate(&[x, y]).unwrap().unwrap();
        let k = (at(1.0, 0.5) - at(0.5, 0.5)) / 0.75;
        assert!(((at(0.5, 1.1) - at(0.5, 0.5)) / k - 0.96).abs() < 1e-6);
        assert!(d.score_bits < 1e-3, "{}", d.score_bits);
    }

    #[test]
    fn product_of_unrelated_parts_is_not_additive() {
        let (o, t) = exact("x*y+x^2+y*y*y", &["x", "y"], 0.3, 1.2, 300);
        let (r, d) = gen_additivity_test(&o, &t, &quick_cfg(), &none);
        assert!(r.median_s > 0.1, "{}", r.median_s);
        assert!(d.is_none());
    }

    #[test]
    fn falls_back_to_modular_network() {
        let (o, t) = exact("exp(x*x*x+y)", &["x", "y"], -1.0, 1.0, 300);
        let mut cfg = quick_cfg();
        cfg.modular_net.epochs = 1500;
        cfg.modular_net.learning_rate = 1e-2;
        let (r, d) = gen_additivity_test(&o, &t, &cfg, &none);
        assert!(r.median_s < 1e-3, "{}", r.median_s);
        let d = d.unwrap();
        assert!(matches!(d.payload, Payload::Modular(_)));
    }
}
