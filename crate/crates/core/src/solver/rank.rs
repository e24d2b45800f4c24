//! Held-out ranking and the success check against a known formula.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::DataTable;
use crate::expr::Expression;
use crate::mdl::{self, MdlConfig};
use crate::pareto::{ParetoFrontier, ParetoModel};

/// Random points used by the equivalence check.
pub const EQUIVALENCE_POINTS: usize = 1_000_000;
/// Agreement needed for a constant-free model to count as the truth.
pub const EXACT_TOLERANCE: f64 = 1e-9;
/// Agreement needed when the model carries fitted real constants.
pub const REAL_TOLERANCE: f64 = 1e-4;
/// A simpler model within this many standard errors of the best held-out
/// score takes the top spot.
const TIE_Z: f64 = 3.0;

#[derive(Clone, Debug, Serialize)]
pub struct RankedModel {
    pub model: ParetoModel,
    pub heldout_medl_bits: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankedResult {
    /// By held-out MEDL, then complexity.
    pub ranked: Vec<RankedModel>,
    /// Index into `ranked` of the chosen model.
    pub top: Option<usize>,
    /// Set when a truth was supplied.
    pub success: Option<bool>,
    /// Largest relative deviation of the top model from the truth.
    pub max_relative_error: Option<f64>,
}

impl RankedResult {
    pub fn top_model(&self) -> Option<&RankedModel> {
        self.top.map(|i| &self.ranked[i])
    }
}

fn point_bits(m: &ParetoModel, t: &DataTable, cfg: &MdlConfig) -> Vec<f64> {
    let mut stack = Vec::new();
    t.rows().map(|(x, y)| mdl::dl_real(y - m.expr.eval_with(x, &mut stack), cfg)).collect()
}

/// Largest `|model − truth| / max(|truth|, 1e-6·rms(truth))` over random
/// points in the bounding box of `table`. Points where the truth is
/// undefined are skipped; the model being undefined where the truth is not
/// gives infinity.
pub fn equivalence_error(model: &Expression, truth: &Expression, table: &DataTable, points: usize, seed: u64) -> f64 {
    let n = table.n_vars();
    if model.min_vars() > n || truth.min_vars() > n {
        return f64::INFINITY;
    }
    let bounds = table.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe9_u64);
    let mut x = vec![0.0; n];
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    let mut pairs = Vec::with_capacity(points);
    for _ in 0..points {
        for (v, &(lo, hi)) in x.iter_mut().zip(&bounds) {
            *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        }
        let b = truth.eval_with(&x, &mut s1);
        if !b.is_finite() {
            continue;
        }
        pairs.push((model.eval_with(&x, &mut s2), b));
    }
    if pairs.is_empty() {
        return f64::INFINITY;
    }
    let scale = (pairs.iter().map(|p| p.1 * p.1).sum::<f64>() / pairs.len() as f64).sqrt();
    let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);
    pairs
        .iter()
        .map(|&(a, b)| if a.is_finite() { (a - b).abs() / b.abs().max(floor) } else { f64::INFINITY })
        .fold(0.0, f64::max)
}

/// Ranks frontier members on held-out rows. The top model is the simplest
/// one whose per-point bits are not significantly worse than the best.
pub fn rank_and_verify(frontier: &ParetoFrontier, heldout: &DataTable, truth: Option<&Expression>, cfg: &MdlConfig) -> RankedResult {
    let mut scored: Vec<(RankedModel, Vec<f64>)> = frontier
        .models()
        .iter()
        .map(|m| {
            let bits = point_bits(m, heldout, cfg);
            let medl = bits.iter().sum::<f64>() / bits.len().max(1) as f64;
            (
                RankedModel {
                    model: m.clone(),
                    heldout_medl_bits: medl,
                },
                bits,
            )
        })
        .collect();
    scored.sort_by(|a, b| {
        a.0.heldout_medl_bits
            .total_cmp(&b.0.heldout_medl_bits)
            .then(a.0.model.score.complexity_bits.total_cmp(&b.0.model.score.complexity_bits))
    });
    let top = scored.first().filter(|b| b.0.heldout_medl_bits.is_finite()).map(|best| {
        let mut pick = 0;
        for (i, (m, bits)) in scored.iter().enumerate().skip(1) {
            let simpler = m.model.score.complexity_bits < scored[pick].0.model.score.complexity_bits;
            if simpler && !significantly_worse(bits, &best.1) {
                pick = i;
            }
        }
        pick
    });
    let ranked: Vec<RankedModel> = scored.into_iter().map(|s| s.0).collect();
    let (success, max_relative_error) = match (truth, top) {
        (Some(t), Some(i)) => {
            let m = &ranked[i].model.expr;
            let err = equivalence_error(m, t, heldout, EQUIVALENCE_POINTS, 0);
            let tol = if m.real_param_indices().is_empty() { EXACT_TOLERANCE } else { REAL_TOLERANCE };
            (Some(err <= tol), Some(err))
        }
        (Some(_), None) => (Some(false), None),
        _ => (None, None),
    };
    RankedResult {
        ranked,
        top,
        success,
        max_relative_error,
    }
}

/// Paired z-test of `a` against `best` on the same rows.
fn significantly_worse(a: &[f64], best: &[f64]) -> bool {
    let d: Vec<f64> = a.iter().zip(best).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return true;
    }
    let (mean, std) = mdl::mean_std(&d);
    if mean <= 0.0 {
        return false;
    }
    let se = std / (d.len() as f64).sqrt();
    se == 0.0 || mean / se > TIE_Z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::BasisSet;
    use crate::refine::scored;
    use crate::solver::testutil::table;

    fn parse(text: &str) -> Expression {
        Expression::parse_infix(text, &BasisSet::with_variables(["x"]).unwrap()).unwrap()
    }

    #[test]
    fn textual_match_succeeds() {
        let (e, t) = table("x*x+1", &["x"], &[(-1.0, 1.0)], 100);
        let f = ParetoFrontier::from_models([scored(e.clone(), &t, &MdlConfig::default(), "t")]);
        let r = rank_and_verify(&f, &t, Some(&e), &MdlConfig::default());
        assert_eq!(r.success, Some(true));
    }

    #[test]
    fn domain_equivalent_forms_succeed() {
        let (truth, t) = table("sqrt(x*x)", &["x"], &[(0.1, 2.0)], 100);
        assert!(equivalence_error(&parse("x"), &truth, &t, 10_000, 1) < 1e-12);
        assert!(equivalence_error(&parse("x+[1e-3]"), &truth, &t, 10_000, 1) > 1e-4);
    }

    #[test]
    fn close_real_constant_succeeds() {
        let (truth, t) = table("pi*x", &["x"], &[(0.5, 2.0)], 100);
        let m = parse("[3.14159260]*x");
        let err = equivalence_error(&m, &truth, &t, 10_000, 1);
        assert!(err < REAL_TOLERANCE && err > EXACT_TOLERANCE, "{err}");
        let f = ParetoFrontier::from_models([scored(m, &t, &MdlConfig::default(), "t")]);
        assert_eq!(rank_and_verify(&f, &t, Some(&truth), &MdlConfig::default()).success, Some(true));
    }

    #[test]
    fn simpler_model_wins_statistical_ties() {
        let (_, t) = table("x", &["x"], &[(0.0, 1.0)], 200);
        let noisy = t.map_y(|y| y + 1e-3 * (1e4 * y).sin()).unwrap();
        let f = ParetoFrontier::from_models([
            scored(parse("x"), &noisy, &MdlConfig::default(), "a"),
            scored(parse("x+[1e-7]*x*x"), &noisy, &MdlConfig::default(), "b"),
        ]);
        assert_eq!(f.len(), 2);
        let r = rank_and_verify(&f, &noisy, None, &MdlConfig::default());
        assert_eq!(r.top_model().unwrap().model.expr.to_infix(t.names()), "x");
        assert_eq!(r.success, None);
    }
}
