//! Polynomial base-case fits and parameter refinement: zero, integer and
//! rational snaps plus reoptimization of the remaining real constants.

mod poly;
mod reopt;
mod snap;

pub use poly::{polyfit, PolyFitConfig};
pub use reopt::{least_squares, medl_gradient, reoptimize, ReoptConfig};
pub use snap::{convergents, snap, snap_plan, SnapKind, SnapPlan};

use crate::data::DataTable;
use crate::expr::{Expression, Param};
use crate::mdl::{self, MdlConfig, ModelScore, INVALID_BITS};
use crate::pareto::{ParetoFrontier, ParetoModel};

/// Settings shared by the refinement steps.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub mdl: MdlConfig,
    pub max_den: u64,
    pub reopt: ReoptConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            mdl: MdlConfig::default(),
            max_den: 100,
            reopt: ReoptConfig::default(),
        }
    }
}

/// `y − f(x)` per row; NaN where the expression is invalid.
pub fn residuals(expr: &Expression, table: &DataTable) -> Vec<f64> {
    let mut stack = Vec::new();
    table.rows().map(|(x, y)| y - expr.eval_with(x, &mut stack)).collect()
}

/// MEDL on the table; any invalid row makes the model invalid.
pub fn medl_on(expr: &Expression, table: &DataTable, cfg: &MdlConfig) -> f64 {
    if expr.min_vars() > table.n_vars() {
        return INVALID_BITS;
    }
    mdl::medl(&residuals(expr, table), cfg).unwrap_or(INVALID_BITS)
}

pub fn score_expression(expr: &Expression, table: &DataTable, cfg: &MdlConfig) -> ModelScore {
    ModelScore::new(expr.complexity_bits(cfg), medl_on(expr, table, cfg))
}

pub fn scored(expr: Expression, table: &DataTable, cfg: &MdlConfig, provenance: impl Into<String>) -> ParetoModel {
    let score = score_expression(&expr, table, cfg);
    ParetoModel::new(expr, score, provenance)
}

/// Most rounds of the whole pipeline before giving up on a fixed point.
const MAX_ROUNDS: usize = 6;

/// Reoptimize, then zero, integer and rational snaps, pruning after each
/// stage. Repeats until the frontier stops changing, so a second call is a
/// no-op.
pub fn snap_pipeline(frontier: &ParetoFrontier, table: &DataTable, cfg: &RefineConfig) -> ParetoFrontier {
    let mut cur = frontier.clone();
    for _ in 0..MAX_ROUNDS {
        let before = cur.clone();
        cur = stage(&cur, |m| vec![reoptimize(m, table, cfg)]);
        for kind in [SnapKind::Zero, SnapKind::Integer, SnapKind::Rational] {
            cur = stage(&cur, |m| snap(m, kind, table, cfg));
        }
        if cur == before {
            break;
        }
    }
    cur
}

/// Frees every integer or rational constant and refits them all as reals.
/// `None` when the model has no such constants or nothing improved.
pub fn realize(model: &ParetoModel, table: &DataTable, cfg: &RefineConfig) -> Option<ParetoModel> {
    let params = model.expr.params();
    if params.iter().all(|p| p.is_real()) {
        return None;
    }
    let freed = params.iter().map(|p| Param::Real(p.value())).collect();
    let e = model.expr.with_params(freed).ok()?;
    let start = scored(e, table, &cfg.mdl, format!("{}+real", model.provenance));
    let out = reoptimize(&start, table, cfg);
    (out.score.medl_bits < model.score.medl_bits).then_some(out)
}

fn stage(f: &ParetoFrontier, step: impl Fn(&ParetoModel) -> Vec<ParetoModel>) -> ParetoFrontier {
    let mut out = f.clone();
    for m in f.models() {
        if m.expr.real_param_indices().is_empty() {
            continue;
        }
        for new in step(m) {
            let _ = out.insert(new);
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::data::DataTable;
    use crate::expr::{BasisSet, Expression};

    pub fn table(text: &str, names: &[&str], lo: f64, hi: f64, rows: usize) -> DataTable {
        let b = BasisSet::with_variables(names.iter().copied()).unwrap();
        let e = Expression::parse_infix(text, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = (0..rows).map(|_| {
            let x: Vec<f64> = names.iter().map(|_| rng.random_range(lo..hi)).collect();
            let y = e.evaluate(&x).unwrap().unwrap();
            (x, y)
        });
        DataTable::new(names.iter().map(|s| s.to_string()).collect(), data).unwrap().0
    }

    pub fn parse(text: &str, names: &[&str]) -> Expression {
        Expression::parse_infix(text, &BasisSet::with_variables(names.iter().copied()).unwrap()).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn pipeline_snaps_near_integer_slope() {
        let t = table("x", &["x"], 0.0, 2.0, 200);
        let cfg = RefineConfig::default();
        let e = parse("[1.0000001]*x", &["x"]);
        let f = ParetoFrontier::from_models([scored(e, &t, &cfg.mdl, "test")]);
        let out = snap_pipeline(&f, &t, &cfg);
        assert!(out.models().iter().any(|m| m.expr.to_infix(t.names()) == "x"));
    }

    #[test]
    fn pipeline_leaves_exact_models_alone() {
        let t = table("x*x", &["x"], 0.0, 2.0, 100);
        let cfg = RefineConfig::default();
        let f = ParetoFrontier::from_models([scored(parse("x*x", &["x"]), &t, &cfg.mdl, "test")]);
        assert_eq!(snap_pipeline(&f, &t, &cfg), f);
    }

    #[test]
    fn realize_frees_literals() {
        let t = table("[2.1]*x", &["x"], 0.0, 2.0, 100);
        let cfg = RefineConfig::default();
        let m = scored(parse("2*x", &["x"]), &t, &cfg.mdl, "brute");
        let out = realize(&m, &t, &cfg).unwrap();
        assert!((out.expr.params()[0].value() - 2.1).abs() < 1e-9);
        let exact = scored(parse("2*x", &["x"]), &table("2*x", &["x"], 0.0, 2.0, 100), &cfg.mdl, "brute");
        assert!(realize(&exact, &table("2*x", &["x"], 0.0, 2.0, 100), &cfg).is_none());
    }

    #[test]
    fn pipeline_is_idempotent() {
        let t = table("[2.5]*x+sin([0.3]*x)", &["x"], 0.0, 3.0, 200);
        let cfg = RefineConfig::default();
        let e = parse("[2.4]*x+sin([0.31]*x)+[0.001]", &["x"]);
        let f = ParetoFrontier::from_models([scored(e, &t, &cfg.mdl, "test")]);
        let once = snap_pipeline(&f, &t, &cfg);
        let twice = snap_pipeline(&once, &t, &cfg);
        assert_eq!(once, twice);
        // Pruning never makes any complexity level worse.
        for m in f.models() {
            assert!(once.medl_at(m.score.complexity_bits).unwrap() <= m.score.medl_bits);
        }
    }
}
