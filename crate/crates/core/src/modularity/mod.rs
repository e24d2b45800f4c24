//! Decomposition tests on a function oracle and the unified comparison
//! that picks one decomposition to apply.
//!
//! Every candidate is scored the same way: draw points on a common anchor
//! sample, predict f somewhere else from the claimed structure, and charge
//! the MEDL of the prediction errors.

mod additivity;
pub mod integrate;
mod separability;
mod symmetry;

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use additivity::{gen_additivity_test, s_score, AdditivityReport};
pub use integrate::symbolic_integrate;
pub use separability::{separability_test, simple_symmetry_test, SepMode};
pub use symmetry::{compositionality_search, gen_symmetry_score, gradient_search, select_symmetry_subset, SymmetryReport};

use crate::brute::BruteConfig;
use crate::data::DataTable;
use crate::expr::{BasisSet, Expression, OpCode};
use crate::mdl::{self, MdlConfig, INVALID_BITS};
use crate::par::Exec;
use crate::surrogate::{FunctionOracle, ModularAdditive, NetSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum SymOp {
    #[serde(rename = "+")]
    Add,
    #[serde(rename = "-")]
    Sub,
    #[serde(rename = "*")]
    Mul,
    #[serde(rename = "/")]
    Div,
}

impl SymOp {
    pub const ALL: [SymOp; 4] = [SymOp::Add, SymOp::Sub, SymOp::Mul, SymOp::Div];

    pub fn opcode(self) -> OpCode {
        match self {
            SymOp::Add => OpCode::Add,
            SymOp::Sub => OpCode::Sub,
            SymOp::Mul => OpCode::Mul,
            SymOp::Div => OpCode::Div,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "op")]
pub enum DecompositionKind {
    AdditiveSep,
    MultiplicativeSep,
    SimpleSymmetry(SymOp),
    GeneralizedSymmetry,
    GeneralizedAdditivity,
    Compositionality,
}

impl DecompositionKind {
    /// Position in the tie-break order.
    pub fn rank(self) -> u8 {
        match self {
            DecompositionKind::AdditiveSep => 0,
            DecompositionKind::MultiplicativeSep => 1,
            DecompositionKind::SimpleSymmetry(_) => 2,
            DecompositionKind::GeneralizedSymmetry => 3,
            DecompositionKind::GeneralizedAdditivity => 4,
            DecompositionKind::Compositionality => 5,
        }
    }
}

#[derive(Clone)]
pub enum Payload {
    /// `f = g(x_subset) ⊕ h(x_rest)`; `anchor` is the parent point that
    /// fixes the other side when slicing out each factor.
    Partition { rest: Vec<usize>, anchor: Vec<f64> },
    /// `f = G(u, x_rest)` with `u = inner(x_subset)`, written over the
    /// parent's variables.
    Inner(Expression),
    /// `f = F(g(x₁) + h(x₂))` as three trained 1-D parts.
    Modular(Arc<ModularAdditive>),
}

impl std::fmt::Debug for Payload {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Payload::Partition { rest, anchor } => f.debug_struct("Partition").field("rest", rest).field("anchor", anchor).finish(),
            Payload::Inner(e) => f.debug_tuple("Inner").field(&e.to_rpn(&[])).finish(),
            Payload::Modular(m) => f.debug_struct("Modular").field("validation_rmse", &m.validation_rmse).finish(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub kind: DecompositionKind,
    pub subset: Vec<usize>,
    pub score_bits: f64,
    pub payload: Payload,
}

impl Decomposition {
    /// One JSON object for the run trace.
    pub fn trace_event(&self, names: &[String]) -> serde_json::Value {
        let payload = match &self.payload {
            Payload::Partition { rest, .. } => serde_json::json!({ "rest": rest }),
            Payload::Inner(e) => serde_json::json!({ "inner": e.to_infix(names) }),
            Payload::Modular(m) => serde_json::json!({ "modular_rmse": m.validation_rmse }),
        };
        serde_json::json!({
            "kind": self.kind,
            "subset": self.subset.iter().map(|&j| names.get(j).cloned().unwrap_or_default()).collect::<Vec<_>>(),
            "score_bits": finite_or_null(self.score_bits),
            "payload": payload,
        })
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// One brute-force pass of the inner-function search: an operator subset
/// (`None` keeps the full basis) and a complexity cap.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPass {
    pub ops: Option<Vec<OpCode>>,
    pub max_bits: f64,
}

impl GradientPass {
    /// The full basis at a low cap, then arithmetic only at a high one.
    pub fn defaults() -> Vec<GradientPass> {
        let arith = "+-*/~IRS1".chars().filter_map(OpCode::from_symbol).collect();
        vec![
            GradientPass { ops: None, max_bits: 16.0 },
            GradientPass {
                ops: Some(arith),
                max_bits: 24.0,
            },
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ModularityConfig {
    /// Largest subset tried by the symmetry screen.
    pub n_g: usize,
    /// Companions per anchor in the V statistic.
    pub neighbors: usize,
    pub max_anchors: usize,
    /// Median S below this counts as evidence of generalized additivity.
    pub additivity_threshold: f64,
    /// Median V above this skips the inner-function search for a subset.
    pub symmetry_v_max: f64,
    /// A candidate must score this many bits below the null score.
    pub sanity_margin_bits: f64,
    /// Scores closer than this are ties.
    pub tie_bits: f64,
    pub seed: u64,
    pub exec: Exec,
    pub mdl: MdlConfig,
    /// Budget and cap for inner-function searches.
    pub brute: BruteConfig,
    pub gradient_passes: Vec<GradientPass>,
    pub modular_net: NetSpec,
}

impl Default for ModularityConfig {
    fn default() -> Self {
        ModularityConfig {
            n_g: 3,
            neighbors: 20,
            max_anchors: 500,
            additivity_threshold: 0.1,
            symmetry_v_max: 0.1,
            sanity_margin_bits: 100f64.log2(),
            tie_bits: 1e-6,
            seed: 0,
            exec: Exec::default(),
            mdl: MdlConfig::default(),
            brute: BruteConfig::default(),
            gradient_passes: GradientPass::defaults(),
            modular_net: NetSpec {
                layer_widths: vec![32, 32],
                epochs: 3000,
                learning_rate: 3e-3,
                lr_halving_patience: 100,
                ..NetSpec::default()
            },
        }
    }
}

impl ModularityConfig {
    fn expired(&self) -> bool {
        self.brute.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// Fits a 1-D table and returns a formula when the fit is good enough.
pub type Solve1d<'a> = &'a (dyn Fn(&DataTable) -> Option<Expression> + Sync);

/// The common anchor sample every candidate is scored on.
pub struct Sample<'a> {
    pub oracle: &'a dyn FunctionOracle,
    pub table: &'a DataTable,
    pub anchors: Vec<usize>,
    /// Oracle values at the anchors.
    pub f0: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    pub stds: Vec<f64>,
    pub mdl: MdlConfig,
    pub seed: u64,
}

impl<'a> Sample<'a> {
    pub fn new(oracle: &'a dyn FunctionOracle, table: &'a DataTable, cfg: &ModularityConfig) -> Sample<'a> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa11c_0de5);
        let k = cfg.max_anchors.min(table.len());
        let anchors = sample(&mut rng, table.len(), k).into_vec();
        let pts: Vec<f64> = anchors.iter().flat_map(|&i| table.row(i).iter().copied()).collect();
        let f0 = oracle.values(&pts);
        Sample {
            oracle,
            table,
            anchors,
            f0,
            bounds: table.bounds(),
            stds: table.column_std(),
            mdl: cfg.mdl,
            seed: cfg.seed,
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.table.row(self.anchors[k])
    }

    /// Index of the anchor paired with anchor `k`.
    pub fn partner(&self, k: usize) -> usize {
        (k + 1) % self.len()
    }

    pub fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn inside(&self, j: usize, v: f64) -> bool {
        v >= self.bounds[j].0 && v <= self.bounds[j].1
    }

    /// MEDL of the finite errors; too few of them scores as invalid.
    pub fn score(&self, eps: &[f64]) -> f64 {
        let ok: Vec<f64> = eps.iter().copied().filter(|e| e.is_finite()).collect();
        if ok.len() < (self.len() / 4).max(2) {
            return INVALID_BITS;
        }
        mdl::medl(&ok, &self.mdl).unwrap_or(INVALID_BITS)
    }

    /// Score of predicting f at one anchor by its value at another.
    pub fn null_bits(&self) -> f64 {
        let eps: Vec<f64> = (0..self.len()).map(|k| self.f0[self.partner(k)] - self.f0[k]).collect();
        self.score(&eps)
    }
}

/// Everything the candidate stage produced, for selection and the trace.
#[derive(Debug)]
pub struct Candidates {
    pub list: Vec<Decomposition>,
    pub null_bits: f64,
    pub symmetry: Option<SymmetryReport>,
    pub additivity: Option<AdditivityReport>,
}

impl Candidates {
    fn settled(&self, tie_bits: f64) -> bool {
        self.list.iter().any(|d| d.score_bits <= tie_bits)
    }
}

/// Runs every applicable test. Cheap tests run first; once one scores
/// zero, later kinds could at best tie and lose the tie-break, so the
/// expensive searches are skipped.
pub fn find_candidates(
    oracle: &dyn FunctionOracle,
    table: &DataTable,
    basis: &BasisSet,
    cfg: &ModularityConfig,
    solve_1d: Solve1d,
) -> Candidates {
    let n = table.n_vars();
    let s = Sample::new(oracle, table, cfg);
    let mut out = Candidates {
        list: Vec::new(),
        null_bits: s.null_bits(),
        symmetry: None,
        additivity: None,
    };
    if n < 2 || s.len() < 4 {
        return out;
    }
    for left in separability::partitions(n) {
        for mode in [SepMode::Additive, SepMode::Multiplicative] {
            out.list.push(separability::score_partition(&s, &left, mode));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            for op in SymOp::ALL {
                out.list.push(separability::score_symmetry(&s, i, j, op));
            }
        }
    }
    if out.settled(cfg.tie_bits) || cfg.expired() {
        return out;
    }

    let report = symmetry::select_subset(&s, cfg);
    let full_subset = report.subset.len() == n;
    if report.median_v <= cfg.symmetry_v_max || n == 2 {
        let kind = DecompositionKind::GeneralizedSymmetry;
        out.list.extend(symmetry::inner_candidate(&s, &report.subset, kind, basis, cfg));
    }
    out.symmetry = Some(report);
    if out.settled(cfg.tie_bits) || cfg.expired() {
        return out;
    }

    if n == 2 {
        let (report, found) = additivity::run(&s, cfg, solve_1d);
        out.additivity = Some(report);
        out.list.extend(found);
        if out.settled(cfg.tie_bits) || cfg.expired() {
            return out;
        }
    }

    // On two variables the full-subset symmetry search already was this.
    if !full_subset {
        let all: Vec<usize> = (0..n).collect();
        out.list.extend(symmetry::inner_candidate(&s, &all, DecompositionKind::Compositionality, basis, cfg));
    }
    out
}

/// Lowest score wins among candidates clearing the sanity bound; ties go
/// to the earlier kind, then the smaller subset.
pub fn greedy_select(cands: &Candidates, cfg: &ModularityConfig) -> Option<Decomposition> {
    let bound = cands.null_bits - cfg.sanity_margin_bits;
    let mut best: Option<&Decomposition> = None;
    for d in cands.list.iter().filter(|d| d.score_bits.is_finite() && d.score_bits <= bound) {
        best = match best {
            None => Some(d),
            Some(b) if d.score_bits < b.score_bits - cfg.tie_bits => Some(d),
            Some(b) if d.score_bits <= b.score_bits + cfg.tie_bits && tie_key(d) < tie_key(b) => Some(d),
            keep => keep,
        };
    }
    best.cloned()
}

fn tie_key(d: &Decomposition) -> (u8, usize, &[usize]) {
    (d.kind.rank(), d.subset.len(), &d.subset)
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    fn no_1d(_: &DataTable) -> Option<Expression> {
        None
    }

    fn pick(text: &str, names: &[&str]) -> Option<Decomposition> {
        let (o, t) = exact(text, names, 1.0, 3.0, 400);
        let cfg = quick_cfg();
        let basis = BasisSet::with_variables(names.iter().copied()).unwrap();
        let c = find_candidates(&o, &t, &basis, &cfg, &no_1d);
        greedy_select(&c, &cfg)
    }

    #[test]
    fn product_picks_multiplicative_separability() {
        let d = pick("sin(x)*exp(y)", &["x", "y"]).unwrap();
        assert_eq!(d.kind, DecompositionKind::MultiplicativeSep);
        assert!(d.score_bits < 1e-3);
    }

    #[test]
    fn sum_of_three_ties_resolve_to_additive() {
        let d = pick("x+y*z", &["x", "y", "z"]).unwrap();
        assert_eq!(d.kind, DecompositionKind::AdditiveSep);
        assert_eq!(d.subset, vec![0]);
    }

    #[test]
    fn shared_difference_picks_simple_symmetry() {
        let d = pick("exp(x-y)+sin(x-y)", &["x", "y"]).unwrap();
        assert_eq!(d.kind, DecompositionKind::SimpleSymmetry(SymOp::Sub));
    }

    #[test]
    fn tie_break_follows_kind_order() {
        let mk = |kind, score| Decomposition {
            kind,
            subset: vec![0, 1],
            score_bits: score,
            payload: Payload::Inner(Expression::var(0)),
        };
        let cands = Candidates {
            list: vec![
                mk(DecompositionKind::Compositionality, 0.0),
                mk(DecompositionKind::GeneralizedSymmetry, 0.0),
                mk(DecompositionKind::SimpleSymmetry(SymOp::Mul), 0.5),
            ],
            null_bits: 30.0,
            symmetry: None,
            additivity: None,
        };
        let cfg = ModularityConfig::default();
        assert_eq!(greedy_select(&cands, &cfg).unwrap().kind, DecompositionKind::GeneralizedSymmetry);
    }

    #[test]
    fn unstructured_function_has_no_decomposition() {
        // Nothing clears the sanity bound when every score is near the null.
        let cands = Candidates {
            list: vec![Decomposition {
                kind: DecompositionKind::AdditiveSep,
                subset: vec![0],
                score_bits: 28.0,
                payload: Payload::Inner(Expression::var(0)),
            }],
            null_bits: 30.0,
            symmetry: None,
            additivity: None,
        };
        assert!(greedy_select(&cands, &ModularityConfig::default()).is_none());
    }
}
