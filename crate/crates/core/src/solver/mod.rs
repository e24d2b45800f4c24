//! The recursive solver: output transforms, base fits, one greedy
//! decomposition per level, recursion on the simpler sub-mysteries and
//! assembly of their frontiers.

mod compose;
mod rank;

pub use compose::compose_decomposition;
pub use rank::{equivalence_error, rank_and_verify, RankedModel, RankedResult};

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::json;
use thiserror::Error;

use crate::brute::{self, BruteConfig, SearchData};
use crate::data::DataTable;
use crate::expr::{BasisSet, ExprError, Expression, OpCode, Param};
use crate::mdl::MdlConfig;
use crate::modularity::{self, ModularityConfig, Payload};
use crate::par::Exec;
use crate::pareto::{ParetoFrontier, ParetoModel};
use crate::refine::{self, polyfit, snap_pipeline, PolyFitConfig, RefineConfig};
use crate::surrogate::derived::{MappedOracle, OutputMap};
use crate::surrogate::{self, ExactOracle, NetSpec, OracleKind, SharedOracle, SurrogateError};

/// Fewer rows than this and only the base fits run.
pub const MIN_ROWS: usize = 20;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("need at least {MIN_ROWS} rows, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Basis(#[from] ExprError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error("exact oracle uses variable {0} but the table has {1}")]
    OracleWidth(usize, usize),
}

/// Where derivatives and off-sample values come from.
#[derive(Clone, Debug)]
pub enum OracleChoice {
    /// A known generator over the table's variables.
    Exact(Expression),
    /// A network trained on the training rows.
    Net,
}

#[derive(Clone, Debug)]
pub struct SolveConfig {
    /// Operators and literals; variables are rebound per sub-mystery.
    pub basis: BasisSet,
    pub brute: BruteConfig,
    pub modularity: ModularityConfig,
    pub poly: PolyFitConfig,
    pub refine: RefineConfig,
    pub net: NetSpec,
    pub max_depth: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Wall-clock limit for the whole run.
    pub time_budget: Duration,
    pub mdl: MdlConfig,
    pub exec: Exec,
    /// Try `−f` for negative and `ln f` for positive targets.
    pub transforms: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            basis: BasisSet::with_variables(Vec::<String>::new()).expect("default basis"),
            brute: BruteConfig::default(),
            modularity: ModularityConfig::default(),
            poly: PolyFitConfig::default(),
            refine: RefineConfig::default(),
            net: NetSpec::default(),
            max_depth: 8,
            test_fraction: 0.1,
            seed: 0,
            time_budget: Duration::from_secs(3600),
            mdl: MdlConfig::default(),
            exec: Exec::default(),
            transforms: true,
        }
    }
}

impl SolveConfig {
    /// Copies the shared settings (MDL precision, seed, executor, deadline)
    /// into every nested config.
    fn settled(&self, deadline: Instant) -> SolveConfig {
        let mut c = self.clone();
        c.brute.mdl = c.mdl;
        c.brute.exec = c.exec;
        c.brute.deadline = Some(deadline);
        c.brute.shuffle_seed = c.seed;
        c.modularity.mdl = c.mdl;
        c.modularity.exec = c.exec;
        c.modularity.seed = c.seed;
        c.modularity.brute.mdl = c.mdl;
        c.modularity.brute.exec = c.exec;
        c.modularity.brute.nu = c.brute.nu;
        c.modularity.brute.deadline = Some(deadline);
        c.poly.mdl = c.mdl;
        c.refine.mdl = c.mdl;
        c.refine.reopt.seed = c.seed;
        c
    }
}

/// One (sub-)problem: a table, the oracle seen through every change of
/// variables so far, and where it sits in the recursion.
#[derive(Clone)]
pub struct Mystery {
    pub table: DataTable,
    pub oracle: Option<SharedOracle>,
    pub depth: usize,
    /// Slash-separated route from the root, for the trace.
    pub path: String,
    /// An output transform was already applied on this branch.
    pub transformed: bool,
    /// The target is only meaningful up to an additive constant.
    pub offset_free: bool,
}

impl Mystery {
    pub fn root(table: DataTable, oracle: Option<SharedOracle>) -> Mystery {
        Mystery {
            table,
            oracle,
            depth: 0,
            path: "root".into(),
            transformed: false,
            offset_free: false,
        }
    }

    fn child(&self, table: DataTable, oracle: Option<SharedOracle>, step: &str) -> Mystery {
        Mystery {
            table,
            oracle,
            depth: self.depth + 1,
            path: format!("{}/{step}", self.path),
            transformed: self.transformed,
            offset_free: false,
        }
    }

    fn transformed(&self, table: DataTable, oracle: Option<SharedOracle>, step: &str) -> Mystery {
        Mystery {
            table,
            oracle,
            depth: self.depth,
            path: format!("{}/{step}", self.path),
            transformed: true,
            offset_free: false,
        }
    }
}

/// Everything a run produced.
pub struct FitOutcome {
    pub frontier: ParetoFrontier,
    pub ranked: RankedResult,
    pub trace: Vec<serde_json::Value>,
    /// Some search stopped on its time budget.
    pub partial: bool,
    pub elapsed: Duration,
    pub oracle: OracleKind,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Splits off the held-out rows, builds the oracle, solves and ranks.
pub fn fit(table: &DataTable, oracle: &OracleChoice, truth: Option<&Expression>, cfg: &SolveConfig) -> Result<FitOutcome, SolveError> {
    let started = Instant::now();
    if table.len() < MIN_ROWS {
        return Err(SolveError::TooFewRows(table.len()));
    }
    let (train, test) = table.split(cfg.test_fraction, cfg.seed);
    let shared: SharedOracle = match oracle {
        OracleChoice::Exact(e) => {
            if e.min_vars() > table.n_vars() {
                return Err(SolveError::OracleWidth(e.min_vars(), table.n_vars()));
            }
            Arc::new(ExactOracle::for_table(e.clone(), &train))
        }
        OracleChoice::Net => Arc::new(surrogate::train(&train, &cfg.net)?),
    };
    let kind = shared.kind();
    let solver = Solver::new(cfg, started + cfg.time_budget);
    solver.event(
        "root",
        0,
        "oracle",
        json!({ "kind": kind, "train_rows": train.len(), "test_rows": test.as_ref().map_or(0, |t| t.len()) }),
    );
    let frontier = solver.solve(&Mystery::root(train.clone(), Some(shared)));
    let held = test.as_ref().unwrap_or(&train);
    let ranked = rank_and_verify(&frontier, held, truth, &solver.cfg.mdl);
    Ok(FitOutcome {
        frontier,
        ranked,
        partial: solver.partial.load(Ordering::Relaxed),
        trace: solver.trace.into_inner().unwrap_or_default(),
        elapsed: started.elapsed(),
        oracle: kind,
        train_rows: train.len(),
        test_rows: test.map_or(0, |t| t.len()),
    })
}

/// Residual rms at most this fraction of the target rms counts as exact,
/// and further searches on that mystery are skipped.
const EXACT_FRACTION: f64 = 1e-10;
/// A 1-D fit for the additivity test must be this close (relative rms).
const FIT_1D_FRACTION: f64 = 1e-5;

pub(crate) struct Solver {
    cfg: SolveConfig,
    deadline: Instant,
    trace: Mutex<Vec<serde_json::Value>>,
    partial: AtomicBool,
}

impl Solver {
    pub(crate) fn new(cfg: &SolveConfig, deadline: Instant) -> Solver {
        Solver {
            cfg: cfg.settled(deadline),
            deadline,
            trace: Mutex::new(Vec::new()),
            partial: AtomicBool::new(false),
        }
    }

    fn expired(&self) -> bool {
        Instant::now() >= self.deadline
    }

    fn event(&self, path: &str, depth: usize, event: &str, detail: serde_json::Value) {
        log::info!("{path}: {event} {detail}");
        if let Ok(mut t) = self.trace.lock() {
            t.push(json!({ "path": path, "depth": depth, "event": event, "detail": detail }));
        }
    }

    fn rescore(&self, expr: Expression, table: &DataTable, provenance: String) -> ParetoModel {
        refine::scored(expr, table, &self.cfg.mdl, provenance)
    }

    pub(crate) fn solve(&self, m: &Mystery) -> ParetoFrontier {
        let t = &m.table;
        let cfg = &self.cfg;
        if cfg.transforms && !m.transformed && t.y().iter().all(|&y| y < 0.0) {
            self.event(&m.path, m.depth, "transform", json!({ "kind": "negate" }));
            let Ok(neg) = t.map_y(|y| -y) else { return ParetoFrontier::new() };
            let oracle = m.oracle.clone().map(|o| Arc::new(MappedOracle::new(o, OutputMap::Negate)) as SharedOracle);
            let sub = self.solve(&m.transformed(neg, oracle, "neg"));
            let out = ParetoFrontier::from_models(sub.models().iter().map(|s| {
                self.rescore(s.expr.wrap_unary(OpCode::Neg).simplified(), t, format!("neg({})", s.provenance))
            }));
            return snap_pipeline(&out, t, &cfg.refine);
        }

        let mut out = self.base(m);
        if !is_exact(&out, t) && cfg.transforms && !m.transformed && t.y().iter().all(|&y| y > 0.0) {
            if let Ok(logged) = t.map_y(f64::ln) {
                self.event(&m.path, m.depth, "transform", json!({ "kind": "log" }));
                let oracle = m.oracle.clone().map(|o| Arc::new(MappedOracle::new(o, OutputMap::Log)) as SharedOracle);
                let sub = self.solve(&m.transformed(logged, oracle, "ln"));
                out.extend(
                    sub.models()
                        .iter()
                        .map(|s| self.rescore(s.expr.wrap_unary(OpCode::Exp), t, format!("exp({})", s.provenance))),
                );
            }
        }
        if !is_exact(&out, t) && t.n_vars() > 1 && t.len() >= MIN_ROWS && m.oracle.is_some() {
            if m.depth >= cfg.max_depth {
                self.event(&m.path, m.depth, "depth_limit", json!({ "max_depth": cfg.max_depth }));
            } else if self.expired() {
                self.partial.store(true, Ordering::Relaxed);
                self.event(&m.path, m.depth, "budget_exhausted", json!({}));
            } else {
                out.merge(self.decompose(m));
            }
        }
        snap_pipeline(&out, t, &cfg.refine)
    }

    /// Polynomial fits and brute force on the raw table, plus every brute
    /// result with its literal constants refitted as reals.
    fn base(&self, m: &Mystery) -> ParetoFrontier {
        let t = &m.table;
        let mut out = ParetoFrontier::from_models(polyfit(t, &self.cfg.poly));
        let basis = self.cfg.basis.rebind(t.names().to_vec());
        let data = if m.offset_free { SearchData::offset_values(t, self.cfg.seed) } else { SearchData::values(t, self.cfg.seed) };
        let brute_result = basis.as_ref().ok().map(|b| brute::search(&data, b, &self.cfg.brute));
        let mut stats = json!(null);
        match brute_result {
            Some(Ok(r)) => {
                if r.partial {
                    self.partial.store(true, Ordering::Relaxed);
                }
                stats = json!({
                    "partial": r.partial,
                    "elapsed_secs": r.elapsed.as_secs_f64(),
                    "candidates": r.stats.candidates,
                    "mean_points_per_rejection": r.stats.mean_points_per_rejection(),
                });
                for model in r.frontier.models() {
                    if m.offset_free {
                        let _ = out.insert(self.with_offset(&model.expr, t, &model.provenance));
                    }
                    let m2 = self.rescore(model.expr.clone(), t, model.provenance.clone());
                    if let Some(real) = refine::realize(&m2, t, &self.cfg.refine) {
                        let _ = out.insert(real);
                    }
                    let _ = out.insert(m2);
                }
            }
            Some(Err(e)) => log::warn!("{}: brute force failed: {e}", m.path),
            None => log::warn!("{}: variable names do not form a basis", m.path),
        }
        self.event(
            &m.path,
            m.depth,
            "base",
            json!({
                "rows": t.len(),
                "variables": t.names(),
                "frontier_size": out.len(),
                "best": out.best().map(|b| b.expr.to_infix(t.names())),
                "best_medl_bits": out.best().map(|b| b.score.medl_bits),
                "brute": stats,
            }),
        );
        out
    }

    /// `e + c` with the mean residual as a real `c`, refitted jointly.
    fn with_offset(&self, e: &Expression, t: &DataTable, provenance: &str) -> ParetoModel {
        let r = refine::residuals(e, t);
        let c = r.iter().sum::<f64>() / r.len().max(1) as f64;
        let shifted = e.combine(&Expression::constant(Param::Real(c)), OpCode::Add);
        let m = self.rescore(shifted, t, format!("{provenance}+offset"));
        refine::reoptimize(&m, t, &self.cfg.refine)
    }

    /// A formula for a 1-D table, used by the additivity test.
    fn solve_1d(&self, t: &DataTable) -> Option<Expression> {
        let base = snap_pipeline(&self.base(&Mystery::root(t.clone(), None)), t, &self.cfg.refine);
        let scale = rms(t.y());
        base.models()
            .iter()
            .filter(|m| rms(&refine::residuals(&m.expr, t)) <= FIT_1D_FRACTION * scale)
            .min_by(|a, b| a.score.complexity_bits.total_cmp(&b.score.complexity_bits))
            .map(|m| m.expr.clone())
    }

    fn decompose(&self, m: &Mystery) -> ParetoFrontier {
        let t = &m.table;
        let Some(oracle) = m.oracle.clone() else { return ParetoFrontier::new() };
        let Ok(basis) = self.cfg.basis.rebind(t.names().to_vec()) else { return ParetoFrontier::new() };
        let solve_1d = |tt: &DataTable| self.solve_1d(tt);
        let cands = modularity::find_candidates(&*oracle, t, &basis, &self.cfg.modularity, &solve_1d);
        let chosen = modularity::greedy_select(&cands, &self.cfg.modularity);
        let names = t.names();
        let best_rejected = cands.list.iter().map(|d| d.score_bits).filter(|s| s.is_finite()).fold(f64::INFINITY, f64::min);
        let mut detail = json!({
            "null_bits": cands.null_bits,
            "candidates": cands.list.len(),
            "best_score_bits": if best_rejected.is_finite() { json!(best_rejected) } else { json!(null) },
            "symmetry": cands.symmetry.as_ref().map(|r| json!({ "subset": r.subset, "median_v": r.median_v })),
            "additivity": cands.additivity.as_ref().map(|r| json!({ "median_s": r.median_s, "inconclusive": r.inconclusive })),
        });
        let Some(d) = chosen else {
            self.event(&m.path, m.depth, "no_decomposition", detail);
            return ParetoFrontier::new();
        };
        detail["chosen"] = d.trace_event(names);
        self.event(&m.path, m.depth, "decomposition", detail);
        let subs = match self.sub_mysteries(m, &oracle, &d) {
            Some(s) => s,
            None => {
                self.event(&m.path, m.depth, "decomposition_failed", json!({}));
                return ParetoFrontier::new();
            }
        };
        let frontiers: Vec<ParetoFrontier> = subs.iter().map(|s| self.solve(s)).collect();
        compose_decomposition(&d, &frontiers, t, &self.cfg.mdl)
    }

    fn sub_mysteries(&self, m: &Mystery, oracle: &SharedOracle, d: &modularity::Decomposition) -> Option<Vec<Mystery>> {
        let t = &m.table;
        match &d.payload {
            Payload::Partition { rest, anchor } => {
                let multiplicative = d.kind == modularity::DecompositionKind::MultiplicativeSep;
                let (lo, ro) = compose::slice_oracles(oracle, anchor, &d.subset, rest, multiplicative)?;
                let lt = compose::slice_table(t, &d.subset, &*lo)?;
                let rt = compose::slice_table(t, rest, &*ro)?;
                let mut kids = vec![m.child(lt, Some(lo), "left"), m.child(rt, Some(ro), "right")];
                for k in &mut kids {
                    k.offset_free = !multiplicative;
                }
                Some(kids)
            }
            Payload::Inner(h) => {
                let name = fresh_name(t.names());
                let (sub, dropped) = t.substitute_variable(h, &d.subset, &name).ok()?;
                if dropped > 0 {
                    log::warn!("{}: {dropped} rows invalid for the new variable", m.path);
                }
                let so = surrogate::derived::SubstitutedOracle::new(oracle.clone(), h.clone(), d.subset.clone(), t, &sub);
                Some(vec![m.child(sub, Some(Arc::new(so)), &name)])
            }
            Payload::Modular(parts) => {
                let (gt, ht, ft) = compose::modular_tables(t, parts)?;
                Some(vec![
                    m.child(gt, Some(parts.g.clone() as SharedOracle), "g"),
                    m.child(ht, Some(parts.h.clone() as SharedOracle), "h"),
                    m.child(ft, Some(parts.f.clone() as SharedOracle), "F"),
                ])
            }
        }
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn is_exact(f: &ParetoFrontier, t: &DataTable) -> bool {
    let scale = rms(t.y()).max(f64::MIN_POSITIVE);
    f.best().is_some_and(|b| rms(&refine::residuals(&b.expr, t)) <= EXACT_FRACTION * scale)
}

/// `u1`, `u2`, ... skipping names already in use.
fn fresh_name(names: &[String]) -> String {
    (1..).map(|k| format!("u{k}")).find(|c| !names.contains(c)).expect("unbounded")
}

#[cfg(test)]
pub(crate) mod testutil {
    use std::time::Duration;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    pub fn table(text: &str, names: &[&str], ranges: &[(f64, f64)], rows: usize) -> (Expression, DataTable) {
        let b = BasisSet::with_variables(names.iter().copied()).unwrap();
        let e = Expression::parse_infix(text, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..rows).map(|_| {
            let x: Vec<f64> = ranges.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
            let y = e.evaluate(&x).unwrap().unwrap_or(f64::NAN);
            (x, y)
        });
        let t = DataTable::new(names.iter().map(|s| s.to_string()).collect(), data).unwrap().0;
        (e, t)
    }

    pub fn quick() -> SolveConfig {
        let mut c = SolveConfig::default();
        c.brute.time_budget = Duration::from_secs(20);
        c.brute.max_complexity_bits = 20.0;
        c.modularity.max_anchors = 200;
        c.modularity.brute.time_budget = Duration::from_secs(20);
        c.modularity.gradient_passes = vec![modularity::GradientPass { ops: None, max_bits: 14.0 }];
        c.time_budget = Duration::from_secs(300);
        c
    }
}
