//! Brute-force search over expressions in order of increasing complexity,
//! with each candidate raced against the current record holder.

mod dfs;
mod groups;
mod race;

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use race::{gradient_loss, race, value_loss, RaceOutcome, RaceState, SIGMA_FLOOR};

use crate::data::DataTable;
use crate::expr::{BasisSet, Expression, Token};
use crate::mdl::{self, MdlConfig, ModelScore};
use crate::par::Exec;
use crate::pareto::{ParetoFrontier, ParetoModel};
use dfs::{Lane, Probe, Sink, Step, Walk, LANES};
use groups::{Alphabet, Group};
use race::Program;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BruteError {
    #[error("no data points to search against")]
    Empty,
    #[error("basis has {basis} variables but the data has {data}")]
    Dimension { basis: usize, data: usize },
    #[error("time budget must be positive")]
    Budget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    /// Fit target values.
    Values,
    /// Fit target gradient directions, up to sign.
    NormalizedGradients,
    /// Fit target values up to an additive constant: differences to the
    /// first (shuffled) point are compared.
    ValuesUpToOffset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteConfig {
    pub max_complexity_bits: f64,
    pub time_budget: Duration,
    pub shuffle_seed: u64,
    pub nu: f64,
    /// Most literal constants (from the basis) in one candidate.
    pub max_literals: usize,
    /// Most counted tokens in one candidate. Only matters for programs with
    /// a single distinct symbol, which cost zero structural bits.
    pub max_tokens: usize,
    /// Skip programs whose value provably equals an earlier or simpler one.
    pub prune_redundant: bool,
    pub exec: Exec,
    /// Shared wall-clock limit, on top of `time_budget`.
    pub deadline: Option<Instant>,
    pub mdl: MdlConfig,
}

impl Default for BruteConfig {
    fn default() -> Self {
        BruteConfig {
            max_complexity_bits: 24.0,
            time_budget: Duration::from_secs(60),
            shuffle_seed: 0,
            nu: 10.0,
            max_literals: 2,
            max_tokens: 24,
            prune_redundant: true,
            exec: Exec::default(),
            deadline: None,
            mdl: MdlConfig::default(),
        }
    }
}

/// Targets in a fixed shuffled order.
#[derive(Clone, Debug)]
pub struct SearchData {
    mode: SearchMode,
    nv: usize,
    x: Vec<f64>,
    /// Values, or unit gradients with `nv` entries per point.
    target: Vec<f64>,
}

impl SearchData {
    pub fn values(table: &DataTable, seed: u64) -> SearchData {
        let order = shuffled(table.len(), seed);
        SearchData {
            mode: SearchMode::Values,
            nv: table.n_vars(),
            x: order.iter().flat_map(|&i| table.row(i).iter().copied()).collect(),
            target: order.iter().map(|&i| table.y()[i]).collect(),
        }
    }

    /// Like [`SearchData::values`], for targets known only up to a constant.
    pub fn offset_values(table: &DataTable, seed: u64) -> SearchData {
        SearchData {
            mode: SearchMode::ValuesUpToOffset,
            ..SearchData::values(table, seed)
        }
    }

    /// `unit_grads` holds one direction per table row, `n_vars` entries each.
    /// Rows whose direction is not finite are left out.
    pub fn gradients(table: &DataTable, unit_grads: &[f64], seed: u64) -> SearchData {
        let nv = table.n_vars();
        assert_eq!(unit_grads.len(), table.len() * nv, "one direction per row");
        let order: Vec<usize> = shuffled(table.len(), seed)
            .into_iter()
            .filter(|&i| unit_grads[i * nv..(i + 1) * nv].iter().all(|g| g.is_finite()))
            .collect();
        SearchData {
            mode: SearchMode::NormalizedGradients,
            nv,
            x: order.iter().flat_map(|&i| table.row(i).iter().copied()).collect(),
            target: order
                .iter()
                .flat_map(|&i| unit_grads[i * nv..(i + 1) * nv].iter().copied())
                .collect(),
        }
    }

    pub fn mode(&self) -> SearchMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        match self.mode {
            SearchMode::Values | SearchMode::ValuesUpToOffset => self.target.len(),
            SearchMode::NormalizedGradients => self.target.len() / self.nv.max(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.nv..(i + 1) * self.nv]
    }

    fn probe(&self) -> Probe {
        let n = self.len();
        let vars = (0..self.nv)
            .map(|j| {
                let mut lane: Lane = [0.0; LANES];
                for (p, v) in lane.iter_mut().enumerate() {
                    // Short tables repeat their first row.
                    *v = self.row(if p < n { p } else { 0 })[j];
                }
                lane
            })
            .collect();
        Probe {
            vars,
            grads: self.mode == SearchMode::NormalizedGradients,
        }
    }

    /// Per-point loss of an arbitrary expression, for scoring outside the
    /// race.
    pub fn losses(&self, expr: &Expression, mdl: &MdlConfig) -> Vec<f64> {
        let mut prog = Program::new(expr.tokens().iter().copied(), expr.params());
        let mut grad = vec![0.0; self.nv];
        (0..self.len())
            .map(|i| self.point_loss(&mut prog, i, &mut grad, mdl))
            .collect()
    }

    fn point_loss(&self, prog: &mut Program, i: usize, grad: &mut [f64], mdl: &MdlConfig) -> f64 {
        match self.mode {
            SearchMode::Values => value_loss(self.target[i], prog.value(self.row(i)), mdl),
            SearchMode::ValuesUpToOffset => {
                let v0 = prog.value(self.row(0));
                value_loss(self.target[i] - self.target[0], prog.value(self.row(i)) - v0, mdl)
            }
            SearchMode::NormalizedGradients => {
                if prog.value_grad(self.row(i), grad).is_nan() {
                    return mdl::INVALID_BITS;
                }
                gradient_loss(&self.target[i * self.nv..(i + 1) * self.nv], grad, mdl)
            }
        }
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub groups: u64,
    /// Variable-free groups skipped because no constant can beat the record.
    pub skipped_groups: u64,
    /// Complete programs raced.
    pub candidates: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Points evaluated over all rejected candidates.
    pub rejected_points: u64,
    /// Subtrees skipped as invalid at a probe point or redundant.
    pub pruned: u64,
}

impl SearchStats {
    pub fn mean_points_per_rejection(&self) -> f64 {
        if self.rejected == 0 {
            0.0
        } else {
            self.rejected_points as f64 / self.rejected as f64
        }
    }

    fn add(&mut self, o: &SearchStats) {
        self.groups += o.groups;
        self.skipped_groups += o.skipped_groups;
        self.candidates += o.candidates;
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.rejected_points += o.rejected_points;
        self.pruned += o.pruned;
    }
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub frontier: ParetoFrontier,
    /// The time budget ran out before every group was visited.
    pub partial: bool,
    pub stats: SearchStats,
    /// Record holders in acceptance order, with their mean loss.
    pub records: Vec<(Expression, f64)>,
    /// Mean loss of the starting record.
    pub initial_medl: f64,
    pub elapsed: Duration,
}

struct Accepted {
    tokens: Vec<Token>,
    medl: f64,
}

struct GroupRun {
    accepted: Vec<Accepted>,
    stats: SearchStats,
    state: RaceState,
    timed_out: bool,
}

impl GroupRun {
    fn skipped(state: RaceState) -> GroupRun {
        GroupRun {
            accepted: Vec::new(),
            stats: SearchStats {
                skipped_groups: 1,
                ..SearchStats::default()
            },
            state,
            timed_out: false,
        }
    }
}

struct RaceSink<'a> {
    data: &'a SearchData,
    alpha: &'a Alphabet,
    mdl: &'a MdlConfig,
    state: RaceState,
    deadline: Instant,
    accepted: Vec<Accepted>,
    stats: SearchStats,
    timed_out: bool,
    grad: Vec<f64>,
    prog: Program,
}

impl Sink for RaceSink<'_> {
    fn leaf(&mut self, walk: &Walk) -> Step {
        self.stats.candidates += 1;
        let data = self.data;
        let mdl = self.mdl;
        let derivs = walk.root_derivs();
        let mut loaded = false;
        let prog = &mut self.prog;
        let literals = &self.alpha.literals;
        let grad = &mut self.grad;
        let lanes = LANES.min(data.len());
        let v0 = walk.root_value(0);
        let outcome = race(data.len(), &self.state, |i| {
            if i < lanes {
                match data.mode {
                    SearchMode::Values => value_loss(data.target[i], walk.root_value(i), mdl),
                    SearchMode::ValuesUpToOffset => {
                        value_loss(data.target[i] - data.target[0], walk.root_value(i) - v0, mdl)
                    }
                    SearchMode::NormalizedGradients => {
                        for (q, g) in grad.iter_mut().enumerate() {
                            *g = derivs[q][i];
                        }
                        gradient_loss(&data.target[i * data.nv..(i + 1) * data.nv], grad, mdl)
                    }
                }
            } else {
                if !loaded {
                    prog.load(walk.tokens(), literals);
                    loaded = true;
                }
                if data.mode == SearchMode::ValuesUpToOffset {
                    return value_loss(data.target[i] - data.target[0], prog.value(data.row(i)) - v0, mdl);
                }
                data.point_loss(prog, i, grad, mdl)
            }
        });
        match outcome {
            RaceOutcome::Accepted { medl, sigma } => {
                self.stats.accepted += 1;
                self.state.record_medl = medl;
                self.state.record_sigma = sigma;
                self.accepted.push(Accepted {
                    tokens: walk.tokens().collect(),
                    medl,
                });
            }
            RaceOutcome::Rejected { m_used } => {
                self.stats.rejected += 1;
                self.stats.rejected_points += m_used as u64;
            }
        }
        if self.stats.candidates & 0xFFF == 0 {
            return self.tick();
        }
        Step::Continue
    }

    fn tick(&mut self) -> Step {
        if Instant::now() >= self.deadline {
            self.timed_out = true;
            Step::Stop
        } else {
            Step::Continue
        }
    }
}

struct Searcher<'a> {
    data: &'a SearchData,
    alpha: Alphabet,
    probe: Probe,
    cfg: &'a BruteConfig,
    deadline: Instant,
}

impl Searcher<'_> {
    fn run_group(&self, group: &Group, state: RaceState) -> GroupRun {
        let mut sink = RaceSink {
            data: self.data,
            alpha: &self.alpha,
            mdl: &self.cfg.mdl,
            state,
            deadline: self.deadline,
            accepted: Vec::new(),
            stats: SearchStats {
                groups: 1,
                ..SearchStats::default()
            },
            timed_out: false,
            grad: vec![0.0; self.data.nv],
            prog: Program::new(std::iter::empty(), &[]),
        };
        let mut walk = Walk::new(&self.alpha, group, Some(&self.probe), self.cfg.prune_redundant);
        walk.run(&mut sink);
        sink.stats.pruned += walk.pruned;
        GroupRun {
            accepted: sink.accepted,
            stats: sink.stats,
            state: sink.state,
            timed_out: sink.timed_out,
        }
    }
}

/// Certifies that no constant prediction has mean loss below `record` on
/// the (sorted) targets, by branch and bound over the constant's value.
/// Gives up, returning false, when the certificate gets expensive.
fn constants_cannot_win(sorted: &[f64], record: f64, mdl: &MdlConfig) -> bool {
    let goal = record * sorted.len() as f64;
    if !goal.is_finite() || sorted.is_empty() {
        return false;
    }
    let margin = goal.abs() * 1e-12 + 1e-9;
    let total = |c: f64| sorted.iter().map(|&y| mdl::dl_real(y - c, mdl)).sum::<f64>();
    // Every constant in [a, b] is at least as far from each target as the
    // interval is.
    let lower = |a: f64, b: f64| {
        let lo = sorted.partition_point(|&y| y < a);
        let hi = sorted.partition_point(|&y| y <= b);
        sorted[..lo].iter().map(|&y| mdl::dl_real(a - y, mdl)).sum::<f64>()
            + sorted[hi..].iter().map(|&y| mdl::dl_real(y - b, mdl)).sum::<f64>()
    };
    // Moving a constant outside the target range only increases every residual.
    let mut stack = vec![(sorted[0], sorted[sorted.len() - 1])];
    let mut budget = 4000;
    while let Some((a, b)) = stack.pop() {
        budget -= 1;
        if budget == 0 {
            return false;
        }
        if lower(a, b) >= goal + margin {
            continue;
        }
        let c = 0.5 * (a + b);
        if total(c) < goal + margin || b - a < mdl.epsilon {
            return false;
        }
        stack.push((c, b));
        stack.push((a, c));
    }
    true
}

/// Decides whether groups without variables can be skipped outright.
struct ConstantGate {
    sorted: Vec<f64>,
    mode: SearchMode,
    /// Largest record value for which the certificate holds.
    certified: f64,
    failed: f64,
}

impl ConstantGate {
    fn new(data: &SearchData) -> Self {
        let mut sorted = if data.mode == SearchMode::Values {
            data.target.clone()
        } else {
            Vec::new()
        };
        sorted.sort_by(f64::total_cmp);
        ConstantGate {
            sorted,
            mode: data.mode,
            certified: f64::NEG_INFINITY,
            failed: f64::NAN,
        }
    }

    fn skip(&mut self, record: f64, mdl: &MdlConfig) -> bool {
        match self.mode {
            // A constant has no gradient direction.
            SearchMode::NormalizedGradients => return true,
            // Every constant predicts zero differences, which is the
            // starting record.
            SearchMode::ValuesUpToOffset => return true,
            SearchMode::Values => {}
        }
        if record <= self.certified {
            return true;
        }
        if record == self.failed {
            return false;
        }
        if constants_cannot_win(&self.sorted, record, mdl) {
            self.certified = record;
            true
        } else {
            self.failed = record;
            false
        }
    }
}

/// Largest number of groups raced speculatively at once.
const MAX_BATCH: usize = 256;

/// Searches all expressions up to the complexity bound.
///
/// Groups are raced in speculative batches when running in parallel. A
/// batch commits up to and including its first group that changed the
/// record; later groups in the batch started from a stale record and are
/// run again. The result is therefore identical to the sequential run.
pub fn search(data: &SearchData, basis: &BasisSet, cfg: &BruteConfig) -> Result<SearchResult, BruteError> {
    if data.is_empty() {
        return Err(BruteError::Empty);
    }
    if basis.n_vars() != data.nv {
        return Err(BruteError::Dimension {
            basis: basis.n_vars(),
            data: data.nv,
        });
    }
    if cfg.time_budget.is_zero() {
        return Err(BruteError::Budget);
    }
    let started = Instant::now();
    let mut deadline = started + cfg.time_budget;
    if let Some(d) = cfg.deadline {
        deadline = deadline.min(d);
    }
    let alpha = Alphabet::new(basis, cfg.max_literals, &cfg.mdl);
    let groups = groups::groups(&alpha, cfg.max_complexity_bits, cfg.max_tokens);
    let searcher = Searcher {
        data,
        probe: data.probe(),
        alpha,
        cfg,
        deadline,
    };

    let mut state = match data.mode {
        SearchMode::Values => {
            let mean = data.target.iter().sum::<f64>() / data.len() as f64;
            let losses: Vec<f64> = data.target.iter().map(|&y| value_loss(y, mean, &cfg.mdl)).collect();
            let (m, s) = mdl::mean_std(&losses);
            RaceState::new(m, s, cfg.nu)
        }
        SearchMode::ValuesUpToOffset => {
            let t0 = data.target[0];
            let losses: Vec<f64> = data.target.iter().map(|&y| value_loss(y - t0, 0.0, &cfg.mdl)).collect();
            let (m, s) = mdl::mean_std(&losses);
            RaceState::new(m, s, cfg.nu)
        }
        SearchMode::NormalizedGradients => RaceState::new(f64::INFINITY, 0.0, cfg.nu),
    };
    let initial_medl = state.record_medl;
    let var_mask = (1u64 << data.nv) - 1;
    let mut gate = ConstantGate::new(data);
    let mut stats = SearchStats::default();
    let mut accepted = Vec::new();
    let mut partial = false;
    let parallel = cfg.exec.workers() > 1 || cfg.exec == Exec::Parallel;
    let mut batch = 1;
    let mut next = 0;
    'outer: while next < groups.len() {
        if Instant::now() >= deadline {
            partial = true;
            break;
        }
        let end = (next + batch).min(groups.len());
        let skip: Vec<bool> = groups[next..end]
            .iter()
            .map(|g| g.mask & var_mask == 0 && gate.skip(state.record_medl, &cfg.mdl))
            .collect();
        let runs = cfg.exec.map_range(end - next, |j| {
            if skip[j] {
                GroupRun::skipped(state)
            } else {
                searcher.run_group(&groups[next + j], state)
            }
        });
        let mut advanced = end;
        for (j, run) in runs.into_iter().enumerate() {
            stats.add(&run.stats);
            let changed = !run.accepted.is_empty();
            accepted.extend(run.accepted);
            state = run.state;
            if run.timed_out {
                partial = true;
                break 'outer;
            }
            if changed {
                advanced = next + j + 1;
                break;
            }
        }
        batch = if advanced < end || !parallel { 1 } else { (batch * 2).min(MAX_BATCH) };
        next = advanced;
    }

    let mut frontier = ParetoFrontier::new();
    let mut records = Vec::new();
    let provenance = match data.mode {
        SearchMode::Values => "brute",
        SearchMode::NormalizedGradients => "brute:gradient",
        SearchMode::ValuesUpToOffset => "brute:offset",
    };
    for a in accepted {
        let expr = Expression::from_unordered(a.tokens, &searcher.alpha.literals)
            .expect("enumerated programs are valid");
        let score = ModelScore::new(expr.complexity_bits(&cfg.mdl), a.medl);
        let _ = frontier.insert(ParetoModel::new(expr.clone(), score, provenance));
        records.push((expr, a.medl));
    }
    Ok(SearchResult {
        frontier,
        partial,
        stats,
        records,
        initial_medl,
        elapsed: started.elapsed(),
    })
}

struct Lister<F> {
    alpha_literals: Vec<crate::expr::Param>,
    f: F,
}

impl<F: FnMut(Expression) -> bool> Sink for Lister<F> {
    fn leaf(&mut self, walk: &Walk) -> Step {
        let e = Expression::from_unordered(walk.tokens().collect(), &self.alpha_literals)
            .expect("enumerated programs are valid");
        if (self.f)(e) {
            Step::Continue
        } else {
            Step::Stop
        }
    }
    fn tick(&mut self) -> Step {
        Step::Continue
    }
}

/// Visits every valid expression over the basis with complexity at most
/// `max_bits` (using up to `max_literals` basis literals), in nondecreasing
/// complexity. Stops early when `f` returns false.
pub fn for_each_expression(
    basis: &BasisSet,
    max_bits: f64,
    max_literals: usize,
    mdl: &MdlConfig,
    f: impl FnMut(Expression) -> bool,
) {
    let alpha = Alphabet::new(basis, max_literals, mdl);
    let mut lister = Lister {
        alpha_literals: alpha.literals.clone(),
        f,
    };
    for g in groups::groups(&alpha, max_bits, BruteConfig::default().max_tokens) {
        if Walk::new(&alpha, &g, None, false).run(&mut lister) == Step::Stop {
            return;
        }
    }
}

/// Collects [`for_each_expression`] output, at most `limit` items.
pub fn enumerate(basis: &BasisSet, max_bits: f64, limit: usize) -> Vec<Expression> {
    let mut out = Vec::new();
    for_each_expression(basis, max_bits, 2, &MdlConfig::default(), |e| {
        out.push(e);
        out.len() < limit
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::OpCode;

    fn table(f: impl Fn(f64) -> f64, n: usize) -> DataTable {
        let rows = (0..n).map(|i| {
            let x = -2.0 + 4.0 * (i as f64 + 0.5) / n as f64;
            (vec![x], f(x))
        });
        DataTable::new(vec!["x".into()], rows).unwrap().0
    }

    #[test]
    fn enumeration_examples() {
        let b = BasisSet::new(vec![], vec!["x".into()], vec![]).unwrap();
        let e = enumerate(&b, 1.0, 100);
        assert_eq!(e.len(), 1);
        let b = BasisSet::new(vec![OpCode::Cos], vec!["x".into()], vec![]).unwrap();
        let names = b.variables().to_vec();
        let rpn: Vec<String> = enumerate(&b, 3.0, 100).iter().map(|e| e.to_rpn(&names)).collect();
        assert_eq!(rpn, vec!["x", "x C", "x C C"]);
    }

    #[test]
    fn finds_identity() {
        let t = table(|x| x, 200);
        let b = BasisSet::new(vec![OpCode::Add, OpCode::Mul], vec!["x".into()], vec![]).unwrap();
        let r = search(&SearchData::values(&t, 1), &b, &BruteConfig::default()).unwrap();
        let best = r.frontier.best().unwrap();
        assert_eq!(best.expr.to_rpn(b.variables()), "x");
        assert_eq!(best.score.medl_bits, 0.0);
        assert!(!r.partial);
    }

    #[test]
    fn offset_mode_ignores_constant_shift() {
        let t = table(|x| x.sin() - 0.37123, 200);
        let b = BasisSet::new(vec![OpCode::Sin], vec!["x".into()], vec![]).unwrap();
        let r = search(&SearchData::offset_values(&t, 1), &b, &BruteConfig::default()).unwrap();
        let best = r.frontier.models().iter().find(|m| m.provenance == "brute:offset" && m.score.medl_bits < 1e-9);
        assert_eq!(best.unwrap().expr.to_rpn(b.variables()), "x N");
        let plain = search(&SearchData::values(&t, 1), &b, &BruteConfig::default()).unwrap();
        assert!(plain.frontier.best().unwrap().score.medl_bits > 1.0);
    }

    #[test]
    fn gradient_mode_finds_direction() {
        // f = sin(x^2 + y^2): gradient direction is that of x^2 + y^2.
        let rows: Vec<_> = (0..300)
            .map(|i| {
                let x = 0.1 + (i % 17) as f64 * 0.1;
                let y = 0.2 + (i % 13) as f64 * 0.13;
                (vec![x, y], (x * x + y * y).sin())
            })
            .collect();
        let t = DataTable::new(vec!["x".into(), "y".into()], rows).unwrap().0;
        let mut grads = Vec::new();
        for (r, _) in t.rows() {
            let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
            grads.extend([r[0] / n, r[1] / n]);
        }
        let b = BasisSet::with_variables(["x", "y"]).unwrap();
        let cfg = BruteConfig {
            max_complexity_bits: 15.0,
            ..BruteConfig::default()
        };
        let r = search(&SearchData::gradients(&t, &grads, 3), &b, &cfg).unwrap();
        let best = r.frontier.best().unwrap();
        assert!(best.score.medl_bits < 1.0, "{:?}", best);
        let e = &best.expr;
        // Direction check at a fresh point.
        let (_, g) = e.eval_grad(&[0.7, 1.9], crate::expr::GradWrt::Vars(2)).unwrap();
        assert!((g[0] / g[1] - 0.7 / 1.9).abs() < 1e-9);
    }
}
