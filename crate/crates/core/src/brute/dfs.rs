//! Depth-first walk over the programs of one group.
//!
//! Values of every prefix are kept for a handful of probe points, so a
//! subexpression shared by many candidates is evaluated once. A subtree
//! whose value is invalid at any probe point is skipped: every program
//! containing it is invalid there too.

use super::groups::{Alphabet, Group};
use crate::expr::{Arity, OpCode, Token};

pub(crate) const LANES: usize = 8;
pub(crate) type Lane = [f64; LANES];

/// Inputs at the probe points, one lane per variable.
pub(crate) struct Probe {
    pub vars: Vec<Lane>,
    /// Carry first derivatives with respect to every variable.
    pub grads: bool,
}

#[derive(Clone, Copy, Debug)]
struct Sym {
    token: Token,
    arity: Arity,
    /// Literal value, or the constant of a nullary function.
    value: f64,
    counted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Step {
    Continue,
    Stop,
}

pub(crate) trait Sink {
    /// Called for each complete program. The root's probe values are in
    /// `walk.root_values()`.
    fn leaf(&mut self, walk: &Walk) -> Step;
    /// Called every few thousand nodes; return `Stop` to abandon the walk.
    fn tick(&mut self) -> Step;
}

pub(crate) struct Walk<'a> {
    syms: Vec<Sym>,
    total: usize,
    seq: Vec<u8>,
    uses: Vec<u16>,
    counted_left: usize,
    lit_left: Vec<u8>,
    lit_left_total: usize,
    unused: [usize; 3],
    has: [bool; 3],
    stack: Vec<(u16, u16)>,
    val: Vec<Lane>,
    der: Vec<Lane>,
    nv: usize,
    probe: Option<&'a Probe>,
    prune_twins: bool,
    /// Root slots of the operands of the last token, for lazy evaluation.
    root_args: (usize, usize),
    lazy_root: bool,
    /// Only the gradient direction of the root matters.
    direction_only: bool,
    nodes: u64,
    pub pruned: u64,
}

fn arity_slot(a: Arity) -> usize {
    match a {
        Arity::Nullary => 0,
        Arity::Unary => 1,
        Arity::Binary => 2,
    }
}

impl<'a> Walk<'a> {
    pub fn new(alpha: &Alphabet, group: &Group, probe: Option<&'a Probe>, prune_twins: bool) -> Self {
        let mut syms = Vec::new();
        let mut has = [false; 3];
        let mut unused = [0; 3];
        for (i, &t) in alpha.counted.iter().enumerate() {
            if group.mask & (1 << i) != 0 {
                let arity = t.arity();
                has[arity_slot(arity)] = true;
                unused[arity_slot(arity)] += 1;
                let value = match t {
                    Token::Op(op) => op.constant(),
                    _ => f64::NAN,
                };
                syms.push(Sym {
                    token: t,
                    arity,
                    value,
                    counted: true,
                });
            }
        }
        let set = &alpha.lit_sets[group.lits as usize];
        let mut lit_left = vec![0u8; syms.len()];
        for (j, p) in alpha.literals.iter().enumerate() {
            let count = set.iter().filter(|&&l| l as usize == j).count() as u8;
            if count > 0 {
                syms.push(Sym {
                    token: Token::Param(j as u16),
                    arity: Arity::Nullary,
                    value: p.value(),
                    counted: false,
                });
                lit_left.push(count);
            }
        }
        let total = group.k as usize + set.len();
        let nv = match probe {
            Some(p) if p.grads => p.vars.len(),
            _ => 0,
        };
        let slots = if probe.is_some() { total } else { 0 };
        Walk {
            uses: vec![0; syms.len()],
            syms,
            total,
            seq: vec![0; total],
            counted_left: group.k as usize,
            lit_left,
            lit_left_total: set.len(),
            unused,
            has,
            stack: Vec::with_capacity(total),
            val: vec![[0.0; LANES]; slots],
            der: vec![[0.0; LANES]; slots * nv],
            nv,
            probe,
            prune_twins,
            root_args: (0, 0),
            lazy_root: probe.is_some_and(|p| !p.grads),
            direction_only: probe.is_some_and(|p| p.grads),
            nodes: 0,
            pruned: 0,
        }
    }

    /// Tokens of the current complete program. Literal `j` appears as
    /// `Token::Param(j)`, indexing the alphabet's literal list.
    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        self.seq[..self.total].iter().map(|&s| self.syms[s as usize].token)
    }

    /// Value of the complete program at probe point `p`, NaN when invalid.
    /// In value mode the root is evaluated lazily, one point at a time.
    pub fn root_value(&self, p: usize) -> f64 {
        if !self.lazy_root {
            return self.val[self.total - 1][p];
        }
        let sym = self.syms[self.seq[self.total - 1] as usize];
        let (a, b) = self.root_args;
        match (sym.token, sym.arity) {
            (Token::Var(j), _) => self.probe.map_or(f64::NAN, |pr| pr.vars[j as usize][p]),
            (_, Arity::Nullary) => sym.value,
            (Token::Op(op), Arity::Unary) => op.apply1(self.val[b][p]),
            (Token::Op(op), _) => op.apply2(self.val[a][p], self.val[b][p]),
            _ => f64::NAN,
        }
    }

    /// Partial derivative lanes of the root, one per variable.
    pub fn root_derivs(&self) -> &[Lane] {
        let at = (self.total - 1) * self.nv;
        &self.der[at..at + self.nv]
    }

    pub fn run(&mut self, sink: &mut impl Sink) -> Step {
        if self.total == 0 {
            return Step::Continue;
        }
        self.descend(0, sink)
    }

    /// Whether the remaining slots can still complete a program that uses
    /// every unused symbol and ends with exactly one value on the stack.
    fn can_finish(&self, depth: usize) -> bool {
        let forced_slots: usize = self.unused.iter().sum();
        let Some(free) = self.counted_left.checked_sub(forced_slots) else {
            return false;
        };
        let forced = self.unused[0] as i64 + self.lit_left_total as i64 - self.unused[2] as i64;
        let target = 1 - depth as i64 - forced;
        let f = free as i64;
        let max_d = if self.has[0] { 1 } else if self.has[1] { 0 } else { -1 };
        let min_d = if self.has[2] { -1 } else if self.has[1] { 0 } else { 1 };
        if free == 0 {
            return target == 0;
        }
        if target < f * min_d || target > f * max_d {
            return false;
        }
        // Without unary functions every free slot moves the depth by one.
        self.has[1] || (target - f).rem_euclid(2) == 0
    }

    fn sym_op(&self, s: u8) -> Option<OpCode> {
        match self.syms[s as usize].token {
            Token::Op(op) => Some(op),
            _ => None,
        }
    }

    fn single(&self, start: u16, end: usize, op: OpCode) -> bool {
        end - start as usize == 1 && self.sym_op(self.seq[start as usize]) == Some(op)
    }

    /// Programs whose value equals that of a strictly simpler program, or of
    /// an earlier program in the same group, never win a race.
    fn redundant(&self, op: OpCode, pos: usize) -> bool {
        let n = self.stack.len();
        let root = self.direction_only && pos + 1 == self.total;
        match op.arity() {
            // A function of one argument keeps its gradient direction.
            Arity::Unary if root => true,
            Arity::Unary => {
                let (_, start) = self.stack[n - 1];
                let last = self.sym_op(self.seq[pos - 1]);
                (op == OpCode::Neg && last == Some(OpCode::Neg)) || (op == OpCode::Neg && self.single(start, pos, OpCode::Zero))
            }
            Arity::Binary => {
                let (_, ls) = self.stack[n - 2];
                let (_, rs) = self.stack[n - 1];
                let zl = self.single(ls, rs as usize, OpCode::Zero);
                let zr = self.single(rs, pos, OpCode::Zero);
                let ol = self.single(ls, rs as usize, OpCode::One);
                let or = self.single(rs, pos, OpCode::One);
                let identity = match op {
                    OpCode::Add => zl || zr,
                    OpCode::Sub => zr,
                    OpCode::Mul => ol || or,
                    OpCode::Div => or,
                    _ => false,
                };
                if identity {
                    return true;
                }
                if root {
                    let var_free = |a: usize, b: usize| {
                        self.seq[a..b].iter().all(|&q| !matches!(self.syms[q as usize].token, Token::Var(_)))
                    };
                    if var_free(ls as usize, rs as usize) || var_free(rs as usize, pos) {
                        return true;
                    }
                }
                // b-a and b/a point along a-b and a/b up to sign.
                if op.is_commutative() || (root && matches!(op, OpCode::Sub | OpCode::Div)) {
                    let l = &self.seq[ls as usize..rs as usize];
                    let r = &self.seq[rs as usize..pos];
                    // Keep the twin whose operands read first in symbol order.
                    return r.iter().chain(l).lt(l.iter().chain(r));
                }
                false
            }
            Arity::Nullary => false,
        }
    }

    /// Writes probe values for the token at `pos`. Returns false when any
    /// lane is invalid.
    fn eval(&mut self, sym: Sym, pos: usize) -> bool {
        let Some(probe) = self.probe else {
            return true;
        };
        let nv = self.nv;
        let n = self.stack.len();
        match sym.arity {
            Arity::Nullary => {
                if let Token::Var(j) = sym.token {
                    self.val[pos] = probe.vars[j as usize];
                    for q in 0..nv {
                        self.der[pos * nv + q] = [if q == j as usize { 1.0 } else { 0.0 }; LANES];
                    }
                } else {
                    self.val[pos] = [sym.value; LANES];
                    for q in 0..nv {
                        self.der[pos * nv + q] = [0.0; LANES];
                    }
                }
                true
            }
            Arity::Unary => {
                let Token::Op(op) = sym.token else { unreachable!() };
                let a = self.stack[n - 1].0 as usize;
                let av = self.val[a];
                let out = map1(op, &av);
                if out.iter().any(|v| v.is_nan()) {
                    return false;
                }
                self.val[pos] = out;
                if nv > 0 {
                    let mut d = [0.0; LANES];
                    for p in 0..LANES {
                        d[p] = op.deriv1(av[p], out[p]);
                    }
                    for q in 0..nv {
                        let da = self.der[a * nv + q];
                        let mut o = [0.0; LANES];
                        for p in 0..LANES {
                            o[p] = d[p] * da[p];
                        }
                        if o.iter().any(|v| !v.is_finite()) {
                            return false;
                        }
                        self.der[pos * nv + q] = o;
                    }
                }
                true
            }
            Arity::Binary => {
                let Token::Op(op) = sym.token else { unreachable!() };
                let a = self.stack[n - 2].0 as usize;
                let b = self.stack[n - 1].0 as usize;
                let (av, bv) = (self.val[a], self.val[b]);
                let out = map2(op, &av, &bv);
                if out.iter().any(|v| v.is_nan()) {
                    return false;
                }
                self.val[pos] = out;
                for q in 0..nv {
                    let (da, db) = (self.der[a * nv + q], self.der[b * nv + q]);
                    let mut o = [0.0; LANES];
                    for p in 0..LANES {
                        o[p] = match op {
                            OpCode::Add => da[p] + db[p],
                            OpCode::Sub => da[p] - db[p],
                            OpCode::Mul => av[p] * db[p] + bv[p] * da[p],
                            _ => (da[p] - out[p] * db[p]) / bv[p],
                        };
                    }
                    if o.iter().any(|v| !v.is_finite()) {
                        return false;
                    }
                    self.der[pos * nv + q] = o;
                }
                true
            }
        }
    }

    fn descend(&mut self, pos: usize, sink: &mut impl Sink) -> Step {
        for s in 0..self.syms.len() {
            let sym = self.syms[s];
            if sym.counted {
                if self.counted_left == 0 {
                    continue;
                }
            } else if self.lit_left[s] == 0 {
                continue;
            }
            let need = sym.arity.count();
            let depth = self.stack.len();
            if depth < need {
                continue;
            }
            // Claim the symbol.
            let slot = arity_slot(sym.arity);
            let first_use = sym.counted && self.uses[s] == 0;
            if sym.counted {
                self.counted_left -= 1;
                if first_use {
                    self.unused[slot] -= 1;
                }
                self.uses[s] += 1;
            } else {
                self.lit_left[s] -= 1;
                self.lit_left_total -= 1;
            }
            let mut step = Step::Continue;
            if !self.can_finish(depth - need + 1) {
                // Cannot complete within this group.
            } else if self.prune_twins
                && matches!(sym.token, Token::Op(op) if self.redundant(op, pos))
            {
                self.pruned += 1;
            } else if !(self.lazy_root && pos + 1 == self.total) && !self.eval(sym, pos) {
                self.pruned += 1;
            } else {
                if need > 0 {
                    self.root_args = (
                        self.stack[depth - need].0 as usize,
                        self.stack[depth - 1].0 as usize,
                    );
                }
                self.seq[pos] = s as u8;
                let start = if need == 0 {
                    pos as u16
                } else {
                    self.stack[depth - need].1
                };
                let saved: [(u16, u16); 2] = [
                    self.stack.get(depth.wrapping_sub(2)).copied().unwrap_or_default(),
                    self.stack.get(depth.wrapping_sub(1)).copied().unwrap_or_default(),
                ];
                self.stack.truncate(depth - need);
                self.stack.push((pos as u16, start));
                step = if pos + 1 == self.total {
                    sink.leaf(self)
                } else {
                    self.descend(pos + 1, sink)
                };
                self.stack.pop();
                for &e in &saved[2 - need..] {
                    self.stack.push(e);
                }
                self.nodes += 1;
                if self.nodes & 0xFFF == 0 && step == Step::Continue {
                    step = sink.tick();
                }
            }
            // Release the symbol.
            if sym.counted {
                self.uses[s] -= 1;
                if first_use {
                    self.unused[slot] += 1;
                }
                self.counted_left += 1;
            } else {
                self.lit_left[s] += 1;
                self.lit_left_total += 1;
            }
            if step == Step::Stop {
                return Step::Stop;
            }
        }
        Step::Continue
    }
}

#[inline]
fn lanes1(a: &Lane, f: impl Fn(f64) -> f64) -> Lane {
    let mut o = [0.0; LANES];
    for p in 0..LANES {
        o[p] = f(a[p]);
    }
    o
}

#[inline]
fn lanes2(a: &Lane, b: &Lane, f: impl Fn(f64, f64) -> f64) -> Lane {
    let mut o = [0.0; LANES];
    for p in 0..LANES {
        o[p] = f(a[p], b[p]);
    }
    o
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Lane-wise [`OpCode::apply1`], with the match hoisted out of the loop.
fn map1(op: OpCode, a: &Lane) -> Lane {
    match op {
        OpCode::Neg => lanes1(a, |v| -v),
        OpCode::Square => lanes1(a, |v| finite_or_nan(v * v)),
        OpCode::Exp => lanes1(a, |v| finite_or_nan(v.exp())),
        OpCode::Sin => lanes1(a, f64::sin),
        OpCode::Cos => lanes1(a, f64::cos),
        OpCode::Arctan => lanes1(a, f64::atan),
        OpCode::Tanh => lanes1(a, f64::tanh),
        _ => lanes1(a, |v| op.apply1(v)),
    }
}

fn map2(op: OpCode, a: &Lane, b: &Lane) -> Lane {
    match op {
        OpCode::Add => lanes2(a, b, |x, y| finite_or_nan(x + y)),
        OpCode::Sub => lanes2(a, b, |x, y| finite_or_nan(x - y)),
        OpCode::Mul => lanes2(a, b, |x, y| finite_or_nan(x * y)),
        _ => lanes2(a, b, |x, y| op.apply2(x, y)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brute::groups::{groups, Alphabet};
    use crate::expr::{BasisSet, Expression};
    use crate::mdl::MdlConfig;

    struct Collect(Vec<Vec<Token>>);
    impl Sink for Collect {
        fn leaf(&mut self, walk: &Walk) -> Step {
            self.0.push(walk.tokens().collect());
            Step::Continue
        }
        fn tick(&mut self) -> Step {
            Step::Continue
        }
    }

    fn all_programs(b: &BasisSet, bits: f64, prune: bool) -> Vec<Vec<Token>> {
        let a = Alphabet::new(b, 2, &MdlConfig::default());
        let mut out = Collect(vec![]);
        for g in groups(&a, bits, 30) {
            Walk::new(&a, &g, None, prune).run(&mut out);
        }
        out.0
    }

    #[test]
    fn walk_lists_each_program_once() {
        let b = BasisSet::new(
            vec![OpCode::Add, OpCode::Mul, OpCode::Cos],
            vec!["x".into(), "y".into()],
            vec![],
        )
        .unwrap();
        let progs = all_programs(&b, 12.0, false);
        let mut sorted = progs.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), progs.len());
        for p in &progs {
            assert!(crate::expr::validate_tokens(p).is_ok());
        }
        // Brute-force oracle: every valid string of length <= 5 under the bound.
        let alphabet = [
            Token::Var(0),
            Token::Var(1),
            Token::Op(OpCode::Add),
            Token::Op(OpCode::Mul),
            Token::Op(OpCode::Cos),
        ];
        let cfg = MdlConfig::default();
        let mut expected = 0;
        let mut strings: Vec<Vec<Token>> = vec![vec![]];
        for _ in 0..5 {
            let mut next = vec![];
            for s in &strings {
                for &t in &alphabet {
                    let mut s2 = s.clone();
                    s2.push(t);
                    if let Ok(e) = Expression::new(s2.clone(), vec![]) {
                        if e.complexity_bits(&cfg) <= 12.0 + 1e-9 {
                            expected += 1;
                            assert!(progs.contains(&s2), "{s2:?} missing");
                        }
                    }
                    next.push(s2);
                }
            }
            strings = next;
        }
        let short = progs.iter().filter(|p| p.len() <= 5).count();
        assert_eq!(short, expected);
    }

    #[test]
    fn twin_pruning_keeps_one_of_each_pair() {
        let b = BasisSet::new(
            vec![OpCode::Add, OpCode::Neg, OpCode::Zero],
            vec!["x".into(), "y".into()],
            vec![],
        )
        .unwrap();
        let kept = all_programs(&b, 10.0, true);
        let x = Token::Var(0);
        let y = Token::Var(1);
        let add = Token::Op(OpCode::Add);
        let neg = Token::Op(OpCode::Neg);
        let zero = Token::Op(OpCode::Zero);
        assert!(kept.contains(&vec![x, y, add]));
        assert!(!kept.contains(&vec![y, x, add]));
        assert!(kept.contains(&vec![x, x, add]));
        assert!(!kept.contains(&vec![x, neg, neg]));
        assert!(!kept.contains(&vec![x, zero, add]));
    }
}
