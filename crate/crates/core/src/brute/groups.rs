//! Enumeration groups.
//!
//! A group fixes the set of distinct counted symbols (variables and basis
//! functions), how many counted tokens appear in total, and which literal
//! constants appear. Everything in a group has the same complexity, so
//! visiting groups in cost order yields candidates in complexity order.

use crate::expr::{Arity, BasisSet, Param, Token};
use crate::mdl::MdlConfig;

/// Counted symbols of a basis: variables first, then functions in basis
/// order. The index in this list fixes the lexicographic order.
#[derive(Clone, Debug)]
pub(crate) struct Alphabet {
    pub counted: Vec<Token>,
    pub literals: Vec<Param>,
    pub lit_bits: Vec<f64>,
    /// Literal multisets, as sorted literal indices, ordered by size then
    /// lexicographically.
    pub lit_sets: Vec<Vec<u8>>,
}

impl Alphabet {
    pub fn new(basis: &BasisSet, max_literals: usize, mdl: &MdlConfig) -> Alphabet {
        let mut counted: Vec<Token> = (0..basis.n_vars()).map(|i| Token::Var(i as u16)).collect();
        counted.extend(basis.ops().iter().map(|&op| Token::Op(op)));
        assert!(counted.len() <= 64, "at most 64 counted symbols are supported");
        let literals = basis.literals().to_vec();
        let lit_bits = literals.iter().map(|p| p.description_length(mdl)).collect();
        let mut lit_sets = vec![vec![]];
        let mut frontier: Vec<Vec<u8>> = vec![vec![]];
        for _ in 0..max_literals {
            let mut next = Vec::new();
            for set in &frontier {
                let start = set.last().copied().unwrap_or(0);
                for j in start..literals.len() as u8 {
                    let mut s = set.clone();
                    s.push(j);
                    next.push(s);
                }
            }
            lit_sets.extend(next.iter().cloned());
            frontier = next;
        }
        Alphabet {
            counted,
            literals,
            lit_bits,
            lit_sets,
        }
    }

    pub fn arity(&self, sym: usize) -> Arity {
        self.counted[sym].arity()
    }

    fn lit_set_bits(&self, set: usize) -> f64 {
        self.lit_sets[set].iter().map(|&j| self.lit_bits[j as usize]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Group {
    /// Bit i set when counted symbol i is used.
    pub mask: u64,
    /// Total counted tokens.
    pub k: u16,
    /// Index into [`Alphabet::lit_sets`].
    pub lits: u16,
    pub cost: f64,
}

impl Group {
    pub fn n(&self) -> u32 {
        self.mask.count_ones()
    }
}

/// `k log2 n`, zero when fewer than two distinct symbols are used.
pub(crate) fn structural_bits(n: u32, k: usize) -> f64 {
    if n > 1 {
        k as f64 * (n as f64).log2()
    } else {
        0.0
    }
}

/// Whether some postfix program uses every symbol of the group at least once,
/// exactly `k` counted tokens and exactly `lits` literals.
fn feasible(leaf: u32, unary: u32, binary: u32, k: usize, lits: usize) -> bool {
    let (a, c, b) = (leaf as usize, unary as usize, binary as usize);
    // leaves (counted + literal) = binaries + 1, counted = leaves_c + unaries + binaries.
    for bin in b..=k {
        if b == 0 && bin > 0 {
            break;
        }
        let Some(leaves_c) = (bin + 1).checked_sub(lits) else {
            continue;
        };
        if leaves_c < a || (a == 0 && leaves_c > 0) {
            continue;
        }
        let Some(un) = k.checked_sub(leaves_c + bin) else {
            break;
        };
        if un < c || (c == 0 && un > 0) {
            continue;
        }
        return true;
    }
    false
}

fn for_each_combination(m: usize, n: usize, mut f: impl FnMut(u64)) {
    if n > m {
        return;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    loop {
        f(idx.iter().fold(0u64, |acc, &i| acc | (1 << i)));
        let mut i = n;
        while i > 0 && idx[i - 1] == m - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..n {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// All nonempty groups with cost at most `max_bits`, in visiting order:
/// cost, then distinct-symbol count, then token count, then literal set,
/// then symbol subset in combination order.
pub(crate) fn groups(alpha: &Alphabet, max_bits: f64, max_tokens: usize) -> Vec<Group> {
    const SLACK: f64 = 1e-9;
    let m = alpha.counted.len();
    let mut out = Vec::new();
    for n in 0..=m.min(max_tokens) {
        if structural_bits(n as u32, n) > max_bits + SLACK {
            break;
        }
        for_each_combination(m, n, |mask| {
            let (mut leaf, mut unary, mut binary) = (0, 0, 0);
            for i in 0..m {
                if mask & (1 << i) != 0 {
                    match alpha.arity(i) {
                        Arity::Nullary => leaf += 1,
                        Arity::Unary => unary += 1,
                        Arity::Binary => binary += 1,
                    }
                }
            }
            for (li, set) in alpha.lit_sets.iter().enumerate() {
                let lit_bits = alpha.lit_set_bits(li);
                for k in n..=max_tokens {
                    let cost = structural_bits(n as u32, k) + lit_bits;
                    if cost > max_bits + SLACK {
                        break;
                    }
                    if n == 0 && k > 0 {
                        break;
                    }
                    if feasible(leaf, unary, binary, k, set.len()) {
                        out.push(Group {
                            mask,
                            k: k as u16,
                            lits: li as u16,
                            cost,
                        });
                    }
                }
            }
        });
    }
    out.sort_by(|a, b| {
        a.cost
            .total_cmp(&b.cost)
            .then(a.n().cmp(&b.n()))
            .then(a.k.cmp(&b.k))
            .then(a.lits.cmp(&b.lits))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::OpCode;

    #[test]
    fn combinations_in_order() {
        let mut v = Vec::new();
        for_each_combination(4, 2, |m| v.push(m));
        assert_eq!(v, vec![0b0011, 0b0101, 0b1001, 0b0110, 0b1010, 0b1100]);
        let mut c = 0;
        for_each_combination(5, 0, |_| c += 1);
        assert_eq!(c, 1);
        let mut c = 0;
        for_each_combination(21, 8, |_| c += 1);
        assert_eq!(c, 203_490);
    }

    #[test]
    fn feasibility() {
        // {x}: only "x".
        assert!(feasible(1, 0, 0, 1, 0));
        assert!(!feasible(1, 0, 0, 2, 0));
        // {x, +}: odd lengths only.
        assert!(feasible(1, 0, 1, 3, 0));
        assert!(!feasible(1, 0, 1, 4, 0));
        // {*} with two literals: "2 2 *".
        assert!(feasible(0, 0, 1, 1, 2));
        // {cos} with one literal: any chain length.
        assert!(feasible(0, 1, 0, 5, 1));
        // a lone literal.
        assert!(feasible(0, 0, 0, 0, 1));
    }

    #[test]
    fn groups_sorted_by_cost() {
        let b = BasisSet::new(
            vec![OpCode::Add, OpCode::Cos],
            vec!["x".into()],
            vec![],
        )
        .unwrap();
        let a = Alphabet::new(&b, 2, &MdlConfig::default());
        let g = groups(&a, 8.0, 30);
        assert!(g.windows(2).all(|w| w[0].cost <= w[1].cost));
        assert_eq!((g[0].mask, g[0].k), (0b001, 1));
    }
}
