use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Arity, ExprError, OpCode, Param};
use crate::mdl::MdlConfig;

/// One RPN token. `Param(k)` refers to the k-th entry of the parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Token {
    Var(u16),
    Op(OpCode),
    Param(u16),
}

impl Token {
    pub fn arity(self) -> Arity {
        match self {
            Token::Op(op) => op.arity(),
            _ => Arity::Nullary,
        }
    }

    /// Variables and basis functions count toward complexity; parameters
    /// are paid for through their own description length.
    fn counts_toward_complexity(self) -> bool {
        !matches!(self, Token::Param(_))
    }
}

/// Checks the postfix stack invariant: depth never drops below one after
/// the first token and ends at exactly one.
pub fn validate_tokens(tokens: &[Token]) -> Result<(), ExprError> {
    if tokens.is_empty() {
        return Err(ExprError::Structure("empty program".into()));
    }
    let mut depth: usize = 0;
    for (pos, t) in tokens.iter().enumerate() {
        let need = t.arity().count();
        if depth < need {
            return Err(ExprError::Structure(format!(
                "token {pos} needs {need} operand(s), stack has {depth}"
            )));
        }
        depth = depth - need + 1;
    }
    if depth != 1 {
        return Err(ExprError::Structure(format!(
            "program leaves {depth} values on the stack"
        )));
    }
    Ok(())
}

/// Which inputs a forward-mode gradient is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradWrt {
    /// Variables `0..n`.
    Vars(usize),
    /// Every parameter slot.
    Params,
}

/// A validated RPN program with its bound constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    tokens: Vec<Token>,
    params: Vec<Param>,
}

impl Expression {
    /// Placeholders must appear as `Param(0), Param(1), ...` in token order,
    /// each exactly once, with one parameter per placeholder.
    pub fn new(tokens: Vec<Token>, params: Vec<Param>) -> Result<Self, ExprError> {
        validate_tokens(&tokens)?;
        let mut next = 0u16;
        for t in &tokens {
            if let Token::Param(k) = *t {
                if k != next {
                    return Err(ExprError::Structure(format!(
                        "placeholder {k} out of order (expected {next})"
                    )));
                }
                next += 1;
            }
        }
        if next as usize != params.len() {
            return Err(ExprError::Structure(format!(
                "{} placeholder(s) but {} parameter(s)",
                next,
                params.len()
            )));
        }
        Ok(Expression { tokens, params })
    }

    /// Builds from tokens whose placeholders may be numbered arbitrarily;
    /// renumbers them in order of appearance.
    pub fn from_unordered(tokens: Vec<Token>, params: &[Param]) -> Result<Self, ExprError> {
        let mut out_params = Vec::new();
        let mut out_tokens = Vec::with_capacity(tokens.len());
        for t in tokens {
            match t {
                Token::Param(k) => {
                    let p = *params.get(k as usize).ok_or_else(|| {
                        ExprError::Structure(format!("placeholder {k} has no parameter"))
                    })?;
                    out_tokens.push(Token::Param(out_params.len() as u16));
                    out_params.push(p);
                }
                other => out_tokens.push(other),
            }
        }
        Expression::new(out_tokens, out_params)
    }

    pub fn var(index: usize) -> Self {
        Expression {
            tokens: vec![Token::Var(index as u16)],
            params: vec![],
        }
    }

    pub fn constant(p: Param) -> Self {
        Expression {
            tokens: vec![Token::Param(0)],
            params: vec![p],
        }
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn with_params(&self, params: Vec<Param>) -> Result<Self, ExprError> {
        Expression::new(self.tokens.clone(), params)
    }

    pub fn real_param_indices(&self) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_real())
            .map(|(i, _)| i)
            .collect()
    }

    /// Largest variable index referenced, plus one.
    pub fn min_vars(&self) -> usize {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Var(i) => Some(*i as usize + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn variables_used(&self) -> BTreeSet<usize> {
        self.tokens
            .iter()
            .filter_map(|t| match t {
                Token::Var(i) => Some(*i as usize),
                _ => None,
            })
            .collect()
    }

    /// `L_d(params) + k log2(n)` with n distinct variables/functions used
    /// k times in total.
    pub fn complexity_bits(&self, cfg: &MdlConfig) -> f64 {
        let counted: Vec<Token> = self
            .tokens
            .iter()
            .copied()
            .filter(|t| t.counts_toward_complexity())
            .collect();
        let k = counted.len();
        let n = counted.iter().collect::<BTreeSet<_>>().len();
        let structural = if n > 1 { k as f64 * (n as f64).log2() } else { 0.0 };
        structural + self.params.iter().map(|p| p.description_length(cfg)).sum::<f64>()
    }

    /// `Ok(None)` marks a domain violation (log of a nonpositive number,
    /// division by zero, non-finite intermediate).
    pub fn evaluate(&self, x: &[f64]) -> Result<Option<f64>, ExprError> {
        let need = self.min_vars();
        if x.len() < need {
            return Err(ExprError::Dimension {
                expected: need,
                got: x.len(),
            });
        }
        let mut stack = Vec::with_capacity(self.tokens.len());
        let v = self.eval_with(x, &mut stack);
        Ok(if v.is_nan() { None } else { Some(v) })
    }

    /// Fast path: NaN marks an invalid result. `x` must cover every
    /// variable index used.
    #[inline]
    pub fn eval_with(&self, x: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for t in &self.tokens {
            let v = match *t {
                Token::Var(i) => x[i as usize],
                Token::Param(k) => self.params[k as usize].value(),
                Token::Op(op) => match op.arity() {
                    Arity::Nullary => op.constant(),
                    Arity::Unary => {
                        let a = stack.pop().unwrap();
                        op.apply1(a)
                    }
                    Arity::Binary => {
                        let b = stack.pop().unwrap();
                        let a = stack.pop().unwrap();
                        op.apply2(a, b)
                    }
                },
            };
            if v.is_nan() {
                return f64::NAN;
            }
            stack.push(v);
        }
        stack[0]
    }

    /// Evaluates at every row of a row-major matrix with `stride` columns.
    pub fn eval_rows(&self, rows: &[f64], stride: usize) -> Vec<f64> {
        let mut stack = Vec::with_capacity(self.tokens.len());
        rows.chunks_exact(stride.max(1))
            .map(|r| self.eval_with(r, &mut stack))
            .collect()
    }

    /// Value and forward-mode gradient. `None` when the value or any
    /// derivative is invalid.
    pub fn eval_grad(&self, x: &[f64], wrt: GradWrt) -> Option<(f64, Vec<f64>)> {
        let dim = match wrt {
            GradWrt::Vars(n) => n,
            GradWrt::Params => self.params.len(),
        };
        let mut vals: Vec<f64> = Vec::with_capacity(self.tokens.len());
        let mut grads: Vec<f64> = Vec::with_capacity(self.tokens.len() * dim);
        for t in &self.tokens {
            match *t {
                Token::Var(i) => {
                    vals.push(*x.get(i as usize)?);
                    let base = grads.len();
                    grads.resize(base + dim, 0.0);
                    if let GradWrt::Vars(_) = wrt {
                        if (i as usize) < dim {
                            grads[base + i as usize] = 1.0;
                        }
                    }
                }
                Token::Param(k) => {
                    vals.push(self.params[k as usize].value());
                    let base = grads.len();
                    grads.resize(base + dim, 0.0);
                    if wrt == GradWrt::Params {
                        grads[base + k as usize] = 1.0;
                    }
                }
                Token::Op(op) => match op.arity() {
                    Arity::Nullary => {
                        vals.push(op.constant());
                        let base = grads.len();
                        grads.resize(base + dim, 0.0);
                    }
                    Arity::Unary => {
                        let a = *vals.last().unwrap();
                        let v = op.apply1(a);
                        if v.is_nan() {
                            return None;
                        }
                        let d = op.deriv1(a, v);
                        if !d.is_finite() {
                            return None;
                        }
                        *vals.last_mut().unwrap() = v;
                        let base = grads.len() - dim;
                        for g in &mut grads[base..] {
                            *g *= d;
                        }
                    }
                    Arity::Binary => {
                        let b = vals.pop().unwrap();
                        let a = *vals.last().unwrap();
                        let v = op.apply2(a, b);
                        if v.is_nan() {
                            return None;
                        }
                        *vals.last_mut().unwrap() = v;
                        let bb = grads.len() - dim;
                        let ab = bb - dim;
                        for j in 0..dim {
                            let da = grads[ab + j];
                            let db = grads[bb + j];
                            grads[ab + j] = match op {
                                OpCode::Add => da + db,
                                OpCode::Sub => da - db,
                                OpCode::Mul => da * b + a * db,
                                OpCode::Div => (da - v * db) / b,
                                _ => f64::NAN,
                            };
                        }
                        grads.truncate(bb);
                    }
                },
            }
        }
        let v = vals[0];
        if grads.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some((v, grads))
    }

    /// Rewrites variable indices through `map` (old index -> new index).
    pub fn remap_vars(&self, map: &[usize]) -> Expression {
        let tokens = self
            .tokens
            .iter()
            .map(|t| match *t {
                Token::Var(i) => Token::Var(map[i as usize] as u16),
                other => other,
            })
            .collect();
        Expression {
            tokens,
            params: self.params.clone(),
        }
    }

    /// Replaces every occurrence of variable `var` by the program `with`.
    pub fn substitute_var(&self, var: usize, with: &Expression) -> Expression {
        self.substitute_vars(&|i| if i == var { Some(with) } else { None })
    }

    /// Replaces variables for which `f` returns an expression.
    pub fn substitute_vars<'a>(
        &self,
        f: &dyn Fn(usize) -> Option<&'a Expression>,
    ) -> Expression {
        let mut tokens = Vec::with_capacity(self.tokens.len());
        let mut params = Vec::with_capacity(self.params.len());
        for t in &self.tokens {
            match *t {
                Token::Var(i) => match f(i as usize) {
                    Some(sub) => {
                        for st in &sub.tokens {
                            match *st {
                                Token::Param(k) => {
                                    tokens.push(Token::Param(params.len() as u16));
                                    params.push(sub.params[k as usize]);
                                }
                                other => tokens.push(other),
                            }
                        }
                    }
                    None => tokens.push(*t),
                },
                Token::Param(k) => {
                    tokens.push(Token::Param(params.len() as u16));
                    params.push(self.params[k as usize]);
                }
                other => tokens.push(other),
            }
        }
        Expression { tokens, params }
    }

    /// Applies a unary op to the whole program.
    pub fn wrap_unary(&self, op: OpCode) -> Expression {
        debug_assert_eq!(op.arity(), Arity::Unary);
        let mut e = self.clone();
        e.tokens.push(Token::Op(op));
        e
    }

    /// `self op other` as one program.
    pub fn combine(&self, other: &Expression, op: OpCode) -> Expression {
        debug_assert_eq!(op.arity(), Arity::Binary);
        let mut tokens = self.tokens.clone();
        let mut params = self.params.clone();
        let off = params.len() as u16;
        tokens.extend(other.tokens.iter().map(|t| match *t {
            Token::Param(k) => Token::Param(k + off),
            o => o,
        }));
        params.extend_from_slice(&other.params);
        tokens.push(Token::Op(op));
        Expression { tokens, params }
    }

    /// Name-independent ordering key: variables print as `$i`.
    pub fn canonical_key(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            match *t {
                Token::Var(v) => {
                    let _ = write!(s, "${v}");
                }
                Token::Op(op) => s.push(op.symbol()),
                Token::Param(k) => {
                    let _ = write!(s, "#{}", self.params[k as usize]);
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(o: OpCode) -> Token {
        Token::Op(o)
    }

    #[test]
    fn stack_invariant() {
        assert!(validate_tokens(&[Token::Var(0)]).is_ok());
        assert!(validate_tokens(&[Token::Var(0), Token::Var(1), op(OpCode::Add)]).is_ok());
        assert!(validate_tokens(&[]).is_err());
        assert!(validate_tokens(&[op(OpCode::Add)]).is_err());
        assert!(validate_tokens(&[Token::Var(0), Token::Var(1)]).is_err());
        assert!(validate_tokens(&[Token::Var(0), op(OpCode::Mul)]).is_err());
    }

    #[test]
    fn placeholder_bookkeeping() {
        let bad = Expression::new(vec![Token::Param(0)], vec![]);
        assert!(bad.is_err());
        let bad = Expression::new(
            vec![Token::Param(1), Token::Param(0), op(OpCode::Add)],
            vec![Param::Integer(1), Param::Integer(2)],
        );
        assert!(bad.is_err());
        let ok = Expression::from_unordered(
            vec![Token::Param(1), Token::Param(0), op(OpCode::Sub)],
            &[Param::Integer(1), Param::Integer(5)],
        )
        .unwrap();
        assert_eq!(ok.evaluate(&[]).unwrap(), Some(4.0));
    }

    #[test]
    fn forward_gradient_matches_rules() {
        // sin(x*y)
        let e = Expression::new(
            vec![Token::Var(0), Token::Var(1), op(OpCode::Mul), op(OpCode::Sin)],
            vec![],
        )
        .unwrap();
        let (v, g) = e.eval_grad(&[1.0, 2.0], GradWrt::Vars(2)).unwrap();
        assert!((v - 2f64.sin()).abs() < 1e-15);
        assert!((g[0] - 2.0 * 2f64.cos()).abs() < 1e-14);
        assert!((g[1] - 2f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn substitution_renumbers_params() {
        // g(u) = 2*u, h(x) = x + 3
        let g = Expression::new(
            vec![Token::Param(0), Token::Var(0), op(OpCode::Mul)],
            vec![Param::Integer(2)],
        )
        .unwrap();
        let h = Expression::new(
            vec![Token::Var(0), Token::Param(0), op(OpCode::Add)],
            vec![Param::Integer(3)],
        )
        .unwrap();
        let c = g.substitute_var(0, &h);
        assert!(Expression::new(c.tokens().to_vec(), c.params().to_vec()).is_ok());
        assert_eq!(c.evaluate(&[1.0]).unwrap(), Some(8.0));
    }
}
