//! Text forms of expressions.
//!
//! RPN: whitespace-separated tokens. A single character matching a basis
//! symbol is that function; a name is a variable; anything else is a
//! constant (`2`, `1/3`, `3.25`). Prefix `#` forces a constant, so the
//! integer one is written `#1` when `1` is also a basis symbol.
//!
//! Infix: `+ -` bind loosest, then `* /`, then prefix `-`, then postfix
//! `^2`. Unary functions use call syntax (`cos(x)`), `pi` names the
//! constant. Constants that would read ambiguously (negative, rational,
//! or colliding with a basis constant) are bracketed: `[-3]`, `[1/3]`.

use super::tree::Node;
use super::{Arity, BasisSet, ExprError, Expression, OpCode, Param, Token};

fn param_needs_marker(p: &Param, basis_has_digit: impl Fn(char) -> bool) -> bool {
    match p {
        Param::Integer(0) => basis_has_digit('0'),
        Param::Integer(1) => basis_has_digit('1'),
        _ => false,
    }
}

impl Expression {
    pub fn parse_rpn(text: &str, basis: &BasisSet) -> Result<Expression, ExprError> {
        let mut tokens = Vec::new();
        let mut params = Vec::new();
        for raw in text.split_whitespace() {
            let mut chars = raw.chars();
            let single = match (chars.next(), chars.next()) {
                (Some(c), None) => Some(c),
                _ => None,
            };
            if let Some(op) = single.and_then(OpCode::from_symbol) {
                if basis.contains(op) {
                    tokens.push(Token::Op(op));
                    continue;
                }
                if !raw.chars().all(|c| c.is_ascii_digit()) {
                    return Err(ExprError::Parse(format!(
                        "function '{raw}' is not in the basis"
                    )));
                }
            }
            if let Some(i) = basis.var_index(raw) {
                tokens.push(Token::Var(i as u16));
                continue;
            }
            let lit = raw.strip_prefix('#').unwrap_or(raw);
            let p = Param::parse(lit)
                .map_err(|_| ExprError::Parse(format!("unknown token '{raw}'")))?;
            tokens.push(Token::Param(params.len() as u16));
            params.push(p);
        }
        Expression::new(tokens, params)
    }

    pub fn to_rpn(&self, names: &[String]) -> String {
        let mut out = Vec::with_capacity(self.len());
        for t in self.tokens() {
            out.push(match *t {
                Token::Var(i) => var_name(names, i as usize),
                Token::Op(op) => op.symbol().to_string(),
                Token::Param(k) => {
                    let p = self.params()[k as usize];
                    if param_needs_marker(&p, |_| true) {
                        format!("#{p}")
                    } else {
                        p.to_string()
                    }
                }
            });
        }
        out.join(" ")
    }

    pub fn to_infix(&self, names: &[String]) -> String {
        infix(&self.to_tree(), names).0
    }

    pub fn parse_infix(text: &str, basis: &BasisSet) -> Result<Expression, ExprError> {
        let mut p = InfixParser {
            chars: text.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
            basis,
        };
        let node = p.expr()?;
        if p.pos != p.chars.len() {
            return Err(ExprError::Parse(format!(
                "unexpected '{}' at offset {}",
                p.chars[p.pos], p.pos
            )));
        }
        node.to_expression()
    }
}

fn var_name(names: &[String], i: usize) -> String {
    names.get(i).cloned().unwrap_or_else(|| format!("x{i}"))
}

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_PREFIX: u8 = 3;
const PREC_POSTFIX: u8 = 4;
const PREC_ATOM: u8 = 5;

fn wrap(s: (String, u8), min: u8) -> String {
    if s.1 < min {
        format!("({})", s.0)
    } else {
        s.0
    }
}

fn infix(node: &Node, names: &[String]) -> (String, u8) {
    match node {
        Node::Var(i) => (var_name(names, *i), PREC_ATOM),
        Node::Const(p) => {
            let plain = match p {
                Param::Integer(m) => *m >= 2,
                Param::Real(r) => *r >= 0.0 && r.is_sign_positive(),
                Param::Rational(..) => false,
            };
            if plain {
                (p.to_string(), PREC_ATOM)
            } else {
                (format!("[{p}]"), PREC_ATOM)
            }
        }
        Node::Op(op, kids) => match op.arity() {
            Arity::Nullary => (op.name().to_string(), PREC_ATOM),
            Arity::Unary => match op {
                OpCode::Neg => (
                    format!("-{}", wrap(infix(&kids[0], names), PREC_PREFIX)),
                    PREC_PREFIX,
                ),
                OpCode::Square => (
                    format!("{}^2", wrap(infix(&kids[0], names), PREC_POSTFIX)),
                    PREC_POSTFIX,
                ),
                _ => (
                    format!("{}({})", op.name(), infix(&kids[0], names).0),
                    PREC_ATOM,
                ),
            },
            Arity::Binary => {
                let prec = match op {
                    OpCode::Add | OpCode::Sub => PREC_SUM,
                    _ => PREC_PRODUCT,
                };
                let l = wrap(infix(&kids[0], names), prec);
                // Right operands of equal precedence keep their parentheses
                // so that the left-associative reading rebuilds the same tree.
                let r = wrap(infix(&kids[1], names), prec + 1);
                (format!("{l}{}{r}", op.symbol()), prec)
            }
        },
    }
}

struct InfixParser<'a> {
    chars: Vec<char>,
    pos: usize,
    basis: &'a BasisSet,
}

impl InfixParser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, what: &str) -> ExprError {
        ExprError::Parse(format!("{what} at offset {}", self.pos))
    }

    fn op(&self, op: OpCode) -> Result<OpCode, ExprError> {
        if self.basis.contains(op) {
            Ok(op)
        } else {
            Err(ExprError::Parse(format!("'{}' is not in the basis", op.name())))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                OpCode::Add
            } else if self.eat('-') {
                OpCode::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::op2(self.op(op)?, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                OpCode::Mul
            } else if self.eat('/') {
                OpCode::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::op2(self.op(op)?, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat('-') {
            let inner = self.unary()?;
            return Ok(Node::op1(self.op(OpCode::Neg)?, inner));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Node, ExprError> {
        let mut node = self.primary()?;
        while self.eat('^') {
            if !self.eat('2') {
                return Err(self.err("only ^2 is supported"));
            }
            node = Node::op1(self.op(OpCode::Square)?, node);
        }
        Ok(node)
    }

    fn number(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.peek() {
            let exp_sign = (c == '-' || c == '+')
                && self.pos > start
                && matches!(self.chars[self.pos - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(c) = self.peek() else {
            return Err(self.err("unexpected end of input"));
        };
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            if !self.eat(')') {
                return Err(self.err("expected ')'"));
            }
            return Ok(e);
        }
        if c == '[' {
            self.pos += 1;
            let start = self.pos;
            while self.peek().is_some_and(|c| c != ']') {
                self.pos += 1;
            }
            let lit: String = self.chars[start..self.pos].iter().collect();
            if !self.eat(']') {
                return Err(self.err("expected ']'"));
            }
            return Ok(Node::Const(Param::parse(&lit)?));
        }
        if c.is_ascii_digit() || c == '.' {
            let text = self.number();
            if text == "0" && self.basis.contains(OpCode::Zero) {
                return Ok(Node::leaf(OpCode::Zero));
            }
            if text == "1" && self.basis.contains(OpCode::One) {
                return Ok(Node::leaf(OpCode::One));
            }
            return Ok(Node::Const(Param::parse(&text)?));
        }
        if c.is_alphabetic() || c == '_' {
            let start = self.pos;
            while self
                .peek()
                .is_some_and(|c| c.is_alphanumeric() || c == '_')
            {
                self.pos += 1;
            }
            let name: String = self.chars[start..self.pos].iter().collect();
            if self.peek() == Some('(') {
                let op = OpCode::from_name(&name)
                    .filter(|op| op.arity() == Arity::Unary)
                    .ok_or_else(|| ExprError::Parse(format!("unknown function '{name}'")))?;
                self.pos += 1;
                let arg = self.expr()?;
                if !self.eat(')') {
                    return Err(self.err("expected ')'"));
                }
                return Ok(Node::op1(self.op(op)?, arg));
            }
            if name == "pi" {
                return Ok(Node::leaf(self.op(OpCode::Pi)?));
            }
            return self
                .basis
                .var_index(&name)
                .map(Node::Var)
                .ok_or_else(|| ExprError::Parse(format!("unknown variable '{name}'")));
        }
        Err(self.err(&format!("unexpected '{c}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(vars: &[&str]) -> BasisSet {
        BasisSet::with_variables(vars.iter().copied()).unwrap()
    }

    #[test]
    fn rpn_to_infix_examples() {
        let b = basis(&["x", "y"]);
        let names = b.variables().to_vec();
        let e = Expression::parse_rpn("x y +", &b).unwrap();
        assert_eq!(e.to_infix(&names), "x+y");
        let e = Expression::parse_rpn("x C C", &b).unwrap();
        assert_eq!(e.to_infix(&names), "cos(cos(x))");

        let b = basis(&["m", "v"]);
        let e = Expression::parse_rpn("m v v * * 2 /", &b).unwrap();
        // RPN `m v v * *` is m*(v*v); the grouping is kept explicit.
        assert_eq!(e.to_infix(b.variables()), "m*(v*v)/2");
    }

    #[test]
    fn rpn_round_trip_with_constant_markers() {
        let b = basis(&["x"]);
        let e = Expression::parse_rpn("x #1 + 1 * 1/3 - -2.5 /", &b).unwrap();
        assert_eq!(e.params(), &[Param::Integer(1), Param::Rational(1, 3), Param::Real(-2.5)]);
        let text = e.to_rpn(b.variables());
        assert_eq!(text, "x #1 + 1 * 1/3 - -2.5 /");
        assert_eq!(Expression::parse_rpn(&text, &b).unwrap(), e);
    }

    #[test]
    fn infix_parse_examples() {
        let b = basis(&["x", "y", "z"]);
        let e = Expression::parse_infix("x^2 + -y*z/[1/3] - sqrt(pi)", &b).unwrap();
        assert_eq!(e.to_rpn(b.variables()), "x S y ~ z * 1/3 / + P R -");
        let e = Expression::parse_infix("2.5e-3*x", &b).unwrap();
        assert_eq!(e.params(), &[Param::Real(2.5e-3)]);
        assert!(Expression::parse_infix("x^3", &b).is_err());
        assert!(Expression::parse_infix("foo(x)", &b).is_err());
        assert!(Expression::parse_infix("(x+y", &b).is_err());
    }

    #[test]
    fn malformed_rpn_is_structural_error() {
        let b = basis(&["x"]);
        assert!(matches!(
            Expression::parse_rpn("x +", &b),
            Err(ExprError::Structure(_))
        ));
        assert!(matches!(
            Expression::parse_rpn("x q", &b),
            Err(ExprError::Parse(_))
        ));
    }
}
