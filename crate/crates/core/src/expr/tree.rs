//! Tree view of expressions, used to assemble composite formulas and to
//! apply the handful of identity rewrites the refiners ask for.

use super::{Arity, ExprError, Expression, OpCode, Param, Token};

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Var(usize),
    Const(Param),
    Op(OpCode, Vec<Node>),
}

impl Node {
    pub fn op1(op: OpCode, a: Node) -> Node {
        Node::Op(op, vec![a])
    }

    pub fn op2(op: OpCode, a: Node, b: Node) -> Node {
        Node::Op(op, vec![a, b])
    }

    pub fn int(m: i64) -> Node {
        Node::Const(Param::Integer(m))
    }

    pub fn real(r: f64) -> Node {
        Node::Const(Param::Real(r))
    }

    pub fn leaf(op: OpCode) -> Node {
        Node::Op(op, vec![])
    }

    /// True when the subtree contains no variables.
    pub fn is_constant(&self) -> bool {
        match self {
            Node::Var(_) => false,
            Node::Const(_) => true,
            Node::Op(_, kids) => kids.iter().all(Node::is_constant),
        }
    }

    /// Numeric value of a constant subtree.
    pub fn const_value(&self) -> Option<f64> {
        match self {
            Node::Var(_) => None,
            Node::Const(p) => Some(p.value()),
            Node::Op(op, kids) => {
                let v = match op.arity() {
                    Arity::Nullary => op.constant(),
                    Arity::Unary => op.apply1(kids[0].const_value()?),
                    Arity::Binary => op.apply2(kids[0].const_value()?, kids[1].const_value()?),
                };
                if v.is_nan() {
                    None
                } else {
                    Some(v)
                }
            }
        }
    }

    fn exact_value(&self) -> Option<f64> {
        match self {
            Node::Const(Param::Integer(m)) => Some(*m as f64),
            Node::Op(OpCode::Zero, _) => Some(0.0),
            Node::Op(OpCode::One, _) => Some(1.0),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.exact_value() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.exact_value() == Some(1.0)
    }

    /// Removes additive zeros, multiplicative ones and zeros, and double
    /// negation. Nothing else is rewritten.
    pub fn simplify_identities(self) -> Node {
        match self {
            Node::Op(op, kids) => {
                let kids: Vec<Node> = kids.into_iter().map(Node::simplify_identities).collect();
                match (op, kids.as_slice()) {
                    (OpCode::Add, [a, b]) if b.is_zero() => a.clone(),
                    (OpCode::Add, [a, b]) if a.is_zero() => b.clone(),
                    (OpCode::Sub, [a, b]) if b.is_zero() => a.clone(),
                    (OpCode::Sub, [a, b]) if a.is_zero() => Node::op1(OpCode::Neg, b.clone()),
                    (OpCode::Mul, [a, _]) if a.is_zero() => Node::int(0),
                    (OpCode::Mul, [_, b]) if b.is_zero() => Node::int(0),
                    (OpCode::Mul, [a, b]) if a.is_one() => b.clone(),
                    (OpCode::Mul, [a, b]) if b.is_one() => a.clone(),
                    (OpCode::Div, [a, b]) if b.is_one() => a.clone(),
                    (OpCode::Div, [a, b]) if a.is_zero() && !b.is_zero() => Node::int(0),
                    (OpCode::Neg, [Node::Op(OpCode::Neg, inner)]) => inner[0].clone(),
                    _ => Node::Op(op, kids),
                }
            }
            other => other,
        }
    }

    fn emit(&self, tokens: &mut Vec<Token>, params: &mut Vec<Param>) {
        match self {
            Node::Var(i) => tokens.push(Token::Var(*i as u16)),
            Node::Const(p) => {
                tokens.push(Token::Param(params.len() as u16));
                params.push(*p);
            }
            Node::Op(op, kids) => {
                for k in kids {
                    k.emit(tokens, params);
                }
                tokens.push(Token::Op(*op));
            }
        }
    }

    pub fn to_expression(&self) -> Result<Expression, ExprError> {
        let mut tokens = Vec::new();
        let mut params = Vec::new();
        self.emit(&mut tokens, &mut params);
        Expression::new(tokens, params)
    }

    pub fn count_vars(&self) -> usize {
        match self {
            Node::Var(_) => 1,
            Node::Const(_) => 0,
            Node::Op(_, kids) => kids.iter().map(Node::count_vars).sum(),
        }
    }
}

impl Expression {
    pub fn to_tree(&self) -> Node {
        let mut stack: Vec<Node> = Vec::with_capacity(self.len());
        for t in self.tokens() {
            match *t {
                Token::Var(i) => stack.push(Node::Var(i as usize)),
                Token::Param(k) => stack.push(Node::Const(self.params()[k as usize])),
                Token::Op(op) => {
                    let n = op.arity().count();
                    let kids = stack.split_off(stack.len() - n);
                    stack.push(Node::Op(op, kids));
                }
            }
        }
        stack.pop().expect("validated program")
    }

    pub fn simplified(&self) -> Expression {
        self.to_tree()
            .simplify_identities()
            .to_expression()
            .expect("rewrites keep programs valid")
    }
}
