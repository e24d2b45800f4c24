//! Antiderivatives from a small rule table: linearity, powers up to two,
//! square roots, reciprocals, exp, ln, sin and cos, each also under an
//! affine argument `a·x + b`.

use crate::expr::{Expression, Node, OpCode, Param};

/// A linear combination of terms.
type Terms = Vec<(f64, Node)>;

/// `(a, b)` when `node` equals `a·x + b` in the variable `var`.
fn affine(node: &Node, var: usize) -> Option<(f64, f64)> {
    match node {
        Node::Var(v) if *v == var => Some((1.0, 0.0)),
        Node::Var(_) => None,
        _ if node.is_constant() => Some((0.0, node.const_value()?)),
        Node::Op(op, kids) => match (op, kids.as_slice()) {
            (OpCode::Add, [l, r]) => {
                let ((a, b), (c, d)) = (affine(l, var)?, affine(r, var)?);
                Some((a + c, b + d))
            }
            (OpCode::Sub, [l, r]) => {
                let ((a, b), (c, d)) = (affine(l, var)?, affine(r, var)?);
                Some((a - c, b - d))
            }
            (OpCode::Neg, [l]) => affine(l, var).map(|(a, b)| (-a, -b)),
            (OpCode::Mul, [l, r]) if l.is_constant() => {
                let k = l.const_value()?;
                affine(r, var).map(|(a, b)| (k * a, k * b))
            }
            (OpCode::Mul, [l, r]) if r.is_constant() => {
                let k = r.const_value()?;
                affine(l, var).map(|(a, b)| (k * a, k * b))
            }
            (OpCode::Div, [l, r]) if r.is_constant() => {
                let k = r.const_value()?;
                if k == 0.0 {
                    return None;
                }
                affine(l, var).map(|(a, b)| (a / k, b / k))
            }
            _ => None,
        },
        _ => None,
    }
}

/// The argument `t` and slope `a` when `node` is affine and not constant.
fn slope(node: &Node, var: usize) -> Option<f64> {
    affine(node, var).map(|(a, _)| a).filter(|a| *a != 0.0 && a.is_finite())
}

fn scale(terms: Terms, k: f64) -> Terms {
    terms.into_iter().map(|(c, t)| (c * k, t)).collect()
}

fn op1(op: OpCode, a: &Node) -> Node {
    Node::op1(op, a.clone())
}

fn integrate(node: &Node, var: usize) -> Option<Terms> {
    if node.is_constant() {
        return Some(vec![(node.const_value()?, Node::Var(var))]);
    }
    if let Some((a, b)) = affine(node, var) {
        return Some(vec![(a / 2.0, op1(OpCode::Square, &Node::Var(var))), (b, Node::Var(var))]);
    }
    let Node::Op(op, kids) = node else { return None };
    match (op, kids.as_slice()) {
        (OpCode::Add, [l, r]) => {
            let mut t = integrate(l, var)?;
            t.extend(integrate(r, var)?);
            Some(t)
        }
        (OpCode::Sub, [l, r]) => {
            let mut t = integrate(l, var)?;
            t.extend(scale(integrate(r, var)?, -1.0));
            Some(t)
        }
        (OpCode::Neg, [l]) => Some(scale(integrate(l, var)?, -1.0)),
        (OpCode::Mul, [l, r]) if l.is_constant() => Some(scale(integrate(r, var)?, l.const_value()?)),
        (OpCode::Mul, [l, r]) if r.is_constant() => Some(scale(integrate(l, var)?, r.const_value()?)),
        (OpCode::Mul, [l, r]) if l == r => integrate(&op1(OpCode::Square, l), var),
        (OpCode::Div, [l, r]) if r.is_constant() => {
            let k = r.const_value()?;
            (k != 0.0).then_some(())?;
            Some(scale(integrate(l, var)?, 1.0 / k))
        }
        (OpCode::Div, [l, r]) if l.is_constant() => {
            Some(scale(integrate(&op1(OpCode::Inv, r), var)?, l.const_value()?))
        }
        (OpCode::Inv, [t]) => reciprocal(t, var),
        (_, [t]) => {
            let a = slope(t, var)?;
            let term = match op {
                OpCode::Square => (1.0 / (3.0 * a), Node::op2(OpCode::Mul, t.clone(), op1(OpCode::Square, t))),
                OpCode::Sqrt => (2.0 / (3.0 * a), Node::op2(OpCode::Mul, t.clone(), op1(OpCode::Sqrt, t))),
                OpCode::Exp => (1.0 / a, op1(OpCode::Exp, t)),
                OpCode::Sin => (-1.0 / a, op1(OpCode::Cos, t)),
                OpCode::Cos => (1.0 / a, op1(OpCode::Sin, t)),
                OpCode::Ln => {
                    let tl = Node::op2(OpCode::Mul, t.clone(), op1(OpCode::Ln, t));
                    return Some(vec![(1.0 / a, tl), (-1.0 / a, t.clone())]);
                }
                _ => return None,
            };
            Some(vec![term])
        }
        _ => None,
    }
}

/// ∫ 1/t for affine t, t², or √t.
fn reciprocal(t: &Node, var: usize) -> Option<Terms> {
    if let Some(a) = slope(t, var) {
        return Some(vec![(1.0 / a, op1(OpCode::Ln, t))]);
    }
    let Node::Op(op, kids) = t else { return None };
    let [inner] = kids.as_slice() else { return None };
    let a = slope(inner, var)?;
    match op {
        OpCode::Square => Some(vec![(-1.0 / a, op1(OpCode::Inv, inner))]),
        OpCode::Sqrt => Some(vec![(2.0 / a, op1(OpCode::Sqrt, inner))]),
        _ => None,
    }
}

/// Exact small rationals become rational constants; the rest stay real.
fn coefficient(c: f64) -> Param {
    for den in 1..=1000i64 {
        let num = (c * den as f64).round();
        if (num / den as f64 - c).abs() <= 1e-12 * c.abs().max(1.0) && num.abs() < 1e15 {
            return Param::rational(num as i64, den).unwrap_or(Param::Real(c));
        }
    }
    Param::Real(c)
}

fn assemble(terms: Terms) -> Option<Node> {
    let mut out: Option<Node> = None;
    for (c, t) in terms {
        if c == 0.0 {
            continue;
        }
        if !c.is_finite() {
            return None;
        }
        let mag = coefficient(c.abs());
        let term = if mag == Param::Integer(1) {
            t
        } else {
            Node::op2(OpCode::Mul, Node::Const(mag), t)
        };
        out = Some(match (out, c < 0.0) {
            (None, false) => term,
            (None, true) => Node::op1(OpCode::Neg, term),
            (Some(acc), false) => Node::op2(OpCode::Add, acc, term),
            (Some(acc), true) => Node::op2(OpCode::Sub, acc, term),
        });
    }
    out
}

/// Antiderivative in variable `var`, up to an additive constant. `None`
/// when no rule applies.
pub fn symbolic_integrate(expr: &Expression, var: usize) -> Option<Expression> {
    if expr.variables_used().iter().any(|&v| v != var) {
        return None;
    }
    let terms = integrate(&expr.to_tree(), var)?;
    let node = assemble(terms)?.simplify_identities();
    node.to_expression().ok()
}
