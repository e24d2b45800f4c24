use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ExprError, Param};

/// Built-in basis functions. Each has a one-character RPN symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpCode {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Inv,
    Sqrt,
    Square,
    Exp,
    Ln,
    Sin,
    Cos,
    Arcsin,
    Arctan,
    Tanh,
    Zero,
    One,
    Pi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arity {
    Nullary,
    Unary,
    Binary,
}

impl Arity {
    pub fn count(self) -> usize {
        match self {
            Arity::Nullary => 0,
            Arity::Unary => 1,
            Arity::Binary => 2,
        }
    }
}

impl OpCode {
    pub const ALL: [OpCode; 18] = [
        OpCode::Add,
        OpCode::Sub,
        OpCode::Mul,
        OpCode::Div,
        OpCode::Neg,
        OpCode::Inv,
        OpCode::Sqrt,
        OpCode::Square,
        OpCode::Exp,
        OpCode::Ln,
        OpCode::Sin,
        OpCode::Cos,
        OpCode::Arcsin,
        OpCode::Arctan,
        OpCode::Tanh,
        OpCode::Zero,
        OpCode::One,
        OpCode::Pi,
    ];

    pub fn symbol(self) -> char {
        match self {
            OpCode::Add => '+',
            OpCode::Sub => '-',
            OpCode::Mul => '*',
            OpCode::Div => '/',
            OpCode::Neg => '~',
            OpCode::Inv => 'I',
            OpCode::Sqrt => 'R',
            OpCode::Square => 'S',
            OpCode::Exp => 'E',
            OpCode::Ln => 'L',
            OpCode::Sin => 'N',
            OpCode::Cos => 'C',
            OpCode::Arcsin => 'A',
            OpCode::Arctan => 'T',
            OpCode::Tanh => 'H',
            OpCode::Zero => '0',
            OpCode::One => '1',
            OpCode::Pi => 'P',
        }
    }

    pub fn from_symbol(c: char) -> Option<OpCode> {
        OpCode::ALL.iter().copied().find(|op| op.symbol() == c)
    }

    /// Identifier used in infix output (`sqrt(x)`, `pi`, ...).
    pub fn name(self) -> &'static str {
        match self {
            OpCode::Add => "add",
            OpCode::Sub => "sub",
            OpCode::Mul => "mul",
            OpCode::Div => "div",
            OpCode::Neg => "neg",
            OpCode::Inv => "inv",
            OpCode::Sqrt => "sqrt",
            OpCode::Square => "sq",
            OpCode::Exp => "exp",
            OpCode::Ln => "ln",
            OpCode::Sin => "sin",
            OpCode::Cos => "cos",
            OpCode::Arcsin => "asin",
            OpCode::Arctan => "atan",
            OpCode::Tanh => "tanh",
            OpCode::Zero => "0",
            OpCode::One => "1",
            OpCode::Pi => "pi",
        }
    }

    pub fn from_name(name: &str) -> Option<OpCode> {
        OpCode::ALL.iter().copied().find(|op| op.name() == name)
    }

    pub fn arity(self) -> Arity {
        match self {
            OpCode::Add | OpCode::Sub | OpCode::Mul | OpCode::Div => Arity::Binary,
            OpCode::Zero | OpCode::One | OpCode::Pi => Arity::Nullary,
            _ => Arity::Unary,
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, OpCode::Add | OpCode::Mul)
    }

    pub fn constant(self) -> f64 {
        match self {
            OpCode::Zero => 0.0,
            OpCode::One => 1.0,
            OpCode::Pi => std::f64::consts::PI,
            _ => f64::NAN,
        }
    }

    /// Domain guard for unary ops. Results outside the guard, or non-finite
    /// results, are reported as NaN and treated as invalid by callers.
    #[inline]
    pub fn apply1(self, a: f64) -> f64 {
        let r = match self {
            OpCode::Neg => -a,
            OpCode::Inv => {
                if a == 0.0 {
                    return f64::NAN;
                }
                1.0 / a
            }
            OpCode::Sqrt => {
                if a < 0.0 {
                    return f64::NAN;
                }
                a.sqrt()
            }
            OpCode::Square => a * a,
            OpCode::Exp => a.exp(),
            OpCode::Ln => {
                if a <= 0.0 {
                    return f64::NAN;
                }
                a.ln()
            }
            OpCode::Sin => a.sin(),
            OpCode::Cos => a.cos(),
            OpCode::Arcsin => {
                if !(-1.0..=1.0).contains(&a) {
                    return f64::NAN;
                }
                a.asin()
            }
            OpCode::Arctan => a.atan(),
            OpCode::Tanh => a.tanh(),
            _ => f64::NAN,
        };
        if r.is_finite() {
            r
        } else {
            f64::NAN
        }
    }

    #[inline]
    pub fn apply2(self, a: f64, b: f64) -> f64 {
        let r = match self {
            OpCode::Add => a + b,
            OpCode::Sub => a - b,
            OpCode::Mul => a * b,
            OpCode::Div => {
                if b == 0.0 {
                    return f64::NAN;
                }
                a / b
            }
            _ => f64::NAN,
        };
        if r.is_finite() {
            r
        } else {
            f64::NAN
        }
    }

    /// Derivative of a unary op at `a`, given its value `v = op(a)`.
    #[inline]
    pub fn deriv1(self, a: f64, v: f64) -> f64 {
        match self {
            OpCode::Neg => -1.0,
            OpCode::Inv => -v * v,
            OpCode::Sqrt => {
                if v == 0.0 {
                    f64::NAN
                } else {
                    0.5 / v
                }
            }
            OpCode::Square => 2.0 * a,
            OpCode::Exp => v,
            OpCode::Ln => 1.0 / a,
            OpCode::Sin => a.cos(),
            OpCode::Cos => -a.sin(),
            OpCode::Arcsin => {
                let d = 1.0 - a * a;
                if d <= 0.0 {
                    f64::NAN
                } else {
                    1.0 / d.sqrt()
                }
            }
            OpCode::Arctan => 1.0 / (1.0 + a * a),
            OpCode::Tanh => 1.0 - v * v,
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// A single basis function as seen by a [`BasisSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisOp {
    pub code: OpCode,
}

impl BasisOp {
    pub fn symbol(&self) -> char {
        self.code.symbol()
    }
    pub fn arity(&self) -> Arity {
        self.code.arity()
    }
    pub fn name(&self) -> &'static str {
        self.code.name()
    }
}

/// Ordered basis functions plus ordered variable names. The order fixes the
/// brute-force enumeration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    ops: Vec<OpCode>,
    variables: Vec<String>,
    /// Integer or rational constants brute force may place as parameters.
    literals: Vec<Param>,
}

impl BasisSet {
    pub fn new(
        ops: Vec<OpCode>,
        variables: Vec<String>,
        literals: Vec<Param>,
    ) -> Result<Self, ExprError> {
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].contains(op) {
                return Err(ExprError::InvalidBasis(format!(
                    "duplicate symbol '{}'",
                    op.symbol()
                )));
            }
        }
        for (i, v) in variables.iter().enumerate() {
            if !valid_variable_name(v) {
                return Err(ExprError::InvalidBasis(format!(
                    "invalid variable name '{v}'"
                )));
            }
            if variables[..i].contains(v) {
                return Err(ExprError::InvalidBasis(format!("duplicate variable '{v}'")));
            }
        }
        if variables.len() > u16::MAX as usize {
            return Err(ExprError::InvalidBasis("too many variables".into()));
        }
        if let Some(p) = literals.iter().find(|p| matches!(p, Param::Real(_))) {
            return Err(ExprError::InvalidBasis(format!(
                "literal {p} is not an integer or rational"
            )));
        }
        Ok(BasisSet {
            ops,
            variables,
            literals,
        })
    }

    /// Default vocabulary: `+ - * /`, `neg inv sqrt sq exp ln sin cos asin
    /// atan tanh`, and the constants `0 1 pi`, with the integer literal 2.
    pub fn with_variables<S: Into<String>>(
        vars: impl IntoIterator<Item = S>,
    ) -> Result<Self, ExprError> {
        BasisSet::new(
            OpCode::ALL.to_vec(),
            vars.into_iter().map(Into::into).collect(),
            vec![Param::Integer(2)],
        )
    }

    pub fn ops(&self) -> &[OpCode] {
        &self.ops
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn literals(&self) -> &[Param] {
        &self.literals
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn contains(&self, op: OpCode) -> bool {
        self.ops.contains(&op)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn with_literals(mut self, literals: Vec<Param>) -> Result<Self, ExprError> {
        self.literals = literals;
        BasisSet::new(self.ops, self.variables, self.literals)
    }

    /// Same operators and literals over different variables.
    pub fn rebind(&self, variables: Vec<String>) -> Result<Self, ExprError> {
        BasisSet::new(self.ops.clone(), variables, self.literals.clone())
    }
}

/// Variable names must not be confused with op symbols or numbers.
pub fn valid_variable_name(v: &str) -> bool {
    let mut chars = v.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    if !(first.is_alphabetic() || first == '_') {
        return false;
    }
    if !v.chars().all(|c| c.is_alphanumeric() || c == '_') {
        return false;
    }
    if v.chars().count() == 1 && OpCode::from_symbol(first).is_some() {
        return false;
    }
    OpCode::from_name(v).is_none()
}
