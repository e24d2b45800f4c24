//! Expression vocabulary, postfix programs and their text forms.

mod basis;
mod expression;
mod param;
mod text;
mod tree;

pub use basis::{valid_variable_name, Arity, BasisOp, BasisSet, OpCode};
pub use expression::{validate_tokens, Expression, GradWrt, Token};
pub use param::{Param, ParamVector};
pub use tree::Node;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    /// The token sequence is not a valid postfix program.
    #[error("malformed expression: {0}")]
    Structure(String),
    #[error("expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("invalid constant: {0}")]
    InvalidParam(String),
    #[error("parse error: {0}")]
    Parse(String),
}
