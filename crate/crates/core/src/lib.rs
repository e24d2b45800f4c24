//! Pareto-optimal symbolic regression.
//!
//! Candidate formulas are scored on two axes, complexity in bits and mean
//! error-description-length on the data, and only the non-dominated ones
//! are kept. Search combines polynomial fits, raced brute-force enumeration
//! and recursive decomposition driven by gradients of a smooth oracle.

pub mod brute;
pub mod data;
pub mod expr;
pub mod harness;
pub mod mdl;
pub mod modularity;
pub mod par;
pub mod pareto;
pub mod refine;
pub mod solver;
pub mod surrogate;

pub use data::DataTable;
pub use expr::{BasisSet, ExprError, Expression, OpCode, Param};
pub use mdl::{MdlConfig, ModelScore};
pub use pareto::{ParetoFrontier, ParetoModel};
