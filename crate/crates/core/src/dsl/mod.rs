//! Metric definitions: expressions, the `.gmet` format and built-in families.

mod builtin;
mod expr;
mod metric;
mod parse;
mod tape;

pub use builtin::BuiltinFamily;
pub use expr::{Expr, Func, Node};
pub use metric::{Interval, MetricSpec};
pub use parse::parse_metric;
pub use tape::{Binding, Tape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("component matrix is not symmetric: g[{0}][{1}] differs from its transpose")]
    NonSymmetric(usize, usize),
    #[error("unbound parameter `{name}` at {line}:{col}")]
    Unbound { name: String, line: usize, col: usize },
    #[error("metric is not positive definite at {point:?}")]
    NotPositiveDefinite { point: Vec<f64> },
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
}

/// Symbolic partial derivative of `e` with respect to `var`.
pub fn differentiate(e: &Expr, var: &str) -> Expr {
    e.differentiate(var)
}
