//! A closed, interpreted subset of pandas column assignments.
//!
//! Generated code is never executed. Each `df['name'] = expr` line is parsed
//! into an [`Expr`] tree and evaluated column-wise against a [`Dataset`].
//!
//! [`Dataset`]: crate::task::Dataset

mod ast;
mod eval;
mod lexer;
mod parser;
pub(crate) mod source;

pub use ast::{Agg, BinOp, CmpOp, Expr, FeatureDef, FeatureProgram, Literal, UnaryFn};
pub use eval::evaluate;
pub use parser::{parse_expr, parse_program};

use thiserror::Error;

pub const MAX_FEATURES: usize = 16;
pub const MAX_EXPR_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: unknown column `{name}`")]
    UnknownColumn { name: String, line: usize },
    #[error("line {line}: the label column `{name}` cannot be used in a feature")]
    LabelReference { name: String, line: usize },
    #[error("line {line}: unsupported construct: {construct}")]
    Unsupported { construct: String, line: usize },
    #[error("line {line}: feature `{name}` is defined twice or shadows an existing column")]
    DuplicateFeature { name: String, line: usize },
    #[error("line {line}: syntax error: {message}")]
    Syntax { message: String, line: usize },
    #[error("{0} features defined, at most {MAX_FEATURES} are allowed")]
    TooManyFeatures(usize),
    #[error("no feature assignments found")]
    Empty,
    #[error("line {line}: expression nests deeper than {MAX_EXPR_DEPTH} levels")]
    TooDeep { line: usize },
}

impl ParseError {
    /// Short machine-readable category, used in run logs.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::UnknownColumn { .. } => "unknown_column",
            ParseError::LabelReference { .. } => "label_reference",
            ParseError::Unsupported { .. } => "unsupported",
            ParseError::DuplicateFeature { .. } => "duplicate_feature",
            ParseError::Syntax { .. } => "syntax",
            ParseError::TooManyFeatures(_) => "too_many_features",
            ParseError::Empty => "empty",
            ParseError::TooDeep { .. } => "too_deep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("feature `{feature}` is degenerate: {reason}")]
    Degenerate { feature: String, reason: String },
    #[error("column `{0}` is not available")]
    MissingColumn(String),
}
