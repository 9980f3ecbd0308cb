//! The predicate language used by reasoning nodes.
//!
//! Programs are S-expressions over object sets, e.g.
//! `(behind (all) (category "table"))`. See `docs/dsl.md` for the grammar.

pub mod ast;
pub mod eval;
pub mod format;
pub mod parser;
pub mod predicates;
pub mod semantic;

use thiserror::Error;

pub use ast::{supported_operators, Expr, PredicateProgram};
pub use eval::{eval_program, EvalContext, EvalParams, IdSet};
pub use format::format_scene;
pub use parser::{parse_any, parse_program};
pub use predicates::{pred_behind, MissingCapability};
pub use semantic::{ChatSemantic, FallbackSemantic, KeywordSemantic, SemanticError, SemanticProvider};

#[derive(Debug, Error)]
pub enum DslError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("`{op}` at byte {offset} takes {expected} argument(s), got {got}")]
    Arity {
        op: String,
        expected: String,
        got: usize,
        offset: usize,
    },
    #[error("unknown predicate `{name}` at byte {offset}; supported: {}", supported_operators().join(", "))]
    UnknownPredicate { name: String, offset: usize },
    #[error("reference to unknown plan node `{0}`")]
    UnknownNode(String),
    #[error(transparent)]
    MissingCapability(#[from] MissingCapability),
    #[error("semantic provider error: {0}")]
    Semantic(#[from] SemanticError),
}

impl DslError {
    pub(crate) fn syntax(offset: usize, message: impl Into<String>) -> Self {
        DslError::Syntax {
            offset,
            message: message.into(),
        }
    }
}
