//! The formula language: tokens, the typed RPN grammar, programs and their
//! evaluation over panels.

mod eval;
mod grammar;
pub mod ops;
mod program;
mod token;

pub use eval::{evaluate, FactorMatrix};
pub use grammar::{Grammar, Kind, MoveSet, StackState};
pub use program::{tokenize_infix, RpnProgram};
pub use token::{Feature, Op, OpClass, Token, Vocabulary, VocabularyConfig};
