//! Probabilistic, resource-aware session types.
//!
//! A process language where channels carry binary session types annotated
//! with probabilities and potentials. The crate parses programs, checks
//! them against their declarations, infers unknown (`*`) probability and
//! potential annotations by exact rational linear programming, and executes
//! configurations under a nested-multiverse semantics whose invariants
//! (type preservation including the exact expected potential, global
//! progress, and the expected-work bound) are re-checked at runtime.

pub mod ast;
pub mod diag;
pub mod lexer;
pub mod linsolve;
pub mod parser;
pub mod pretty;
pub mod rational;
pub mod cli;
pub mod runtime;
pub mod potential;
pub mod typecheck;
