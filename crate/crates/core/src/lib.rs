//! Kernel DSL frontend, two-level IR, optimization pipeline, and VKA backend.
//!
//! The crate takes annotated kernel source through these stages:
//!
//! 1. [`parser`] — DSL text → structured HIR ([`ast`]).
//! 2. [`validate`] — name/type checking with positioned diagnostics.
//! 3. HIR passes ([`passes`]) — parallelization, inlining, scalar
//!    replacement, bounds-check insertion.
//! 4. [`lower`] — HIR → CFG-based LIR ([`lir`]) with schema-resolved field
//!    offsets and recorded per-field access flags.
//! 5. LIR optimizations ([`opt`]) — constant folding, copy propagation,
//!    CSE, LICM, straightening, DCE (to a fixpoint), then if-conversion
//!    ([`predicate`]) and the ISA bridge ([`bridge`]).
//! 6. [`vka`] — textual virtual kernel assembly emission and assembly back
//!    into an executable program.
//!
//! [`pipeline`] drives the stages; [`interp`] is the serial reference
//! interpreter used as the semantic oracle for all of them.

pub mod ast;
pub mod diag;
pub mod gen;
pub mod lexer;
pub mod lir;
pub mod lower;
pub mod opt;
pub mod predicate;
pub mod bridge;
pub mod vka;
pub mod parser;
pub mod pipeline;
pub mod interp;
pub mod passes;
pub mod pretty;
pub mod schema;
pub mod types;
pub mod validate;
