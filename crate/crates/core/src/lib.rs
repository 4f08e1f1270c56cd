//! Cycle-level model of a speculative out-of-order core with CFI-constrained
//! speculation, plus the assembler and instrumentation toolchain that feeds it.

pub mod asm;
pub mod cli;
pub mod config;
pub mod harness;
pub mod image;
pub mod instrument;
pub mod isa;
pub mod memory;
pub mod pipeline;
pub mod predictors;
