//! Speculative out-of-order core: fetch with prediction, decode-stage CFI
//! checks, rename/issue/execute over a reorder buffer, in-order commit and
//! misprediction recovery.

pub mod cfi;
pub mod sim;
pub mod stats;

pub use cfi::{decode_cfi_check, CfiDecodeState, DecodeAction};
pub use sim::{
    run_until_halt, Injection, RecoveryCheckpoint, RsbSnapshot, SimError, SimOptions, Simulator,
    SnapshotReason, THREADS,
};
pub use stats::{trace_csv, CfiViolation, RunStats, TraceEvent, TraceKind, ViolationEdge};
