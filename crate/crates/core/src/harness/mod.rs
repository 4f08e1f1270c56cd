//! Reference interpreter, attack scenarios, benchmarks and experiment
//! tables.

pub mod interp;
pub mod scenarios;

pub use interp::{interpret, ArchState, InterpError};
pub use scenarios::{
    run_attack, run_attack_with, AttackError, AttackKind, AttackOptions, AttackResult, Channel, Placement,
    Scenario, Space, Trial,
};
pub mod bench;
pub use bench::{benchmark, perf_table, run_bench, BenchError, BenchResult, Benchmark, PerfRow, PerfTable, BENCHMARKS};
pub mod tables;
pub use tables::{fences_dat, normalized_ipc_dat, security_matrix, MatrixRow, SecurityMatrix, MATRIX_DEFENSES};
pub mod randprog;
pub use randprog::{random_program, RandSpec, RAND_DATA_SIZE};
