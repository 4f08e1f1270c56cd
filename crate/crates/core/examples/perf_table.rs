//! Run the benchmark kernels under every defense and fence kind and print
//! the normalized-IPC table.

use speccfi::config::{Defense, FenceKind, PipelineConfig};
use speccfi::harness::{normalized_ipc_dat, perf_table, BENCHMARKS};

fn main() {
    let t = perf_table(&BENCHMARKS, &Defense::ALL, &[FenceKind::Strict, FenceKind::Relaxed], &PipelineConfig::default())
        .expect("kernels run");
    println!("{}", t.render());
    println!("{}", normalized_ipc_dat(&t));
}
