//! Build the full security matrix plus the performance table and write the
//! report files into a directory (default `report/`).

use std::fs;
use std::path::PathBuf;

use speccfi::config::{Defense, FenceKind, PipelineConfig};
use speccfi::harness::{fences_dat, normalized_ipc_dat, perf_table, security_matrix, Scenario, BENCHMARKS, MATRIX_DEFENSES};

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "report".into()));
    let cfg = PipelineConfig::default();
    let (m, _) = security_matrix(&Scenario::all(), &MATRIX_DEFENSES, FenceKind::Strict, 10, 0, &cfg).expect("attacks run");
    print!("{}", m.render());
    let t = perf_table(&BENCHMARKS, &Defense::ALL, &[FenceKind::Strict, FenceKind::Relaxed], &cfg).expect("kernels run");
    fs::create_dir_all(&dir).expect("create report dir");
    fs::write(dir.join("matrix.csv"), m.to_csv()).expect("write");
    fs::write(dir.join("perf.csv"), t.to_csv()).expect("write");
    fs::write(dir.join("normalized_ipc.dat"), normalized_ipc_dat(&t)).expect("write");
    fs::write(dir.join("fences.dat"), fences_dat(&t)).expect("write");
    println!("wrote {}", dir.display());
}
