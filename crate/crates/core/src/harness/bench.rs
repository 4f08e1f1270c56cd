//! Benchmark kernels and the performance table.
//!
//! Kernels are written with bare `cfi_lbl` markers at every indirect target
//! so fine-grained instrumentation relabels in place and code addresses stay
//! put; the collision kernels depend on that.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::{assemble, AsmError, CfiMode};
use crate::config::{Defense, FenceKind, PipelineConfig};
use crate::image::{load_image, ImageError, Pid};
use crate::instrument::{instrument_with, transform_retpoline, LabelError};
use crate::isa::Program;
use crate::pipeline::{RunStats, SimError, SimOptions, Simulator};

pub const BENCH_DATA_SIZE: usize = 0x10000;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown benchmark `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Benchmark {
    pub name: &'static str,
    pub description: &'static str,
    pub source: &'static str,
}

const ARITH: &str = "\
.entry main
main:
  li r1, 0
  li r2, 3000
loop:
  add r1, r1, 3
  shl r3, r1, 2
  add r4, r3, r1
  add r2, r2, -1
  cmpi r2, 0
  jnz loop
  halt
";

const POINTER_CHASE: &str = "\
.entry main
main:
  li r1, 0x1000
  li r2, 384
build:
  add r3, r1, 64
  store r3, [r1]
  add r1, r1, 64
  add r2, r2, -1
  cmpi r2, 0
  jnz build
  li r4, 0x1000
  store r4, [r1]
  li r1, 0x1000
  li r2, 1500
chase:
  load r1, [r1]
  add r2, r2, -1
  cmpi r2, 0
  jnz chase
  halt
";

const VIRTUAL_DISPATCH: &str = "\
.func area int(int)
.site vcall int(int)
.entry main
main:
  li r5, area
  li r2, 1500
loop:
  add r1, r2, 0
vcall:
  call *r5
  add r6, r6, r1
  add r2, r2, -1
  cmpi r2, 0
  jnz loop
  halt
area:
  cfi_lbl
  shl r1, r1, 1
  add r1, r1, 7
  ret
";

const RECURSION: &str = "\
.entry main
main:
  li r7, 12
outer:
  li r6, 64
  call rec_a
  add r7, r7, -1
  cmpi r7, 0
  jnz outer
  halt
rec_a:
  add r6, r6, -1
  cmpi r6, 0
  jz done_a
  call rec_b
done_a:
  ret
rec_b:
  add r6, r6, -1
  cmpi r6, 0
  jz done_b
  call rec_a
done_b:
  ret
";

const STORE_HEAVY: &str = "\
.func fill void(ptr)
.site scall void(ptr)
.entry main
main:
  li r5, fill
  li r2, 400
  li r3, 0x1000
loop:
scall:
  call *r5
  add r2, r2, -1
  cmpi r2, 0
  jnz loop
  halt
fill:
  cfi_lbl
  store r2, [r3]
  store r2, [r3+8]
  store r2, [r3+16]
  store r2, [r3+24]
  store r2, [r3+32]
  store r2, [r3+40]
  add r3, r3, 64
  ret
";

/// A polymorphic `int(int)` site at 0x10 shares its BTB entry with a
/// `void(ptr)` site at its alias 0x211, so the two keep evicting each other
/// with targets of the wrong class.
const MIXED: &str = "\
.func fa int(int)
.func fb int(int)
.func gc void(ptr)
.site asite int(int)
.site bsite void(ptr)
.entry main
main:
  li r2, 500
  li r5, fa
  li r8, fb
  li r9, gc
  li r3, 0x1000
loop:
  add r10, r5, 0
  add r5, r8, 0
  add r8, r10, 0
  add r1, r2, 0
.org 0x10
asite:
  call *r5
  jmp far
back:
  add r2, r2, -1
  cmpi r2, 0
  jnz loop
  halt
fa:
  cfi_lbl
  add r1, r1, 1
  ret
fb:
  cfi_lbl
  shl r1, r1, 1
  ret
gc:
  cfi_lbl
  store r1, [r3]
  ret
.org 0x210
far:
  nop
bsite:
  call *r9
  jmp back
";

const DEEP_RETURN: &str = "\
.entry main
main:
  li r7, 150
loop:
  call f1
  add r7, r7, -1
  cmpi r7, 0
  jnz loop
  halt
f1:
  call f2
  ret
f2:
  call f3
  ret
f3:
  call f4
  ret
f4:
  call f5
  ret
f5:
  call f6
  ret
f6:
  call f7
  ret
f7:
  call f8
  ret
f8:
  call f9
  ret
f9:
  call f10
  ret
f10:
  call f11
  ret
f11:
  call f12
  ret
f12:
  add r1, r1, 1
  ret
";

/// Two same-class sites at BTB-aliasing addresses with different targets.
const BTB_COLLISION: &str = "\
.func ta int(int)
.func tb int(int)
.site s1 int(int)
.site s2 int(int)
.entry main
main:
  li r2, 500
  li r5, ta
  li r8, tb
.org 0x10
loop:
s1:
  call *r5
  jmp far
back:
  add r2, r2, -1
  cmpi r2, 0
  jnz loop
  halt
ta:
  cfi_lbl
  add r1, r1, 1
  ret
tb:
  cfi_lbl
  add r1, r1, 2
  ret
.org 0x211
far:
s2:
  call *r8
  jmp back
";

pub const BENCHMARKS: [Benchmark; 8] = [
    Benchmark {
        name: "arith",
        description: "integer loop, no indirect branches",
        source: ARITH,
    },
    Benchmark {
        name: "pointer-chase",
        description: "builds a ring of nodes and chases next pointers",
        source: POINTER_CHASE,
    },
    Benchmark {
        name: "virtual-dispatch",
        description: "monomorphic function-pointer call in a loop",
        source: VIRTUAL_DISPATCH,
    },
    Benchmark {
        name: "recursion",
        description: "depth-64 recursion through two alternating call sites",
        source: RECURSION,
    },
    Benchmark {
        name: "store-heavy",
        description: "indirect call into a store burst",
        source: STORE_HEAVY,
    },
    Benchmark {
        name: "mixed",
        description: "polymorphic site whose BTB entry aliases a site of another class",
        source: MIXED,
    },
    Benchmark {
        name: "deep-return",
        description: "twelve-deep call and return chain",
        source: DEEP_RETURN,
    },
    Benchmark {
        name: "btb-collision",
        description: "two same-class sites thrashing one BTB entry",
        source: BTB_COLLISION,
    },
];

pub fn benchmark(name: &str) -> Result<Benchmark, BenchError> {
    BENCHMARKS
        .iter()
        .find(|b| b.name == name)
        .copied()
        .ok_or_else(|| BenchError::Unknown(name.to_string()))
}

impl Benchmark {
    /// The fine-grained instrumented kernel.
    pub fn instrumented(&self) -> Result<Program, BenchError> {
        let p = assemble(self.source, CfiMode::Coarse)?;
        Ok(instrument_with(&p, CfiMode::Fine, None)?.0)
    }

    /// The program a defense runs: the instrumented kernel, rewritten for the
    /// software fence defense.
    pub fn program_for(&self, defense: Defense, fence_kind: FenceKind) -> Result<Program, BenchError> {
        let p = self.instrumented()?;
        Ok(match defense {
            Defense::RetpolineSw => transform_retpoline(&p, fence_kind),
            _ => p,
        })
    }

    /// Contains an indirect call, indirect jump or return.
    pub fn has_indirect(&self) -> bool {
        assemble(self.source, CfiMode::Coarse)
            .map(|p| p.instructions.iter().any(|i| i.is_indirect_branch() || matches!(i, crate::isa::Instruction::Ret)))
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub bench: &'static str,
    pub defense: Defense,
    pub fence_kind: FenceKind,
    /// Statistics of the measured (second, warm) run.
    pub stats: RunStats,
}

/// Runs `bench` twice on one core; the second run is measured with warm
/// predictors and cache.
pub fn run_bench(
    bench: &Benchmark,
    defense: Defense,
    fence_kind: FenceKind,
    config: &PipelineConfig,
) -> Result<BenchResult, BenchError> {
    let program = bench.program_for(defense, fence_kind)?;
    let config = config.clone().with_defense(defense, fence_kind);
    let mut sim = Simulator::new(config, SimOptions::default())?;
    let mut stats = RunStats::default();
    for _ in 0..2 {
        let img = load_image(program.clone(), Pid(1), 0, BENCH_DATA_SIZE, None)?;
        let pid = sim.add_image(img);
        stats = sim.run(&[(0, pid)])?;
    }
    Ok(BenchResult {
        bench: bench.name,
        defense,
        fence_kind,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub bench: String,
    pub defense: Defense,
    pub fence_kind: FenceKind,
    pub cycles: u64,
    pub committed_instructions: u64,
    pub ipc: f64,
    /// IPC relative to the unprotected core on the same kernel.
    pub normalized_ipc: f64,
    pub fences_inserted: u64,
    pub fences_executed: u64,
    /// Hardware plus software fences that retired.
    pub fences_retired: u64,
    pub mispredictions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfTable {
    pub rows: Vec<PerfRow>,
}

impl PerfTable {
    pub fn get(&self, bench: &str, defense: Defense, fence_kind: FenceKind) -> Option<&PerfRow> {
        self.rows
            .iter()
            .find(|r| r.bench == bench && r.defense == defense && r.fence_kind == fence_kind)
    }

    pub fn from_csv(text: &str) -> Result<PerfTable, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<Result<_, _>>()?;
        Ok(PerfTable { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    /// Fixed-width text table.
    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<16} {:<13} {:<8} {:>8} {:>7} {:>8} {:>7} {:>7} {:>7}\n",
            "benchmark", "defense", "fence", "cycles", "ipc", "norm", "fences", "retired", "mispred"
        );
        for r in &self.rows {
            s += &format!(
                "{:<16} {:<13} {:<8} {:>8} {:>7.3} {:>8.3} {:>7} {:>7} {:>7}\n",
                r.bench,
                r.defense.name(),
                r.fence_kind.name(),
                r.cycles,
                r.ipc,
                r.normalized_ipc,
                r.fences_inserted + r.fences_executed,
                r.fences_retired,
                r.mispredictions
            );
        }
        s
    }
}

/// Runs every (benchmark, defense, fence kind) combination in parallel and
/// normalizes IPC against the unprotected core.
pub fn perf_table(
    benches: &[Benchmark],
    defenses: &[Defense],
    fence_kinds: &[FenceKind],
    config: &PipelineConfig,
) -> Result<PerfTable, BenchError> {
    let mut jobs = Vec::new();
    for b in benches {
        for &d in defenses {
            let kinds: &[FenceKind] = if d.is_fencing() { fence_kinds } else { &[FenceKind::Strict] };
            for &k in kinds {
                jobs.push((*b, d, k));
            }
        }
    }
    let results: Vec<BenchResult> = jobs
        .par_iter()
        .map(|(b, d, k)| run_bench(b, *d, *k, config))
        .collect::<Result<_, _>>()?;
    let baselines: Vec<(&str, f64)> = benches
        .par_iter()
        .map(|b| run_bench(b, Defense::Baseline, FenceKind::Strict, config).map(|r| (b.name, r.stats.ipc)))
        .collect::<Result<_, _>>()?;
    let rows = results
        .into_iter()
        .map(|r| {
            let base = baselines
                .iter()
                .find(|(n, _)| *n == r.bench)
                .map(|(_, ipc)| *ipc)
                .unwrap_or(0.0);
            PerfRow {
                bench: r.bench.to_string(),
                defense: r.defense,
                fence_kind: r.fence_kind,
                cycles: r.stats.cycles,
                committed_instructions: r.stats.committed_instructions,
                ipc: r.stats.ipc,
                normalized_ipc: if base > 0.0 { r.stats.ipc / base } else { 0.0 },
                fences_inserted: r.stats.fences_inserted,
                fences_executed: r.stats.fences_executed,
                fences_retired: r.stats.total_fences_retired(),
                mispredictions: r.stats.mispredictions(),
            }
        })
        .collect();
    Ok(PerfTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::interp::interpret;

    #[test]
    fn kernels_instrument_and_halt() {
        for b in BENCHMARKS {
            for d in Defense::ALL {
                let p = b.program_for(d, FenceKind::Strict).unwrap();
                let img = load_image(p, Pid(1), 0, BENCH_DATA_SIZE, None).unwrap();
                interpret(&img, 1_000_000).unwrap_or_else(|e| panic!("{} {d}: {e}", b.name));
            }
        }
    }

    #[test]
    fn instrumentation_keeps_alias_sites_in_place() {
        for name in ["mixed", "btb-collision"] {
            let b = benchmark(name).unwrap();
            let raw = assemble(b.source, CfiMode::Coarse).unwrap();
            let p = b.instrumented().unwrap();
            assert_eq!(raw.len(), p.len(), "{name}");
        }
    }

    #[test]
    fn mixed_kernel_triggers_label_mismatches() {
        let r = run_bench(&benchmark("mixed").unwrap(), Defense::SpecCfiBase, FenceKind::Strict, &PipelineConfig::default()).unwrap();
        assert!(r.stats.cfi_label_mismatches > 0);
        let r = run_bench(&benchmark("btb-collision").unwrap(), Defense::SpecCfiBase, FenceKind::Strict, &PipelineConfig::default()).unwrap();
        assert_eq!(r.stats.cfi_label_mismatches, 0);
        assert!(r.stats.mispredict_btb > 0);
    }
}
