//! Random terminating programs for differential testing against the
//! interpreter.
//!
//! Functions only call higher-numbered functions, so the call graph is a DAG
//! and the call depth is bounded by the function count. Conditional branches
//! only go forward except for counted loops, which never contain calls.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Data memory of generated programs.
pub const RAND_DATA_SIZE: usize = 0x2000;

/// Generator limits.
#[derive(Debug, Clone, Copy)]
pub struct RandSpec {
    /// Upper bound on the assembled length.
    pub max_instructions: usize,
    /// Upper bound on the dynamic call depth, counting `main` as depth 1.
    pub max_depth: usize,
}

impl Default for RandSpec {
    fn default() -> Self {
        RandSpec {
            max_instructions: 100,
            max_depth: 8,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    out: Vec<String>,
    labels: usize,
    /// Signature declarations for indirect-jump targets.
    decls: Vec<String>,
}

const REGS: [&str; 10] = ["r1", "r2", "r3", "r4", "r5", "r6", "r7", "r8", "r9", "r10"];

impl Gen {
    fn reg(&mut self) -> &'static str {
        REGS.choose(&mut self.rng).expect("non-empty")
    }

    fn slot(&mut self) -> u64 {
        self.rng.gen_range(0..64u64) * 8
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("l{}", self.labels)
    }

    fn emit(&mut self, s: String) {
        self.out.push(format!("  {s}"));
    }

    /// One straight-line instruction.
    fn simple(&mut self) {
        let (a, b, c) = (self.reg(), self.reg(), self.reg());
        let s = match self.rng.gen_range(0..9) {
            0 => format!("li {a}, {}", self.rng.gen_range(-50i64..300)),
            1 => format!("add {a}, {b}, {c}"),
            2 => format!("add {a}, {b}, {}", self.rng.gen_range(-9i64..10)),
            3 => format!("shl {a}, {b}, {}", self.rng.gen_range(0..5)),
            4 => format!("cmp {a}, {b}"),
            5 => format!("cmpi {a}, {}", self.rng.gen_range(0..4)),
            6 => format!("load {a}, [r0+{:#x}]", self.slot()),
            7 => format!("store {a}, [r0+{:#x}]", self.slot()),
            _ => format!("clflush [r0+{:#x}]", self.slot()),
        };
        self.emit(s);
    }

    /// Function body of at most `budget` instructions, excluding the final
    /// `ret`/`halt`. `callees` are the functions it may call.
    fn body(&mut self, budget: usize, callees: &[String]) {
        let mut used = 0;
        while used < budget {
            let left = budget - used;
            match self.rng.gen_range(0..10) {
                0 if left >= 3 => {
                    // Forward conditional skip.
                    let l = self.label();
                    let cond = if self.rng.gen() { "jz" } else { "jnz" };
                    let a = self.reg();
                    let k = self.rng.gen_range(0..3);
                    self.emit(format!("cmpi {a}, {k}"));
                    self.emit(format!("{cond} {l}"));
                    self.simple();
                    self.out.push(format!("{l}:"));
                    used += 3;
                }
                1 if left >= 6 => {
                    // Counted loop on r12.
                    let l = self.label();
                    let n = self.rng.gen_range(1..4);
                    self.emit(format!("li r12, {n}"));
                    self.out.push(format!("{l}:"));
                    self.simple();
                    self.emit("add r12, r12, -1".into());
                    self.emit("cmpi r12, 0".into());
                    self.emit(format!("jnz {l}"));
                    used += 5;
                }
                2 | 3 if !callees.is_empty() => {
                    let f = callees.choose(&mut self.rng).expect("non-empty").clone();
                    if self.rng.gen() && left >= 2 {
                        self.emit(format!("li r11, {f}"));
                        self.emit("call *r11".into());
                        used += 2;
                    } else {
                        self.emit(format!("call {f}"));
                        used += 1;
                    }
                }
                4 if left >= 3 => {
                    // Indirect forward jump.
                    let l = self.label();
                    self.decls.push(format!(".func {l} void()"));
                    self.emit(format!("li r11, {l}"));
                    self.emit("jmp *r11".into());
                    self.out.push(format!("{l}:"));
                    self.simple();
                    used += 3;
                }
                _ => {
                    self.simple();
                    used += 1;
                }
            }
        }
    }
}

/// Assembly source of a random program drawn from `seed`.
pub fn random_program(seed: u64, spec: &RandSpec) -> String {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: vec![".entry main".into()],
        labels: 0,
        decls: Vec::new(),
    };
    let nfuncs = g.rng.gen_range(0..spec.max_depth.max(1));
    let names: Vec<String> = (1..=nfuncs).map(|i| format!("f{i}")).collect();
    for n in &names {
        g.out.push(format!(".func {n} int(int)"));
    }
    // Each unit ends with one terminator; split the rest of the budget.
    let units = nfuncs + 1;
    let share = (spec.max_instructions.saturating_sub(units)) / units;
    g.out.push("main:".into());
    let main_budget = g.rng.gen_range(1..=share.max(1));
    g.body(main_budget, &names);
    g.emit("halt".into());
    for i in 0..nfuncs {
        g.out.push(format!("{}:", names[i]));
        let b = g.rng.gen_range(1..=share.max(1));
        g.body(b, &names[i + 1..]);
        g.emit("ret".into());
    }
    let mut lines = vec![g.out[0].clone()];
    lines.append(&mut g.decls);
    lines.extend(g.out.into_iter().skip(1));
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, CfiMode};
    use crate::harness::interp::interpret;
    use crate::image::{load_image, Pid};

    #[test]
    fn programs_assemble_within_limits_and_halt() {
        let spec = RandSpec::default();
        for seed in 0..300 {
            let src = random_program(seed, &spec);
            let p = assemble(&src, CfiMode::Coarse).unwrap_or_else(|e| panic!("{seed}: {e}\n{src}"));
            assert!(p.len() <= spec.max_instructions, "{seed}: {} instructions", p.len());
            let img = load_image(p, Pid(1), 0, RAND_DATA_SIZE, None).unwrap();
            let st = interpret(&img, 1_000_000).unwrap_or_else(|e| panic!("{seed}: {e}\n{src}"));
            assert!(st.halted);
        }
    }

    #[test]
    fn same_seed_same_program() {
        let s = RandSpec::default();
        assert_eq!(random_program(9, &s), random_program(9, &s));
        assert_ne!(random_program(9, &s), random_program(10, &s));
    }
}
