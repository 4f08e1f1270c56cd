//! Property tests over random programs, predictor operation sequences and
//! generated corpora.

use std::collections::BTreeMap;

use proptest::prelude::*;

use speccfi::asm::{assemble, to_asm, CfiMode};
use speccfi::config::{Defense, FenceKind, PipelineConfig};
use speccfi::harness::{interpret, random_program, run_attack, run_bench, ArchState, RandSpec, Scenario, BENCHMARKS, RAND_DATA_SIZE};
use speccfi::image::{load_image, AddressSpaceImage, Pid};
use speccfi::instrument::{assign_labels, build_cfg, generate_corpus, instrument_with, scan_smother_gadgets, transform_retpoline, CorpusSpec, ScanConfig};
use speccfi::isa::{Kind, Program};
use speccfi::pipeline::{Injection, SimOptions, Simulator, TraceKind};
use speccfi::predictors::{Btb, LegacyRsb, RsbScs};

fn program(seed: u64) -> Program {
    assemble(&random_program(seed, &RandSpec::default()), CfiMode::Coarse).expect("generated source assembles")
}

fn image(p: Program) -> AddressSpaceImage {
    load_image(p, Pid(1), 0, RAND_DATA_SIZE, None).expect("image")
}

fn defense() -> impl Strategy<Value = Defense> {
    prop::sample::select(Defense::ALL.to_vec())
}

fn fence() -> impl Strategy<Value = FenceKind> {
    prop_oneof![Just(FenceKind::Strict), Just(FenceKind::Relaxed)]
}

/// Program as the given defense expects it: fine-labeled, plus the
/// retpoline rewrite where that defense calls for it.
fn prepared(p: &Program, d: Defense, k: FenceKind) -> Program {
    let (q, _) = instrument_with(p, CfiMode::Fine, None).expect("labels");
    if d == Defense::RetpolineSw {
        transform_retpoline(&q, k)
    } else {
        q
    }
}

struct Run {
    sim: Simulator,
    pid: Pid,
    cycles: u64,
}

fn simulate(p: Program, d: Defense, k: FenceKind, inject: u32, seed: u64, trace: bool) -> Run {
    let opts = SimOptions {
        trace,
        inject: Injection {
            per_mille: inject,
            seed,
            ..Injection::default()
        },
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(PipelineConfig::default().with_defense(d, k), opts).expect("config");
    let pid = sim.add_image(image(p));
    let s = sim.run(&[(0, pid)]).expect("runs");
    Run { sim, pid, cycles: s.cycles }
}

fn final_data(r: &Run) -> Vec<u64> {
    (0..RAND_DATA_SIZE as u64).step_by(8).map(|a| r.sim.read_data(r.pid, a).expect("in range")).collect()
}

fn oracle_data(st: &ArchState) -> Vec<u64> {
    (0..RAND_DATA_SIZE as u64).step_by(8).map(|a| st.read_u64(a).expect("in range")).collect()
}

/// Data slots random programs load and store. The stack above them holds
/// return addresses, which move when instrumentation changes the layout.
fn program_slots(st: &ArchState) -> Vec<u64> {
    oracle_data(st)[..64].to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn asm_round_trip_is_idempotent(seed in any::<u64>()) {
        let p = program(seed);
        let text = to_asm(&p);
        let q = assemble(&text, CfiMode::Coarse).expect("printed program reassembles");
        prop_assert_eq!(&p.instructions, &q.instructions);
        prop_assert_eq!(to_asm(&q), text);
    }

    #[test]
    fn address_layout_is_bijective(seed in any::<u64>(), base in 0u64..0x1000) {
        let img = load_image(program(seed), Pid(1), base, RAND_DATA_SIZE, None).expect("image");
        for i in 0..img.program.len() {
            let a = img.addr_of(i);
            prop_assert_eq!(a, base + i as u64);
            prop_assert_eq!(img.fetch(a), Some(&img.program.instructions[i]));
        }
        prop_assert!(img.fetch(base + img.program.len() as u64).is_none());
    }

    #[test]
    fn simulator_matches_interpreter(seed in any::<u64>(), d in defense(), k in fence(), inject in 0u32..300) {
        let p = prepared(&program(seed), d, k);
        let fin = interpret(&image(p.clone()), 1_000_000).expect("halts");
        let r = simulate(p, d, k, inject, seed, false);
        let (regs, zf) = r.sim.registers(r.pid).expect("context");
        prop_assert_eq!(regs, fin.regs);
        prop_assert_eq!(zf, fin.zf);
        prop_assert_eq!(final_data(&r), oracle_data(&fin));
    }

    #[test]
    fn instrumentation_preserves_semantics(seed in any::<u64>(), k in fence()) {
        let p = program(seed);
        let want = interpret(&image(p.clone()), 1_000_000).expect("halts");
        for mode in [CfiMode::Coarse, CfiMode::Fine] {
            let (q, _) = instrument_with(&p, mode, None).expect("labels");
            let got = interpret(&image(q.clone()), 1_000_000).expect("halts");
            prop_assert_eq!(program_slots(&got), program_slots(&want));
            let r = transform_retpoline(&q, k);
            prop_assert!(r.instructions.iter().all(|i| i.kind() != Kind::Ret));
            let got = interpret(&image(r), 1_000_000).expect("halts");
            prop_assert_eq!(program_slots(&got), program_slots(&want));
        }
    }

    #[test]
    fn labels_are_stable(seed in any::<u64>()) {
        let p = program(seed);
        let cfg = build_cfg(&p);
        for mode in [CfiMode::Coarse, CfiMode::Fine] {
            let a = assign_labels(&cfg, &p, mode, None).expect("labels");
            let b = assign_labels(&cfg, &p, mode, None).expect("labels");
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn fences_hold_back_younger_issue(seed in any::<u64>(), k in fence(), inject in 0u32..300) {
        let d = Defense::AllTargetFence;
        let r = simulate(prepared(&program(seed), d, k), d, k, inject, seed, true);
        // Retire or annul cycle of each fence, by sequence number.
        let mut fence_end: BTreeMap<u64, (u64, bool)> = BTreeMap::new();
        for e in r.sim.trace() {
            let strict = match e.kind {
                "hwfence" | "lfence" => true,
                "hwfence.lsq" | "lfence.lsq" => false,
                _ => continue,
            };
            if e.event != TraceKind::Issue {
                fence_end.insert(e.seq, (e.cycle, strict));
            }
        }
        for e in r.sim.trace().iter().filter(|e| e.event == TraceKind::Issue) {
            let load_like = matches!(e.kind, "load" | "ret");
            for (&fseq, &(end, strict)) in fence_end.range(..e.seq) {
                if strict || load_like {
                    // Ops fetched before the fence was fetched cannot be younger.
                    prop_assert!(e.cycle >= end, "{} seq {} issued at {} before fence {} ended at {}", e.kind, e.seq, e.cycle, fseq, end);
                }
            }
        }
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>(), d in defense(), inject in 0u32..300) {
        let p = prepared(&program(seed), d, FenceKind::Strict);
        let a = simulate(p.clone(), d, FenceKind::Strict, inject, seed, true);
        let b = simulate(p, d, FenceKind::Strict, inject, seed, true);
        prop_assert_eq!(a.sim.trace_csv(), b.sim.trace_csv());
        prop_assert_eq!(a.cycles, b.cycles);
    }

    #[test]
    fn fine_labels_never_expose_more_gadgets(seed in any::<u64>(), classes in 1usize..=6, functions in 20usize..120) {
        let spec = CorpusSpec { functions, classes, seed, ..CorpusSpec::default() };
        let p = assemble(&generate_corpus(&spec), CfiMode::Coarse).expect("corpus assembles");
        let count = |mode| {
            let (q, map) = instrument_with(&p, mode, None).expect("labels");
            let r = scan_smother_gadgets(&q, &map, &ScanConfig::default());
            for e in &r.entries {
                assert!(e.offsets.iter().all(|&o| o < r.config.window));
            }
            r.total()
        };
        prop_assert!(count(CfiMode::Fine) <= count(CfiMode::Coarse));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn strict_fences_never_beat_relaxed_on_kernels(
        miss in 5u64..250,
        penalty in 1u64..16,
        bench in 0usize..BENCHMARKS.len(),
        d in prop::sample::select(vec![Defense::RetpolineSw, Defense::AllTargetFence, Defense::SpecCfiBase, Defense::SpecCfiFull]),
    ) {
        let mut c = PipelineConfig::default();
        c.cache.miss_latency = miss;
        c.mispredict_redirect_penalty = penalty;
        let b = &BENCHMARKS[bench];
        let s = run_bench(b, d, FenceKind::Strict, &c).expect("runs").stats.cycles;
        let r = run_bench(b, d, FenceKind::Relaxed, &c).expect("runs").stats.cycles;
        prop_assert!(s >= r, "{} {}: strict {} < relaxed {}", b.name, d, s, r);
    }
}

/// Not every program is monotone: here the strict fence holds branches back
/// long enough that a reconverging wrong path prefetches the lines the
/// correct path then needs.
#[test]
fn strict_can_win_through_wrong_path_prefetch() {
    let p = program(1966);
    let d = Defense::AllTargetFence;
    let s = simulate(prepared(&p, d, FenceKind::Strict), d, FenceKind::Strict, 0, 0, false);
    let r = simulate(prepared(&p, d, FenceKind::Relaxed), d, FenceKind::Relaxed, 0, 0, false);
    assert!(s.cycles < r.cycles, "strict {} relaxed {}", s.cycles, r.cycles);
}

#[derive(Debug, Clone)]
enum RsbOp {
    Call(u64),
    Ret,
    /// Annul the last `n` speculative operations.
    Squash(usize),
    /// Commit everything in flight.
    Commit,
}

fn rsb_ops() -> impl Strategy<Value = Vec<RsbOp>> {
    prop::collection::vec(
        prop_oneof![
            4 => (1u64..1000).prop_map(RsbOp::Call),
            3 => Just(RsbOp::Ret),
            1 => (1usize..6).prop_map(RsbOp::Squash),
            2 => Just(RsbOp::Commit),
        ],
        1..200,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The unified RSB, driven like a pipeline (speculate, annul
    /// youngest-first, commit oldest-first), predicts every committed return
    /// exactly as an architectural stack would.
    #[test]
    fn rsb_scs_is_lifo_under_annulment(ops in rsb_ops()) {
        let mut rsb = RsbScs::new(16);
        let mut arch: Vec<u64> = Vec::new();
        // In-flight ops, oldest first: (is_call, value, popped value for rets).
        let mut flight: Vec<(bool, u64, Option<u64>)> = Vec::new();
        let mut spec_depth = 0usize;
        for op in ops {
            match op {
                RsbOp::Call(a) => {
                    if rsb.occupancy() == rsb.capacity() && rsb.in_flight() == rsb.capacity() {
                        continue;
                    }
                    if rsb.push(a).is_err() {
                        continue;
                    }
                    flight.push((true, a, None));
                    spec_depth += 1;
                }
                RsbOp::Ret => {
                    if spec_depth == 0 {
                        continue;
                    }
                    if rsb.occupancy() == 0 {
                        rsb.fill();
                    }
                    let v = rsb.pop();
                    prop_assert!(v.is_some(), "pop with depth {}", spec_depth);
                    flight.push((false, 0, v));
                    spec_depth -= 1;
                }
                RsbOp::Squash(n) => {
                    for _ in 0..n.min(flight.len()) {
                        let (call, _, v) = flight.pop().expect("non-empty");
                        if call {
                            rsb.annul_call();
                            spec_depth -= 1;
                        } else {
                            rsb.annul_ret(v.expect("popped"));
                            spec_depth += 1;
                        }
                    }
                }
                RsbOp::Commit => {
                    for (call, a, v) in flight.drain(..) {
                        if call {
                            arch.push(a);
                            rsb.commit_call();
                        } else {
                            let want = arch.pop();
                            prop_assert_eq!(v, want);
                            rsb.commit_ret();
                        }
                    }
                    prop_assert_eq!(rsb.tos(), rsb.lcp());
                    prop_assert_eq!(rsb.committed_depth(), arch.len());
                }
            }
            prop_assert!(rsb.occupancy() <= rsb.capacity());
        }
    }

    /// Past capacity the legacy RSB loses the oldest returns while the unified
    /// RSB spills them and still returns every one.
    #[test]
    fn legacy_loses_what_scs_keeps(depth in 1usize..64) {
        let mut legacy = LegacyRsb::new(16);
        let mut scs = RsbScs::new(16);
        for a in 0..depth as u64 {
            legacy.push(a);
            scs.push(a).expect("push");
            scs.commit_call();
        }
        let mut lost = 0;
        for a in (0..depth as u64).rev() {
            if legacy.pop().0 != Some(a) {
                lost += 1;
            }
            if scs.occupancy() == 0 {
                scs.fill();
            }
            prop_assert_eq!(scs.pop(), Some(a));
            scs.commit_ret();
        }
        prop_assert_eq!(lost, depth.saturating_sub(16));
    }

    #[test]
    fn btb_aliases_share_entries(pc in 0u64..(1 << 18), target in any::<u64>()) {
        let mut btb = Btb::new(9);
        let alias = btb.alias_of(pc);
        prop_assert_ne!(alias, pc);
        prop_assert_eq!(btb.index(alias), btb.index(pc));
        btb.update(alias, target, None);
        prop_assert_eq!(btb.lookup(pc).map(|e| e.0), Some(target));
    }
}

#[test]
fn btb_predictions_cross_address_spaces() {
    // An attacker pid trains; the victim pid at the same pc is steered.
    let sc: Scenario = "spectre-btb-cross-in-place".parse().expect("name");
    let r = run_attack(sc, Defense::Baseline, FenceKind::Strict, 2, 9).expect("runs");
    assert!(r.success);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn attacks_are_deterministic(seed in any::<u64>(), idx in 0usize..12, d in prop::sample::select(vec![Defense::Baseline, Defense::SpecCfiBase])) {
        let sc = Scenario::all()[idx];
        let a = run_attack(sc, d, FenceKind::Strict, 2, seed).expect("runs");
        let b = run_attack(sc, d, FenceKind::Strict, 2, seed).expect("runs");
        prop_assert_eq!(a.trials, b.trials);
        prop_assert_eq!(a.successes, b.successes);
    }

    #[test]
    fn full_blocks_whatever_base_blocks(seed in any::<u64>(), idx in 0usize..12) {
        let sc = Scenario::all()[idx];
        let base = run_attack(sc, Defense::SpecCfiBase, FenceKind::Strict, 2, seed).expect("runs");
        let full = run_attack(sc, Defense::SpecCfiFull, FenceKind::Strict, 2, seed).expect("runs");
        prop_assert!(!base.blocked || full.blocked);
    }
}
