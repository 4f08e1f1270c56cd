//! Cycle loop of the speculative out-of-order core.
//!
//! Two SMT hardware threads share the BTB, PHT, data cache and execution
//! ports. Each thread owns its frontend queue, reorder buffer, rename table,
//! store buffer and return predictors. Stages run in reverse pipeline order
//! every cycle: store-buffer drain, commit, resolve, issue, dispatch, fetch.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Defense, FenceKind, PipelineConfig};
use crate::image::{AddressSpaceImage, OutOfRange, Pid};
use crate::isa::{effective_addr, effective_label, eval_add, eval_shl, Instruction, Kind, LabelId, Program, Src, Value, NUM_REGS};
use crate::memory::{port_for, AccessKind, Cache, PortModel, ProbeResult};
use crate::pipeline::cfi::{decode_cfi_check, CfiDecodeState, DecodeAction};
use crate::pipeline::stats::{trace_csv, CfiViolation, RunStats, TraceEvent, TraceKind, ViolationEdge};
use crate::predictors::{snapshot_csv, Btb, LegacyRsb, LegacyUndo, Pht, RsbError, RsbScs};

/// Hardware threads per core.
pub const THREADS: usize = 2;
/// Rename index of the zero flag.
const ZF: u8 = NUM_REGS as u8;
const NREG: usize = NUM_REGS + 1;
const SP: u8 = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("deadlock: no instruction committed for {cycles} cycles (cycle {cycle})")]
    Deadlock { cycle: u64, cycles: u64 },
    #[error("memory fault at pc {pc:#x}: {source}")]
    MemoryFault {
        pc: u64,
        #[source]
        source: OutOfRange,
    },
    #[error("{pid} fetched from {pc:#x}, outside its code")]
    BadPc { pid: Pid, pc: u64 },
    #[error("unknown process {0}")]
    UnknownPid(Pid),
    #[error("hardware thread {0} does not exist")]
    BadThread(usize),
    #[error("schedule assigns {0} twice")]
    DuplicateAssignment(String),
    #[error("cycle limit {0} reached")]
    CycleLimit(u64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Forced and random misprediction injection.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Injection {
    /// Every dynamic instance of a branch at one of these pcs mispredicts.
    pub forced_pcs: BTreeSet<u64>,
    /// Additional per-mille chance that any branch, indirect branch or
    /// return mispredicts.
    pub per_mille: u32,
    pub seed: u64,
}

impl Injection {
    fn is_active(&self) -> bool {
        !self.forced_pcs.is_empty() || self.per_mille > 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Record issue/retire/annul events.
    pub trace: bool,
    pub inject: Injection,
    /// Record the pc of every committed instruction.
    pub record_commits: bool,
    /// Snapshot the RSB/SCS just before a `ret` at this pc pops.
    pub snapshot_before_pop: Option<u64>,
    /// Snapshot the RSB/SCS right after every misprediction recovery.
    pub snapshot_on_recovery: bool,
    pub max_cycles: Option<u64>,
}

/// Architectural state right after a branch that triggered a recovery
/// committed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryCheckpoint {
    pub thread: usize,
    pub pid: Pid,
    /// Instructions this process had committed, the branch included.
    pub retired: u64,
    pub pc: u64,
    pub regs: [u64; NUM_REGS],
    pub zf: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsbSnapshot {
    pub cycle: u64,
    pub thread: usize,
    pub reason: SnapshotReason,
    /// `structure,index,fields` CSV.
    pub csv: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotReason {
    BeforePop(u64),
    AfterRecovery,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Context {
    pc: u64,
    regs: [u64; NREG],
    retired: u64,
    killed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Instr(Instruction),
    HwFence(FenceKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PredSrc {
    None,
    Direct,
    Pht,
    Btb,
    Rsb,
    Injected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RsbOp {
    None,
    ScsPush,
    ScsPop(Option<u64>),
    Legacy(LegacyUndo),
}

#[derive(Debug, Clone, Copy)]
enum StoreInfo {
    NotStore,
    Unknown,
    Known { addr: u64, val: Option<u64> },
}

#[derive(Debug, Clone, Copy)]
struct SrcOp {
    reg: u8,
    producer: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
struct Dest {
    reg: u8,
    val: u64,
    ready: u64,
}

#[derive(Debug, Clone)]
struct Uop {
    seq: u64,
    pc: u64,
    op: Op,
    frontend_ready: u64,
    predicted: Option<u64>,
    pred_src: PredSrc,
    /// Speculative global history seen at fetch.
    hist: u64,
    rsb: RsbOp,
    old_rs: Option<u64>,
    src_regs: [Option<u8>; 2],
    dest_regs: [Option<u8>; 2],
    srcs: [Option<SrcOp>; 2],
    dests: [Option<Dest>; 2],
    issued: Option<u64>,
    done: Option<u64>,
    mem_addr: Option<u64>,
    store_val: u64,
    fault: Option<OutOfRange>,
    taken: bool,
    actual_next: Option<u64>,
    resolved: bool,
    mispredicted: bool,
}

impl Uop {
    fn instr(&self) -> Option<&Instruction> {
        match &self.op {
            Op::Instr(i) => Some(i),
            Op::HwFence(_) => None,
        }
    }

    fn kind(&self) -> Option<Kind> {
        self.instr().map(Instruction::kind)
    }

    fn fence(&self) -> Option<FenceKind> {
        match self.op {
            Op::HwFence(k) => Some(k),
            Op::Instr(Instruction::FenceStrict) => Some(FenceKind::Strict),
            Op::Instr(Instruction::FenceRelaxed) => Some(FenceKind::Relaxed),
            Op::Instr(_) => None,
        }
    }

    fn is_load_like(&self) -> bool {
        matches!(self.kind(), Some(Kind::Load | Kind::Ret))
    }

    fn is_store_like(&self) -> bool {
        matches!(
            self.kind(),
            Some(Kind::Store | Kind::CallDirect | Kind::CallIndirect)
        )
    }

    fn needs_resolve(&self) -> bool {
        matches!(
            self.kind(),
            Some(Kind::Jz | Kind::Jnz | Kind::JmpIndirect | Kind::CallIndirect | Kind::Ret)
        )
    }

    fn trace_kind(&self) -> &'static str {
        match self.op {
            Op::Instr(i) => i.kind().mnemonic(),
            Op::HwFence(FenceKind::Strict) => "hwfence",
            Op::HwFence(FenceKind::Relaxed) => "hwfence.lsq",
        }
    }
}

/// Source and destination registers of an instruction (ZF is index 16).
fn operands(instr: &Instruction) -> ([Option<u8>; 2], [Option<u8>; 2]) {
    let r = |x: crate::isa::Reg| Some(x.index() as u8);
    let post = |m: &crate::isa::Mem| if m.post_inc != 0 { r(m.base) } else { None };
    match instr {
        Instruction::LoadImm { rd, .. } => ([None, None], [r(*rd), None]),
        Instruction::Load { rd, mem } => ([r(mem.base), None], [post(mem), r(*rd)]),
        Instruction::Store { rs, mem } => ([r(*rs), r(mem.base)], [post(mem), None]),
        Instruction::Add { rd, rs, src } | Instruction::Shl { rd, rs, src } => {
            let s2 = match src {
                Src::Reg(x) => r(*x),
                Src::Imm(_) => None,
            };
            ([r(*rs), s2], [r(*rd), None])
        }
        Instruction::Cmp { ra, rb } => ([r(*ra), r(*rb)], [Some(ZF), None]),
        Instruction::CmpImm { ra, .. } => ([r(*ra), None], [Some(ZF), None]),
        Instruction::Jz { .. } | Instruction::Jnz { .. } => ([Some(ZF), None], [None, None]),
        Instruction::JmpIndirect { reg, .. } => ([r(*reg), None], [None, None]),
        Instruction::CallIndirect { reg, .. } => ([r(*reg), Some(SP)], [Some(SP), None]),
        Instruction::CallDirect { .. } | Instruction::Ret => ([Some(SP), None], [Some(SP), None]),
        Instruction::Clflush { mem } => ([r(mem.base), None], [post(mem), None]),
        _ => ([None, None], [None, None]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FetchBlock {
    Free,
    Until(u64),
    /// Waiting for a redirect from an in-flight branch.
    Redirect,
    /// Fetched outside the code; waits for a redirect like `Redirect`.
    BadPc,
}

#[derive(Debug, Clone)]
struct HwThread {
    pid: Option<Pid>,
    program: Arc<Program>,
    base: u64,
    active: bool,
    pc: u64,
    block: FetchBlock,
    frontend: VecDeque<Uop>,
    rob: VecDeque<Uop>,
    rename: [Option<u64>; NREG],
    arch: [u64; NREG],
    retired: u64,
    hist: u64,
    cfi: CfiDecodeState,
    full_expect: Option<(u64, LabelId)>,
    /// Committed stores awaiting their cache write: (address, completion).
    store_buffer: VecDeque<(u64, Option<u64>)>,
    scs: RsbScs,
    legacy: LegacyRsb,
    iq: usize,
    ldq: usize,
    stq: usize,
}

impl HwThread {
    fn new(id: usize, rsb_entries: usize) -> HwThread {
        let mut scs = RsbScs::new(rsb_entries);
        scs.owner_thread = id;
        HwThread {
            pid: None,
            program: Arc::new(Program::default()),
            base: 0,
            active: false,
            pc: 0,
            block: FetchBlock::Free,
            frontend: VecDeque::new(),
            rob: VecDeque::new(),
            rename: [None; NREG],
            arch: [0; NREG],
            retired: 0,
            hist: 0,
            cfi: CfiDecodeState::Idle,
            full_expect: None,
            store_buffer: VecDeque::new(),
            scs,
            legacy: LegacyRsb::new(rsb_entries),
            iq: 0,
            ldq: 0,
            stq: 0,
        }
    }

    fn rebuild_rename(&mut self) {
        self.rename = [None; NREG];
        for u in &self.rob {
            for r in u.dest_regs.iter().flatten() {
                self.rename[*r as usize] = Some(u.seq);
            }
        }
    }

    fn undo_rsb(&mut self, u: &Uop) {
        match u.rsb {
            RsbOp::None | RsbOp::ScsPop(None) => {}
            RsbOp::ScsPush => self.scs.annul_call(),
            RsbOp::ScsPop(Some(v)) => self.scs.annul_ret(v),
            RsbOp::Legacy(undo) => self.legacy.undo(undo),
        }
    }

    /// Address and value of the store-like op at `rob[j]`, as far as known at `now`.
    fn known_store(&self, j: usize, now: u64) -> StoreInfo {
        let u = &self.rob[j];
        if !u.is_store_like() {
            return StoreInfo::NotStore;
        }
        if u.issued.is_some() {
            return StoreInfo::Known {
                addr: u.mem_addr.expect("issued store has an address"),
                val: Some(u.store_val),
            };
        }
        let read = |k: usize| u.srcs[k].and_then(|s| self.read_src(s, now));
        match u.instr() {
            Some(Instruction::Store { mem, .. }) => match read(1) {
                Some(b) => StoreInfo::Known {
                    addr: effective_addr(b, mem.disp),
                    val: read(0),
                },
                None => StoreInfo::Unknown,
            },
            Some(Instruction::CallDirect { .. }) => match read(0) {
                Some(sp) => StoreInfo::Known { addr: sp.wrapping_sub(8), val: Some(u.pc + 1) },
                None => StoreInfo::Unknown,
            },
            Some(Instruction::CallIndirect { .. }) => match read(1) {
                Some(sp) => StoreInfo::Known { addr: sp.wrapping_sub(8), val: Some(u.pc + 1) },
                None => StoreInfo::Unknown,
            },
            _ => StoreInfo::Unknown,
        }
    }

    /// Value of `src` if available at `now`.
    fn read_src(&self, src: SrcOp, now: u64) -> Option<u64> {
        let Some(seq) = src.producer else {
            return Some(self.arch[src.reg as usize]);
        };
        match self.rob.binary_search_by_key(&seq, |u| u.seq) {
            Ok(i) => {
                let p = &self.rob[i];
                p.dests
                    .iter()
                    .rev()
                    .flatten()
                    .find(|d| d.reg == src.reg)
                    .filter(|d| d.ready <= now)
                    .map(|d| d.val)
            }
            Err(_) => Some(self.arch[src.reg as usize]),
        }
    }
}

/// The simulated core plus the address spaces it runs.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: PipelineConfig,
    options: SimOptions,
    images: BTreeMap<Pid, AddressSpaceImage>,
    contexts: BTreeMap<Pid, Context>,
    threads: Vec<HwThread>,
    btb: Btb,
    pht: Pht,
    cache: Cache,
    ports: PortModel,
    rng: ChaCha8Rng,
    cycle: u64,
    run_start: u64,
    next_seq: u64,
    last_commit: u64,
    stats: RunStats,
    trace: Vec<TraceEvent>,
    commits: Vec<(usize, u64)>,
    checkpoints: Vec<RecoveryCheckpoint>,
    snapshots: Vec<RsbSnapshot>,
}

impl Simulator {
    pub fn new(config: PipelineConfig, options: SimOptions) -> Result<Simulator, SimError> {
        config.validate().map_err(SimError::Config)?;
        let threads = (0..THREADS)
            .map(|t| HwThread::new(t, config.rsb_entries))
            .collect();
        Ok(Simulator {
            btb: Btb::new(config.btb_index_bits),
            pht: Pht::new(10, config.pht_history_bits),
            cache: Cache::with_jitter(config.cache, config.jitter, config.seed),
            ports: PortModel::new(config.ports.n_ports, THREADS, config.ports.branch_port),
            rng: ChaCha8Rng::seed_from_u64(options.inject.seed ^ config.seed),
            images: BTreeMap::new(),
            contexts: BTreeMap::new(),
            threads,
            cycle: 0,
            run_start: 0,
            next_seq: 0,
            last_commit: 0,
            stats: RunStats::default(),
            trace: Vec::new(),
            commits: Vec::new(),
            checkpoints: Vec::new(),
            snapshots: Vec::new(),
            config,
            options,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Adds (or replaces) an address space and resets its context to the
    /// program entry.
    pub fn add_image(&mut self, image: AddressSpaceImage) -> Pid {
        let pid = image.pid;
        let mut regs = [0; NREG];
        regs[SP as usize] = image.stack_top();
        self.contexts.insert(
            pid,
            Context {
                pc: image.entry_addr(),
                regs,
                retired: 0,
                killed: false,
            },
        );
        self.images.insert(pid, image);
        pid
    }

    pub fn image(&self, pid: Pid) -> Option<&AddressSpaceImage> {
        self.images.get(&pid)
    }

    pub fn image_mut(&mut self, pid: Pid) -> Option<&mut AddressSpaceImage> {
        self.images.get_mut(&pid)
    }

    pub fn write_data(&mut self, pid: Pid, addr: u64, value: u64) -> Result<(), SimError> {
        let img = self.images.get_mut(&pid).ok_or(SimError::UnknownPid(pid))?;
        img.write_u64(addr, value)
            .map_err(|source| SimError::MemoryFault { pc: 0, source })
    }

    pub fn read_data(&self, pid: Pid, addr: u64) -> Result<u64, SimError> {
        let img = self.images.get(&pid).ok_or(SimError::UnknownPid(pid))?;
        img.read_u64(addr)
            .map_err(|source| SimError::MemoryFault { pc: 0, source })
    }

    /// Redirects a process to resume at `pc` with the given register values.
    pub fn set_context(&mut self, pid: Pid, pc: u64, regs: &[(usize, u64)]) -> Result<(), SimError> {
        let ctx = self.contexts.get_mut(&pid).ok_or(SimError::UnknownPid(pid))?;
        ctx.pc = pc;
        for &(r, v) in regs {
            ctx.regs[r] = v;
        }
        Ok(())
    }

    pub fn flush_line(&mut self, addr: u64) {
        self.cache.clflush(addr);
    }

    /// Brings a line into the cache.
    pub fn touch(&mut self, addr: u64) {
        self.cache.access(addr, AccessKind::Load);
    }

    pub fn is_cached(&self, addr: u64) -> bool {
        self.cache.contains(addr)
    }

    pub fn probe(&mut self, addresses: &[u64]) -> ProbeResult {
        crate::memory::probe(&mut self.cache, addresses)
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn btb(&self) -> &Btb {
        &self.btb
    }

    pub fn btb_mut(&mut self) -> &mut Btb {
        &mut self.btb
    }

    pub fn pht(&self) -> &Pht {
        &self.pht
    }

    pub fn rsb(&self, thread: usize) -> &RsbScs {
        &self.threads[thread].scs
    }

    pub fn legacy_rsb(&self, thread: usize) -> &LegacyRsb {
        &self.threads[thread].legacy
    }

    /// Saved architectural registers and zero flag of a process.
    pub fn registers(&self, pid: Pid) -> Option<([u64; NUM_REGS], bool)> {
        self.contexts.get(&pid).map(|c| {
            let mut r = [0; NUM_REGS];
            r.copy_from_slice(&c.regs[..NUM_REGS]);
            (r, c.regs[ZF as usize] != 0)
        })
    }

    /// Saved resume pc of a process.
    pub fn context_pc(&self, pid: Pid) -> Option<u64> {
        self.contexts.get(&pid).map(|c| c.pc)
    }

    pub fn retired(&self, pid: Pid) -> Option<u64> {
        self.contexts.get(&pid).map(|c| c.retired)
    }

    pub fn is_killed(&self, pid: Pid) -> bool {
        self.contexts.get(&pid).is_some_and(|c| c.killed)
    }

    pub fn port_trace(&self, thread: usize) -> &[bool] {
        self.ports.port_trace(thread)
    }

    pub fn clear_port_traces(&mut self) {
        self.ports.clear_traces();
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }

    pub fn commits(&self) -> &[(usize, u64)] {
        &self.commits
    }

    pub fn checkpoints(&self) -> &[RecoveryCheckpoint] {
        &self.checkpoints
    }

    pub fn snapshots(&self) -> &[RsbSnapshot] {
        &self.snapshots
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Runs the given (hardware thread, process) assignments until every
    /// assigned thread halts or is killed.
    pub fn run(&mut self, schedule: &[(usize, Pid)]) -> Result<RunStats, SimError> {
        let mut seen_t = BTreeSet::new();
        let mut seen_p = BTreeSet::new();
        for &(t, pid) in schedule {
            if t >= THREADS {
                return Err(SimError::BadThread(t));
            }
            if !self.images.contains_key(&pid) {
                return Err(SimError::UnknownPid(pid));
            }
            if !seen_t.insert(t) {
                return Err(SimError::DuplicateAssignment(format!("thread {t}")));
            }
            if !seen_p.insert(pid) {
                return Err(SimError::DuplicateAssignment(pid.to_string()));
            }
        }
        self.stats = RunStats::default();
        self.run_start = self.cycle;
        self.last_commit = self.cycle;
        let misses = self.cache.misses;
        for &(t, pid) in schedule {
            self.start_context(t, pid);
        }
        while self.threads.iter().any(|t| t.active) {
            self.step_cycle()?;
        }
        self.flush_store_buffers();
        self.stats.cycles = self.cycle - self.run_start;
        self.stats.cache_misses = self.cache.misses - misses;
        self.stats.finish();
        Ok(std::mem::take(&mut self.stats))
    }

    fn start_context(&mut self, t: usize, pid: Pid) {
        let img = &self.images[&pid];
        let ctx = &self.contexts[&pid];
        let th = &mut self.threads[t];
        th.pid = Some(pid);
        th.program = img.program.clone();
        th.base = img.base;
        th.pc = ctx.pc;
        th.arch = ctx.regs;
        th.retired = ctx.retired;
        th.rename = [None; NREG];
        th.cfi = CfiDecodeState::Idle;
        th.full_expect = None;
        th.block = FetchBlock::Free;
        th.active = !ctx.killed;
        th.scs.context_restore(pid);
    }

    fn end_context(&mut self, t: usize, pc: u64, killed: bool) {
        let th = &mut self.threads[t];
        let pid = th.pid.expect("running thread has a pid");
        th.active = false;
        th.scs
            .context_save()
            .expect("a halted or killed thread has no speculative RSB state");
        let ctx = self.contexts.get_mut(&pid).expect("context exists");
        ctx.pc = pc;
        ctx.regs = th.arch;
        ctx.retired = th.retired;
        ctx.killed |= killed;
    }

    fn flush_store_buffers(&mut self) {
        for t in 0..THREADS {
            while let Some((addr, started)) = self.threads[t].store_buffer.pop_front() {
                if started.is_none() {
                    self.cache.access(addr, AccessKind::Store);
                }
            }
        }
    }

    fn thread_order(now: u64) -> [usize; THREADS] {
        let first = (now % THREADS as u64) as usize;
        [first, 1 - first]
    }

    fn record(&mut self, t: usize, u: &Uop, event: TraceKind) {
        if self.options.trace {
            self.trace.push(TraceEvent {
                cycle: self.cycle,
                thread: t,
                pid: self.threads[t].pid.unwrap_or_default(),
                seq: u.seq,
                pc: u.pc,
                kind: u.trace_kind(),
                event,
            });
        }
    }

    /// Advances the core by one cycle.
    pub fn step_cycle(&mut self) -> Result<(), SimError> {
        let now = self.cycle;
        self.ports.begin_cycle();
        self.drain_store_buffers(now);
        self.commit(now)?;
        self.resolve(now);
        self.issue(now);
        self.dispatch(now);
        self.fetch(now);
        self.cycle += 1;
        for th in &self.threads {
            if th.active && th.block == FetchBlock::BadPc && th.rob.is_empty() && th.frontend.is_empty() {
                return Err(SimError::BadPc {
                    pid: th.pid.unwrap_or_default(),
                    pc: th.pc,
                });
            }
        }
        if self.cycle - self.last_commit > self.config.deadlock_cycles {
            return Err(SimError::Deadlock {
                cycle: self.cycle,
                cycles: self.config.deadlock_cycles,
            });
        }
        if let Some(limit) = self.options.max_cycles {
            if self.cycle - self.run_start >= limit {
                return Err(SimError::CycleLimit(limit));
            }
        }
        Ok(())
    }

    fn drain_store_buffers(&mut self, now: u64) {
        for t in 0..THREADS {
            loop {
                let sb = &mut self.threads[t].store_buffer;
                let Some(front) = sb.front_mut() else { break };
                match front.1 {
                    None => {
                        front.1 = Some(now + self.cache.access_at(front.0, AccessKind::Store, now));
                        break;
                    }
                    Some(done) if done <= now => {
                        sb.pop_front();
                    }
                    Some(_) => break,
                }
            }
        }
    }

    fn can_commit(th: &HwThread, u: &Uop, now: u64) -> bool {
        if u.fence() == Some(FenceKind::Strict) && !th.store_buffer.is_empty() {
            return false;
        }
        u.done.is_some_and(|d| d <= now) && (!u.needs_resolve() || u.resolved)
    }

    fn commit(&mut self, now: u64) -> Result<(), SimError> {
        let mut budget = self.config.commit_width;
        let full = self.config.defense == Defense::SpecCfiFull;
        for t in Self::thread_order(now) {
            while budget > 0 && self.threads[t].active {
                let th = &self.threads[t];
                let Some(head) = th.rob.front() else { break };
                if !Self::can_commit(th, head, now) {
                    break;
                }
                if let Some(source) = head.fault {
                    return Err(SimError::MemoryFault { pc: head.pc, source });
                }
                if full {
                    if let Some(v) = self.committed_path_check(t, now) {
                        self.kill(t, v);
                        break;
                    }
                }
                let u = self.threads[t].rob.pop_front().expect("head exists");
                self.retire(t, u, now);
                budget -= 1;
            }
        }
        Ok(())
    }

    /// Forward-edge and return checks applied to the ROB head.
    fn committed_path_check(&mut self, t: usize, now: u64) -> Option<CfiViolation> {
        let th = &mut self.threads[t];
        let head = th.rob.front()?;
        let instr = *head.instr()?;
        let pid = th.pid.unwrap_or_default().0;
        let violation = |pc, edge, expected, found| CfiViolation {
            cycle: now,
            thread: t,
            pid,
            pc,
            edge,
            expected,
            found,
        };
        if let Some((bpc, want)) = th.full_expect.take() {
            match instr {
                Instruction::CfiLbl { label } if effective_label(label) == want => {}
                other => {
                    let found = effective_label(other.cfi_label()).0 as u64;
                    let found = if other.kind() == Kind::CfiLbl { found } else { 0 };
                    return Some(violation(bpc, ViolationEdge::Forward, want.0 as u64, found));
                }
            }
        }
        if instr == Instruction::Ret {
            let found = head.actual_next.expect("resolved ret has a target");
            if head.old_rs != Some(found) {
                return Some(violation(
                    head.pc,
                    ViolationEdge::Return,
                    head.old_rs.unwrap_or(0),
                    found,
                ));
            }
        }
        None
    }

    fn kill(&mut self, t: usize, v: CfiViolation) {
        let pc = v.pc;
        self.stats.violations.push(v);
        self.squash_all(t);
        self.threads[t].scs.discard_speculation();
        self.end_context(t, pc, true);
    }

    fn squash_all(&mut self, t: usize) {
        while let Some(u) = self.threads[t].frontend.pop_back() {
            self.threads[t].undo_rsb(&u);
            self.record(t, &u, TraceKind::Annul);
        }
        while let Some(u) = self.threads[t].rob.pop_back() {
            self.annul_rob_entry(t, &u);
        }
        self.threads[t].rebuild_rename();
    }

    fn annul_rob_entry(&mut self, t: usize, u: &Uop) {
        let ports = self.config.ports;
        let th = &mut self.threads[t];
        th.undo_rsb(u);
        if u.issued.is_none() && u.kind().is_some_and(|k| port_for(k, &ports).is_some()) {
            th.iq -= 1;
        }
        if u.is_load_like() {
            th.ldq -= 1;
        }
        if u.is_store_like() {
            th.stq -= 1;
        }
        self.record(t, u, TraceKind::Annul);
    }

    fn retire(&mut self, t: usize, u: Uop, now: u64) {
        let defense = self.config.defense;
        self.last_commit = now;
        self.record(t, &u, TraceKind::Retire);
        let th = &mut self.threads[t];
        for d in u.dests.iter().flatten() {
            th.arch[d.reg as usize] = d.val;
            if th.rename[d.reg as usize] == Some(u.seq) {
                th.rename[d.reg as usize] = None;
            }
        }
        if u.is_load_like() {
            th.ldq -= 1;
        }
        if u.is_store_like() {
            th.stq -= 1;
            let addr = u.mem_addr.expect("issued store has an address");
            let pid = th.pid.expect("running");
            self.images
                .get_mut(&pid)
                .expect("image")
                .write_u64(addr, u.store_val)
                .expect("range checked at issue");
            th.store_buffer.push_back((addr, None));
        }
        let Op::Instr(instr) = u.op else {
            self.stats.hw_fences_retired += 1;
            return;
        };
        self.stats.committed_instructions += 1;
        th.retired += 1;
        let actual = u.actual_next;
        match instr {
            Instruction::Jz { .. } | Instruction::Jnz { .. } => self.pht.train(u.pc, u.hist, u.taken),
            Instruction::JmpIndirect { label, .. } | Instruction::CallIndirect { label, .. } => {
                let stored = (defense == Defense::BtbLabelVariant).then(|| effective_label(label));
                self.btb.update(u.pc, actual.expect("resolved"), stored);
            }
            Instruction::Ret if defense == Defense::Baseline => {
                self.btb.update(u.pc, actual.expect("resolved"), None);
            }
            Instruction::Clflush { .. } => self.cache.clflush(u.mem_addr.expect("issued")),
            Instruction::FenceStrict | Instruction::FenceRelaxed => self.stats.sw_fences_retired += 1,
            _ => {}
        }
        match u.rsb {
            RsbOp::ScsPush => th.scs.commit_call(),
            RsbOp::ScsPop(Some(_)) => th.scs.commit_ret(),
            _ => {}
        }
        if u.mispredicted {
            match (u.pred_src, instr.kind()) {
                (PredSrc::Pht, _) | (PredSrc::Injected, Kind::Jz | Kind::Jnz) => self.stats.mispredict_pht += 1,
                (PredSrc::Rsb, _) | (PredSrc::Injected, Kind::Ret) => self.stats.mispredict_rsb += 1,
                _ => self.stats.mispredict_btb += 1,
            }
        } else if u.needs_resolve() && u.predicted.is_none() {
            if instr == Instruction::Ret {
                self.stats.stalls_rsb += 1;
            } else {
                self.stats.stalls_btb += 1;
            }
        }
        if defense == Defense::SpecCfiFull && instr.is_indirect_branch() {
            th.full_expect = Some((u.pc, effective_label(instr.cfi_label())));
        }
        let pid = th.pid.expect("running");
        if u.mispredicted {
            let mut regs = [0; NUM_REGS];
            regs.copy_from_slice(&th.arch[..NUM_REGS]);
            self.checkpoints.push(RecoveryCheckpoint {
                thread: t,
                pid,
                retired: th.retired,
                pc: u.pc,
                regs,
                zf: th.arch[ZF as usize] != 0,
            });
        }
        if self.options.record_commits {
            self.commits.push((t, u.pc));
        }
        if instr == Instruction::Halt {
            self.end_context(t, u.pc + 1, false);
        }
    }

    fn resolve(&mut self, now: u64) {
        for t in 0..THREADS {
            let mut i = 0;
            while i < self.threads[t].rob.len() {
                let u = &mut self.threads[t].rob[i];
                if u.needs_resolve() && !u.resolved && u.done.is_some_and(|d| d <= now) {
                    u.resolved = true;
                    let actual = u.actual_next.expect("executed branch has a target");
                    match u.predicted {
                        None => {
                            let next = self.redirect_cfi_state(t, i);
                            let th = &mut self.threads[t];
                            th.cfi = next;
                            th.pc = actual;
                            th.block = FetchBlock::Until(now + 1);
                        }
                        Some(p) if p != actual => {
                            u.mispredicted = true;
                            self.recover(t, i, now);
                            break;
                        }
                        Some(_) => {}
                    }
                }
                i += 1;
            }
        }
    }

    fn redirect_cfi_state(&self, t: usize, i: usize) -> CfiDecodeState {
        let u = &self.threads[t].rob[i];
        match u.instr() {
            Some(instr) if self.config.defense.decode_check() && instr.is_indirect_branch() => {
                CfiDecodeState::ExpectLabel(effective_label(instr.cfi_label()))
            }
            _ => CfiDecodeState::Idle,
        }
    }

    /// Annuls everything younger than ROB entry `i`, youngest first, and
    /// redirects fetch to its actual target.
    fn recover(&mut self, t: usize, i: usize, now: u64) {
        while let Some(u) = self.threads[t].frontend.pop_back() {
            self.threads[t].undo_rsb(&u);
            self.record(t, &u, TraceKind::Annul);
        }
        while self.threads[t].rob.len() > i + 1 {
            let u = self.threads[t].rob.pop_back().expect("len checked");
            self.annul_rob_entry(t, &u);
        }
        let cfi = self.redirect_cfi_state(t, i);
        // The fence that followed a mispredicted indirect branch was just
        // annulled; the corrected target gets its own.
        let refence = self.config.defense == Defense::AllTargetFence
            && matches!(self.threads[t].rob[i].kind(), Some(Kind::JmpIndirect | Kind::CallIndirect | Kind::Ret));
        if refence {
            self.stats.fences_inserted += 1;
            let (pc, hist) = (self.threads[t].rob[i].pc, self.threads[t].rob[i].hist);
            let ready = now + self.config.mispredict_redirect_penalty + self.config.frontend_depth;
            let f = self.new_uop(pc, Op::HwFence(self.config.fence_kind), ready, hist);
            self.threads[t].frontend.push_back(f);
        }
        let th = &mut self.threads[t];
        th.rebuild_rename();
        let b = &th.rob[i];
        th.hist = if matches!(b.kind(), Some(Kind::Jz | Kind::Jnz)) {
            self.pht.shifted(b.hist, b.taken)
        } else {
            b.hist
        };
        th.pc = b.actual_next.expect("resolved");
        th.cfi = cfi;
        th.block = FetchBlock::Until(now + self.config.mispredict_redirect_penalty);
        if self.options.snapshot_on_recovery {
            self.snapshots.push(RsbSnapshot {
                cycle: now,
                thread: t,
                reason: SnapshotReason::AfterRecovery,
                csv: snapshot_csv(&th.scs.snapshot_rows()),
            });
        }
    }

    fn issue(&mut self, now: u64) {
        let mut budget = self.config.issue_width;
        let ports_cfg = self.config.ports;
        for t in Self::thread_order(now) {
            if !self.threads[t].active {
                continue;
            }
            let mut relaxed = false;
            let mut i = 0;
            while i < self.threads[t].rob.len() && budget > 0 {
                let th = &self.threads[t];
                let u = &th.rob[i];
                match u.fence() {
                    Some(FenceKind::Strict) => break,
                    Some(FenceKind::Relaxed) => {
                        relaxed = true;
                        i += 1;
                        continue;
                    }
                    None => {}
                }
                let Some(instr) = u.instr().copied() else {
                    i += 1;
                    continue;
                };
                let Some(port) = port_for(instr.kind(), &ports_cfg) else {
                    i += 1;
                    continue;
                };
                if u.issued.is_some() {
                    i += 1;
                    continue;
                }
                let is_load = u.is_load_like();
                let mut ready = !(is_load && relaxed);
                let mut vals = [0u64; 2];
                if ready {
                    for (k, s) in u.srcs.iter().enumerate() {
                        if let Some(s) = s {
                            match th.read_src(*s, now) {
                                Some(v) => vals[k] = v,
                                None => ready = false,
                            }
                        }
                    }
                }
                // Disambiguate against older stores by address; forward from
                // the youngest exact match.
                let mut forwarded = None;
                if ready && is_load {
                    let addr = match instr {
                        Instruction::Load { mem, .. } => effective_addr(vals[0], mem.disp),
                        _ => vals[0],
                    };
                    for j in (0..i).rev() {
                        match th.known_store(j, now) {
                            StoreInfo::NotStore => continue,
                            StoreInfo::Unknown => {
                                ready = false;
                                break;
                            }
                            StoreInfo::Known { addr: sa, val } => {
                                if sa == addr {
                                    match val {
                                        Some(v) => forwarded = Some(v),
                                        None => ready = false,
                                    }
                                    break;
                                }
                                if sa.abs_diff(addr) < 8 {
                                    ready = false;
                                    break;
                                }
                            }
                        }
                    }
                }
                if !ready || !self.ports.try_claim(port, t) {
                    i += 1;
                    continue;
                }
                self.execute(t, i, instr, vals, forwarded, now);
                budget -= 1;
                i += 1;
            }
        }
    }

    fn execute(&mut self, t: usize, i: usize, instr: Instruction, vals: [u64; 2], forwarded: Option<u64>, now: u64) {
        let th = &self.threads[t];
        let pid = th.pid.expect("running");
        let base = th.base;
        let pc = th.rob[i].pc;
        let image = &self.images[&pid];
        let mut dests: [Option<Dest>; 2] = [None, None];
        let dest = |reg: u8, val: u64, ready: u64| Some(Dest { reg, val, ready });
        let mut done = now + 1;
        let mut mem_addr = None;
        let mut store_val = 0;
        let mut fault = None;
        let mut taken = false;
        let mut actual_next = None;
        let load = |addr: u64, cache: &mut Cache| -> (u64, u64, Option<OutOfRange>) {
            if let Some(v) = forwarded {
                return (v, 1, None);
            }
            match image.read_u64(addr) {
                Ok(v) => (v, cache.access_at(addr, AccessKind::Load, now), None),
                Err(e) => (0, 1, Some(e)),
            }
        };
        let store_check = |addr: u64| image.read_u64(addr).err();
        match instr {
            Instruction::LoadImm { rd, value } => {
                let v = match value {
                    Value::Const(c) => c as u64,
                    Value::Code(idx) => base + idx as u64,
                };
                dests[0] = dest(rd.index() as u8, v, now + 1);
            }
            Instruction::Load { rd, mem } => {
                let addr = effective_addr(vals[0], mem.disp);
                let (v, lat, f) = load(addr, &mut self.cache);
                fault = f;
                mem_addr = Some(addr);
                done = now + lat;
                if mem.post_inc != 0 {
                    dests[0] = dest(mem.base.index() as u8, eval_add(vals[0], mem.post_inc as u64), now + 1);
                }
                dests[1] = dest(rd.index() as u8, v, done);
            }
            Instruction::Store { mem, .. } => {
                let addr = effective_addr(vals[1], mem.disp);
                mem_addr = Some(addr);
                store_val = vals[0];
                fault = store_check(addr);
                if mem.post_inc != 0 {
                    dests[0] = dest(mem.base.index() as u8, eval_add(vals[1], mem.post_inc as u64), now + 1);
                }
            }
            Instruction::Add { rd, src, .. } | Instruction::Shl { rd, src, .. } => {
                let b = match src {
                    Src::Reg(_) => vals[1],
                    Src::Imm(v) => v as u64,
                };
                let v = if instr.kind() == Kind::Add {
                    eval_add(vals[0], b)
                } else {
                    eval_shl(vals[0], b)
                };
                dests[0] = dest(rd.index() as u8, v, now + 1);
            }
            Instruction::Cmp { .. } => dests[0] = dest(ZF, (vals[0] == vals[1]) as u64, now + 1),
            Instruction::CmpImm { imm, .. } => dests[0] = dest(ZF, (vals[0] == imm as u64) as u64, now + 1),
            Instruction::Jz { target } | Instruction::Jnz { target } => {
                taken = (vals[0] != 0) == (instr.kind() == Kind::Jz);
                actual_next = Some(if taken { base + target as u64 } else { pc + 1 });
            }
            Instruction::JmpIndirect { .. } => actual_next = Some(vals[0]),
            Instruction::CallDirect { target } => {
                let sp = vals[0].wrapping_sub(8);
                mem_addr = Some(sp);
                store_val = pc + 1;
                fault = store_check(sp);
                dests[0] = dest(SP, sp, now + 1);
                actual_next = Some(base + target as u64);
            }
            Instruction::CallIndirect { .. } => {
                let sp = vals[1].wrapping_sub(8);
                mem_addr = Some(sp);
                store_val = pc + 1;
                fault = store_check(sp);
                dests[0] = dest(SP, sp, now + 1);
                actual_next = Some(vals[0]);
            }
            Instruction::Ret => {
                let (v, lat, f) = load(vals[0], &mut self.cache);
                fault = f;
                mem_addr = Some(vals[0]);
                done = now + lat;
                dests[0] = dest(SP, vals[0].wrapping_add(8), now + 1);
                actual_next = Some(v);
            }
            Instruction::Clflush { mem } => {
                mem_addr = Some(effective_addr(vals[0], mem.disp));
                if mem.post_inc != 0 {
                    dests[0] = dest(mem.base.index() as u8, eval_add(vals[0], mem.post_inc as u64), now + 1);
                }
            }
            _ => unreachable!("port-less ops complete at dispatch"),
        }
        let th = &mut self.threads[t];
        th.iq -= 1;
        let u = &mut th.rob[i];
        u.issued = Some(now);
        u.done = Some(done);
        u.dests = dests;
        u.mem_addr = mem_addr;
        u.store_val = store_val;
        u.fault = fault;
        u.taken = taken;
        if actual_next.is_some() {
            u.actual_next = actual_next;
        }
        let u = u.clone();
        self.record(t, &u, TraceKind::Issue);
    }

    fn dispatch(&mut self, now: u64) {
        let mut budget = self.config.fetch_width;
        let ports_cfg = self.config.ports;
        for t in Self::thread_order(now) {
            while budget > 0 {
                let (rob, iq, ldq, stq) = self.threads.iter().fold((0, 0, 0, 0), |a, th| {
                    (
                        a.0 + th.rob.len(),
                        a.1 + th.iq,
                        a.2 + th.ldq,
                        a.3 + th.stq + th.store_buffer.len(),
                    )
                });
                let th = &mut self.threads[t];
                let Some(u) = th.frontend.front() else { break };
                if u.frontend_ready > now || rob >= self.config.rob_size {
                    break;
                }
                let needs_port = u.kind().is_some_and(|k| port_for(k, &ports_cfg).is_some());
                if (needs_port && iq >= self.config.iq_size)
                    || (u.is_load_like() && ldq >= self.config.ldq)
                    || (u.is_store_like() && stq >= self.config.stq)
                {
                    break;
                }
                let mut u = th.frontend.pop_front().expect("front exists");
                for k in 0..2 {
                    u.srcs[k] = u.src_regs[k].map(|reg| SrcOp {
                        reg,
                        producer: th.rename[reg as usize],
                    });
                }
                for r in u.dest_regs.iter().flatten() {
                    th.rename[*r as usize] = Some(u.seq);
                }
                if needs_port {
                    th.iq += 1;
                } else {
                    u.done = Some(now);
                    if u.kind() == Some(Kind::JmpDirect) {
                        u.resolved = true;
                    }
                }
                if u.is_load_like() {
                    th.ldq += 1;
                }
                if u.is_store_like() {
                    th.stq += 1;
                }
                th.rob.push_back(u);
                budget -= 1;
            }
        }
    }

    fn inject(&mut self, pc: u64) -> bool {
        let inj = &self.options.inject;
        if !inj.is_active() {
            return false;
        }
        if inj.forced_pcs.contains(&pc) {
            return true;
        }
        inj.per_mille > 0 && self.rng.gen_range(0..1000) < inj.per_mille
    }

    fn new_uop(&mut self, pc: u64, op: Op, ready: u64, hist: u64) -> Uop {
        let (src_regs, dest_regs) = match op {
            Op::Instr(i) => operands(&i),
            Op::HwFence(_) => ([None, None], [None, None]),
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        Uop {
            seq,
            pc,
            op,
            frontend_ready: ready,
            predicted: None,
            pred_src: PredSrc::None,
            hist,
            rsb: RsbOp::None,
            old_rs: None,
            src_regs,
            dest_regs,
            srcs: [None, None],
            dests: [None, None],
            issued: None,
            done: None,
            mem_addr: None,
            store_val: 0,
            fault: None,
            taken: false,
            actual_next: None,
            resolved: false,
            mispredicted: false,
        }
    }

    fn frontend_limit(&self) -> usize {
        self.config.fetch_width * (self.config.frontend_depth as usize + 2)
    }

    fn can_fetch(&mut self, t: usize, now: u64) -> bool {
        let limit = self.frontend_limit();
        let th = &mut self.threads[t];
        if !th.active || th.frontend.len() >= limit {
            return false;
        }
        match th.block {
            FetchBlock::Free => true,
            FetchBlock::Until(c) if c <= now => {
                th.block = FetchBlock::Free;
                true
            }
            _ => false,
        }
    }

    fn fetch(&mut self, now: u64) {
        let Some(t) = Self::thread_order(now).into_iter().find(|&t| self.can_fetch(t, now)) else {
            return;
        };
        let defense = self.config.defense;
        let fence_kind = self.config.fence_kind;
        let ready = now + self.config.frontend_depth;
        let limit = self.frontend_limit();
        let program = self.threads[t].program.clone();
        let base = self.threads[t].base;
        for _ in 0..self.config.fetch_width {
            if self.threads[t].frontend.len() >= limit {
                break;
            }
            let pc = self.threads[t].pc;
            let Some(&instr) = pc
                .checked_sub(base)
                .and_then(|i| program.instructions.get(i as usize))
            else {
                self.threads[t].block = FetchBlock::BadPc;
                break;
            };
            let fallthrough = pc + 1;
            // Calls push first: a blocked spill retries the whole instruction.
            let mut rsb = RsbOp::None;
            if instr.is_call() {
                let th = &mut self.threads[t];
                if defense.uses_rsb_scs() {
                    match th.scs.push(fallthrough) {
                        Ok(()) => rsb = RsbOp::ScsPush,
                        Err(RsbError::SpillBlocked) => break,
                        Err(RsbError::SaveWhileSpeculative) => unreachable!("push never saves"),
                    }
                } else {
                    rsb = RsbOp::Legacy(th.legacy.push(fallthrough));
                }
            }
            if defense.decode_check() {
                let (state, action) = decode_cfi_check(self.threads[t].cfi, &instr);
                self.threads[t].cfi = state;
                if action == DecodeAction::InsertFence {
                    self.stats.fences_inserted += 1;
                    self.stats.cfi_label_mismatches += 1;
                    let hist = self.threads[t].hist;
                    let f = self.new_uop(pc, Op::HwFence(fence_kind), ready, hist);
                    self.threads[t].frontend.push_back(f);
                }
            }
            if instr.is_fence() {
                self.stats.fences_executed += 1;
            }
            let hist = self.threads[t].hist;
            let mut u = self.new_uop(pc, Op::Instr(instr), ready, hist);
            u.rsb = rsb;
            let mut stop = false;
            let next = match instr {
                Instruction::Jz { target } | Instruction::Jnz { target } => {
                    let mut taken = self.pht.predict_with(pc, hist).taken;
                    u.pred_src = PredSrc::Pht;
                    if self.inject(pc) {
                        taken = !taken;
                        u.pred_src = PredSrc::Injected;
                    }
                    self.threads[t].hist = self.pht.shifted(hist, taken);
                    let next = if taken { base + target as u64 } else { fallthrough };
                    u.predicted = Some(next);
                    stop = taken;
                    Some(next)
                }
                Instruction::JmpDirect { target } | Instruction::CallDirect { target } => {
                    u.pred_src = PredSrc::Direct;
                    u.predicted = Some(base + target as u64);
                    stop = true;
                    u.predicted
                }
                Instruction::JmpIndirect { label, .. } | Instruction::CallIndirect { label, .. } => {
                    let p = match self.btb.lookup(pc) {
                        _ if defense == Defense::RetpolineSw => None,
                        Some((target, stored)) => {
                            let label_ok = defense != Defense::BtbLabelVariant
                                || stored == Some(effective_label(label));
                            label_ok.then_some(target)
                        }
                        None => None,
                    };
                    u.pred_src = PredSrc::Btb;
                    stop = true;
                    self.injected_target(pc, &program, base, &mut u).or(p)
                }
                Instruction::Ret => {
                    if self.options.snapshot_before_pop == Some(pc) {
                        let csv = snapshot_csv(&self.threads[t].scs.snapshot_rows());
                        self.snapshots.push(RsbSnapshot {
                            cycle: now,
                            thread: t,
                            reason: SnapshotReason::BeforePop(pc),
                            csv,
                        });
                    }
                    let th = &mut self.threads[t];
                    let p = if defense.uses_rsb_scs() {
                        let v = th.scs.pop();
                        u.rsb = RsbOp::ScsPop(v);
                        u.old_rs = v;
                        u.pred_src = PredSrc::Rsb;
                        v
                    } else {
                        let (v, undo) = th.legacy.pop();
                        u.rsb = RsbOp::Legacy(undo);
                        u.old_rs = v;
                        u.pred_src = PredSrc::Rsb;
                        match v {
                            Some(v) => Some(v),
                            None if defense == Defense::Baseline => {
                                u.pred_src = PredSrc::Btb;
                                self.btb.lookup(pc).map(|(target, _)| target)
                            }
                            None => None,
                        }
                    };
                    stop = true;
                    self.injected_target(pc, &program, base, &mut u).or(p)
                }
                Instruction::Halt => {
                    self.threads[t].block = FetchBlock::Redirect;
                    stop = true;
                    None
                }
                _ => Some(fallthrough),
            };
            if u.needs_resolve() {
                u.predicted = next;
            }
            let all_target = defense == Defense::AllTargetFence
                && (instr.is_indirect_branch() || instr == Instruction::Ret);
            self.threads[t].frontend.push_back(u);
            if all_target {
                self.stats.fences_inserted += 1;
                let hist = self.threads[t].hist;
                let f = self.new_uop(pc, Op::HwFence(fence_kind), ready, hist);
                self.threads[t].frontend.push_back(f);
            }
            match next {
                Some(n) => self.threads[t].pc = n,
                None => {
                    self.threads[t].block = FetchBlock::Redirect;
                    break;
                }
            }
            if stop {
                break;
            }
        }
    }

    /// Random in-image target when injection fires for an indirect branch
    /// or return.
    fn injected_target(&mut self, pc: u64, program: &Program, base: u64, u: &mut Uop) -> Option<u64> {
        if !self.inject(pc) || program.is_empty() {
            return None;
        }
        u.pred_src = PredSrc::Injected;
        Some(base + self.rng.gen_range(0..program.len() as u64))
    }
}

/// Builds a simulator, loads `images`, runs `schedule` once and returns its
/// statistics.
pub fn run_until_halt(
    images: Vec<AddressSpaceImage>,
    schedule: &[(usize, Pid)],
    config: PipelineConfig,
) -> Result<RunStats, SimError> {
    let mut sim = Simulator::new(config, SimOptions::default())?;
    for img in images {
        sim.add_image(img);
    }
    sim.run(schedule)
}
