//! Attack scenarios.
//!
//! Every scenario trains the shared predictors from some address space, then
//! runs a victim whose mispredicted control flow reaches a disclosure gadget.
//! Cache scenarios recover the byte with flush+reload over a 256-line probe
//! array; the port scenario sweeps guesses and watches branch-port
//! contention from a monitor on the sibling hardware thread.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::asm::{assemble, AsmError, CfiMode};
use crate::config::{Defense, FenceKind, PipelineConfig};
use crate::image::{load_image, AddressSpaceImage, ImageError, Pid};
use crate::memory::probe_addresses;
use crate::pipeline::{RunStats, SimError, SimOptions, Simulator};

/// Data layout shared by every image. Each slot sits on its own cache line.
pub const FPTR: u64 = 0x100;
pub const SLOW: u64 = 0x140;
pub const SLOW2: u64 = 0x180;
pub const SECRET: u64 = 0x200;
pub const GUESS: u64 = 0x240;
pub const DUMMY: u64 = 0x280;
pub const ARG: u64 = 0x2c0;
pub const DEPTH: u64 = 0x300;
pub const PROBE: u64 = 0x4000;
pub const PROBE_STRIDE: u64 = 64;
pub const DATA_SIZE: usize = 0x10000;

/// Every image is loaded at the same code base.
pub const CODE_BASE: u64 = 0;

/// Fraction of trials that must recover the secret for an attack to count as
/// a success.
pub const SUCCESS_RATE: f64 = 0.9;

const VICTIM: Pid = Pid(1);
const ATTACKER: Pid = Pid(2);
const MONITOR: Pid = Pid(3);

/// Recursion depth of the same-space return attack; deeper than the RSB.
const RSB_DEPTH: u64 = 20;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    SpectreBtb,
    SpectreRsb,
    Smother,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    /// Attacker and victim are different processes on the same core.
    Cross,
    /// Training happens inside the victim's own address space.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Training uses the victim branch's own address.
    InPlace,
    /// Training uses a different address that collides in the predictor.
    OutOfPlace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Cache,
    Port,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Scenario {
    pub attack: AttackKind,
    pub space: Space,
    pub placement: Placement,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::SpectreBtb, AttackKind::SpectreRsb, AttackKind::Smother];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::SpectreBtb => "spectre-btb",
            AttackKind::SpectreRsb => "spectre-rsb",
            AttackKind::Smother => "smother",
        }
    }
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Cross => "cross",
            Space::Same => "same",
        }
    }
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Placement::InPlace => "in-place",
            Placement::OutOfPlace => "out-of-place",
        }
    }
}

impl Scenario {
    pub const fn new(attack: AttackKind, space: Space, placement: Placement) -> Scenario {
        Scenario {
            attack,
            space,
            placement,
        }
    }

    /// The twelve attack cells: attack x space x placement.
    pub fn all() -> Vec<Scenario> {
        let mut v = Vec::new();
        for attack in AttackKind::ALL {
            for space in [Space::Cross, Space::Same] {
                for placement in [Placement::InPlace, Placement::OutOfPlace] {
                    v.push(Scenario::new(attack, space, placement));
                }
            }
        }
        v
    }

    pub fn channel(&self) -> Channel {
        match self.attack {
            AttackKind::Smother => Channel::Port,
            _ => Channel::Cache,
        }
    }

    /// `attack-space-placement`, e.g. `spectre-btb-cross-in-place`.
    pub fn name(&self) -> String {
        format!("{}-{}-{}", self.attack.name(), self.space.name(), self.placement.name())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scenario {
    type Err = AttackError;

    /// Accepts the full name or `attack-space` (in-place).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        for sc in Scenario::all() {
            if sc.name() == s {
                return Ok(sc);
            }
            if sc.placement == Placement::InPlace && format!("{}-{}", sc.attack.name(), sc.space.name()) == s {
                return Ok(sc);
            }
        }
        Err(AttackError::ScenarioInvalid(format!("unknown scenario `{s}`")))
    }
}

/// One trial: the planted secret and what the attacker recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Trial {
    pub secret: u8,
    pub recovered: Option<u8>,
    /// A full-enforcement violation terminated the victim or trainer.
    pub killed: bool,
}

impl Trial {
    pub fn leaked(&self) -> bool {
        self.recovered == Some(self.secret)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackResult {
    pub scenario: Scenario,
    pub defense: Defense,
    pub fence_kind: FenceKind,
    pub channel: Channel,
    pub trials: Vec<Trial>,
    pub successes: usize,
    /// At least [`SUCCESS_RATE`] of the trials recovered the secret.
    pub success: bool,
    /// No trial recovered the secret.
    pub blocked: bool,
    pub fences_inserted: u64,
    pub cfi_violations: u64,
}

impl AttackResult {
    /// Recovered value of the last trial.
    pub fn recovered(&self) -> Option<u8> {
        self.trials.last().and_then(|t| t.recovered)
    }

    /// Secret of the last trial.
    pub fn ground_truth(&self) -> Option<u8> {
        self.trials.last().map(|t| t.secret)
    }

    pub fn outcome(&self) -> &'static str {
        if self.success {
            "leaked"
        } else if self.blocked {
            "blocked"
        } else {
            "partial"
        }
    }
}

/// Options for [`run_attack_with`].
#[derive(Debug, Clone)]
pub struct AttackOptions {
    pub trials: usize,
    pub seed: u64,
    pub config: PipelineConfig,
    /// Record a pipeline trace of the final trigger run.
    pub trace: bool,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            trials: 10,
            seed: 0,
            config: PipelineConfig::default(),
            trace: false,
        }
    }
}

/// Runs `trials` trials of `scenario` against `defense` with default timing.
pub fn run_attack(
    scenario: Scenario,
    defense: Defense,
    fence_kind: FenceKind,
    trials: usize,
    seed: u64,
) -> Result<AttackResult, AttackError> {
    let opts = AttackOptions {
        trials,
        seed,
        ..AttackOptions::default()
    };
    run_attack_with(scenario, defense, fence_kind, &opts).map(|(r, _)| r)
}

/// Like [`run_attack`], also returning the simulator after the last trial.
pub fn run_attack_with(
    scenario: Scenario,
    defense: Defense,
    fence_kind: FenceKind,
    opts: &AttackOptions,
) -> Result<(AttackResult, Simulator), AttackError> {
    if opts.trials == 0 {
        return Err(AttackError::ScenarioInvalid("at least one trial is required".into()));
    }
    let config = opts.config.clone().with_defense(defense, fence_kind);
    let sim_opts = SimOptions {
        trace: opts.trace,
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(config, sim_opts)?;
    let progs = Programs::build(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trials = Vec::with_capacity(opts.trials);
    let mut fences = 0;
    let mut violations = 0;
    for _ in 0..opts.trials {
        let secret: u8 = rng.gen();
        let mut acc = Acc::default();
        let recovered = match scenario.attack {
            AttackKind::SpectreBtb => spectre_btb(&mut sim, &progs, scenario, secret, &mut acc)?,
            AttackKind::SpectreRsb => spectre_rsb(&mut sim, &progs, scenario, secret, &mut acc)?,
            AttackKind::Smother => smother(&mut sim, &progs, scenario, secret, &mut acc)?,
        };
        fences += acc.fences;
        violations += acc.violations;
        trials.push(Trial {
            secret,
            recovered,
            killed: acc.killed,
        });
    }
    let successes = trials.iter().filter(|t| t.leaked()).count();
    let result = AttackResult {
        scenario,
        defense,
        fence_kind,
        channel: scenario.channel(),
        success: successes as f64 >= SUCCESS_RATE * trials.len() as f64,
        blocked: successes == 0,
        successes,
        trials,
        fences_inserted: fences,
        cfi_violations: violations,
    };
    Ok((result, sim))
}

#[derive(Debug, Default)]
struct Acc {
    fences: u64,
    violations: u64,
    killed: bool,
}

impl Acc {
    fn add(&mut self, s: &RunStats) {
        self.fences += s.fences_inserted;
        self.violations += s.cfi_violations;
    }
}

/// Assembled programs for one scenario.
struct Programs {
    victim: AddressSpaceImage,
    attacker: Option<AddressSpaceImage>,
    monitor: Option<AddressSpaceImage>,
}

fn image(src: &str, pid: Pid) -> Result<AddressSpaceImage, AttackError> {
    let prog = assemble(src, CfiMode::Coarse)?;
    Ok(load_image(prog, pid, CODE_BASE, DATA_SIZE, None)?)
}

impl Programs {
    fn build(sc: Scenario) -> Result<Programs, AttackError> {
        let (victim, attacker) = match sc.attack {
            AttackKind::SpectreBtb => (BTB_VICTIM, BTB_ATTACKER),
            AttackKind::SpectreRsb => match sc.space {
                Space::Same => (RSB_SAME_VICTIM, ""),
                Space::Cross => (RSB_CROSS_VICTIM, RSB_CROSS_ATTACKER),
            },
            AttackKind::Smother => (SMOTHER_VICTIM, SMOTHER_ATTACKER),
        };
        let attacker = if sc.space == Space::Cross {
            Some(image(attacker, ATTACKER)?)
        } else {
            None
        };
        let monitor = if sc.attack == AttackKind::Smother {
            Some(image(SMOTHER_MONITOR, MONITOR)?)
        } else {
            None
        };
        Ok(Programs {
            victim: image(victim, VICTIM)?,
            attacker,
            monitor,
        })
    }

    fn victim_sym(&self, name: &str) -> u64 {
        self.victim.symbol_addr(name).expect("scenario symbol")
    }

    fn attacker_sym(&self, name: &str) -> u64 {
        self.attacker
            .as_ref()
            .and_then(|a| a.symbol_addr(name))
            .expect("attacker symbol")
    }
}

/// Victim of the indirect-call attacks. The call at 0x10 normally reaches
/// `benign`; `gadget` is a different class and leaks `[r3]` through the
/// probe array. `train_oop` holds a legitimately labeled call at the BTB
/// alias of 0x10.
const BTB_VICTIM: &str = "\
.entry main
main:
  load r3, [r0+0x2c0]
  load r2, [r0+0x100]
.org 0x10
site:
  call *r2, L1
  halt
.org 0x24
gadget:
  cfi_lbl L2
  load r4, [r3]
  shl r4, r4, 6
  add r4, r4, 0x4000
  load r5, [r4]
  ret
.org 0x50
benign:
  cfi_lbl L1
  ret
.org 0x20f
train_oop:
  load r3, [r0+0x280]
  li r2, gadget
  call *r2, L2
  halt
";

/// Attacker with the same code base. Its own `cfi_lbl L1` sits where the
/// victim's gadget body starts, so an attacker who knows the site label
/// trains a matching label.
const BTB_ATTACKER: &str = "\
.entry main
main:
  li r2, target
.org 0x10
  call *r2, L1
  halt
.org 0x25
target:
  cfi_lbl L1
  ret
.org 0x20f
alias:
  li r2, target
  nop
  call *r2, L1
  halt
";

/// Resets the cache state every cache trial starts from: probe lines and the
/// slow slots flushed, the secret and argument lines warm.
fn prepare_cache(sim: &mut Simulator) {
    for a in probe_addresses(PROBE, 256, PROBE_STRIDE) {
        sim.flush_line(a);
    }
    sim.flush_line(FPTR);
    sim.flush_line(SLOW);
    sim.flush_line(SLOW2);
    for a in [SECRET, ARG, DUMMY, GUESS, DEPTH] {
        sim.touch(a);
    }
}

fn reload(sim: &mut Simulator) -> Option<u8> {
    let res = sim.probe(&probe_addresses(PROBE, 256, PROBE_STRIDE));
    res.unique_hit().map(|i| i as u8)
}

fn fresh(sim: &mut Simulator, img: &AddressSpaceImage) -> Pid {
    sim.add_image(img.clone())
}

fn restart(sim: &mut Simulator, pid: Pid, pc: u64) -> Result<(), AttackError> {
    let top = sim.image(pid).expect("image").stack_top();
    sim.set_context(pid, pc, &[(15, top)])?;
    Ok(())
}

fn run_one(sim: &mut Simulator, pid: Pid, acc: &mut Acc) -> Result<(), AttackError> {
    let stats = sim.run(&[(0, pid)])?;
    acc.add(&stats);
    acc.killed |= sim.is_killed(pid);
    Ok(())
}

fn spectre_btb(
    sim: &mut Simulator,
    p: &Programs,
    sc: Scenario,
    secret: u8,
    acc: &mut Acc,
) -> Result<Option<u8>, AttackError> {
    // Training.
    for _ in 0..2 {
        match sc.space {
            Space::Cross => {
                let a = fresh(sim, p.attacker.as_ref().expect("attacker"));
                let pc = match sc.placement {
                    Placement::InPlace => p.attacker_sym("main"),
                    Placement::OutOfPlace => p.attacker_sym("alias"),
                };
                restart(sim, a, pc)?;
                run_one(sim, a, acc)?;
            }
            Space::Same => {
                let v = fresh(sim, &p.victim);
                sim.write_data(v, ARG, DUMMY)?;
                match sc.placement {
                    Placement::InPlace => sim.write_data(v, FPTR, p.victim_sym("gadget"))?,
                    Placement::OutOfPlace => restart(sim, v, p.victim_sym("train_oop"))?,
                }
                run_one(sim, v, acc)?;
            }
        }
    }
    // Trigger.
    let v = fresh(sim, &p.victim);
    sim.write_data(v, SECRET, secret as u64)?;
    sim.write_data(v, ARG, SECRET)?;
    sim.write_data(v, FPTR, p.victim_sym("benign"))?;
    prepare_cache(sim);
    run_one(sim, v, acc)?;
    Ok(reload(sim))
}

/// Same-space return victim. `rec` recurses `[DEPTH]` times and every
/// return waits on two chained misses loaded up front; `train` runs the same
/// recursion from just before `gadget`, so the outermost return leaves the
/// gadget as the return's last committed target. `train_oop` jumps to the gadget from the BTB
/// alias of the return.
const RSB_SAME_VICTIM: &str = "\
.entry main
main:
  load r3, [r0+0x2c0]
  load r6, [r0+0x300]
  load r9, [r0+0x140]
  load r9, [r9+0x180]
  call rec
  halt
.org 0x10
train:
  load r3, [r0+0x280]
  load r6, [r0+0x300]
  call rec
gadget:
  cfi_lbl L3
  load r4, [r3]
  shl r4, r4, 6
  add r4, r4, 0x4000
  load r5, [r4]
  halt
.org 0x40
rec:
  add r6, r6, -1
  cmpi r6, 0
  jz rbase
  call rec
rbase:
  add r15, r15, r9
rret:
  ret
.org 0x241
train_oop:
  load r3, [r0+0x280]
  li r2, gadget
  nop
  jmp *r2, L3
";

/// Cross-space return victim: `vf` yields right after being called and, when
/// rescheduled, returns through a slow stack pointer.
const RSB_CROSS_VICTIM: &str = "\
.entry main
main:
  load r3, [r0+0x2c0]
  call vf
  halt
.org 0x30
vf:
  halt
  load r9, [r0+0x140]
  add r15, r15, r9
vret:
  ret
.org 0x60
gadget:
  cfi_lbl L3
  load r4, [r3]
  shl r4, r4, 6
  add r4, r4, 0x4000
  load r5, [r4]
  halt
";

/// Cross-space return attacker. `main` fills the return stack with the
/// gadget address; `drain` returns through crafted stack slots from the BTB
/// alias of the victim's return until the return stack is empty.
const RSB_CROSS_ATTACKER: &str = "\
.entry main
main:
  li r6, 16
  jmp fill
.org 0x5f
fill:
  call pop_frame
g:
  add r6, r6, -1
  cmpi r6, 0
  jnz prep
  halt
.org 0x80
pop_frame:
  add r15, r15, 8
  add r6, r6, -1
  cmpi r6, 0
  jnz fill
  halt
.org 0x100
drain:
  li r6, 17
  jmp prep
.org 0x22f
prep:
  li r2, g
  add r15, r15, -8
  store r2, [r15]
  ret
";

fn spectre_rsb(
    sim: &mut Simulator,
    p: &Programs,
    sc: Scenario,
    secret: u8,
    acc: &mut Acc,
) -> Result<Option<u8>, AttackError> {
    match sc.space {
        Space::Same => {
            for _ in 0..2 {
                let v = fresh(sim, &p.victim);
                let pc = match sc.placement {
                    Placement::InPlace => p.victim_sym("train"),
                    Placement::OutOfPlace => p.victim_sym("train_oop"),
                };
                sim.write_data(v, DEPTH, RSB_DEPTH)?;
                restart(sim, v, pc)?;
                run_one(sim, v, acc)?;
            }
            let v = fresh(sim, &p.victim);
            sim.write_data(v, SECRET, secret as u64)?;
            sim.write_data(v, ARG, SECRET)?;
            sim.write_data(v, DEPTH, RSB_DEPTH)?;
            prepare_cache(sim);
            run_one(sim, v, acc)?;
        }
        Space::Cross => {
            // The victim runs until it yields inside `vf`.
            let v = fresh(sim, &p.victim);
            sim.write_data(v, SECRET, secret as u64)?;
            sim.write_data(v, ARG, SECRET)?;
            run_one(sim, v, acc)?;
            let a = fresh(sim, p.attacker.as_ref().expect("attacker"));
            let pc = match sc.placement {
                Placement::InPlace => p.attacker_sym("main"),
                Placement::OutOfPlace => p.attacker_sym("drain"),
            };
            restart(sim, a, pc)?;
            run_one(sim, a, acc)?;
            prepare_cache(sim);
            run_one(sim, v, acc)?;
        }
    }
    Ok(reload(sim))
}

/// Port-contention victim: a function-pointer call whose colliding target
/// `bar` compares the secret with a guess and, on a match, runs a burst of
/// branch-port work.
const SMOTHER_VICTIM: &str = "\
.entry main
main:
  load r2, [r0+0x200]
  load r1, [r0+0x240]
  load r5, [r0+0x100]
.org 0x10
site:
  call *r5, L1
  halt
.org 0x24
bar:
  cfi_lbl L2
  cmp r2, r1
  jz hot
  add r8, r8, 1
  add r8, r8, 1
  ret
hot:
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  ret
.org 0x70
baz:
  cfi_lbl L1
  ret
.org 0x20f
train_oop:
  load r2, [r0+0x280]
  li r5, bar
  call *r5, L2
  halt
";

const SMOTHER_ATTACKER: &str = "\
.entry main
main:
  li r5, target
.org 0x10
  call *r5, L1
  halt
.org 0x24
target:
  cfi_lbl L1
  ret
.org 0x20f
alias:
  li r5, target
  nop
  call *r5, L1
  halt
";

/// Spins on branch-port compares on the sibling hardware thread.
const SMOTHER_MONITOR: &str = "\
.entry main
main:
  li r6, 14
spin:
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  cmp r7, r7
  add r6, r6, -1
  cmpi r6, 0
  jnz spin
  halt
";

/// Cycles in which the monitor lost the branch port while the victim ran
/// with `guess`.
fn smother_probe(
    sim: &mut Simulator,
    p: &Programs,
    sc: Scenario,
    secret: u8,
    guess: u8,
    acc: &mut Acc,
) -> Result<usize, AttackError> {
    match sc.space {
        Space::Cross => {
            let a = fresh(sim, p.attacker.as_ref().expect("attacker"));
            let pc = match sc.placement {
                Placement::InPlace => p.attacker_sym("main"),
                Placement::OutOfPlace => p.attacker_sym("alias"),
            };
            restart(sim, a, pc)?;
            run_one(sim, a, acc)?;
        }
        Space::Same => {
            let v = fresh(sim, &p.victim);
            sim.write_data(v, SECRET, secret as u64)?;
            sim.write_data(v, GUESS, guess as u64 ^ 0xff)?;
            match sc.placement {
                Placement::InPlace => sim.write_data(v, FPTR, p.victim_sym("bar"))?,
                Placement::OutOfPlace => restart(sim, v, p.victim_sym("train_oop"))?,
            }
            run_one(sim, v, acc)?;
        }
    }
    let v = fresh(sim, &p.victim);
    sim.write_data(v, SECRET, secret as u64)?;
    sim.write_data(v, GUESS, guess as u64)?;
    sim.write_data(v, FPTR, p.victim_sym("baz"))?;
    let m = fresh(sim, p.monitor.as_ref().expect("monitor"));
    prepare_cache(sim);
    sim.clear_port_traces();
    let stats = sim.run(&[(0, v), (1, m)])?;
    acc.add(&stats);
    acc.killed |= sim.is_killed(v);
    Ok(sim.port_trace(1).iter().filter(|&&d| d).count())
}

fn smother(
    sim: &mut Simulator,
    p: &Programs,
    sc: Scenario,
    secret: u8,
    acc: &mut Acc,
) -> Result<Option<u8>, AttackError> {
    let mut delays = Vec::with_capacity(256);
    for guess in 0..=255u8 {
        delays.push(smother_probe(sim, p, sc, secret, guess, acc)?);
    }
    Ok(unique_argmax(&delays).map(|i| i as u8))
}

/// Index of the strictly largest value, if exactly one index attains it.
pub fn unique_argmax(values: &[usize]) -> Option<usize> {
    let max = *values.iter().max()?;
    let mut it = values.iter().enumerate().filter(|(_, &v)| v == max);
    let first = it.next()?.0;
    it.next().is_none().then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attack(sc: Scenario, d: Defense) -> AttackResult {
        run_attack(sc, d, FenceKind::Strict, 3, 7).unwrap()
    }

    #[test]
    fn twelve_distinct_cells() {
        let all = Scenario::all();
        assert_eq!(all.len(), 12);
        for sc in &all {
            assert_eq!(sc.name().parse::<Scenario>().unwrap(), *sc);
        }
        assert_eq!(
            "spectre-btb-cross".parse::<Scenario>().unwrap(),
            Scenario::new(AttackKind::SpectreBtb, Space::Cross, Placement::InPlace)
        );
        assert!("nope".parse::<Scenario>().is_err());
    }

    #[test]
    fn zero_trials_rejected() {
        let sc = Scenario::all()[0];
        assert!(matches!(
            run_attack(sc, Defense::Baseline, FenceKind::Strict, 0, 0),
            Err(AttackError::ScenarioInvalid(_))
        ));
    }

    #[test]
    fn argmax_requires_unique_max() {
        assert_eq!(unique_argmax(&[1, 5, 2]), Some(1));
        assert_eq!(unique_argmax(&[5, 5, 2]), None);
        assert_eq!(unique_argmax(&[]), None);
    }

    #[test]
    fn btb_cross_leaks_on_baseline_and_is_blocked_by_label_check() {
        let sc = Scenario::new(AttackKind::SpectreBtb, Space::Cross, Placement::InPlace);
        assert!(attack(sc, Defense::Baseline).success);
        let r = attack(sc, Defense::SpecCfiBase);
        assert!(r.blocked, "{r:?}");
        assert!(r.fences_inserted > 0);
        assert!(attack(sc, Defense::SpecCfiFull).blocked);
    }

    #[test]
    fn btb_label_variant_falls_to_known_label() {
        let sc = Scenario::new(AttackKind::SpectreBtb, Space::Cross, Placement::InPlace);
        assert!(attack(sc, Defense::BtbLabelVariant).success);
    }

    #[test]
    fn every_cell_leaks_on_baseline() {
        for sc in Scenario::all() {
            if sc.attack == AttackKind::Smother {
                continue;
            }
            let r = attack(sc, Defense::Baseline);
            assert!(r.success, "{sc}: {:?}", r.trials);
        }
    }

    #[test]
    fn smother_leaks_on_baseline_only_through_ports() {
        for space in [Space::Cross, Space::Same] {
            for placement in [Placement::InPlace, Placement::OutOfPlace] {
                let sc = Scenario::new(AttackKind::Smother, space, placement);
                let opts = AttackOptions { trials: 2, seed: 3, ..AttackOptions::default() };
                let (r, _) = run_attack_with(sc, Defense::Baseline, FenceKind::Strict, &opts).unwrap();
                assert!(r.success, "{sc}: {:?}", r.trials);
                let (r, _) = run_attack_with(sc, Defense::SpecCfiBase, FenceKind::Strict, &opts).unwrap();
                assert!(r.blocked, "{sc}: {:?}", r.trials);
            }
        }
    }

    #[test]
    fn every_cache_cell_blocked_by_speccfi() {
        for sc in Scenario::all() {
            if sc.attack == AttackKind::Smother {
                continue;
            }
            for d in [Defense::SpecCfiBase, Defense::SpecCfiFull] {
                let r = attack(sc, d);
                assert!(r.blocked, "{sc} {d}: {:?}", r.trials);
            }
        }
    }
}
