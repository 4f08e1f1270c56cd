//! Toy ISA with CFI-extended control transfers.
//!
//! Code is addressed at instruction granularity: an image places instruction
//! `i` of a [`Program`] at `base + i`. Data lives in a separate byte-addressed
//! memory (see [`crate::image`]).

use std::collections::BTreeMap;
use std::fmt;

/// Number of architectural general-purpose registers.
pub const NUM_REGS: usize = 16;

/// Architectural register index, `r0`..`r15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(u8);

impl Reg {
    /// Stack pointer used implicitly by `call`/`ret`.
    pub const SP: Reg = Reg(15);
    /// Scratch register reserved for toolchain rewrites.
    pub const SCRATCH: Reg = Reg(14);

    pub fn new(index: u8) -> Option<Reg> {
        ((index as usize) < NUM_REGS).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// CFI label carried by indirect branches and `cfi_lbl`.
///
/// Label `0` is reserved for "no label"; an unlabeled site or marker compares
/// as label `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelId(pub u32);

impl LabelId {
    pub const NONE: LabelId = LabelId(0);

    pub fn is_none(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Effective label of an optional label field.
pub fn effective_label(label: Option<LabelId>) -> LabelId {
    label.unwrap_or(LabelId::NONE)
}

/// Immediate loaded by `li`: either a constant or the address of an
/// instruction (resolved against the image base at run time).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Value {
    Const(i64),
    Code(usize),
}

/// Second source of `add`/`shl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Src {
    Reg(Reg),
    Imm(i64),
}

/// Memory operand `[base + disp]`, optionally post-incrementing `base`
/// (`[base]+n`), which is how a software pop is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mem {
    pub base: Reg,
    pub disp: i64,
    pub post_inc: i64,
}

impl Mem {
    pub fn new(base: Reg, disp: i64) -> Mem {
        Mem {
            base,
            disp,
            post_inc: 0,
        }
    }
}

/// One instruction of the toy ISA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    LoadImm { rd: Reg, value: Value },
    Load { rd: Reg, mem: Mem },
    Store { rs: Reg, mem: Mem },
    Add { rd: Reg, rs: Reg, src: Src },
    Shl { rd: Reg, rs: Reg, src: Src },
    Cmp { ra: Reg, rb: Reg },
    CmpImm { ra: Reg, imm: i64 },
    Jz { target: usize },
    Jnz { target: usize },
    JmpDirect { target: usize },
    JmpIndirect { reg: Reg, label: Option<LabelId> },
    CallDirect { target: usize },
    CallIndirect { reg: Reg, label: Option<LabelId> },
    Ret,
    CfiLbl { label: Option<LabelId> },
    FenceStrict,
    FenceRelaxed,
    Clflush { mem: Mem },
    Nop,
    Halt,
}

/// Fieldless discriminant of [`Instruction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    LoadImm,
    Load,
    Store,
    Add,
    Shl,
    Cmp,
    CmpImm,
    Jz,
    Jnz,
    JmpDirect,
    JmpIndirect,
    CallDirect,
    CallIndirect,
    Ret,
    CfiLbl,
    FenceStrict,
    FenceRelaxed,
    Clflush,
    Nop,
    Halt,
}

impl Kind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            Kind::LoadImm => "li",
            Kind::Load => "load",
            Kind::Store => "store",
            Kind::Add => "add",
            Kind::Shl => "shl",
            Kind::Cmp => "cmp",
            Kind::CmpImm => "cmpi",
            Kind::Jz => "jz",
            Kind::Jnz => "jnz",
            Kind::JmpDirect => "jmp",
            Kind::JmpIndirect => "jmpi",
            Kind::CallDirect => "call",
            Kind::CallIndirect => "calli",
            Kind::Ret => "ret",
            Kind::CfiLbl => "cfi_lbl",
            Kind::FenceStrict => "lfence",
            Kind::FenceRelaxed => "lfence.lsq",
            Kind::Clflush => "clflush",
            Kind::Nop => "nop",
            Kind::Halt => "halt",
        }
    }
}

impl Instruction {
    pub fn kind(&self) -> Kind {
        match self {
            Instruction::LoadImm { .. } => Kind::LoadImm,
            Instruction::Load { .. } => Kind::Load,
            Instruction::Store { .. } => Kind::Store,
            Instruction::Add { .. } => Kind::Add,
            Instruction::Shl { .. } => Kind::Shl,
            Instruction::Cmp { .. } => Kind::Cmp,
            Instruction::CmpImm { .. } => Kind::CmpImm,
            Instruction::Jz { .. } => Kind::Jz,
            Instruction::Jnz { .. } => Kind::Jnz,
            Instruction::JmpDirect { .. } => Kind::JmpDirect,
            Instruction::JmpIndirect { .. } => Kind::JmpIndirect,
            Instruction::CallDirect { .. } => Kind::CallDirect,
            Instruction::CallIndirect { .. } => Kind::CallIndirect,
            Instruction::Ret => Kind::Ret,
            Instruction::CfiLbl { .. } => Kind::CfiLbl,
            Instruction::FenceStrict => Kind::FenceStrict,
            Instruction::FenceRelaxed => Kind::FenceRelaxed,
            Instruction::Clflush { .. } => Kind::Clflush,
            Instruction::Nop => Kind::Nop,
            Instruction::Halt => Kind::Halt,
        }
    }

    /// CFI label field, present only on indirect call/jmp and `cfi_lbl`.
    pub fn cfi_label(&self) -> Option<LabelId> {
        match *self {
            Instruction::JmpIndirect { label, .. }
            | Instruction::CallIndirect { label, .. }
            | Instruction::CfiLbl { label } => label,
            _ => None,
        }
    }

    /// Replaces the label of a labelable instruction; no-op otherwise.
    pub fn with_label(self, new: Option<LabelId>) -> Instruction {
        match self {
            Instruction::JmpIndirect { reg, .. } => Instruction::JmpIndirect { reg, label: new },
            Instruction::CallIndirect { reg, .. } => Instruction::CallIndirect { reg, label: new },
            Instruction::CfiLbl { .. } => Instruction::CfiLbl { label: new },
            other => other,
        }
    }

    pub fn is_indirect_branch(&self) -> bool {
        matches!(
            self,
            Instruction::JmpIndirect { .. } | Instruction::CallIndirect { .. }
        )
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self, Instruction::Jz { .. } | Instruction::Jnz { .. })
    }

    pub fn is_call(&self) -> bool {
        matches!(
            self,
            Instruction::CallDirect { .. } | Instruction::CallIndirect { .. }
        )
    }

    pub fn is_control(&self) -> bool {
        matches!(
            self.kind(),
            Kind::Jz
                | Kind::Jnz
                | Kind::JmpDirect
                | Kind::JmpIndirect
                | Kind::CallDirect
                | Kind::CallIndirect
                | Kind::Ret
                | Kind::Halt
        )
    }

    pub fn is_fence(&self) -> bool {
        matches!(self, Instruction::FenceStrict | Instruction::FenceRelaxed)
    }

    /// Statically known code target of a direct transfer.
    pub fn direct_target(&self) -> Option<usize> {
        match *self {
            Instruction::Jz { target }
            | Instruction::Jnz { target }
            | Instruction::JmpDirect { target }
            | Instruction::CallDirect { target } => Some(target),
            _ => None,
        }
    }

    /// Rewrites every code reference (direct targets and `li` of a code
    /// address) through `f`.
    pub fn map_code_refs(self, mut f: impl FnMut(usize) -> usize) -> Instruction {
        match self {
            Instruction::Jz { target } => Instruction::Jz { target: f(target) },
            Instruction::Jnz { target } => Instruction::Jnz { target: f(target) },
            Instruction::JmpDirect { target } => Instruction::JmpDirect { target: f(target) },
            Instruction::CallDirect { target } => Instruction::CallDirect { target: f(target) },
            Instruction::LoadImm {
                rd,
                value: Value::Code(i),
            } => Instruction::LoadImm {
                rd,
                value: Value::Code(f(i)),
            },
            other => other,
        }
    }

    /// Checks register-index and label-placement invariants.
    pub fn well_formed(&self) -> bool {
        // Reg is range-checked on construction; labels can only be stored on
        // the three labelable variants by construction of the enum.
        match self.kind() {
            Kind::JmpIndirect | Kind::CallIndirect | Kind::CfiLbl => true,
            _ => self.cfi_label().is_none(),
        }
    }
}

/// An assembled program: instructions plus symbol and function metadata.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    /// Symbol name to instruction index.
    pub symbols: BTreeMap<String, usize>,
    /// Declared (address-taken) functions and their optional signature token.
    pub functions: BTreeMap<String, Option<String>>,
    /// Expected target signature of indirect sites, keyed by the symbol that
    /// labels the site.
    pub site_sigs: BTreeMap<String, String>,
    pub entry: usize,
}

impl Program {
    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn symbol(&self, name: &str) -> Option<usize> {
        self.symbols.get(name).copied()
    }

    /// Symbols defined at `index`, in name order.
    pub fn symbols_at(&self, index: usize) -> impl Iterator<Item = &str> {
        self.symbols
            .iter()
            .filter(move |(_, &i)| i == index)
            .map(|(n, _)| n.as_str())
    }

    pub fn count_kind(&self, kind: Kind) -> usize {
        self.instructions.iter().filter(|i| i.kind() == kind).count()
    }

    /// Verifies that every code reference and the entry point are in range.
    pub fn check_targets(&self) -> bool {
        let n = self.len();
        self.entry < n.max(1)
            && self.symbols.values().all(|&i| i <= n)
            && self.instructions.iter().all(|ins| {
                let mut ok = true;
                ins.map_code_refs(|t| {
                    ok &= t < n;
                    t
                });
                ok
            })
    }
}

/// `add` result.
pub fn eval_add(a: u64, b: u64) -> u64 {
    a.wrapping_add(b)
}

/// `shl` result; the shift amount is taken modulo 64.
pub fn eval_shl(a: u64, b: u64) -> u64 {
    a.wrapping_shl((b & 63) as u32)
}

/// Effective address of `[base + disp]`.
pub fn effective_addr(base: u64, disp: i64) -> u64 {
    base.wrapping_add(disp as u64)
}
