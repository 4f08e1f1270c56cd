//! Sequential reference interpreter: architectural semantics with no timing
//! and no speculation.

use thiserror::Error;

use crate::image::{AddressSpaceImage, OutOfRange};
use crate::isa::{effective_addr, eval_add, eval_shl, Instruction, Src, Value, NUM_REGS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("no halt within {0} steps")]
    StepLimitExceeded(u64),
    #[error("memory fault at pc {pc:#x}: {source}")]
    MemoryFault {
        pc: u64,
        #[source]
        source: OutOfRange,
    },
    #[error("pc {0:#x} is outside the code")]
    BadPc(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchState {
    pub regs: [u64; NUM_REGS],
    pub zf: bool,
    pub pc: u64,
    pub data: Vec<u8>,
    /// Instructions executed, the final `halt` included.
    pub steps: u64,
    pub halted: bool,
}

impl ArchState {
    pub fn new(image: &AddressSpaceImage) -> ArchState {
        let mut regs = [0; NUM_REGS];
        regs[15] = image.stack_top();
        ArchState {
            regs,
            zf: false,
            pc: image.entry_addr(),
            data: image.data.clone(),
            steps: 0,
            halted: false,
        }
    }

    fn check(&self, addr: u64) -> Result<usize, OutOfRange> {
        match addr.checked_add(8) {
            Some(end) if end <= self.data.len() as u64 => Ok(addr as usize),
            _ => Err(OutOfRange {
                addr,
                width: 8,
                size: self.data.len(),
            }),
        }
    }

    pub fn read_u64(&self, addr: u64) -> Result<u64, OutOfRange> {
        let a = self.check(addr)?;
        Ok(u64::from_le_bytes(self.data[a..a + 8].try_into().expect("8 bytes")))
    }

    fn write_u64(&mut self, addr: u64, v: u64) -> Result<(), OutOfRange> {
        let a = self.check(addr)?;
        self.data[a..a + 8].copy_from_slice(&v.to_le_bytes());
        Ok(())
    }

    /// Executes one instruction. A halted state does not advance.
    pub fn step(&mut self, image: &AddressSpaceImage) -> Result<(), InterpError> {
        if self.halted {
            return Ok(());
        }
        let pc = self.pc;
        let instr = *image.fetch(pc).ok_or(InterpError::BadPc(pc))?;
        let fault = |source| InterpError::MemoryFault { pc, source };
        let mut next = pc + 1;
        let r = |s: &ArchState, x: crate::isa::Reg| s.regs[x.index()];
        match instr {
            Instruction::LoadImm { rd, value } => {
                self.regs[rd.index()] = match value {
                    Value::Const(c) => c as u64,
                    Value::Code(i) => image.addr_of(i),
                }
            }
            Instruction::Load { rd, mem } => {
                let base = r(self, mem.base);
                let v = self.read_u64(effective_addr(base, mem.disp)).map_err(fault)?;
                if mem.post_inc != 0 {
                    self.regs[mem.base.index()] = eval_add(base, mem.post_inc as u64);
                }
                self.regs[rd.index()] = v;
            }
            Instruction::Store { rs, mem } => {
                let base = r(self, mem.base);
                let v = r(self, rs);
                self.write_u64(effective_addr(base, mem.disp), v).map_err(fault)?;
                if mem.post_inc != 0 {
                    self.regs[mem.base.index()] = eval_add(base, mem.post_inc as u64);
                }
            }
            Instruction::Add { rd, rs, src } | Instruction::Shl { rd, rs, src } => {
                let b = match src {
                    Src::Reg(x) => r(self, x),
                    Src::Imm(v) => v as u64,
                };
                let a = r(self, rs);
                self.regs[rd.index()] = if matches!(instr, Instruction::Add { .. }) {
                    eval_add(a, b)
                } else {
                    eval_shl(a, b)
                };
            }
            Instruction::Cmp { ra, rb } => self.zf = r(self, ra) == r(self, rb),
            Instruction::CmpImm { ra, imm } => self.zf = r(self, ra) == imm as u64,
            Instruction::Jz { target } => {
                if self.zf {
                    next = image.addr_of(target);
                }
            }
            Instruction::Jnz { target } => {
                if !self.zf {
                    next = image.addr_of(target);
                }
            }
            Instruction::JmpDirect { target } => next = image.addr_of(target),
            Instruction::JmpIndirect { reg, .. } => next = r(self, reg),
            Instruction::CallDirect { .. } | Instruction::CallIndirect { .. } => {
                let target = match instr {
                    Instruction::CallDirect { target } => image.addr_of(target),
                    Instruction::CallIndirect { reg, .. } => r(self, reg),
                    _ => unreachable!(),
                };
                let sp = self.regs[15].wrapping_sub(8);
                self.write_u64(sp, pc + 1).map_err(fault)?;
                self.regs[15] = sp;
                next = target;
            }
            Instruction::Ret => {
                let sp = self.regs[15];
                next = self.read_u64(sp).map_err(fault)?;
                self.regs[15] = sp.wrapping_add(8);
            }
            Instruction::Halt => {
                self.halted = true;
                next = pc + 1;
            }
            Instruction::CfiLbl { .. }
            | Instruction::FenceStrict
            | Instruction::FenceRelaxed
            | Instruction::Clflush { .. }
            | Instruction::Nop => {}
        }
        self.pc = next;
        self.steps += 1;
        Ok(())
    }
}

/// Runs `image` from its entry until `halt`.
pub fn interpret(image: &AddressSpaceImage, step_limit: u64) -> Result<ArchState, InterpError> {
    let mut s = ArchState::new(image);
    run_steps(image, &mut s, step_limit)?;
    if !s.halted {
        return Err(InterpError::StepLimitExceeded(step_limit));
    }
    Ok(s)
}

/// Advances `state` by up to `n` instructions, stopping early at `halt`.
pub fn run_steps(image: &AddressSpaceImage, state: &mut ArchState, n: u64) -> Result<(), InterpError> {
    for _ in 0..n {
        if state.halted {
            break;
        }
        state.step(image)?;
    }
    Ok(())
}

/// Committed pc sequence of a run, for differential checks.
pub fn pc_trace(image: &AddressSpaceImage, step_limit: u64) -> Result<Vec<u64>, InterpError> {
    let mut s = ArchState::new(image);
    let mut pcs = Vec::new();
    while !s.halted {
        if s.steps >= step_limit {
            return Err(InterpError::StepLimitExceeded(step_limit));
        }
        pcs.push(s.pc);
        s.step(image)?;
    }
    Ok(pcs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, CfiMode};
    use crate::image::{load_image, Pid};

    fn img(src: &str) -> AddressSpaceImage {
        load_image(assemble(src, CfiMode::Coarse).unwrap(), Pid(1), 0, 4096, None).unwrap()
    }

    #[test]
    fn li_add() {
        let s = interpret(&img("li r1, 5\naddi r1, 2\nhalt\n"), 100).unwrap();
        assert_eq!(s.regs[1], 7);
        assert_eq!(s.steps, 3);
    }

    #[test]
    fn calls_unwind() {
        let src = "\
main:
  call f
  li r2, 1
  halt
f:
  call g
  ret
g:
  ret
";
        let image = img(src);
        let pcs = pc_trace(&image, 100).unwrap();
        assert_eq!(pcs, vec![0, 3, 5, 4, 1, 2]);
        let s = interpret(&image, 100).unwrap();
        assert_eq!(s.regs[15], image.stack_top());
    }

    #[test]
    fn step_limit() {
        assert_eq!(
            interpret(&img("l:\n  jmp l\n"), 50),
            Err(InterpError::StepLimitExceeded(50))
        );
    }

    #[test]
    fn out_of_range_load_faults() {
        let e = interpret(&img("li r1, 5000\nload r2, [r1]\nhalt\n"), 10).unwrap_err();
        assert!(matches!(e, InterpError::MemoryFault { pc: 1, .. }));
    }
}
