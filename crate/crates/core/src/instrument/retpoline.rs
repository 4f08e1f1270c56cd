//! Software load-fence-transfer rewrite of indirect branches and returns.
//!
//! * `call *rX` becomes `add r14, rX, 0; fence; call *r14`
//! * `jmp *rX` becomes `add r14, rX, 0; fence; jmp *r14`
//! * `ret` becomes `load r14, [r15]+8; fence; jmp *r14`

use crate::config::FenceKind;
use crate::isa::{Instruction, Mem, Program, Reg, Src};

fn fence(kind: FenceKind) -> Instruction {
    match kind {
        FenceKind::Strict => Instruction::FenceStrict,
        FenceKind::Relaxed => Instruction::FenceRelaxed,
    }
}

pub fn transform_retpoline(program: &Program, kind: FenceKind) -> Program {
    let scratch = Reg::SCRATCH;
    let mut new_index = Vec::with_capacity(program.len() + 1);
    let mut out = Vec::with_capacity(program.len() * 2);
    for instr in &program.instructions {
        new_index.push(out.len());
        match *instr {
            Instruction::CallIndirect { reg, .. } | Instruction::JmpIndirect { reg, .. } => {
                out.push(Instruction::Add {
                    rd: scratch,
                    rs: reg,
                    src: Src::Imm(0),
                });
                out.push(fence(kind));
                out.push(if instr.is_call() {
                    Instruction::CallIndirect {
                        reg: scratch,
                        label: None,
                    }
                } else {
                    Instruction::JmpIndirect {
                        reg: scratch,
                        label: None,
                    }
                });
            }
            Instruction::Ret => {
                out.push(Instruction::Load {
                    rd: scratch,
                    mem: Mem {
                        base: Reg::SP,
                        disp: 0,
                        post_inc: 8,
                    },
                });
                out.push(fence(kind));
                out.push(Instruction::JmpIndirect {
                    reg: scratch,
                    label: None,
                });
            }
            other => out.push(other),
        }
    }
    new_index.push(out.len());
    let remap = |t: usize| new_index[t];
    Program {
        instructions: out.into_iter().map(|i| i.map_code_refs(remap)).collect(),
        symbols: program
            .symbols
            .iter()
            .map(|(k, &v)| (k.clone(), remap(v)))
            .collect(),
        functions: program.functions.clone(),
        site_sigs: program.site_sigs.clone(),
        entry: remap(program.entry),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, CfiMode};
    use crate::isa::Kind;

    #[test]
    fn grows_by_four_and_removes_ret() {
        let p = assemble(".func f\nmain:\n  li r1, f\n  call *r1\n  halt\nf:\n  ret\n", CfiMode::Coarse).unwrap();
        let q = transform_retpoline(&p, FenceKind::Strict);
        assert_eq!(q.len(), p.len() + 4);
        assert_eq!(q.count_kind(Kind::Ret), 0);
        assert_eq!(q.count_kind(Kind::FenceStrict), 2);
        assert!(q.check_targets());
        // li of f is remapped onto the rewritten ret sequence.
        assert_eq!(q.symbol("f"), Some(5));
    }

    #[test]
    fn identity_without_indirect_flow() {
        let p = assemble("li r1, 1\nadd r1, 2\nhalt\n", CfiMode::Coarse).unwrap();
        assert_eq!(transform_retpoline(&p, FenceKind::Relaxed), p);
    }
}
