//! Control-flow graph over instruction indices.

use std::collections::{BTreeMap, BTreeSet};

use crate::asm::address_taken;
use crate::isa::{Instruction, Program, Reg, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Fallthrough,
    Direct,
    IndirectPossible,
    Call,
    Return,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Basic block covering instruction indices `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn last(&self) -> usize {
        self.end - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    pub address_taken: BTreeSet<usize>,
    /// Block id of every instruction.
    pub block_of: Vec<usize>,
    /// Function entries: declared functions, address-taken code and direct
    /// call targets.
    pub function_entries: BTreeSet<usize>,
}

impl Cfg {
    pub fn block_starts(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.start).collect()
    }

    pub fn successors(&self, block: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == block)
    }

    /// Function entry owning instruction `index`: the closest entry at or
    /// before it.
    pub fn function_of(&self, index: usize) -> Option<usize> {
        self.function_entries.range(..=index).next_back().copied()
    }
}

/// Statically known target of the indirect branch at `site`: the last `li`
/// of a code address into its register earlier in the same block.
pub fn static_site_target(program: &Program, block_start: usize, site: usize) -> Option<usize> {
    let reg: Reg = match program.instructions[site] {
        Instruction::JmpIndirect { reg, .. } | Instruction::CallIndirect { reg, .. } => reg,
        _ => return None,
    };
    for i in (block_start..site).rev() {
        match program.instructions[i] {
            Instruction::LoadImm {
                rd,
                value: Value::Code(t),
            } if rd == reg => return Some(t),
            Instruction::LoadImm { rd, .. }
            | Instruction::Load { rd, .. }
            | Instruction::Add { rd, .. }
            | Instruction::Shl { rd, .. }
                if rd == reg =>
            {
                return None
            }
            _ => {}
        }
    }
    None
}

pub fn build_cfg(program: &Program) -> Cfg {
    let n = program.len();
    let taken = address_taken(program);
    let mut leaders: BTreeSet<usize> = BTreeSet::new();
    leaders.insert(0);
    leaders.insert(program.entry);
    leaders.extend(taken.iter().copied());
    let mut entries: BTreeSet<usize> = taken.clone();
    entries.insert(program.entry);
    for (i, instr) in program.instructions.iter().enumerate() {
        if let Some(t) = instr.direct_target() {
            leaders.insert(t);
            if instr.is_call() {
                entries.insert(t);
            }
        }
        if instr.is_control() && i + 1 < n {
            leaders.insert(i + 1);
        }
    }
    let starts: Vec<usize> = leaders.into_iter().filter(|&l| l < n).collect();
    let mut blocks = Vec::with_capacity(starts.len());
    let mut block_of = vec![0; n];
    for (b, &s) in starts.iter().enumerate() {
        let e = starts.get(b + 1).copied().unwrap_or(n);
        blocks.push(Block { start: s, end: e });
        block_of[s..e].fill(b);
    }

    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    // Return continuations per callee entry.
    let mut continuations: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut indirect_continuations: BTreeSet<usize> = BTreeSet::new();
    for (b, blk) in blocks.iter().enumerate() {
        let last = blk.last();
        let edge = |to: usize, kind| Edge {
            from: b,
            to: block_of[to],
            kind,
        };
        match program.instructions[last] {
            Instruction::Jz { target } | Instruction::Jnz { target } => {
                edges.insert(edge(target, EdgeKind::Direct));
                if last + 1 < n {
                    edges.insert(edge(last + 1, EdgeKind::Fallthrough));
                }
            }
            Instruction::JmpDirect { target } => {
                edges.insert(edge(target, EdgeKind::Direct));
            }
            Instruction::CallDirect { target } => {
                edges.insert(edge(target, EdgeKind::Call));
                if last + 1 < n {
                    continuations.entry(target).or_default().insert(last + 1);
                }
            }
            Instruction::JmpIndirect { .. } | Instruction::CallIndirect { .. } => {
                let is_call = program.instructions[last].is_call();
                for &t in &taken {
                    edges.insert(edge(t, EdgeKind::IndirectPossible));
                }
                if is_call && last + 1 < n {
                    indirect_continuations.insert(last + 1);
                }
            }
            Instruction::Ret | Instruction::Halt => {}
            _ => {
                if blk.end < n {
                    edges.insert(edge(blk.end, EdgeKind::Fallthrough));
                }
            }
        }
    }
    let func_of = |i: usize| entries.range(..=i).next_back().copied();
    for (b, blk) in blocks.iter().enumerate() {
        if program.instructions[blk.last()] != Instruction::Ret {
            continue;
        }
        let Some(f) = func_of(blk.last()) else {
            continue;
        };
        let mut conts: BTreeSet<usize> = continuations.get(&f).cloned().unwrap_or_default();
        if taken.contains(&f) {
            conts.extend(indirect_continuations.iter().copied());
        }
        for c in conts {
            edges.insert(Edge {
                from: b,
                to: block_of[c],
                kind: EdgeKind::Return,
            });
        }
    }

    Cfg {
        blocks,
        edges: edges.into_iter().collect(),
        address_taken: taken,
        block_of,
        function_entries: entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, CfiMode};

    #[test]
    fn straight_line_is_one_block() {
        let p = assemble("li r1, 1\nadd r1, 2\nhalt\n", CfiMode::Coarse).unwrap();
        let cfg = build_cfg(&p);
        assert_eq!(cfg.blocks.len(), 1);
        assert!(cfg.edges.is_empty());
    }

    #[test]
    fn conditional_has_two_successors() {
        let p = assemble("cmpi r1, 0\njz out\nnop\nout:\nhalt\n", CfiMode::Coarse).unwrap();
        let cfg = build_cfg(&p);
        let succ: Vec<_> = cfg.successors(0).collect();
        assert_eq!(succ.len(), 2);
        assert!(succ.iter().any(|e| e.kind == EdgeKind::Direct));
        assert!(succ.iter().any(|e| e.kind == EdgeKind::Fallthrough));
    }

    #[test]
    fn indirect_edges_only_from_indirect_sites() {
        let src = ".func f\n.func g\nmain:\n  li r1, f\n  call *r1\n  halt\nf:\n  ret\ng:\n  ret\n";
        let p = assemble(src, CfiMode::Coarse).unwrap();
        let cfg = build_cfg(&p);
        for e in &cfg.edges {
            if e.kind == EdgeKind::IndirectPossible {
                let last = cfg.blocks[e.from].last();
                assert!(p.instructions[last].is_indirect_branch());
            }
        }
        assert_eq!(cfg.address_taken.len(), 2);
        assert_eq!(static_site_target(&p, 0, 1), Some(3));
    }
}
