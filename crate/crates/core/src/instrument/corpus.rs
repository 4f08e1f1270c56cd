//! Seeded generator of synthetic function corpora for the gadget scan.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Signature tokens, in the order classes are drawn from.
pub const SIGNATURES: [&str; 6] = [
    "int(int)",
    "void(ptr)",
    "int(ptr,int)",
    "void()",
    "ptr(int)",
    "int(ptr,ptr)",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSpec {
    pub functions: usize,
    pub classes: usize,
    /// Number of classes (the first ones) that have injectable call sites.
    pub injectable_classes: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            functions: 200,
            classes: 4,
            injectable_classes: 1,
            seed: 7,
        }
    }
}

fn reg(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..13)
}

/// Generates assembly text with `.func` signatures and `.site` signatures.
pub fn generate_corpus(spec: &CorpusSpec) -> String {
    assert!(spec.classes >= 1 && spec.classes <= SIGNATURES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut src = String::new();
    let class_of: Vec<usize> = (0..spec.functions)
        .map(|_| rng.gen_range(0..spec.classes))
        .collect();
    for (f, &c) in class_of.iter().enumerate() {
        writeln!(src, ".func f{f} {}", SIGNATURES[c]).unwrap();
    }
    for c in 0..spec.injectable_classes.min(spec.classes) {
        writeln!(src, ".site bti{c} {}", SIGNATURES[c]).unwrap();
    }
    src.push_str("main:\n");
    for c in 0..spec.injectable_classes.min(spec.classes) {
        writeln!(src, "  load r1, [r0+{}]", 8 * c).unwrap();
        writeln!(src, "bti{c}:\n  call *r1").unwrap();
    }
    // Direct address-taking sites: not injectable, no load in the block.
    for f in (0..spec.functions).step_by(17) {
        writeln!(src, "  li r2, f{f}\n  call *r2").unwrap();
    }
    src.push_str("  halt\n");

    for f in 0..spec.functions {
        writeln!(src, "f{f}:").unwrap();
        let len = rng.gen_range(10..90);
        let mut i = 0;
        let mut next_local = 0;
        while i < len {
            match rng.gen_range(0..100) {
                0..=9 => {
                    // Gadget-shaped compare and branch with a random gap.
                    let gap = rng.gen_range(0..8);
                    writeln!(src, "  cmp r{}, r{}", reg(&mut rng), reg(&mut rng)).unwrap();
                    for _ in 0..gap {
                        writeln!(src, "  add r{}, {}", reg(&mut rng), rng.gen_range(1..9)).unwrap();
                    }
                    let op = if rng.gen_bool(0.5) { "jz" } else { "jnz" };
                    writeln!(src, "  {op} f{f}_l{next_local}").unwrap();
                    writeln!(src, "  nop\nf{f}_l{next_local}:").unwrap();
                    next_local += 1;
                    i += gap + 3;
                }
                10..=14 => {
                    writeln!(src, "  cmpi r{}, {}", reg(&mut rng), rng.gen_range(0..4)).unwrap();
                    i += 1;
                }
                15..=34 => {
                    writeln!(src, "  load r{}, [r{}+{}]", reg(&mut rng), reg(&mut rng), 8 * rng.gen_range(0..8)).unwrap();
                    i += 1;
                }
                35..=44 => {
                    writeln!(src, "  store r{}, [r{}+{}]", reg(&mut rng), reg(&mut rng), 8 * rng.gen_range(0..8)).unwrap();
                    i += 1;
                }
                45..=54 => {
                    writeln!(src, "  shl r{}, {}", reg(&mut rng), rng.gen_range(1..4)).unwrap();
                    i += 1;
                }
                _ => {
                    writeln!(src, "  add r{}, r{}", reg(&mut rng), reg(&mut rng)).unwrap();
                    i += 1;
                }
            }
        }
        src.push_str("  ret\n");
    }
    src
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, CfiMode};

    #[test]
    fn corpus_assembles_and_is_deterministic() {
        let spec = CorpusSpec::default();
        let a = generate_corpus(&spec);
        assert_eq!(a, generate_corpus(&spec));
        let p = assemble(&a, CfiMode::Coarse).unwrap();
        assert_eq!(p.functions.len(), 200);
    }
}
