//! CFI label assignment and instrumentation.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::asm::CfiMode;
use crate::instrument::cfg::{static_site_target, Cfg};
use crate::isa::{Instruction, LabelId, Program};

/// Label used for every call target under the coarse policy.
pub const COARSE_CALL: LabelId = LabelId(1);
/// Label used for every jump target under the coarse policy.
pub const COARSE_JUMP: LabelId = LabelId(2);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("address-taken function `{0}` has no signature")]
    MissingSignature(String),
    #[error("indirect branch at index {0} has no statically known target class")]
    UnlabeledSite(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub target_labels: BTreeMap<usize, LabelId>,
    pub site_labels: BTreeMap<usize, LabelId>,
    pub policy: CfiMode,
    /// Signature token of each fine class; class `i` is label `i + 1`.
    pub classes: Vec<String>,
}

impl LabelMap {
    pub fn distinct_target_labels(&self) -> usize {
        self.target_labels.values().collect::<BTreeSet<_>>().len()
    }
}

fn target_name(program: &Program, idx: usize) -> String {
    program
        .symbols_at(idx)
        .next()
        .map(str::to_string)
        .unwrap_or_else(|| format!("@{idx}"))
}

/// Signature of an address-taken target: the first declared function at that
/// index with a signature token, then `signatures` keyed by symbol name.
fn signature_of(
    program: &Program,
    idx: usize,
    signatures: Option<&BTreeMap<String, String>>,
) -> Option<String> {
    for name in program.symbols_at(idx) {
        if let Some(sig) = signatures.and_then(|s| s.get(name)) {
            return Some(sig.clone());
        }
        if let Some(Some(sig)) = program.functions.get(name) {
            return Some(sig.clone());
        }
    }
    None
}

fn site_signature(program: &Program, site: usize) -> Option<&String> {
    program
        .symbols_at(site)
        .find_map(|name| program.site_sigs.get(name))
}

/// Assigns labels to every address-taken target and every indirect site.
///
/// Coarse: call targets get [`COARSE_CALL`], jump-only targets get
/// [`COARSE_JUMP`]. Fine: one dense label per distinct signature token,
/// numbered from 1 in order of first appearance by address.
pub fn assign_labels(
    cfg: &Cfg,
    program: &Program,
    policy: CfiMode,
    signatures: Option<&BTreeMap<String, String>>,
) -> Result<LabelMap, LabelError> {
    let sites: Vec<usize> = program
        .instructions
        .iter()
        .enumerate()
        .filter(|(_, i)| i.is_indirect_branch())
        .map(|(idx, _)| idx)
        .collect();
    let static_target = |site: usize| {
        let start = cfg.blocks[cfg.block_of[site]].start;
        static_site_target(program, start, site)
    };

    let mut target_labels = BTreeMap::new();
    let mut site_labels = BTreeMap::new();
    let mut classes: Vec<String> = Vec::new();

    match policy {
        CfiMode::Coarse => {
            let mut call_targets = BTreeSet::new();
            let mut jump_targets = BTreeSet::new();
            for &s in &sites {
                if let Some(t) = static_target(s) {
                    if program.instructions[s].is_call() {
                        call_targets.insert(t);
                    } else {
                        jump_targets.insert(t);
                    }
                }
            }
            for &t in &cfg.address_taken {
                let declared = program
                    .symbols_at(t)
                    .any(|n| program.functions.contains_key(n));
                let jump_only =
                    jump_targets.contains(&t) && !call_targets.contains(&t) && !declared;
                target_labels.insert(t, if jump_only { COARSE_JUMP } else { COARSE_CALL });
            }
            for &s in &sites {
                let label = match static_target(s).and_then(|t| target_labels.get(&t)) {
                    Some(&l) => l,
                    None if program.instructions[s].is_call() => COARSE_CALL,
                    None => COARSE_JUMP,
                };
                site_labels.insert(s, label);
            }
        }
        CfiMode::Fine => {
            let class_of = |sig: &str, classes: &mut Vec<String>| -> LabelId {
                let pos = match classes.iter().position(|c| c == sig) {
                    Some(p) => p,
                    None => {
                        classes.push(sig.to_string());
                        classes.len() - 1
                    }
                };
                LabelId(pos as u32 + 1)
            };
            for &t in &cfg.address_taken {
                let sig = signature_of(program, t, signatures)
                    .ok_or_else(|| LabelError::MissingSignature(target_name(program, t)))?;
                target_labels.insert(t, class_of(&sig, &mut classes));
            }
            for &s in &sites {
                let label = if let Some(l) = static_target(s).and_then(|t| target_labels.get(&t)) {
                    *l
                } else if let Some(sig) = site_signature(program, s) {
                    class_of(sig, &mut classes)
                } else if let Some(l) = program.instructions[s].cfi_label().filter(|l| !l.is_none()) {
                    l
                } else {
                    return Err(LabelError::UnlabeledSite(s));
                };
                site_labels.insert(s, label);
            }
        }
    }
    Ok(LabelMap {
        target_labels,
        site_labels,
        policy,
        classes,
    })
}

/// Inserts a `cfi_lbl` at every labeled target (or relabels an existing one)
/// and sets the label of every indirect site. Code references are remapped so
/// that branches to a target land on its marker.
pub fn instrument(program: &Program, labels: &LabelMap) -> Program {
    let n = program.len();
    // new_index[i] = position of the first instruction emitted for old index i.
    let mut new_index = Vec::with_capacity(n + 1);
    let mut out: Vec<Instruction> = Vec::with_capacity(n + labels.target_labels.len());
    for (i, instr) in program.instructions.iter().enumerate() {
        new_index.push(out.len());
        let mut instr = *instr;
        if let Some(&label) = labels.target_labels.get(&i) {
            if matches!(instr, Instruction::CfiLbl { .. }) {
                instr = instr.with_label(Some(label));
            } else {
                out.push(Instruction::CfiLbl { label: Some(label) });
            }
        }
        if let Some(&label) = labels.site_labels.get(&i) {
            instr = instr.with_label(Some(label));
        }
        out.push(instr);
    }
    new_index.push(out.len());
    let remap = |t: usize| new_index[t];
    let instructions = out.into_iter().map(|ins| ins.map_code_refs(remap)).collect();
    Program {
        instructions,
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

/// Assigns labels with `policy` and instruments in one step.
pub fn instrument_with(
    program: &Program,
    policy: CfiMode,
    signatures: Option<&BTreeMap<String, String>>,
) -> Result<(Program, LabelMap), LabelError> {
    let cfg = crate::instrument::cfg::build_cfg(program);
    let map = assign_labels(&cfg, program, policy, signatures)?;
    Ok((instrument(program, &map), map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{assemble, validate_cfi};
    use crate::instrument::cfg::build_cfg;

    const THREE: &str = "\
.func f int(int)
.func g int(int)
.func h void()
main:
  li r1, f
  call *r1
  halt
f:
  ret
g:
  ret
h:
  ret
";

    #[test]
    fn coarse_uses_one_call_label() {
        let p = assemble(THREE, CfiMode::Coarse).unwrap();
        let map = assign_labels(&build_cfg(&p), &p, CfiMode::Coarse, None).unwrap();
        assert_eq!(map.target_labels.len(), 3);
        assert!(map.target_labels.values().all(|&l| l == COARSE_CALL));
        assert_eq!(map.site_labels.get(&1), Some(&COARSE_CALL));
    }

    #[test]
    fn fine_groups_by_signature() {
        let p = assemble(THREE, CfiMode::Coarse).unwrap();
        let map = assign_labels(&build_cfg(&p), &p, CfiMode::Fine, None).unwrap();
        let f = map.target_labels[&p.symbol("f").unwrap()];
        let g = map.target_labels[&p.symbol("g").unwrap()];
        let h = map.target_labels[&p.symbol("h").unwrap()];
        assert_eq!(f, g);
        assert_ne!(f, h);
        assert_eq!(map.distinct_target_labels(), 2);
        assert_eq!(f, LabelId(1));
    }

    #[test]
    fn fine_requires_signatures() {
        let p = assemble(".func f\nmain:\n  halt\nf:\n  ret\n", CfiMode::Coarse).unwrap();
        let err = assign_labels(&build_cfg(&p), &p, CfiMode::Fine, None).unwrap_err();
        assert_eq!(err, LabelError::MissingSignature("f".into()));
    }

    #[test]
    fn instrumented_program_validates() {
        let p = assemble(THREE, CfiMode::Coarse).unwrap();
        for policy in [CfiMode::Coarse, CfiMode::Fine] {
            let (q, map) = instrument_with(&p, policy, None).unwrap();
            assert!(validate_cfi(&q, policy)
                .iter()
                .all(|d| d.severity != crate::asm::Severity::Error));
            let f = q.symbol("f").unwrap();
            assert_eq!(
                q.instructions[f],
                Instruction::CfiLbl {
                    label: Some(map.target_labels[&p.symbol("f").unwrap()])
                }
            );
            assert_eq!(q.instructions[f + 1], Instruction::Ret);
            assert_eq!(q.len(), p.len() + 3);
        }
    }

    #[test]
    fn site_signature_used_without_static_target() {
        let src = ".func f int(int)\n.site s int(int)\nmain:\n  load r1, [r0+8]\ns:\n  call *r1\n  halt\nf:\n  ret\n";
        let p = assemble(src, CfiMode::Coarse).unwrap();
        let (_, map) = instrument_with(&p, CfiMode::Fine, None).unwrap();
        assert_eq!(map.site_labels[&1], LabelId(1));
    }

    #[test]
    fn labels_are_stable() {
        let p = assemble(THREE, CfiMode::Coarse).unwrap();
        let cfg = build_cfg(&p);
        let a = assign_labels(&cfg, &p, CfiMode::Fine, None).unwrap();
        let b = assign_labels(&cfg, &p, CfiMode::Fine, None).unwrap();
        assert_eq!(a, b);
    }
}
