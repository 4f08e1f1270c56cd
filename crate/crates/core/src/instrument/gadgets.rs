//! Scanner for compare-then-branch gadgets near indirect-branch targets.
//!
//! A gadget is a `cmp`/`cmpi` followed within `max_cmp_to_jump_gap + 1`
//! instructions by `jz`/`jnz`, both inside the first `window` instructions
//! after a target marker. A marker is counted as reachable when some
//! branch-target-injection site carries its label: an indirect branch whose
//! basic block loads from memory before the branch.

use std::collections::BTreeSet;
use std::io;

use serde::Serialize;

use crate::asm::{address_taken, CfiMode};
use crate::instrument::cfg::build_cfg;
use crate::instrument::labels::LabelMap;
use crate::isa::{effective_label, Instruction, Kind, LabelId, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScanConfig {
    pub window: usize,
    pub max_cmp_to_jump_gap: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            window: 70,
            max_cmp_to_jump_gap: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerEntry {
    pub marker: usize,
    pub label: LabelId,
    pub reachable: bool,
    pub offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GadgetReport {
    pub policy: CfiMode,
    pub config: ScanConfig,
    pub entries: Vec<MarkerEntry>,
}

impl GadgetReport {
    /// Gadgets behind markers an injected branch can reach.
    pub fn total(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.reachable)
            .map(|e| e.offsets.len())
            .sum()
    }

    /// Gadgets behind any marker, reachable or not.
    pub fn total_unfiltered(&self) -> usize {
        self.entries.iter().map(|e| e.offsets.len()).sum()
    }

    /// `marker_addr,label,gadget_offset`, one row per reachable gadget.
    pub fn write_csv<W: io::Write>(&self, base: u64, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["marker_addr", "label", "gadget_offset"])?;
        for e in self.entries.iter().filter(|e| e.reachable) {
            for off in &e.offsets {
                w.write_record([
                    format!("{:#x}", base + e.marker as u64),
                    e.label.0.to_string(),
                    off.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Offsets of gadgets in `body`, which starts right after a marker.
pub fn gadget_offsets(body: &[Instruction], config: &ScanConfig) -> Vec<usize> {
    let end = body.len().min(config.window);
    let body = &body[..end];
    let mut found = Vec::new();
    for (off, instr) in body.iter().enumerate() {
        if !matches!(instr.kind(), Kind::Cmp | Kind::CmpImm) {
            continue;
        }
        let last = (off + 1 + config.max_cmp_to_jump_gap).min(end.saturating_sub(1));
        if (off + 1..=last).any(|j| body[j].is_conditional()) {
            found.push(off);
        }
    }
    found
}

/// Labels of indirect branches preceded by a load within their block.
pub fn injection_site_labels(program: &Program) -> BTreeSet<LabelId> {
    let cfg = build_cfg(program);
    let mut labels = BTreeSet::new();
    for blk in &cfg.blocks {
        let last = blk.last();
        let site = &program.instructions[last];
        if !site.is_indirect_branch() {
            continue;
        }
        let loads = program.instructions[blk.start..last]
            .iter()
            .any(|i| i.kind() == Kind::Load);
        if loads {
            labels.insert(effective_label(site.cfi_label()));
        }
    }
    labels
}

pub fn scan_smother_gadgets(program: &Program, labels: &LabelMap, config: &ScanConfig) -> GadgetReport {
    let sites = injection_site_labels(program);
    let mut markers: Vec<(usize, usize, LabelId)> = Vec::new(); // (marker, body start, label)
    for (i, instr) in program.instructions.iter().enumerate() {
        if let Instruction::CfiLbl { label } = instr {
            markers.push((i, i + 1, effective_label(*label)));
        }
    }
    if labels.policy == CfiMode::Coarse {
        let marked: BTreeSet<usize> = markers.iter().map(|m| m.1).collect();
        for t in address_taken(program) {
            let is_marker = matches!(program.instructions.get(t), Some(Instruction::CfiLbl { .. }));
            if !is_marker && !marked.contains(&t) {
                markers.push((t, t, LabelId::NONE));
            }
        }
        markers.sort();
    }
    let entries = markers
        .into_iter()
        .map(|(marker, start, label)| {
            let reachable = if label.is_none() {
                !sites.is_empty()
            } else {
                sites.contains(&label)
            };
            MarkerEntry {
                marker,
                label,
                reachable,
                offsets: gadget_offsets(&program.instructions[start..], config),
            }
        })
        .collect();
    GadgetReport {
        policy: labels.policy,
        config: *config,
        entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::instrument::labels::instrument_with;

    fn report(src: &str, config: ScanConfig) -> GadgetReport {
        let p = assemble(src, CfiMode::Coarse).unwrap();
        let (q, map) = instrument_with(&p, CfiMode::Coarse, None).unwrap();
        scan_smother_gadgets(&q, &map, &config)
    }

    #[test]
    fn minimal_pattern_at_offset_zero() {
        let src = ".func f\nmain:\n  load r1, [r0+8]\n  call *r1\n  halt\nf:\n  cmp r1, r2\n  jz out\nout:\n  ret\n";
        let r = report(src, ScanConfig::default());
        assert_eq!(r.total(), 1);
        assert_eq!(r.entries[0].offsets, vec![0]);
    }

    #[test]
    fn cmp_outside_window_is_ignored() {
        let mut src = String::from(".func f\nmain:\n  load r1, [r0+8]\n  call *r1\n  halt\nf:\n");
        for _ in 0..71 {
            src.push_str("  nop\n");
        }
        src.push_str("  cmp r1, r2\n  jz out\nout:\n  ret\n");
        assert_eq!(report(&src, ScanConfig::default()).total(), 0);
    }

    #[test]
    fn gap_is_respected() {
        let body = [
            Instruction::CmpImm {
                ra: crate::isa::Reg::new(1).unwrap(),
                imm: 0,
            },
            Instruction::Nop,
            Instruction::Nop,
            Instruction::Jz { target: 0 },
        ];
        let tight = ScanConfig {
            window: 70,
            max_cmp_to_jump_gap: 1,
        };
        assert!(gadget_offsets(&body, &tight).is_empty());
        let loose = ScanConfig {
            window: 70,
            max_cmp_to_jump_gap: 2,
        };
        assert_eq!(gadget_offsets(&body, &loose), vec![0]);
        let narrow = ScanConfig {
            window: 3,
            max_cmp_to_jump_gap: 5,
        };
        assert!(gadget_offsets(&body, &narrow).is_empty());
    }

    #[test]
    fn non_injectable_sites_do_not_reach() {
        let src = ".func f\nmain:\n  li r1, f\n  call *r1\n  halt\nf:\n  cmp r1, r2\n  jz out\nout:\n  ret\n";
        let r = report(src, ScanConfig::default());
        assert_eq!(r.total(), 0);
        assert_eq!(r.total_unfiltered(), 1);
    }
}
