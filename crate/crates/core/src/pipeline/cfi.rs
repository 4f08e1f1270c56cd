//! Decode-stage forward-edge label check.

use crate::isa::{effective_label, Instruction, LabelId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CfiDecodeState {
    #[default]
    Idle,
    /// An indirect call/jmp was decoded; the next instruction must be a
    /// `cfi_lbl` carrying this label.
    ExpectLabel(LabelId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeAction {
    Proceed,
    /// Inject a fence micro-op ahead of the instruction.
    InsertFence,
}

/// One step of the label-check state machine over the decoded stream.
pub fn decode_cfi_check(state: CfiDecodeState, instr: &Instruction) -> (CfiDecodeState, DecodeAction) {
    let (state, action) = match state {
        CfiDecodeState::ExpectLabel(want) => match instr {
            Instruction::CfiLbl { label } if effective_label(*label) == want => {
                return (CfiDecodeState::Idle, DecodeAction::Proceed)
            }
            _ => (CfiDecodeState::Idle, DecodeAction::InsertFence),
        },
        CfiDecodeState::Idle => (CfiDecodeState::Idle, DecodeAction::Proceed),
    };
    // The offending instruction may itself open a new check.
    if instr.is_indirect_branch() {
        (
            CfiDecodeState::ExpectLabel(effective_label(instr.cfi_label())),
            action,
        )
    } else {
        (state, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Mem, Reg};

    const L1: LabelId = LabelId(1);
    const L2: LabelId = LabelId(2);

    fn r(i: u8) -> Reg {
        Reg::new(i).unwrap()
    }

    #[test]
    fn indirect_call_arms_check() {
        let call = Instruction::CallIndirect { reg: r(1), label: Some(L1) };
        assert_eq!(
            decode_cfi_check(CfiDecodeState::Idle, &call),
            (CfiDecodeState::ExpectLabel(L1), DecodeAction::Proceed)
        );
    }

    #[test]
    fn matching_label_disarms() {
        let lbl = Instruction::CfiLbl { label: Some(L1) };
        assert_eq!(
            decode_cfi_check(CfiDecodeState::ExpectLabel(L1), &lbl),
            (CfiDecodeState::Idle, DecodeAction::Proceed)
        );
    }

    #[test]
    fn non_label_inserts_fence() {
        let load = Instruction::Load { rd: r(2), mem: Mem::new(r(3), 0) };
        assert_eq!(
            decode_cfi_check(CfiDecodeState::ExpectLabel(L1), &load),
            (CfiDecodeState::Idle, DecodeAction::InsertFence)
        );
    }

    #[test]
    fn wrong_label_inserts_fence() {
        let lbl = Instruction::CfiLbl { label: Some(L2) };
        assert_eq!(
            decode_cfi_check(CfiDecodeState::ExpectLabel(L1), &lbl),
            (CfiDecodeState::Idle, DecodeAction::InsertFence)
        );
    }

    #[test]
    fn direct_transfers_unchecked() {
        let call = Instruction::CallDirect { target: 0x40 };
        assert_eq!(
            decode_cfi_check(CfiDecodeState::Idle, &call),
            (CfiDecodeState::Idle, DecodeAction::Proceed)
        );
    }

    #[test]
    fn back_to_back_indirect() {
        let jmp = Instruction::JmpIndirect { reg: r(1), label: Some(L2) };
        assert_eq!(
            decode_cfi_check(CfiDecodeState::ExpectLabel(L1), &jmp),
            (CfiDecodeState::ExpectLabel(L2), DecodeAction::InsertFence)
        );
    }
}
