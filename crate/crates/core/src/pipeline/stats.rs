//! Run statistics, CFI violation records and the retire/annul trace.

use serde::Serialize;

use crate::image::Pid;

/// Committed-path control-flow violation detected under the full defense.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CfiViolation {
    pub cycle: u64,
    pub thread: usize,
    pub pid: u32,
    /// Pc of the offending indirect branch or `ret`.
    pub pc: u64,
    pub edge: ViolationEdge,
    /// Expected label (forward edge) or return address (`ret`).
    pub expected: u64,
    pub found: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationEdge {
    Forward,
    Return,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub cycles: u64,
    pub committed_instructions: u64,
    pub ipc: f64,
    /// Hardware fence micro-ops injected at decode, wrong path included.
    pub fences_inserted: u64,
    /// Program-text fences decoded, wrong path included.
    pub fences_executed: u64,
    pub hw_fences_retired: u64,
    pub sw_fences_retired: u64,
    pub mispredict_pht: u64,
    pub mispredict_btb: u64,
    pub mispredict_rsb: u64,
    /// Committed indirect branches that had no usable BTB prediction.
    pub stalls_btb: u64,
    /// Committed returns that found no return prediction.
    pub stalls_rsb: u64,
    pub cfi_label_mismatches: u64,
    pub cache_misses: u64,
    pub cfi_violations: u64,
    #[serde(skip)]
    pub violations: Vec<CfiViolation>,
}

impl RunStats {
    pub fn mispredictions(&self) -> u64 {
        self.mispredict_pht + self.mispredict_btb + self.mispredict_rsb
    }

    /// Fences of either origin that reached decode.
    pub fn total_fences(&self) -> u64 {
        self.fences_inserted + self.fences_executed
    }

    pub fn total_fences_retired(&self) -> u64 {
        self.hw_fences_retired + self.sw_fences_retired
    }

    pub(crate) fn finish(&mut self) {
        self.ipc = if self.cycles == 0 {
            0.0
        } else {
            self.committed_instructions as f64 / self.cycles as f64
        };
        self.cfi_violations = self.violations.len() as u64;
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Issue,
    Retire,
    Annul,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub thread: usize,
    pub pid: Pid,
    /// Global program-order sequence number of the micro-op.
    pub seq: u64,
    pub pc: u64,
    pub kind: &'static str,
    pub event: TraceKind,
}

/// `cycle,thread,pc,kind,event` lines for retired and annulled micro-ops.
pub fn trace_csv(events: &[TraceEvent]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cycle", "thread", "pc", "kind", "event"]).expect("in-memory write");
    for e in events.iter().filter(|e| e.event != TraceKind::Issue) {
        let ev = match e.event {
            TraceKind::Retire => "retire",
            TraceKind::Annul => "annul",
            TraceKind::Issue => unreachable!(),
        };
        w.write_record([
            e.cycle.to_string(),
            e.thread.to_string(),
            format!("{:#x}", e.pc),
            e.kind.to_string(),
            ev.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipc_is_ratio() {
        let mut s = RunStats {
            cycles: 10,
            committed_instructions: 25,
            ..RunStats::default()
        };
        s.finish();
        assert_eq!(s.ipc, 2.5);
        assert!(s.to_csv().starts_with("cycles,committed_instructions,ipc,"));
    }

    #[test]
    fn trace_skips_issue() {
        let e = |event| TraceEvent {
            cycle: 3,
            thread: 0,
            pid: Pid(1),
            seq: 0,
            pc: 0x10,
            kind: "call",
            event,
        };
        let csv = trace_csv(&[e(TraceKind::Issue), e(TraceKind::Retire), e(TraceKind::Annul)]);
        assert_eq!(csv, "cycle,thread,pc,kind,event\n3,0,0x10,call,retire\n3,0,0x10,call,annul\n");
    }
}
