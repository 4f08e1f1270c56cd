//! Execution-port occupancy shared by SMT threads.

use crate::config::PortConfig;
use crate::isa::Kind;

/// Port an operation class executes on, or `None` for ops that complete
/// without an execution unit.
pub fn port_for(kind: Kind, ports: &PortConfig) -> Option<usize> {
    match kind {
        Kind::Cmp | Kind::CmpImm | Kind::Jz | Kind::Jnz | Kind::JmpIndirect => Some(ports.branch_port),
        Kind::LoadImm | Kind::Add | Kind::Shl => Some(ports.alu_port),
        Kind::Load | Kind::Store | Kind::CallDirect | Kind::CallIndirect | Kind::Ret | Kind::Clflush => {
            Some(ports.mem_port)
        }
        Kind::JmpDirect | Kind::CfiLbl | Kind::FenceStrict | Kind::FenceRelaxed | Kind::Nop | Kind::Halt => None,
    }
}

/// Per-cycle port reservations plus a per-thread record of cycles in which
/// a ready op lost its port to the other thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortModel {
    owner: Vec<Option<usize>>,
    delayed: Vec<Vec<bool>>,
    watched: usize,
}

impl PortModel {
    pub fn new(n_ports: usize, threads: usize, watched: usize) -> PortModel {
        PortModel {
            owner: vec![None; n_ports],
            delayed: vec![Vec::new(); threads],
            watched,
        }
    }

    pub fn watched_port(&self) -> usize {
        self.watched
    }

    pub fn begin_cycle(&mut self) {
        self.owner.fill(None);
        for d in &mut self.delayed {
            d.push(false);
        }
    }

    pub fn is_free(&self, port: usize) -> bool {
        self.owner[port].is_none()
    }

    /// Claims `port` for `thread`; returns false if already taken this cycle.
    pub fn try_claim(&mut self, port: usize, thread: usize) -> bool {
        match self.owner[port] {
            None => {
                self.owner[port] = Some(thread);
                true
            }
            Some(other) => {
                if other != thread && port == self.watched {
                    if let Some(last) = self.delayed[thread].last_mut() {
                        *last = true;
                    }
                }
                false
            }
        }
    }

    pub fn owner(&self, port: usize) -> Option<usize> {
        self.owner[port]
    }

    /// Per-cycle flags for `thread`: true when its ready op for the watched
    /// port was held back by the co-resident thread.
    pub fn port_trace(&self, thread: usize) -> &[bool] {
        &self.delayed[thread]
    }

    /// The last `window` cycles of [`PortModel::port_trace`].
    pub fn port_trace_window(&self, thread: usize, window: usize) -> &[bool] {
        let t = &self.delayed[thread];
        &t[t.len().saturating_sub(window)..]
    }

    pub fn clear_traces(&mut self) {
        for d in &mut self.delayed {
            d.clear();
        }
    }
}

pub fn mean_contention(trace: &[bool]) -> f64 {
    if trace.is_empty() {
        0.0
    } else {
        trace.iter().filter(|&&d| d).count() as f64 / trace.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_op_per_port_per_cycle() {
        let mut p = PortModel::new(3, 2, 0);
        p.begin_cycle();
        assert!(p.try_claim(0, 0));
        assert!(!p.try_claim(0, 1));
        assert!(!p.try_claim(0, 0));
        assert!(p.try_claim(1, 1));
        assert_eq!(p.port_trace(1), &[true]);
        assert_eq!(p.port_trace(0), &[false]);
    }

    #[test]
    fn idle_sibling_gives_clean_trace() {
        let mut p = PortModel::new(3, 2, 0);
        for _ in 0..10 {
            p.begin_cycle();
            assert!(p.try_claim(0, 1));
        }
        assert_eq!(mean_contention(p.port_trace(1)), 0.0);
        assert_eq!(p.port_trace_window(1, 4).len(), 4);
    }

    #[test]
    fn class_map() {
        let c = PortConfig::default();
        assert_eq!(port_for(Kind::Cmp, &c), Some(0));
        assert_eq!(port_for(Kind::Add, &c), Some(1));
        assert_eq!(port_for(Kind::Load, &c), Some(2));
        assert_eq!(port_for(Kind::CfiLbl, &c), None);
    }
}
