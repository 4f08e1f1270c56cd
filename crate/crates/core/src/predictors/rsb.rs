//! Return predictors: the unified RSB/shadow call stack and a legacy
//! overwrite-on-overflow RSB.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::image::Pid;

/// Entries moved per spill or fill.
pub const SPILL_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RsbError {
    #[error("spill blocked: the oldest entries are not yet committed")]
    SpillBlocked,
    #[error("context save while speculative entries are in flight")]
    SaveWhileSpeculative,
}

/// Unified return stack buffer and shadow call stack.
///
/// The in-processor part is a small stack whose bottom `committed` slots are
/// architectural. A speculative pop only lowers `len`; the slot keeps its
/// value and stays committed until the matching `ret` commits. Committed
/// entries overflow into a per-process backing store that only spill, fill
/// and the context operations can reach.
#[derive(Debug, Clone)]
pub struct RsbScs {
    slots: Vec<u64>,
    len: usize,
    committed: usize,
    pid: Pid,
    backing: BTreeMap<Pid, Vec<u64>>,
    /// Slot index touched by each in-flight push or pop, oldest first.
    touched: VecDeque<usize>,
    pub owner_thread: usize,
}

/// Equality over observable state; slot contents above the occupied region
/// are stale and ignored.
impl PartialEq for RsbScs {
    fn eq(&self, other: &Self) -> bool {
        self.slots[..self.occupancy()] == other.slots[..other.occupancy()]
            && self.len == other.len
            && self.committed == other.committed
            && self.pid == other.pid
            && self.backing == other.backing
            && self.touched == other.touched
            && self.owner_thread == other.owner_thread
    }
}

impl Eq for RsbScs {}

impl Default for RsbScs {
    fn default() -> Self {
        RsbScs::new(16)
    }
}

impl RsbScs {
    pub fn new(capacity: usize) -> RsbScs {
        assert!(capacity >= SPILL_BATCH);
        RsbScs {
            slots: vec![0; capacity],
            len: 0,
            committed: 0,
            pid: Pid::default(),
            backing: BTreeMap::new(),
            touched: VecDeque::new(),
            owner_thread: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    /// Index of the top of stack, if any entry is live.
    pub fn tos(&self) -> Option<usize> {
        self.len.checked_sub(1)
    }

    /// Index of the last committed entry.
    pub fn lcp(&self) -> Option<usize> {
        self.committed.checked_sub(1)
    }

    pub fn occupancy(&self) -> usize {
        self.len.max(self.committed)
    }

    /// Live entries, oldest first.
    pub fn cache(&self) -> &[u64] {
        &self.slots[..self.len]
    }

    pub fn backing(&self, pid: Pid) -> &[u64] {
        self.backing.get(&pid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn in_flight(&self) -> usize {
        self.touched.len()
    }

    /// Return-address stack as the program would see it: backing entries
    /// followed by the live cache.
    pub fn logical(&self) -> Vec<u64> {
        let mut v = self.backing(self.pid).to_vec();
        v.extend_from_slice(self.cache());
        v
    }

    /// Committed depth including spilled entries.
    pub fn committed_depth(&self) -> usize {
        self.backing(self.pid).len() + self.committed
    }

    /// Slots below this index hold committed values no in-flight op touched.
    fn clean_floor(&self) -> usize {
        self.touched
            .iter()
            .copied()
            .fold(self.committed, usize::min)
    }

    pub fn spill(&mut self) -> Result<(), RsbError> {
        if self.clean_floor() < SPILL_BATCH {
            return Err(RsbError::SpillBlocked);
        }
        let moved: Vec<u64> = self.slots[..SPILL_BATCH].to_vec();
        self.backing.entry(self.pid).or_default().extend(moved);
        self.slots.copy_within(SPILL_BATCH.., 0);
        self.len -= SPILL_BATCH;
        self.committed -= SPILL_BATCH;
        for t in &mut self.touched {
            *t -= SPILL_BATCH;
        }
        Ok(())
    }

    /// Moves up to four entries from the backing store under the cache.
    /// Returns how many moved.
    pub fn fill(&mut self) -> usize {
        let cap = self.capacity();
        let Some(back) = self.backing.get_mut(&self.pid) else {
            return 0;
        };
        let k = back.len().min(SPILL_BATCH).min(cap - self.committed.max(self.len));
        if k == 0 {
            return 0;
        }
        let start = back.len() - k;
        let moved: Vec<u64> = back.drain(start..).collect();
        let upper = self.committed.max(self.len);
        self.slots.copy_within(0..upper, k);
        self.slots[..k].copy_from_slice(&moved);
        self.len += k;
        self.committed += k;
        for t in &mut self.touched {
            *t += k;
        }
        k
    }

    /// Speculative push. Spills first when the cache is full.
    pub fn push(&mut self, ret_addr: u64) -> Result<(), RsbError> {
        if self.len == self.capacity() {
            self.spill()?;
        }
        self.slots[self.len] = ret_addr;
        self.touched.push_back(self.len);
        self.len += 1;
        Ok(())
    }

    /// Speculative pop. `None` is the stall sentinel: nothing is known about
    /// the return target.
    pub fn pop(&mut self) -> Option<u64> {
        if self.len == 0 && self.fill() == 0 {
            return None;
        }
        self.len -= 1;
        self.touched.push_back(self.len);
        Some(self.slots[self.len])
    }

    /// The oldest in-flight call retired.
    pub fn commit_call(&mut self) {
        self.touched.pop_front();
        self.committed += 1;
    }

    /// The oldest in-flight ret (one that popped) retired.
    pub fn commit_ret(&mut self) {
        self.touched.pop_front();
        self.committed = self.committed.saturating_sub(1);
    }

    /// The youngest in-flight call was squashed.
    pub fn annul_call(&mut self) {
        self.touched.pop_back();
        self.len = self.len.saturating_sub(1);
    }

    /// The youngest in-flight ret was squashed; its popped value returns.
    pub fn annul_ret(&mut self, old_rs: u64) {
        self.touched.pop_back();
        if self.len == self.capacity() {
            // Cannot happen with balanced annulment, but never lose the value.
            let _ = self.spill();
        }
        self.slots[self.len] = old_rs;
        self.len += 1;
    }

    /// Moves every committed entry of the running process to its backing
    /// store and empties the cache.
    pub fn context_save(&mut self) -> Result<(), RsbError> {
        if self.len != self.committed || !self.touched.is_empty() {
            return Err(RsbError::SaveWhileSpeculative);
        }
        let moved: Vec<u64> = self.slots[..self.committed].to_vec();
        self.backing.entry(self.pid).or_default().extend(moved);
        self.len = 0;
        self.committed = 0;
        Ok(())
    }

    /// Switches to `pid` and loads up to a cache-full of its most recent
    /// entries.
    pub fn context_restore(&mut self, pid: Pid) {
        debug_assert!(self.len == 0 && self.committed == 0);
        self.pid = pid;
        self.touched.clear();
        let cap = self.capacity();
        let back = self.backing.entry(pid).or_default();
        let k = back.len().min(cap);
        let start = back.len() - k;
        let moved: Vec<u64> = back.drain(start..).collect();
        self.slots[..k].copy_from_slice(&moved);
        self.len = k;
        self.committed = k;
    }

    /// Drops every in-flight effect, leaving only committed entries. Used
    /// when a process is killed.
    pub fn discard_speculation(&mut self) {
        self.touched.clear();
        self.len = self.committed;
    }

    /// `rsbscs,index,value[;committed][;lcp][;tos]` rows.
    pub fn snapshot_rows(&self) -> Vec<(String, usize, String)> {
        (0..self.occupancy())
            .map(|i| {
                let mut f = format!("{:#x}", self.slots[i]);
                if i < self.committed {
                    f.push_str(";committed");
                }
                if Some(i) == self.lcp() {
                    f.push_str(";lcp");
                }
                if Some(i) == self.tos() {
                    f.push_str(";tos");
                }
                ("rsbscs".to_string(), i, f)
            })
            .collect()
    }
}

/// Undo record of one legacy RSB operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LegacyUndo {
    top: usize,
    count: usize,
    slot: u64,
}

/// Circular return stack that overwrites its oldest entry on overflow and
/// returns nothing when empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegacyRsb {
    slots: Vec<u64>,
    top: usize,
    count: usize,
}

impl Default for LegacyRsb {
    fn default() -> Self {
        LegacyRsb::new(16)
    }
}

impl LegacyRsb {
    pub fn new(capacity: usize) -> LegacyRsb {
        LegacyRsb {
            slots: vec![0; capacity],
            top: capacity - 1,
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, ret_addr: u64) -> LegacyUndo {
        let cap = self.slots.len();
        let next = (self.top + 1) % cap;
        let undo = LegacyUndo {
            top: self.top,
            count: self.count,
            slot: self.slots[next],
        };
        self.top = next;
        self.slots[next] = ret_addr;
        self.count = (self.count + 1).min(cap);
        undo
    }

    pub fn pop(&mut self) -> (Option<u64>, LegacyUndo) {
        let undo = LegacyUndo {
            top: self.top,
            count: self.count,
            slot: self.slots[self.top],
        };
        if self.count == 0 {
            return (None, undo);
        }
        let v = self.slots[self.top];
        self.top = (self.top + self.slots.len() - 1) % self.slots.len();
        self.count -= 1;
        (Some(v), undo)
    }

    /// Reverts one operation; undo records must be applied youngest first.
    pub fn undo(&mut self, u: LegacyUndo) {
        let cap = self.slots.len();
        if self.top != u.top {
            // A push moved top forward; restore the overwritten slot.
            if (u.top + 1) % cap == self.top {
                self.slots[self.top] = u.slot;
            }
        }
        self.top = u.top;
        self.count = u.count;
    }

    /// Entries from oldest to youngest.
    pub fn entries(&self) -> Vec<u64> {
        let cap = self.slots.len();
        (0..self.count)
            .rev()
            .map(|k| self.slots[(self.top + cap - k) % cap])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifo() {
        let mut r = RsbScs::default();
        r.push(0x10).unwrap();
        r.push(0x25).unwrap();
        assert_eq!(r.pop(), Some(0x25));
        assert_eq!(r.pop(), Some(0x10));
    }

    #[test]
    fn empty_pop_stalls() {
        let mut r = RsbScs::default();
        assert_eq!(r.pop(), None);
    }

    #[test]
    fn commit_tracks_lcp() {
        let mut r = RsbScs::default();
        r.push(0x10).unwrap();
        r.commit_call();
        assert_eq!(r.tos(), r.lcp());
        assert_eq!(r.pop(), Some(0x10));
        r.commit_ret();
        assert_eq!(r.tos(), r.lcp());
        assert_eq!(r.tos(), None);
    }

    #[test]
    fn annul_call_is_inverse_of_push() {
        let mut r = RsbScs::default();
        r.push(1).unwrap();
        r.commit_call();
        let before = r.clone();
        r.push(2).unwrap();
        r.annul_call();
        assert_eq!(r, before);
    }

    #[test]
    fn spill_on_full_committed_stack() {
        let mut r = RsbScs::default();
        for i in 0..16 {
            r.push(i).unwrap();
            r.commit_call();
        }
        r.push(16).unwrap();
        assert_eq!(r.cache().len(), 13);
        assert_eq!(r.backing(Pid(0)), &[0, 1, 2, 3]);
        assert_eq!(r.logical(), (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn spill_blocked_by_speculative_entries() {
        let mut r = RsbScs::default();
        for i in 0..3 {
            r.push(i).unwrap();
            r.commit_call();
        }
        for i in 3..16 {
            r.push(i).unwrap();
        }
        assert_eq!(r.push(99), Err(RsbError::SpillBlocked));
    }

    #[test]
    fn fill_restores_four_and_pops_youngest() {
        let mut r = RsbScs::default();
        for i in 0..6 {
            r.push(i).unwrap();
            r.commit_call();
        }
        r.context_save().unwrap();
        r.context_restore(Pid(9)); // other process
        r.context_save().unwrap();
        r.context_restore(Pid(0));
        // Force everything back into the backing store.
        r.context_save().unwrap();
        r.pid = Pid(0);
        assert_eq!(r.backing(Pid(0)).len(), 6);
        assert_eq!(r.pop(), Some(5));
        assert_eq!(r.cache(), &[2, 3, 4]);
        assert_eq!(r.backing(Pid(0)), &[0, 1]);
    }

    #[test]
    fn spill_then_fill_round_trips() {
        let mut r = RsbScs::default();
        for i in 0..16 {
            r.push(i).unwrap();
            r.commit_call();
        }
        let before = r.cache().to_vec();
        r.spill().unwrap();
        for _ in 0..12 {
            r.pop();
            r.commit_ret();
        }
        assert_eq!(r.fill(), 4);
        assert_eq!(r.cache(), &before[..4]);
    }

    #[test]
    fn context_isolation() {
        let mut r = RsbScs::default();
        r.context_restore(Pid(1));
        for a in [0x10, 0x20, 0x30] {
            r.push(a).unwrap();
            r.commit_call();
        }
        let saved = r.cache().to_vec();
        r.context_save().unwrap();
        r.context_restore(Pid(2));
        for a in 0..16 {
            r.push(0x9000 + a).unwrap();
            r.commit_call();
        }
        r.context_save().unwrap();
        r.context_restore(Pid(1));
        assert_eq!(r.cache(), saved.as_slice());
    }

    #[test]
    fn save_while_speculative_fails() {
        let mut r = RsbScs::default();
        r.push(1).unwrap();
        assert_eq!(r.context_save(), Err(RsbError::SaveWhileSpeculative));
    }

    #[test]
    fn never_saved_pid_is_empty() {
        let mut r = RsbScs::default();
        r.context_restore(Pid(7));
        assert!(r.cache().is_empty());
        assert_eq!(r.pop(), None);
    }

    #[test]
    fn legacy_overwrites_and_underflows() {
        let mut r = LegacyRsb::default();
        for i in 0..20 {
            r.push(i);
        }
        assert_eq!(r.count(), 16);
        for i in (4..20).rev() {
            assert_eq!(r.pop().0, Some(i));
        }
        assert_eq!(r.pop().0, None);
    }

    #[test]
    fn legacy_undo_restores() {
        let mut r = LegacyRsb::default();
        for i in 0..16 {
            r.push(i);
        }
        let before = r.clone();
        let (_, u1) = r.pop();
        let u2 = r.push(100);
        let u3 = r.push(101);
        r.undo(u3);
        r.undo(u2);
        r.undo(u1);
        assert_eq!(r, before);
    }
}
