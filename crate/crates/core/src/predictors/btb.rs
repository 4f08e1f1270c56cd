//! Direct-mapped branch target buffer, shared by every thread and process.
//!
//! Index is the low `index_bits` of the pc XOR-folded with the next
//! `index_bits`; the tag is everything above those two fields.

use crate::isa::LabelId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BtbEntry {
    pub tag: u64,
    pub target: u64,
    pub label: Option<LabelId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Btb {
    index_bits: u32,
    entries: Vec<Option<BtbEntry>>,
}

impl Default for Btb {
    fn default() -> Self {
        Btb::new(9)
    }
}

impl Btb {
    pub fn new(index_bits: u32) -> Btb {
        Btb {
            index_bits,
            entries: vec![None; 1 << index_bits],
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(Option::is_none)
    }

    fn mask(&self) -> u64 {
        (1u64 << self.index_bits) - 1
    }

    pub fn index(&self, pc: u64) -> usize {
        ((pc & self.mask()) ^ ((pc >> self.index_bits) & self.mask())) as usize
    }

    pub fn tag(&self, pc: u64) -> u64 {
        pc >> (2 * self.index_bits)
    }

    /// A different pc with the same index and tag as `pc`.
    pub fn alias_of(&self, pc: u64) -> u64 {
        pc ^ (1 | (1 << self.index_bits))
    }

    pub fn lookup(&self, pc: u64) -> Option<(u64, Option<LabelId>)> {
        match self.entries[self.index(pc)] {
            Some(e) if e.tag == self.tag(pc) => Some((e.target, e.label)),
            _ => None,
        }
    }

    pub fn update(&mut self, pc: u64, target: u64, label: Option<LabelId>) {
        let i = self.index(pc);
        self.entries[i] = Some(BtbEntry {
            tag: self.tag(pc),
            target,
            label,
        });
    }

    /// `btb,index,tag=..;target=..;label=..` rows for valid entries.
    pub fn snapshot_rows(&self) -> Vec<(String, usize, String)> {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| {
                e.map(|e| {
                    let label = e.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
                    ("btb".to_string(), i, format!("tag={:#x};target={:#x};label={label}", e.tag, e.target))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_misses() {
        assert_eq!(Btb::default().lookup(0x10), None);
    }

    #[test]
    fn shared_across_processes() {
        // Whoever trains, whoever looks up: there is no process qualifier.
        let mut b = Btb::default();
        b.update(0x10, 0x25, None);
        assert_eq!(b.lookup(0x10), Some((0x25, None)));
    }

    #[test]
    fn label_variant_keeps_label() {
        let mut b = Btb::default();
        b.update(0x10, 0x25, Some(LabelId(1)));
        assert_eq!(b.lookup(0x10), Some((0x25, Some(LabelId(1)))));
    }

    #[test]
    fn alias_collides() {
        let mut b = Btb::default();
        let alias = b.alias_of(0x10);
        assert_ne!(alias, 0x10);
        b.update(alias, 0x99, None);
        assert_eq!(b.lookup(0x10), Some((0x99, None)));
        assert_eq!(b.index(alias), b.index(0x10));
    }

    #[test]
    fn tag_mismatch_misses() {
        let mut b = Btb::default();
        b.update(0x10, 0x25, None);
        assert_eq!(b.lookup(0x10 | (1 << 18)), None);
    }
}
