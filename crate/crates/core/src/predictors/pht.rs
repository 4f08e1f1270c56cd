//! Tournament direction predictor: bimodal plus gshare, chosen per branch by
//! a 2-bit selector.

/// Saturating 2-bit counter update.
fn bump(c: &mut u8, up: bool) {
    if up {
        *c = (*c + 1).min(3);
    } else {
        *c = c.saturating_sub(1);
    }
}

/// Components of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub taken: bool,
    pub bimodal: bool,
    pub gshare: bool,
    pub used_gshare: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pht {
    bimodal: Vec<u8>,
    gshare: Vec<u8>,
    choice: Vec<u8>,
    history_bits: u32,
    history: u64,
}

impl Default for Pht {
    fn default() -> Self {
        Pht::new(10, 12)
    }
}

impl Pht {
    /// `bimodal_bits` sizes the bimodal and selector tables; the gshare table
    /// has `2^history_bits` entries.
    pub fn new(bimodal_bits: u32, history_bits: u32) -> Pht {
        Pht {
            bimodal: vec![1; 1 << bimodal_bits],
            gshare: vec![1; 1 << history_bits],
            choice: vec![1; 1 << bimodal_bits],
            history_bits,
            history: 0,
        }
    }

    pub fn history_bits(&self) -> u32 {
        self.history_bits
    }

    pub fn history(&self) -> u64 {
        self.history
    }

    fn history_mask(&self) -> u64 {
        (1u64 << self.history_bits) - 1
    }

    /// History after shifting in one outcome.
    pub fn shifted(&self, history: u64, taken: bool) -> u64 {
        ((history << 1) | taken as u64) & self.history_mask()
    }

    fn bimodal_index(&self, pc: u64) -> usize {
        (pc as usize) & (self.bimodal.len() - 1)
    }

    fn gshare_index(&self, pc: u64, history: u64) -> usize {
        ((pc ^ history) as usize) & (self.gshare.len() - 1)
    }

    pub fn predict_with(&self, pc: u64, history: u64) -> Prediction {
        let bi = self.bimodal_index(pc);
        let bimodal = self.bimodal[bi] >= 2;
        let gshare = self.gshare[self.gshare_index(pc, history)] >= 2;
        let used_gshare = self.choice[bi] >= 2;
        Prediction {
            taken: if used_gshare { gshare } else { bimodal },
            bimodal,
            gshare,
            used_gshare,
        }
    }

    /// Prediction against the internal global history; does not mutate.
    pub fn predict(&self, pc: u64) -> bool {
        self.predict_with(pc, self.history).taken
    }

    /// Gshare component's prediction against the internal history.
    pub fn predict_gshare(&self, pc: u64) -> bool {
        self.predict_with(pc, self.history).gshare
    }

    /// Trains all tables with the outcome of the branch at `pc`, predicted
    /// under `history`. Does not touch the global history.
    pub fn train(&mut self, pc: u64, history: u64, taken: bool) {
        let p = self.predict_with(pc, history);
        let bi = self.bimodal_index(pc);
        let gi = self.gshare_index(pc, history);
        if p.bimodal != p.gshare {
            bump(&mut self.choice[bi], p.gshare == taken);
        }
        bump(&mut self.bimodal[bi], taken);
        bump(&mut self.gshare[gi], taken);
    }

    /// Non-speculative update: train, then shift the global history.
    pub fn update(&mut self, pc: u64, taken: bool) {
        self.train(pc, self.history, taken);
        self.history = self.shifted(self.history, taken);
    }

    /// `pht.bimodal|pht.gshare|pht.choice,index,counter` rows for entries
    /// that left their initial value.
    pub fn snapshot_rows(&self) -> Vec<(String, usize, String)> {
        let mut rows = Vec::new();
        for (name, table) in [
            ("pht.bimodal", &self.bimodal),
            ("pht.gshare", &self.gshare),
            ("pht.choice", &self.choice),
        ] {
            for (i, &c) in table.iter().enumerate() {
                if c != 1 {
                    rows.push((name.to_string(), i, c.to_string()));
                }
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_predicts_not_taken() {
        let p = Pht::default();
        for pc in [0, 1, 0x10, 0xdead] {
            assert!(!p.predict(pc));
        }
    }

    #[test]
    fn learns_taken_after_repeated_updates() {
        let mut p = Pht::default();
        for _ in 0..4 {
            p.update(0x40, true);
        }
        assert!(p.predict(0x40));
    }

    #[test]
    fn predict_does_not_mutate() {
        let mut p = Pht::default();
        p.update(3, true);
        let before = p.clone();
        let _ = p.predict(3);
        assert_eq!(p, before);
    }

    /// Independent two-table reference: a gshare table of 2-bit counters
    /// indexed by `(pc ^ history) mod 4096`, initialized to 1.
    fn reference_gshare_correct(pattern: impl Iterator<Item = bool>, pc: u64) -> usize {
        let mut table = [1u8; 4096];
        let mut hist: u64 = 0;
        let mut correct = 0;
        for taken in pattern {
            let i = ((pc ^ hist) & 4095) as usize;
            if (table[i] >= 2) == taken {
                correct += 1;
            }
            table[i] = if taken { (table[i] + 1).min(3) } else { table[i].saturating_sub(1) };
            hist = ((hist << 1) | taken as u64) & 4095;
        }
        correct
    }

    #[test]
    fn gshare_learns_alternation() {
        let pattern = || (0..100).map(|i| i % 2 == 0);
        let mut p = Pht::default();
        let mut correct = 0;
        for taken in pattern() {
            if p.predict_gshare(0x123) == taken {
                correct += 1;
            }
            p.update(0x123, taken);
        }
        assert_eq!(correct, reference_gshare_correct(pattern(), 0x123));
        assert_eq!(correct, 93);
        let tail: usize = {
            let mut p = Pht::default();
            let mut c = 0;
            for (i, taken) in pattern().enumerate() {
                if i >= 50 && p.predict_gshare(0x123) == taken {
                    c += 1;
                }
                p.update(0x123, taken);
            }
            c
        };
        assert!(tail * 100 >= 90 * 50);
    }
}
