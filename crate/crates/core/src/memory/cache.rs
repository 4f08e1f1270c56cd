//! Set-associative LRU data cache keyed by address alone.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::CacheConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone)]
pub struct Cache {
    config: CacheConfig,
    /// Per set: line tags, most recently used last.
    sets: Vec<Vec<u64>>,
    /// Lines whose fill is still in flight, with the cycle it lands.
    filling: BTreeMap<u64, u64>,
    jitter: u64,
    rng: ChaCha8Rng,
    pub hits: u64,
    pub misses: u64,
}

impl Cache {
    pub fn new(config: CacheConfig) -> Cache {
        Cache::with_jitter(config, 0, 0)
    }

    /// Adds up to `jitter` cycles of seeded noise to every access.
    pub fn with_jitter(config: CacheConfig, jitter: u64, seed: u64) -> Cache {
        Cache {
            sets: vec![Vec::with_capacity(config.ways); config.sets()],
            filling: BTreeMap::new(),
            config,
            jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hits: 0,
            misses: 0,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.config.line as u64
    }

    fn set_of(&self, line: u64) -> usize {
        (line % self.sets.len() as u64) as usize
    }

    pub fn contains(&self, addr: u64) -> bool {
        let line = self.line_of(addr);
        self.sets[self.set_of(line)].contains(&line)
    }

    /// Touches `addr`, filling its line on a miss, and returns the latency.
    /// Untimed: any fill in flight counts as complete.
    pub fn access(&mut self, addr: u64, kind: AccessKind) -> u64 {
        let line = self.line_of(addr);
        self.filling.remove(&line);
        self.lookup(line, kind).0
    }

    /// Like [`Cache::access`] at cycle `now`. An access to a line whose fill
    /// is still in flight waits for that fill instead of counting as a hit.
    pub fn access_at(&mut self, addr: u64, kind: AccessKind, now: u64) -> u64 {
        let line = self.line_of(addr);
        let pending = self.filling.get(&line).copied();
        let (lat, hit) = self.lookup(line, kind);
        if !hit {
            self.filling.insert(line, now + lat);
            return lat;
        }
        match pending {
            Some(ready) if ready > now => lat.max(ready - now),
            Some(_) => {
                self.filling.remove(&line);
                lat
            }
            None => lat,
        }
    }

    /// Latency and whether the line was resident.
    fn lookup(&mut self, line: u64, _kind: AccessKind) -> (u64, bool) {
        let ways = self.config.ways;
        let set = self.set_of(line);
        let lines = &mut self.sets[set];
        let hit = if let Some(pos) = lines.iter().position(|&l| l == line) {
            lines.remove(pos);
            true
        } else {
            if lines.len() == ways {
                lines.remove(0);
            }
            false
        };
        lines.push(line);
        let base = if hit {
            self.hits += 1;
            self.config.hit_latency
        } else {
            self.misses += 1;
            self.config.miss_latency
        };
        (base + self.noise(), hit)
    }

    fn noise(&mut self) -> u64 {
        if self.jitter == 0 {
            0
        } else {
            self.rng.gen_range(0..=self.jitter)
        }
    }

    pub fn clflush(&mut self, addr: u64) {
        let line = self.line_of(addr);
        let set = self.set_of(line);
        self.sets[set].retain(|&l| l != line);
        self.filling.remove(&line);
    }

    pub fn flush_all(&mut self) {
        for s in &mut self.sets {
            s.clear();
        }
        self.filling.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_access_hits() {
        let mut c = Cache::new(CacheConfig::default());
        assert_eq!(c.access(0x1000, AccessKind::Load), 50);
        assert_eq!(c.access(0x1000, AccessKind::Load), 4);
        assert_eq!(c.access(0x1008, AccessKind::Store), 4);
    }

    #[test]
    fn access_during_fill_waits_for_it() {
        let mut c = Cache::new(CacheConfig::default());
        assert_eq!(c.access_at(0x1000, AccessKind::Load, 100), 50);
        assert_eq!(c.access_at(0x1008, AccessKind::Load, 110), 40);
        assert_eq!(c.access_at(0x1000, AccessKind::Load, 150), 4);
        assert_eq!(c.access_at(0x2000, AccessKind::Load, 0), 50);
        assert_eq!(c.access(0x2000, AccessKind::Load), 4);
        assert_eq!(c.access_at(0x2000, AccessKind::Load, 1), 4);
    }

    #[test]
    fn clflush_evicts() {
        let mut c = Cache::new(CacheConfig::default());
        c.access(0x40, AccessKind::Load);
        c.clflush(0x40);
        assert_eq!(c.access(0x40, AccessKind::Load), 50);
    }

    #[test]
    fn lru_evicts_oldest() {
        let cfg = CacheConfig::default();
        let mut c = Cache::new(cfg);
        let stride = (cfg.sets() * cfg.line) as u64;
        for w in 0..=cfg.ways as u64 {
            c.access(w * stride, AccessKind::Load);
        }
        assert!(!c.contains(0));
        for w in 1..=cfg.ways as u64 {
            assert!(c.contains(w * stride));
        }
    }

    #[test]
    fn jitter_is_seeded() {
        let cfg = CacheConfig::default();
        let run = || {
            let mut c = Cache::with_jitter(cfg, 3, 11);
            (0..20).map(|i| c.access(i * 64, AccessKind::Load)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        assert!(run().iter().all(|&l| (50..=53).contains(&l)));
    }
}
