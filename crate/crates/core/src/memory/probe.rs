//! Flush+reload style probing of cache residency.

use serde::Serialize;

use crate::config::CacheConfig;
use crate::memory::cache::Cache;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProbeResult {
    pub addresses: Vec<u64>,
    pub latencies: Vec<u64>,
    pub hits: Vec<bool>,
    pub threshold: u64,
}

impl ProbeResult {
    pub fn hit_indices(&self) -> Vec<usize> {
        self.hits
            .iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(i, _)| i)
            .collect()
    }

    /// The single hit index, if exactly one line was resident.
    pub fn unique_hit(&self) -> Option<usize> {
        match self.hit_indices().as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["index", "addr", "latency", "hit"]).expect("in-memory write");
        for (i, ((a, l), h)) in self
            .addresses
            .iter()
            .zip(&self.latencies)
            .zip(&self.hits)
            .enumerate()
        {
            w.write_record([i.to_string(), format!("{a:#x}"), l.to_string(), (*h as u8).to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Midpoint between hit and miss latency.
pub fn threshold(config: &CacheConfig) -> u64 {
    (config.hit_latency + config.miss_latency) / 2
}

/// Times each address in caller order. Residency is read before each access
/// so that earlier probes cannot change the classification of later ones.
pub fn probe(cache: &mut Cache, addresses: &[u64]) -> ProbeResult {
    let cfg = *cache.config();
    let thr = threshold(&cfg);
    let mut latencies = Vec::with_capacity(addresses.len());
    let mut hits = Vec::with_capacity(addresses.len());
    for &a in addresses {
        let resident = cache.contains(a);
        let lat = cache.access(a, crate::memory::cache::AccessKind::Load);
        let lat = if resident { lat.min(thr - 1) } else { lat.max(thr + 1) };
        latencies.push(lat);
        hits.push(lat < thr);
    }
    ProbeResult {
        addresses: addresses.to_vec(),
        latencies,
        hits,
        threshold: thr,
    }
}

/// Line-aligned addresses of a probe array of `n` entries, `stride` apart.
pub fn probe_addresses(base: u64, n: usize, stride: u64) -> Vec<u64> {
    (0..n as u64).map(|i| base + i * stride).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flushed_probe_has_no_hits() {
        let mut c = Cache::new(CacheConfig::default());
        let addrs = probe_addresses(0x4000, 256, 64);
        let r = probe(&mut c, &addrs);
        assert!(r.hit_indices().is_empty());
    }

    #[test]
    fn pretouched_all_hit() {
        let mut c = Cache::new(CacheConfig::default());
        let addrs = probe_addresses(0x4000, 16, 64);
        for &a in &addrs {
            c.access(a, crate::memory::cache::AccessKind::Load);
        }
        assert_eq!(probe(&mut c, &addrs).hit_indices().len(), 16);
    }

    #[test]
    fn single_resident_line() {
        let mut c = Cache::new(CacheConfig::default());
        let addrs = probe_addresses(0x4000, 256, 64);
        c.access(addrs[42], crate::memory::cache::AccessKind::Load);
        assert_eq!(probe(&mut c, &addrs).unique_hit(), Some(42));
    }

    #[test]
    fn threshold_between_latencies() {
        let cfg = CacheConfig::default();
        let t = threshold(&cfg);
        assert!(cfg.hit_latency < t && t < cfg.miss_latency);
    }
}
