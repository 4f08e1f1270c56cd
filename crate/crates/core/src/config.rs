//! Simulated-core configuration. Defaults follow a Skylake-class core:
//! 6-wide issue and commit, 224-entry ROB, 96-entry issue queue, 72/56-entry
//! load/store queues, 16-entry return stack, 32 KiB 8-way L1D with 64 B lines
//! and a 4-cycle hit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Fence semantics used for program fences and hardware-inserted fences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FenceKind {
    /// No younger instruction issues until the fence retires; the fence
    /// retires only once no older store is outstanding.
    Strict,
    /// Only younger loads are held back.
    Relaxed,
}

impl FenceKind {
    pub const ALL: [FenceKind; 2] = [FenceKind::Strict, FenceKind::Relaxed];

    pub fn name(self) -> &'static str {
        match self {
            FenceKind::Strict => "strict",
            FenceKind::Relaxed => "relaxed",
        }
    }
}

impl fmt::Display for FenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FenceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(FenceKind::Strict),
            "relaxed" => Ok(FenceKind::Relaxed),
            other => Err(format!("unknown fence kind `{other}`")),
        }
    }
}

/// Which defense the core runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Defense {
    /// Unprotected core: legacy RSB with BTB fallback on underflow.
    Baseline,
    /// Software load-fence-transfer rewrite of every indirect branch and return.
    #[serde(rename = "retpoline", alias = "retpoline-sw")]
    RetpolineSw,
    /// Hardware fence at the predicted target of every indirect call/jmp/ret.
    #[serde(rename = "all-target", alias = "all-target-fence")]
    AllTargetFence,
    /// Decode-stage label check plus the unified RSB/SCS, speculation only.
    #[serde(rename = "speccfi-base")]
    SpecCfiBase,
    /// `SpecCfiBase` plus commit-stage CFI enforcement.
    #[serde(rename = "speccfi-full")]
    SpecCfiFull,
    /// Labels stored in the BTB and compared at prediction time.
    #[serde(rename = "btb-label", alias = "btb-label-variant")]
    BtbLabelVariant,
}

impl Defense {
    pub const ALL: [Defense; 6] = [
        Defense::Baseline,
        Defense::RetpolineSw,
        Defense::AllTargetFence,
        Defense::SpecCfiBase,
        Defense::SpecCfiFull,
        Defense::BtbLabelVariant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Defense::Baseline => "baseline",
            Defense::RetpolineSw => "retpoline",
            Defense::AllTargetFence => "all-target",
            Defense::SpecCfiBase => "speccfi-base",
            Defense::SpecCfiFull => "speccfi-full",
            Defense::BtbLabelVariant => "btb-label",
        }
    }

    /// Runs the decode-stage label check.
    pub fn decode_check(self) -> bool {
        matches!(self, Defense::SpecCfiBase | Defense::SpecCfiFull)
    }

    /// Uses the unified, speculation-consistent RSB/SCS for returns.
    pub fn uses_rsb_scs(self) -> bool {
        matches!(
            self,
            Defense::SpecCfiBase | Defense::SpecCfiFull | Defense::BtbLabelVariant
        )
    }

    /// Whether the defense adds hardware or software fences at all.
    pub fn is_fencing(self) -> bool {
        !matches!(self, Defense::Baseline | Defense::BtbLabelVariant)
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Defense {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Defense::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown defense `{s}`"))
    }
}

/// L1 data cache geometry and latencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub size: usize,
    pub ways: usize,
    pub line: usize,
    pub hit_latency: u64,
    pub miss_latency: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            size: 32 * 1024,
            ways: 8,
            line: 64,
            hit_latency: 4,
            miss_latency: 50,
        }
    }
}

impl CacheConfig {
    pub fn sets(&self) -> usize {
        self.size / (self.ways * self.line)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.ways == 0 || self.line == 0 || self.size == 0 {
            return Err("cache size, ways and line must be non-zero".into());
        }
        if !self.size.is_multiple_of(self.ways * self.line) {
            return Err(format!(
                "cache size {} is not divisible by ways*line = {}",
                self.size,
                self.ways * self.line
            ));
        }
        if self.hit_latency >= self.miss_latency {
            return Err("hit latency must be below miss latency".into());
        }
        Ok(())
    }
}

/// Execution-port model: which port each operation class uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortConfig {
    pub n_ports: usize,
    /// Port for compares and branches.
    pub branch_port: usize,
    /// Port for integer ALU operations.
    pub alu_port: usize,
    /// Port for loads, stores and flushes.
    pub mem_port: usize,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig {
            n_ports: 3,
            branch_port: 0,
            alu_port: 1,
            mem_port: 2,
        }
    }
}

/// Full pipeline configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub fetch_width: usize,
    pub issue_width: usize,
    pub commit_width: usize,
    pub rob_size: usize,
    pub iq_size: usize,
    pub ldq: usize,
    pub stq: usize,
    pub rsb_entries: usize,
    /// Cycles between fetch and the earliest dispatch of a fetched op.
    pub frontend_depth: u64,
    pub mispredict_redirect_penalty: u64,
    pub btb_index_bits: u32,
    pub pht_history_bits: u32,
    /// Cycles without a commit after which the run is declared deadlocked.
    pub deadlock_cycles: u64,
    pub cache: CacheConfig,
    pub ports: PortConfig,
    pub defense: Defense,
    pub fence_kind: FenceKind,
    /// Seeded latency jitter (0 disables; timing is noiseless by default).
    pub jitter: u64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fetch_width: 6,
            issue_width: 6,
            commit_width: 6,
            rob_size: 224,
            iq_size: 96,
            ldq: 72,
            stq: 56,
            rsb_entries: 16,
            frontend_depth: 3,
            mispredict_redirect_penalty: 5,
            btb_index_bits: 9,
            pht_history_bits: 12,
            deadlock_cycles: 20_000,
            cache: CacheConfig::default(),
            ports: PortConfig::default(),
            defense: Defense::Baseline,
            fence_kind: FenceKind::Strict,
            jitter: 0,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn with_defense(mut self, defense: Defense, fence_kind: FenceKind) -> Self {
        self.defense = defense;
        self.fence_kind = fence_kind;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let sizes = [
            ("fetch_width", self.fetch_width),
            ("issue_width", self.issue_width),
            ("commit_width", self.commit_width),
            ("rob_size", self.rob_size),
            ("iq_size", self.iq_size),
            ("ldq", self.ldq),
            ("stq", self.stq),
            ("rsb_entries", self.rsb_entries),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if self.rsb_entries < 4 {
            return Err("rsb_entries must be at least the spill batch of 4".into());
        }
        let p = &self.ports;
        if p.n_ports == 0 || p.branch_port >= p.n_ports || p.alu_port >= p.n_ports || p.mem_port >= p.n_ports {
            return Err("port map refers to a port outside n_ports".into());
        }
        if !(1..=20).contains(&self.btb_index_bits) {
            return Err("btb_index_bits must be in 1..=20".into());
        }
        if !(1..=20).contains(&self.pht_history_bits) {
            return Err("pht_history_bits must be in 1..=20".into());
        }
        self.cache.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_core() {
        let c = PipelineConfig::default();
        assert_eq!((c.fetch_width, c.issue_width, c.commit_width), (6, 6, 6));
        assert_eq!((c.rob_size, c.iq_size, c.ldq, c.stq), (224, 96, 72, 56));
        assert_eq!(c.rsb_entries, 16);
        assert_eq!(
            (c.cache.size, c.cache.ways, c.cache.line, c.cache.hit_latency),
            (32 * 1024, 8, 64, 4)
        );
        assert_eq!(c.cache.sets(), 64);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn names_round_trip() {
        for d in Defense::ALL {
            assert_eq!(d.name().parse::<Defense>(), Ok(d));
        }
        for k in FenceKind::ALL {
            assert_eq!(k.name().parse::<FenceKind>(), Ok(k));
        }
    }

    #[test]
    fn rejects_bad_cache() {
        let mut c = PipelineConfig::default();
        c.cache.size = 1000;
        assert!(c.validate().is_err());
    }
}
