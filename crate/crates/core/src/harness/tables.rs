//! Security matrix and the plain-text / gnuplot renderings used by reports.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Defense, FenceKind, PipelineConfig};
use crate::harness::bench::PerfTable;
use crate::harness::scenarios::{run_attack_with, AttackError, AttackOptions, AttackResult, Scenario};

/// Defenses the security matrix is evaluated against by default.
pub const MATRIX_DEFENSES: [Defense; 3] = [Defense::Baseline, Defense::SpecCfiBase, Defense::SpecCfiFull];

/// One cell of the security matrix in flat, CSV-friendly form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub attack: String,
    pub space: String,
    pub placement: String,
    pub defense: String,
    pub fence_kind: String,
    pub successes: usize,
    pub trials: usize,
    /// `leaked`, `blocked` or `partial`.
    pub outcome: String,
}

impl From<&AttackResult> for MatrixRow {
    fn from(r: &AttackResult) -> Self {
        MatrixRow {
            attack: r.scenario.attack.name().into(),
            space: r.scenario.space.name().into(),
            placement: r.scenario.placement.name().into(),
            defense: r.defense.name().into(),
            fence_kind: r.fence_kind.name().into(),
            successes: r.successes,
            trials: r.trials.len(),
            outcome: r.outcome().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityMatrix {
    pub rows: Vec<MatrixRow>,
}

/// Runs every (scenario, defense) cell in parallel. Each cell uses its own
/// simulator and the same `seed`, so cells are independent and reproducible.
pub fn security_matrix(
    scenarios: &[Scenario],
    defenses: &[Defense],
    fence_kind: FenceKind,
    trials: usize,
    seed: u64,
    config: &PipelineConfig,
) -> Result<(SecurityMatrix, Vec<AttackResult>), AttackError> {
    let jobs: Vec<(Scenario, Defense)> = scenarios
        .iter()
        .flat_map(|s| defenses.iter().map(move |d| (*s, *d)))
        .collect();
    let opts = AttackOptions {
        trials,
        seed,
        config: config.clone(),
        trace: false,
    };
    let results: Vec<AttackResult> = jobs
        .par_iter()
        .map(|(s, d)| run_attack_with(*s, *d, fence_kind, &opts).map(|(r, _)| r))
        .collect::<Result<_, _>>()?;
    let rows = results.iter().map(MatrixRow::from).collect();
    Ok((SecurityMatrix { rows }, results))
}

impl SecurityMatrix {
    pub fn get(&self, scenario: &Scenario, defense: Defense) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| {
            r.attack == scenario.attack.name()
                && r.space == scenario.space.name()
                && r.placement == scenario.placement.name()
                && r.defense == defense.name()
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    pub fn from_csv(text: &str) -> Result<SecurityMatrix, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<Result<_, _>>()?;
        Ok(SecurityMatrix { rows })
    }

    /// Grid with one row per (attack, space) and one column pair
    /// (in-place, out-of-place) per defense.
    pub fn render(&self) -> String {
        let mut defenses: Vec<&str> = Vec::new();
        let mut keys: Vec<(&str, &str)> = Vec::new();
        let mut cell: BTreeMap<(&str, &str, &str, &str), &str> = BTreeMap::new();
        for r in &self.rows {
            if !defenses.contains(&r.defense.as_str()) {
                defenses.push(&r.defense);
            }
            let k = (r.attack.as_str(), r.space.as_str());
            if !keys.contains(&k) {
                keys.push(k);
            }
            cell.insert((&r.attack, &r.space, &r.placement, &r.defense), &r.outcome);
        }
        let mut s = format!("{:<12} {:<6}", "attack", "space");
        for d in &defenses {
            s += &format!(" | {:^19}", d);
        }
        s += &format!("\n{:<12} {:<6}", "", "");
        for _ in &defenses {
            s += &format!(" | {:<9} {:<9}", "in-place", "out-of-pl");
        }
        s.push('\n');
        for (a, sp) in keys {
            s += &format!("{:<12} {:<6}", a, sp);
            for d in &defenses {
                let get = |p: &str| cell.get(&(a, sp, p, *d)).copied().unwrap_or("-");
                s += &format!(" | {:<9} {:<9}", get("in-place"), get("out-of-place"));
            }
            s.push('\n');
        }
        s
    }
}

/// Gnuplot-ready data: one line per benchmark, one normalized-IPC column per
/// (defense, fence kind) in first-appearance order. `#` header line.
pub fn normalized_ipc_dat(table: &PerfTable) -> String {
    let mut cols: Vec<(Defense, FenceKind)> = Vec::new();
    let mut benches: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !cols.contains(&(r.defense, r.fence_kind)) {
            cols.push((r.defense, r.fence_kind));
        }
        if !benches.contains(&r.bench.as_str()) {
            benches.push(&r.bench);
        }
    }
    let mut s = String::from("# benchmark");
    for (d, k) in &cols {
        s += &format!(" {}/{}", d.name(), k.name());
    }
    s.push('\n');
    for b in benches {
        s += b;
        for (d, k) in &cols {
            match table.get(b, *d, *k) {
                Some(r) => s += &format!(" {:.4}", r.normalized_ipc),
                None => s += " ?",
            }
        }
        s.push('\n');
    }
    s
}

/// Gnuplot-ready retired fence counts, same layout as [`normalized_ipc_dat`].
pub fn fences_dat(table: &PerfTable) -> String {
    let mut cols: Vec<(Defense, FenceKind)> = Vec::new();
    let mut benches: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !cols.contains(&(r.defense, r.fence_kind)) {
            cols.push((r.defense, r.fence_kind));
        }
        if !benches.contains(&r.bench.as_str()) {
            benches.push(&r.bench);
        }
    }
    let mut s = String::from("# benchmark");
    for (d, k) in &cols {
        s += &format!(" {}/{}", d.name(), k.name());
    }
    s.push('\n');
    for b in benches {
        s += b;
        for (d, k) in &cols {
            match table.get(b, *d, *k) {
                Some(r) => s += &format!(" {}", r.fences_retired),
                None => s += " ?",
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::bench::{perf_table, BENCHMARKS};
    use crate::harness::scenarios::{AttackKind, Placement, Space};

    #[test]
    fn matrix_csv_round_trips_and_renders() {
        let sc = [Scenario::new(AttackKind::SpectreBtb, Space::Cross, Placement::InPlace)];
        let (m, _) = security_matrix(&sc, &MATRIX_DEFENSES, FenceKind::Strict, 2, 1, &PipelineConfig::default()).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert_eq!(SecurityMatrix::from_csv(&m.to_csv()).unwrap(), m);
        assert_eq!(m.get(&sc[0], Defense::Baseline).unwrap().outcome, "leaked");
        assert_eq!(m.get(&sc[0], Defense::SpecCfiBase).unwrap().outcome, "blocked");
        let g = m.render();
        assert!(g.contains("spectre-btb  cross"));
        assert!(g.contains("leaked"));
    }

    #[test]
    fn perf_csv_round_trips_and_baseline_is_one() {
        let t = perf_table(&BENCHMARKS[..2], &[Defense::Baseline, Defense::AllTargetFence], &[FenceKind::Strict], &PipelineConfig::default()).unwrap();
        assert_eq!(PerfTable::from_csv(&t.to_csv()).unwrap(), t);
        for r in t.rows.iter().filter(|r| r.defense == Defense::Baseline) {
            assert_eq!(r.normalized_ipc, 1.0);
        }
        let dat = normalized_ipc_dat(&t);
        assert!(dat.starts_with("# benchmark baseline/strict all-target/strict\narith 1.0000"));
        assert_eq!(fences_dat(&t).lines().count(), 3);
    }
}
