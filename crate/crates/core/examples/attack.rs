//! Run a cache-channel attack cell against a defense and print each trial.
//!
//! Usage: `cargo run --example attack -- [scenario] [defense]`, e.g.
//! `spectre-rsb-same-out-of-place speccfi-base`.

use speccfi::config::{Defense, FenceKind};
use speccfi::harness::{run_attack, Scenario};

fn main() {
    let mut args = std::env::args().skip(1);
    let sc: Scenario = args
        .next()
        .unwrap_or_else(|| "spectre-btb-cross-in-place".into())
        .parse()
        .expect("scenario name");
    let defenses: Vec<Defense> = match args.next() {
        Some(d) => vec![d.parse().expect("defense name")],
        None => vec![Defense::Baseline, Defense::SpecCfiBase],
    };
    for d in defenses {
        let r = run_attack(sc, d, FenceKind::Strict, 5, 42).expect("scenario runs");
        println!("{} vs {}: {} ({}/{})", r.scenario.name(), d.name(), r.outcome(), r.successes, r.trials.len());
        for t in &r.trials {
            println!("    secret={:#04x} recovered={:?}", t.secret, t.recovered);
        }
    }
}
