//! Port-contention attack: a monitor thread times its own ALU work while
//! the victim speculatively runs a branch whose outcome depends on a secret.
//! Shows the leak on the unprotected core and how fence flavors change it.

use speccfi::config::{Defense, FenceKind};
use speccfi::harness::{run_attack, AttackKind, Placement, Scenario, Space};

fn main() {
    let sc = Scenario::new(AttackKind::Smother, Space::Cross, Placement::InPlace);
    for (d, k) in [
        (Defense::Baseline, FenceKind::Strict),
        (Defense::SpecCfiBase, FenceKind::Strict),
        (Defense::SpecCfiBase, FenceKind::Relaxed),
    ] {
        let r = run_attack(sc, d, k, 2, 3).expect("scenario runs");
        println!(
            "{:<13} {:<8} {:<8} recovered={:?} secrets={:?}",
            d.name(),
            k.name(),
            r.outcome(),
            r.recovered(),
            r.ground_truth()
        );
    }
}
