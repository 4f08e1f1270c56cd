//! Exercise the branch predictors directly: BTB aliasing, the gshare PHT,
//! and how the legacy RSB and the unified RSB/shadow stack differ on
//! underflow and context switches.

use speccfi::image::Pid;
use speccfi::predictors::{Btb, LegacyRsb, Pht, RsbScs};

fn main() {
    let mut btb = Btb::new(9);
    let pc = 0x10;
    let alias = btb.alias_of(pc);
    btb.update(alias, 0x24, None);
    println!("btb: {pc:#x} and {alias:#x} share index {}; lookup({pc:#x}) = {:?}", btb.index(pc), btb.lookup(pc));

    let mut pht = Pht::new(10, 8);
    for i in 0..40 {
        pht.update(0x30, i % 4 != 3);
    }
    println!("pht: after a taken-taken-taken-not pattern, predict(0x30) = {}", pht.predict(0x30));

    let mut legacy = LegacyRsb::new(4);
    for a in 1..=6u64 {
        legacy.push(a * 0x10);
    }
    let pops: Vec<_> = (0..6).map(|_| legacy.pop().0).collect();
    println!("legacy rsb (4 entries) pops after 6 pushes: {pops:?}");

    let mut scs = RsbScs::new(4);
    for a in 1..=6u64 {
        scs.push(a * 0x10).expect("push");
        scs.commit_call();
    }
    let mut pops = Vec::new();
    for _ in 0..6 {
        if scs.occupancy() == 0 {
            scs.fill();
        }
        pops.push(scs.pop());
        scs.commit_ret();
    }
    println!("rsb/scs (4 entries) pops after 6 pushes: {pops:?}");

    scs.push(0x99).expect("push");
    scs.commit_call();
    scs.context_save().expect("save");
    scs.context_restore(Pid(2));
    println!("after switching to pid 2 the top of stack is {:?}", scs.pop());
}
