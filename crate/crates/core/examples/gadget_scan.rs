//! Generate a synthetic corpus and count port-contention gadgets reachable
//! under coarse- and fine-grained labeling.

use speccfi::asm::{assemble, CfiMode};
use speccfi::instrument::{generate_corpus, instrument_with, scan_smother_gadgets, CorpusSpec, ScanConfig};

fn main() {
    let src = generate_corpus(&CorpusSpec::default());
    let p = assemble(&src, CfiMode::Coarse).expect("corpus assembles");
    for mode in [CfiMode::Coarse, CfiMode::Fine] {
        let (q, map) = instrument_with(&p, mode, None).expect("labels");
        let r = scan_smother_gadgets(&q, &map, &ScanConfig::default());
        println!("{mode:?}: {} reachable gadgets ({} before label filtering)", r.total(), r.total_unfiltered());
    }
}
