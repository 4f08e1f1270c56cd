//! Run one program on the out-of-order core under every defense and print
//! the statistics plus the first lines of the retire/annul trace.

use speccfi::asm::{assemble, CfiMode};
use speccfi::config::{Defense, FenceKind, PipelineConfig};
use speccfi::image::{load_image, Pid};
use speccfi::instrument::{instrument_with, transform_retpoline};
use speccfi::pipeline::{SimOptions, Simulator};

const SRC: &str = "\
.entry main
.func leaf int(int)
.site cs int(int)
main:
  li r6, 50
  li r2, leaf
loop:
cs:
  call *r2
  add r6, r6, -1
  cmpi r6, 0
  jnz loop
  halt
leaf:
  add r1, r1, 3
  ret
";

fn main() {
    let p = assemble(SRC, CfiMode::Coarse).expect("assembles");
    let (labeled, _) = instrument_with(&p, CfiMode::Fine, None).expect("labels");
    for d in Defense::ALL {
        let prog = match d {
            Defense::RetpolineSw => transform_retpoline(&labeled, FenceKind::Strict),
            _ => labeled.clone(),
        };
        let cfg = PipelineConfig::default().with_defense(d, FenceKind::Strict);
        let opts = SimOptions {
            trace: true,
            ..SimOptions::default()
        };
        let mut sim = Simulator::new(cfg, opts).expect("valid config");
        let img = load_image(prog, Pid(1), 0, 0x1000, None).expect("image");
        let pid = sim.add_image(img);
        let s = sim.run(&[(0, pid)]).expect("runs");
        println!(
            "{:<13} cycles={:>5} ipc={:.3} mispredicts={:>3} fences_retired={:>3}",
            d.name(),
            s.cycles,
            s.ipc,
            s.mispredictions(),
            s.total_fences_retired()
        );
        if d == Defense::SpecCfiBase {
            for line in sim.trace_csv().lines().take(8) {
                println!("    {line}");
            }
        }
    }
}
