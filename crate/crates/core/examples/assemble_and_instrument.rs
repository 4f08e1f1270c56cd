//! Assemble a small program, add CFI labels, then rewrite it with retpoline
//! thunks. Prints each stage.

use speccfi::asm::{assemble, to_asm, validate_cfi, CfiMode};
use speccfi::config::FenceKind;
use speccfi::instrument::{instrument_with, transform_retpoline};

const SRC: &str = "\
.entry main
.func add1 int(int)
.func dbl int(int)
main:
  li r1, 5
  li r2, add1
  call *r2
  li r2, dbl
  call *r2
  halt
add1:
  add r1, r1, 1
  ret
dbl:
  add r1, r1, r1
  ret
";

fn main() {
    let p = assemble(SRC, CfiMode::Coarse).expect("assembles");
    println!("== original ({} instructions)\n{}", p.len(), to_asm(&p));

    let (q, map) = instrument_with(&p, CfiMode::Fine, None).expect("labels assign");
    println!("== fine-grained labels ({} instructions)\n{}", q.len(), to_asm(&q));
    println!("label map: {map:?}");
    let diags = validate_cfi(&q, CfiMode::Fine);
    println!("diagnostics: {}", diags.len());

    let r = transform_retpoline(&p, FenceKind::Strict);
    println!("== retpoline ({} instructions)\n{}", r.len(), to_asm(&r));
}
