//! Text assembler, pretty-printer and CFI validator.
//!
//! Syntax, one instruction per line:
//!
//! ```text
//! ; comment
//! .entry main            ; entry symbol (defaults to `main`, else index 0)
//! .func handler int(int) ; declare an address-taken function and its signature
//! .site disp int(int)    ; expected target signature of the site labeled `disp`
//! .org 0x24              ; pad with `nop` up to this instruction index
//! main:
//!     li r1, handler
//!     call *r1, L1
//!     halt
//! handler:
//!     cfi_lbl L1
//!     ret
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::isa::{LabelId, Mem, Program, Reg, Src, Value};
use crate::isa::{Instruction, Kind};

/// Label discipline of the source being assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfiMode {
    /// Labels on indirect sites may be omitted.
    Coarse,
    /// Every indirect call/jmp must carry a label.
    Fine,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: indirect branch is missing a CFI label")]
    MissingLabel { line: usize },
    #[error("unresolved symbol `{name}`")]
    UnresolvedSymbol { name: String },
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    AsmError::Syntax {
        line,
        msg: msg.into(),
    }
}

/// Target reference before symbol resolution.
#[derive(Debug, Clone)]
enum Ref {
    Index(usize),
    Name(String),
}

#[derive(Debug)]
struct Pending {
    line: usize,
    instr: Instruction,
    target: Option<Ref>,
}

/// Assembles `source` into a [`Program`].
pub fn assemble(source: &str, mode: CfiMode) -> Result<Program, AsmError> {
    let mut pending: Vec<Pending> = Vec::new();
    let mut symbols: BTreeMap<String, usize> = BTreeMap::new();
    let mut functions: BTreeMap<String, Option<String>> = BTreeMap::new();
    let mut site_sigs: BTreeMap<String, String> = BTreeMap::new();
    let mut entry_sym: Option<(usize, String)> = None;

    for (lineno, raw) in source.lines().enumerate() {
        let line = lineno + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        // Leading `name:` labels, possibly several.
        while let Some(colon) = text.find(':') {
            let name = text[..colon].trim();
            if !is_ident(name) {
                break;
            }
            if symbols.insert(name.to_string(), pending.len()).is_some() {
                return Err(syntax(line, format!("duplicate symbol `{name}`")));
            }
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        if let Some(directive) = text.strip_prefix('.') {
            let mut parts = directive.split_whitespace();
            match parts.next() {
                Some("org") => {
                    let arg = parts.next().ok_or_else(|| syntax(line, ".org needs an index"))?;
                    let target = parse_int(arg)
                        .filter(|v| *v >= 0)
                        .ok_or_else(|| syntax(line, format!("bad .org index `{arg}`")))?
                        as usize;
                    if target < pending.len() {
                        return Err(syntax(line, format!(".org {target:#x} moves backwards")));
                    }
                    // Symbols attached to the current position move with the padding.
                    let here = pending.len();
                    for v in symbols.values_mut() {
                        if *v == here {
                            *v = target;
                        }
                    }
                    while pending.len() < target {
                        pending.push(Pending {
                            line,
                            instr: Instruction::Nop,
                            target: None,
                        });
                    }
                }
                Some("func") => {
                    let name = parts.next().ok_or_else(|| syntax(line, ".func needs a name"))?;
                    if !is_ident(name) {
                        return Err(syntax(line, format!("bad function name `{name}`")));
                    }
                    let sig = parts.next().map(str::to_string);
                    functions.insert(name.to_string(), sig);
                }
                Some("site") => {
                    let (Some(name), Some(sig)) = (parts.next(), parts.next()) else {
                        return Err(syntax(line, ".site needs a symbol and a signature"));
                    };
                    site_sigs.insert(name.to_string(), sig.to_string());
                }
                Some("entry") => {
                    let name = parts.next().ok_or_else(|| syntax(line, ".entry needs a symbol"))?;
                    entry_sym = Some((line, name.to_string()));
                }
                other => {
                    return Err(syntax(
                        line,
                        format!("unknown directive `.{}`", other.unwrap_or("")),
                    ))
                }
            }
            continue;
        }
        let (instr, target) = parse_instruction(text, line, mode)?;
        pending.push(Pending {
            line,
            instr,
            target,
        });
    }

    if pending.is_empty() {
        return Err(syntax(0, "empty program"));
    }
    let n = pending.len();
    for (name, &idx) in &symbols {
        if idx >= n {
            return Err(syntax(0, format!("symbol `{name}` labels the end of the program")));
        }
    }

    let resolve = |r: &Ref, line: usize| -> Result<usize, AsmError> {
        match r {
            Ref::Index(i) if *i < n => Ok(*i),
            Ref::Index(i) => Err(syntax(line, format!("target {i:#x} out of range"))),
            Ref::Name(name) => symbols
                .get(name)
                .copied()
                .ok_or_else(|| AsmError::UnresolvedSymbol { name: name.clone() }),
        }
    };

    let mut instructions = Vec::with_capacity(n);
    for p in &pending {
        let instr = match &p.target {
            None => p.instr,
            Some(r) => {
                let t = resolve(r, p.line)?;
                p.instr.map_code_refs(|_| t)
            }
        };
        instructions.push(instr);
    }
    for name in functions.keys().chain(site_sigs.keys()) {
        if !symbols.contains_key(name) {
            return Err(AsmError::UnresolvedSymbol { name: name.clone() });
        }
    }
    let entry = match entry_sym {
        Some((line, name)) => resolve(&Ref::Name(name), line)?,
        None => symbols.get("main").copied().unwrap_or(0),
    };
    Ok(Program {
        instructions,
        symbols,
        functions,
        site_sigs,
        entry,
    })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_int(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_reg(s: &str, line: usize) -> Result<Reg, AsmError> {
    let s = s.trim();
    let idx = match s {
        "sp" => Some(15),
        _ => s.strip_prefix('r').and_then(|d| d.parse::<u8>().ok()),
    };
    idx.and_then(Reg::new)
        .ok_or_else(|| syntax(line, format!("bad register `{s}`")))
}

fn parse_label(s: &str, line: usize) -> Result<LabelId, AsmError> {
    let s = s.trim();
    s.strip_prefix('L')
        .and_then(|d| d.parse::<u32>().ok())
        .map(LabelId)
        .ok_or_else(|| syntax(line, format!("bad CFI label `{s}`")))
}

fn parse_mem(s: &str, line: usize) -> Result<Mem, AsmError> {
    let s = s.trim();
    let open = s.strip_prefix('[').ok_or_else(|| syntax(line, format!("bad memory operand `{s}`")))?;
    let close = open
        .find(']')
        .ok_or_else(|| syntax(line, format!("unterminated memory operand `{s}`")))?;
    let inner = open[..close].trim();
    let post = open[close + 1..].trim();
    let (base, disp) = match inner.find(['+', '-']) {
        Some(pos) => {
            let disp = parse_int(&inner[pos..].replace(' ', ""))
                .ok_or_else(|| syntax(line, format!("bad displacement in `{s}`")))?;
            (parse_reg(&inner[..pos], line)?, disp)
        }
        None => (parse_reg(inner, line)?, 0),
    };
    let post_inc = if post.is_empty() {
        0
    } else {
        parse_int(post).ok_or_else(|| syntax(line, format!("bad post-increment in `{s}`")))?
    };
    Ok(Mem {
        base,
        disp,
        post_inc,
    })
}

fn split_operands(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        return Vec::new();
    }
    s.split(',').map(str::trim).collect()
}

fn parse_target(s: &str, line: usize) -> Result<Ref, AsmError> {
    let s = s.trim();
    if let Some(v) = parse_int(s) {
        if v < 0 {
            return Err(syntax(line, format!("negative target `{s}`")));
        }
        return Ok(Ref::Index(v as usize));
    }
    if is_ident(s) {
        Ok(Ref::Name(s.to_string()))
    } else {
        Err(syntax(line, format!("bad branch target `{s}`")))
    }
}

fn parse_src(s: &str, line: usize) -> Result<Src, AsmError> {
    if let Some(v) = parse_int(s) {
        Ok(Src::Imm(v))
    } else {
        Ok(Src::Reg(parse_reg(s, line)?))
    }
}

fn expect_arity(ops: &[&str], n: usize, mnemonic: &str, line: usize) -> Result<(), AsmError> {
    if ops.len() == n {
        Ok(())
    } else {
        Err(syntax(
            line,
            format!("`{mnemonic}` takes {n} operand(s), got {}", ops.len()),
        ))
    }
}

fn parse_instruction(
    text: &str,
    line: usize,
    mode: CfiMode,
) -> Result<(Instruction, Option<Ref>), AsmError> {
    let (mnemonic, rest) = match text.find(char::is_whitespace) {
        Some(pos) => (&text[..pos], text[pos..].trim()),
        None => (text, ""),
    };
    let mnemonic = mnemonic.to_ascii_lowercase();
    let ops = split_operands(rest);
    let m = mnemonic.as_str();

    let indirect = |ops: &[&str], call: bool| -> Result<Instruction, AsmError> {
        if ops.is_empty() || ops.len() > 2 {
            return Err(syntax(line, format!("`{m}` takes `*rN[, LN]`")));
        }
        let reg = parse_reg(ops[0].trim_start_matches('*'), line)?;
        let label = match ops.get(1) {
            Some(l) => Some(parse_label(l, line)?),
            None if mode == CfiMode::Fine => return Err(AsmError::MissingLabel { line }),
            None => None,
        };
        Ok(if call {
            Instruction::CallIndirect { reg, label }
        } else {
            Instruction::JmpIndirect { reg, label }
        })
    };

    let instr = match m {
        "li" => {
            expect_arity(&ops, 2, m, line)?;
            let rd = parse_reg(ops[0], line)?;
            match parse_int(ops[1]) {
                Some(v) => Instruction::LoadImm {
                    rd,
                    value: Value::Const(v),
                },
                None => {
                    let name = ops[1].trim_start_matches('@');
                    if !is_ident(name) {
                        return Err(syntax(line, format!("bad immediate `{}`", ops[1])));
                    }
                    return Ok((
                        Instruction::LoadImm {
                            rd,
                            value: Value::Code(0),
                        },
                        Some(Ref::Name(name.to_string())),
                    ));
                }
            }
        }
        "load" => {
            expect_arity(&ops, 2, m, line)?;
            Instruction::Load {
                rd: parse_reg(ops[0], line)?,
                mem: parse_mem(ops[1], line)?,
            }
        }
        "store" => {
            expect_arity(&ops, 2, m, line)?;
            Instruction::Store {
                rs: parse_reg(ops[0], line)?,
                mem: parse_mem(ops[1], line)?,
            }
        }
        "add" | "addi" | "shl" => {
            let (rd, rs, src) = match ops.len() {
                2 => {
                    let rd = parse_reg(ops[0], line)?;
                    (rd, rd, parse_src(ops[1], line)?)
                }
                3 => (
                    parse_reg(ops[0], line)?,
                    parse_reg(ops[1], line)?,
                    parse_src(ops[2], line)?,
                ),
                n => return Err(syntax(line, format!("`{m}` takes 2 or 3 operands, got {n}"))),
            };
            if m == "shl" {
                Instruction::Shl { rd, rs, src }
            } else {
                Instruction::Add { rd, rs, src }
            }
        }
        "cmp" | "cmpi" => {
            expect_arity(&ops, 2, m, line)?;
            let ra = parse_reg(ops[0], line)?;
            match parse_int(ops[1]) {
                Some(imm) => Instruction::CmpImm { ra, imm },
                None if m == "cmp" => Instruction::Cmp {
                    ra,
                    rb: parse_reg(ops[1], line)?,
                },
                None => return Err(syntax(line, format!("bad immediate `{}`", ops[1]))),
            }
        }
        "jz" | "jnz" | "jmp" | "call" | "jmpi" | "calli" => {
            let is_call = m.starts_with("call");
            if m.ends_with('i') || ops.first().is_some_and(|o| o.starts_with('*')) {
                indirect(&ops, is_call)?
            } else {
                expect_arity(&ops, 1, m, line)?;
                let target = parse_target(ops[0], line)?;
                let instr = match m {
                    "jz" => Instruction::Jz { target: 0 },
                    "jnz" => Instruction::Jnz { target: 0 },
                    "jmp" => Instruction::JmpDirect { target: 0 },
                    _ => Instruction::CallDirect { target: 0 },
                };
                return Ok((instr, Some(target)));
            }
        }
        "ret" => {
            expect_arity(&ops, 0, m, line)?;
            Instruction::Ret
        }
        "cfi_lbl" => match ops.len() {
            0 => Instruction::CfiLbl { label: None },
            1 => Instruction::CfiLbl {
                label: Some(parse_label(ops[0], line)?),
            },
            n => return Err(syntax(line, format!("`cfi_lbl` takes 0 or 1 operand, got {n}"))),
        },
        "lfence" | "fence.strict" => {
            expect_arity(&ops, 0, m, line)?;
            Instruction::FenceStrict
        }
        "lfence.lsq" | "fence.relaxed" => {
            expect_arity(&ops, 0, m, line)?;
            Instruction::FenceRelaxed
        }
        "clflush" => {
            expect_arity(&ops, 1, m, line)?;
            Instruction::Clflush {
                mem: parse_mem(ops[0], line)?,
            }
        }
        "nop" => {
            expect_arity(&ops, 0, m, line)?;
            Instruction::Nop
        }
        "halt" => {
            expect_arity(&ops, 0, m, line)?;
            Instruction::Halt
        }
        _ => return Err(syntax(line, format!("unknown mnemonic `{m}`"))),
    };
    Ok((instr, None))
}

fn fmt_mem(mem: &Mem) -> String {
    let mut s = if mem.disp == 0 {
        format!("[{}]", mem.base)
    } else if mem.disp > 0 {
        format!("[{}+{}]", mem.base, mem.disp)
    } else {
        format!("[{}{}]", mem.base, mem.disp)
    };
    if mem.post_inc != 0 {
        let _ = write!(s, "{:+}", mem.post_inc);
    }
    s
}

fn fmt_src(src: &Src) -> String {
    match src {
        Src::Reg(r) => r.to_string(),
        Src::Imm(v) => v.to_string(),
    }
}

/// Formats one instruction; `target` renders code references.
pub fn format_instruction(instr: &Instruction, target: &dyn Fn(usize) -> String) -> String {
    let m = instr.kind().mnemonic();
    let label_suffix = |l: Option<LabelId>| l.map(|l| format!(", {l}")).unwrap_or_default();
    match *instr {
        Instruction::LoadImm { rd, value } => match value {
            Value::Const(v) => format!("{m} {rd}, {v}"),
            Value::Code(i) => format!("{m} {rd}, {}", target(i)),
        },
        Instruction::Load { rd, mem } => format!("{m} {rd}, {}", fmt_mem(&mem)),
        Instruction::Store { rs, mem } => format!("{m} {rs}, {}", fmt_mem(&mem)),
        Instruction::Add { rd, rs, src } | Instruction::Shl { rd, rs, src } => {
            format!("{m} {rd}, {rs}, {}", fmt_src(&src))
        }
        Instruction::Cmp { ra, rb } => format!("{m} {ra}, {rb}"),
        Instruction::CmpImm { ra, imm } => format!("{m} {ra}, {imm}"),
        Instruction::Jz { target: t }
        | Instruction::Jnz { target: t }
        | Instruction::JmpDirect { target: t }
        | Instruction::CallDirect { target: t } => format!("{m} {}", target(t)),
        Instruction::JmpIndirect { reg, label } => format!("jmp *{reg}{}", label_suffix(label)),
        Instruction::CallIndirect { reg, label } => format!("call *{reg}{}", label_suffix(label)),
        Instruction::CfiLbl { label } => match label {
            Some(l) => format!("{m} {l}"),
            None => m.to_string(),
        },
        Instruction::Clflush { mem } => format!("{m} {}", fmt_mem(&mem)),
        Instruction::Ret
        | Instruction::FenceStrict
        | Instruction::FenceRelaxed
        | Instruction::Nop
        | Instruction::Halt => m.to_string(),
    }
}

/// Pretty-prints `program` as assembly source that reassembles to the same
/// program.
pub fn to_asm(program: &Program) -> String {
    let mut out = String::new();
    let entry_name = program.symbols_at(program.entry).next().map(str::to_string);
    match &entry_name {
        Some(name) => {
            let _ = writeln!(out, ".entry {name}");
        }
        None if program.entry != 0 => {
            // Entry without a symbol: synthesize one.
            let _ = writeln!(out, ".entry __entry");
        }
        None => {}
    }
    for (name, sig) in &program.functions {
        match sig {
            Some(sig) => {
                let _ = writeln!(out, ".func {name} {sig}");
            }
            None => {
                let _ = writeln!(out, ".func {name}");
            }
        }
    }
    for (name, sig) in &program.site_sigs {
        let _ = writeln!(out, ".site {name} {sig}");
    }
    let target = |i: usize| -> String {
        program
            .symbols_at(i)
            .next()
            .map(str::to_string)
            .unwrap_or_else(|| format!("{i:#x}"))
    };
    for (i, instr) in program.instructions.iter().enumerate() {
        if i == program.entry && entry_name.is_none() && program.entry != 0 {
            let _ = writeln!(out, "__entry:");
        }
        for name in program.symbols_at(i) {
            let _ = writeln!(out, "{name}:");
        }
        let _ = writeln!(out, "    {}", format_instruction(instr, &target));
    }
    out
}

/// Canonical line-oriented form: `index kind operands [label]`.
pub fn to_canonical(program: &Program) -> String {
    let mut out = String::new();
    let target = |i: usize| format!("@{i}");
    for (i, instr) in program.instructions.iter().enumerate() {
        let text = format_instruction(instr, &target);
        let operands = match text.split_once(' ') {
            Some((_, ops)) => ops.to_string(),
            None => String::new(),
        };
        let m = instr.kind().mnemonic();
        if operands.is_empty() {
            let _ = writeln!(out, "{i} {m}");
        } else {
            let _ = writeln!(out, "{i} {m} {operands}");
        }
    }
    out
}

/// Severity of a CFI diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Error,
    Warning,
}

/// Finding reported by [`validate_cfi`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub index: usize,
    pub message: String,
}

/// Indices of address-taken code: declared functions plus every symbol
/// loaded as a code address by `li`.
pub fn address_taken(program: &Program) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = program
        .functions
        .keys()
        .filter_map(|name| program.symbol(name))
        .collect();
    for instr in &program.instructions {
        if let Instruction::LoadImm {
            value: Value::Code(i),
            ..
        } = instr
        {
            set.insert(*i);
        }
    }
    set
}

/// Checks that every indirect-branch target starts with `cfi_lbl`, and warns
/// about markers whose label no indirect site carries.
pub fn validate_cfi(program: &Program, mode: CfiMode) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for idx in address_taken(program) {
        let starts_with_marker = matches!(
            program.instructions.get(idx),
            Some(Instruction::CfiLbl { .. })
        );
        if !starts_with_marker {
            let name = program
                .symbols_at(idx)
                .next()
                .map(str::to_string)
                .unwrap_or_else(|| format!("{idx:#x}"));
            diags.push(Diagnostic {
                severity: Severity::Error,
                index: idx,
                message: format!("indirect target `{name}` does not begin with cfi_lbl"),
            });
        }
    }
    let site_labels: BTreeSet<LabelId> = program
        .instructions
        .iter()
        .filter(|i| i.is_indirect_branch())
        .map(|i| crate::isa::effective_label(i.cfi_label()))
        .collect();
    for (idx, instr) in program.instructions.iter().enumerate() {
        if let Instruction::CfiLbl { label } = instr {
            let label = crate::isa::effective_label(*label);
            // Coarse code may leave markers unlabeled; those match any unlabeled site.
            let referenced = site_labels.contains(&label)
                || (mode == CfiMode::Coarse && label.is_none() && !site_labels.is_empty());
            if !referenced {
                diags.push(Diagnostic {
                    severity: Severity::Warning,
                    index: idx,
                    message: format!("cfi_lbl {label} is never targeted by an indirect branch"),
                });
            }
        }
    }
    diags
}

/// Count of instructions of a given kind, by mnemonic.
pub fn count_mnemonic(program: &Program, kind: Kind) -> usize {
    program.count_kind(kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_program() {
        let p = assemble("cfi_lbl L1\nhalt\n", CfiMode::Fine).unwrap();
        assert_eq!(
            p.instructions,
            vec![
                Instruction::CfiLbl {
                    label: Some(LabelId(1))
                },
                Instruction::Halt
            ]
        );
    }

    #[test]
    fn fine_mode_requires_labels() {
        let err = assemble("main:\n  li r1, 3\n  calli *r1\n  halt\n", CfiMode::Fine).unwrap_err();
        assert_eq!(err, AsmError::MissingLabel { line: 3 });
        assert!(assemble("calli *r1\nhalt", CfiMode::Coarse).is_ok());
    }

    #[test]
    fn unresolved_symbol() {
        let err = assemble("jmp nowhere\n", CfiMode::Coarse).unwrap_err();
        assert_eq!(
            err,
            AsmError::UnresolvedSymbol {
                name: "nowhere".into()
            }
        );
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = assemble("nop\n  frob r1\n", CfiMode::Coarse).unwrap_err();
        assert!(matches!(err, AsmError::Syntax { line: 2, .. }));
        let err = assemble("nop\nadd r1\n", CfiMode::Coarse).unwrap_err();
        assert!(matches!(err, AsmError::Syntax { line: 2, .. }));
        let err = assemble("load r16, [r1]\n", CfiMode::Coarse).unwrap_err();
        assert!(matches!(err, AsmError::Syntax { line: 1, .. }));
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let p = assemble("; header\n\n  nop ; trailing\n\nhalt\n", CfiMode::Coarse).unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn org_pads_and_moves_symbols() {
        let p = assemble("nop\n.org 0x4\nf:\n  ret\n", CfiMode::Coarse).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.symbol("f"), Some(4));
        let p = assemble("f:\n.org 3\n  ret\n", CfiMode::Coarse).unwrap();
        assert_eq!(p.symbol("f"), Some(3));
    }

    #[test]
    fn memory_operands() {
        let p = assemble(
            "load r1, [r2+8]\nload r1, [r2 - 16]\nload r14, [r15]+8\nstore r3, [r4]\n",
            CfiMode::Coarse,
        )
        .unwrap();
        assert_eq!(
            p.instructions[1],
            Instruction::Load {
                rd: Reg::new(1).unwrap(),
                mem: Mem::new(Reg::new(2).unwrap(), -16)
            }
        );
        assert_eq!(
            p.instructions[2],
            Instruction::Load {
                rd: Reg::SCRATCH,
                mem: Mem {
                    base: Reg::SP,
                    disp: 0,
                    post_inc: 8
                }
            }
        );
    }

    #[test]
    fn validate_flags_unlabeled_targets_and_unused_markers() {
        let src = ".func f\nmain:\n  li r1, f\n  call *r1, L1\n  halt\nf:\n  cfi_lbl L1\n  ret\n";
        let p = assemble(src, CfiMode::Fine).unwrap();
        assert!(validate_cfi(&p, CfiMode::Fine).is_empty());

        let src = ".func f\nmain:\n  li r1, f\n  call *r1, L1\n  halt\nf:\n  ret\n";
        let p = assemble(src, CfiMode::Fine).unwrap();
        let d = validate_cfi(&p, CfiMode::Fine);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Error);

        let src = "main:\n  halt\n  cfi_lbl L9\n  ret\n";
        let p = assemble(src, CfiMode::Fine).unwrap();
        let d = validate_cfi(&p, CfiMode::Fine);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
    }

    #[test]
    fn canonical_form() {
        let p = assemble("main:\n  li r1, f\n  call *r1, L1\n  halt\nf:\n  cfi_lbl L1\n  ret\n", CfiMode::Fine)
            .unwrap();
        assert_eq!(
            to_canonical(&p),
            "0 li r1, @3\n1 calli *r1, L1\n2 halt\n3 cfi_lbl L1\n4 ret\n"
        );
    }
}
