//! Text assembler and disassembler.
//!
//! One instruction per line, `#` starts a comment, `name:` defines a label
//! (optionally followed by an instruction on the same line). Mnemonics take
//! an optional `.1`/`.2`/`.4`/`.8` width suffix (MOVE, STORE) and `.s` for a
//! signed COMPARE. Operands are `cur_ptr`, `sp[N]` (alias `scratch_pad[N]`),
//! `data[N]`, decimal/hex immediates, or `KEY_NOT_FOUND`. Jumps take a label
//! or an absolute instruction index; `LOAD` takes `start len`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use thiserror::Error;

use super::{Instruction, Opcode, Operand, Program, Width};

/// Sentinel written to the result slot when a lookup misses.
pub const KEY_NOT_FOUND: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("label `{0}` resolves to a backward target")]
    BackwardLabel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub column: usize,
    pub kind: AsmErrorKind,
}

enum Target<'a> {
    Label(&'a str, usize, usize),
    Index(u64),
}

struct Pending<'a> {
    inst: Instruction,
    target: Option<Target<'a>>,
}

pub fn assemble(text: &str) -> Result<Program, AsmError> {
    let mut labels: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pending: Vec<Pending<'_>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let code = raw.split('#').next().unwrap_or("");
        let mut tokens = tokenize(code);

        if let Some(&(col, tok)) = tokens.first() {
            if let Some(name) = tok.strip_suffix(':') {
                if name.is_empty() || !is_ident(name) {
                    return Err(err(line_no, col, AsmErrorKind::Syntax(format!("bad label `{tok}`"))));
                }
                if labels.insert(name, pending.len()).is_some() {
                    return Err(err(line_no, col, AsmErrorKind::DuplicateLabel(name.to_string())));
                }
                tokens.remove(0);
            }
        }
        if tokens.is_empty() {
            continue;
        }
        pending.push(parse_instruction(line_no, &tokens)?);
    }

    let mut out = Vec::with_capacity(pending.len());
    for (idx, p) in pending.into_iter().enumerate() {
        let mut inst = p.inst;
        match p.target {
            Some(Target::Label(name, line, col)) => {
                let target =
                    *labels.get(name).ok_or_else(|| err(line, col, AsmErrorKind::UnresolvedLabel(name.to_string())))?;
                if target <= idx {
                    return Err(err(line, col, AsmErrorKind::BackwardLabel(name.to_string())));
                }
                inst.imm = target as u64;
            }
            Some(Target::Index(t)) => inst.imm = t,
            None => {}
        }
        out.push(inst);
    }
    Ok(Program::new(out))
}

fn err(line: usize, column: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, column, kind }
}

fn tokenize(code: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        let sep = c.is_whitespace() || c == ',';
        match (sep, start) {
            (true, Some(s)) => {
                out.push((s + 1, &code[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &code[s..]));
    }
    out
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_instruction<'a>(line: usize, tokens: &[(usize, &'a str)]) -> Result<Pending<'a>, AsmError> {
    let (col, head) = tokens[0];
    let mut parts = head.split('.');
    let name = parts.next().unwrap_or("");
    let opcode =
        Opcode::from_mnemonic(name).ok_or_else(|| err(line, col, AsmErrorKind::UnknownMnemonic(name.to_string())))?;
    let mut width = None;
    let mut signed = false;
    for suffix in parts {
        match suffix {
            "s" | "S" => signed = true,
            w => {
                let bytes: usize = w
                    .parse()
                    .ok()
                    .filter(|b| Width::from_bytes(*b).is_some())
                    .ok_or_else(|| syntax(line, col, format!("bad suffix `.{w}`")))?;
                width = Width::from_bytes(bytes);
            }
        }
    }
    let args = &tokens[1..];
    let expect = |n: usize| -> Result<(), AsmError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(syntax(line, col, format!("{} takes {n} operand(s), got {}", opcode, args.len())))
        }
    };

    let mut target = None;
    let mut inst = match opcode {
        Opcode::Load => {
            expect(2)?;
            let start = parse_number(line, args[0])?;
            let len = parse_number(line, args[1])?;
            let start = u16::try_from(start).map_err(|_| syntax(line, args[0].0, "window start too large".into()))?;
            Instruction::new(Opcode::Load, Operand::Data(start), Operand::None).with_imm(len)
        }
        _ if opcode.is_jump() => {
            expect(1)?;
            let (c, tok) = args[0];
            target = Some(if is_ident(tok) {
                Target::Label(tok, line, c)
            } else {
                Target::Index(parse_number(line, args[0])?)
            });
            Instruction::new(opcode, Operand::None, Operand::None)
        }
        Opcode::NextIter | Opcode::Return => {
            expect(0)?;
            Instruction::new(opcode, Operand::None, Operand::None)
        }
        Opcode::Not => {
            expect(1)?;
            let (a, imm) = parse_operand(line, args[0])?;
            Instruction::new(opcode, a, Operand::None).with_imm(imm.unwrap_or(0))
        }
        _ => {
            expect(2)?;
            let (a, ia) = parse_operand(line, args[0])?;
            let (b, ib) = parse_operand(line, args[1])?;
            if ia.is_some() && ib.is_some() {
                return Err(syntax(line, args[1].0, "at most one immediate operand".into()));
            }
            Instruction::new(opcode, a, b).with_imm(ia.or(ib).unwrap_or(0))
        }
    };
    if let Some(w) = width {
        inst = inst.with_width(w);
    }
    if signed {
        inst = inst.with_signed();
    }
    Ok(Pending { inst, target })
}

fn syntax(line: usize, column: usize, msg: String) -> AsmError {
    err(line, column, AsmErrorKind::Syntax(msg))
}

fn parse_operand(line: usize, (col, tok): (usize, &str)) -> Result<(Operand, Option<u64>), AsmError> {
    if tok.eq_ignore_ascii_case("cur_ptr") {
        return Ok((Operand::CurPtr, None));
    }
    if tok == "KEY_NOT_FOUND" {
        return Ok((Operand::Imm, Some(KEY_NOT_FOUND)));
    }
    if let Some((base, rest)) = tok.split_once('[') {
        let inner = rest.strip_suffix(']').ok_or_else(|| syntax(line, col, format!("unterminated `[` in `{tok}`")))?;
        let off: u16 = inner.parse().map_err(|_| syntax(line, col, format!("bad offset `{inner}`")))?;
        return match base {
            "sp" | "scratch_pad" => Ok((Operand::Sp(off), None)),
            "data" => Ok((Operand::Data(off), None)),
            _ => Err(syntax(line, col, format!("unknown register `{base}`"))),
        };
    }
    parse_number(line, (col, tok)).map(|v| (Operand::Imm, Some(v)))
}

fn parse_number(line: usize, (col, tok): (usize, &str)) -> Result<u64, AsmError> {
    let bad = || syntax(line, col, format!("bad number `{tok}`"));
    if let Some(hex) = tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16).map_err(|_| bad());
    }
    if let Some(neg) = tok.strip_prefix('-') {
        let v: i64 = neg.parse::<i64>().map_err(|_| bad())?;
        return Ok(v.wrapping_neg() as u64);
    }
    tok.parse().map_err(|_| bad())
}

/// Renders a program as assembler text. Jump targets get `L<index>` labels.
pub fn disassemble(program: &Program) -> String {
    let targets: alloc::collections::BTreeSet<usize> =
        program.instructions.iter().filter_map(|i| i.jump_target()).collect();
    let mut out = String::new();
    for (idx, inst) in program.instructions.iter().enumerate() {
        if targets.contains(&idx) {
            let _ = writeln!(out, "L{idx}:");
        }
        let _ = writeln!(out, "    {}", render(inst));
    }
    out
}

fn render(inst: &Instruction) -> String {
    let mut head = String::from(inst.opcode.mnemonic());
    if matches!(inst.opcode, Opcode::Move | Opcode::Store) && inst.flags.width() != Width::W8 {
        let _ = write!(head, ".{}", inst.flags.width().bytes());
    }
    if inst.flags.signed() {
        head.push_str(".s");
    }
    match inst.opcode {
        Opcode::Load => {
            let start = inst.a.offset();
            format!("{head} {start} {}", inst.imm)
        }
        op if op.is_jump() => format!("{head} L{}", inst.imm),
        Opcode::NextIter | Opcode::Return => head,
        _ => {
            let mut s = head;
            for op in [inst.a, inst.b] {
                if op != Operand::None {
                    s.push(' ');
                    s.push_str(&render_operand(op, inst.imm));
                }
            }
            s
        }
    }
}

fn render_operand(op: Operand, imm: u64) -> String {
    match op {
        Operand::None => String::new(),
        Operand::CurPtr => "cur_ptr".to_string(),
        Operand::Sp(o) => format!("sp[{o}]"),
        Operand::Data(o) => format!("data[{o}]"),
        Operand::Imm if imm == KEY_NOT_FOUND => "KEY_NOT_FOUND".to_string(),
        Operand::Imm if imm > 0xFFFF => format!("{imm:#x}"),
        Operand::Imm => format!("{imm}"),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::isa::validate;
    use proptest::prelude::*;

    /// The hash-bucket walk: compare the search key, stop on a hit or at the
    /// end of the chain, otherwise follow `next` at offset 40.
    pub(crate) const HASH_LOOKUP: &str = "\
# Read single node
Iter_Start:
    LOAD 0 48
    COMPARE scratch_pad[0] data[0]     # target key vs node key
    JUMP_EQ Return_success
    COMPARE 0 data[40]                 # end of chain?
    JUMP_EQ Return_fail
    MOVE cur_ptr data[40]
    NEXT_ITER
Return_fail:
    MOVE scratch_pad[8] KEY_NOT_FOUND
    RETURN
Return_success:
    MV scratch_pad[8] data[8]
    RETURN
";

    #[test]
    fn hash_lookup_shape() {
        let p = assemble(HASH_LOOKUP).unwrap();
        assert_eq!(p.len(), 11);
        assert_eq!(p.instructions[0], Instruction::load(0, 48));
        assert_eq!(p.instructions[1], Instruction::compare(Operand::Sp(0), Operand::Data(0)));
        assert_eq!(p.instructions[2], Instruction::jump(Opcode::JumpEq, 9));
        assert_eq!(p.instructions[3], Instruction::compare(Operand::Imm, Operand::Data(40)));
        assert_eq!(p.instructions[7], Instruction::mov_imm(Operand::Sp(8), KEY_NOT_FOUND));
        assert!(validate(&p).is_ok());
    }

    #[test]
    fn lone_return() {
        let p = assemble("RETURN").unwrap();
        assert_eq!(p.instructions, [Instruction::ret()]);
        assert!(validate(&p).is_ok());
    }

    #[test]
    fn duplicate_label() {
        let e = assemble("a:\nRETURN\na:\nRETURN").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::DuplicateLabel("a".into()));
        assert_eq!(e.line, 3);
        assert!(e.to_string().contains("`a`"));
    }

    #[test]
    fn error_positions() {
        let e = assemble("RETURN\n  FROB sp[0]").unwrap_err();
        assert_eq!((e.line, e.column), (2, 3));
        assert_eq!(e.kind, AsmErrorKind::UnknownMnemonic("FROB".into()));

        let e = assemble("JUMP_EQ nowhere\nRETURN").unwrap_err();
        assert_eq!((e.line, e.column), (1, 9));
        assert_eq!(e.kind, AsmErrorKind::UnresolvedLabel("nowhere".into()));

        let e = assemble("top:\nCOMPARE sp[0] 1\nJUMP_EQ top\nRETURN").unwrap_err();
        assert_eq!(e.kind, AsmErrorKind::BackwardLabel("top".into()));

        let e = assemble("MOVE sp[0 data[0]\nRETURN").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::Syntax(_)));
        let e = assemble("MOVE sp[0] 1 2").unwrap_err();
        assert!(matches!(e.kind, AsmErrorKind::Syntax(_)));
    }

    #[test]
    fn suffixes_and_numbers() {
        let p = assemble("MOVE.4 sp[0] data[1]\nCOMPARE.s sp[0] -1\nADD sp[0] 0x10\nRETURN").unwrap();
        assert_eq!(p.instructions[0].flags.width(), Width::W4);
        assert!(p.instructions[1].flags.signed());
        assert_eq!(p.instructions[1].imm, u64::MAX);
        assert_eq!(p.instructions[2].imm, 16);
    }

    #[test]
    fn disassembly_reassembles() {
        let p = assemble(HASH_LOOKUP).unwrap();
        let text = disassemble(&p);
        assert!(text.contains("LOAD 0 48"));
        assert!(text.contains("MOVE sp[8] KEY_NOT_FOUND"));
        assert_eq!(assemble(&text).unwrap(), p);
    }

    proptest! {
        #[test]
        fn round_trip_random(p in crate::isa::strategies::valid_program()) {
            prop_assert_eq!(assemble(&disassemble(&p)).unwrap(), p);
        }

        #[test]
        fn forward_progress(p in crate::isa::strategies::valid_program()) {
            // Every reachable path strictly increases the index until it
            // meets a terminal, so the longest path is bounded by the body.
            let n = p.len() - p.body_start();
            let lp = p.longest_path();
            prop_assert!(lp >= 1 && lp <= n);
            for (i, inst) in p.instructions.iter().enumerate() {
                if let Some(t) = inst.jump_target() {
                    prop_assert!(t > i);
                }
            }
        }
    }
}
