use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use super::{
    Instruction, Opcode, Operand, Program, ProgramForm, DEFAULT_SCRATCH_PAD_BYTES, MAX_LOAD_WINDOW, MAX_PROGRAM_LEN,
};

/// Bounds a program is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub scratch_pad_bytes: usize,
    pub max_instructions: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { scratch_pad_bytes: DEFAULT_SCRATCH_PAD_BYTES, max_instructions: MAX_PROGRAM_LEN }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    NoTerminal,
    TooLong { len: usize, max: usize },
    BackwardJump { target: usize },
    JumpOutOfRange { target: usize },
    LoadNotFirst,
    LoadWindow { start: u16, len: u64 },
    BadOperand { which: char },
    MultipleImmediates,
    StrayImmediate,
    BadFlags,
    ScratchBounds { offset: u16, width: usize },
    DataBounds { offset: u16, width: usize },
    FallsOffEnd,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::NoTerminal => write!(f, "no terminal instruction"),
            Rule::TooLong { len, max } => write!(f, "program has {len} instructions (max {max})"),
            Rule::BackwardJump { target } => write!(f, "backward jump to {target}"),
            Rule::JumpOutOfRange { target } => write!(f, "jump target {target} out of range"),
            Rule::LoadNotFirst => write!(f, "LOAD only allowed at index 0"),
            Rule::LoadWindow { start, len } => {
                write!(f, "LOAD window start {start} len {len} (need 0 < len <= {MAX_LOAD_WINDOW})")
            }
            Rule::BadOperand { which } => write!(f, "operand {which} not allowed for opcode"),
            Rule::MultipleImmediates => write!(f, "more than one immediate operand"),
            Rule::StrayImmediate => write!(f, "imm set on an instruction that does not use it"),
            Rule::BadFlags => write!(f, "flags not allowed for opcode"),
            Rule::ScratchBounds { offset, width } => {
                write!(f, "scratch pad access [{offset}, +{width}) out of bounds")
            }
            Rule::DataBounds { offset, width } => {
                write!(f, "data access [{offset}, +{width}) exceeds {MAX_LOAD_WINDOW} bytes")
            }
            Rule::FallsOffEnd => write!(f, "control falls off the end without NEXT_ITER/RETURN"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending instruction, when the rule is local to one.
    pub index: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{} at index {i}", self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, pred: impl Fn(&Rule) -> bool) -> bool {
        self.violations.iter().any(|v| pred(&v.rule))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate(program: &Program) -> ValidationReport {
    validate_with(program, &Limits::default())
}

pub fn validate_with(program: &Program, limits: &Limits) -> ValidationReport {
    let mut out = Vec::new();
    let insts = &program.instructions;
    let n = insts.len();

    if n > limits.max_instructions {
        out.push(Violation { index: None, rule: Rule::TooLong { len: n, max: limits.max_instructions } });
    }
    if !insts.iter().any(|i| i.opcode.is_terminal()) {
        out.push(Violation { index: None, rule: Rule::NoTerminal });
    }

    let deployable = program.form() == ProgramForm::Deployable;
    for (idx, inst) in insts.iter().enumerate() {
        check_instruction(idx, inst, n, deployable, limits, &mut out);
    }

    check_paths(program, &mut out);
    ValidationReport { violations: out }
}

fn check_instruction(
    idx: usize,
    inst: &Instruction,
    len: usize,
    deployable: bool,
    limits: &Limits,
    out: &mut Vec<Violation>,
) {
    let mut push = |rule| out.push(Violation { index: Some(idx), rule });
    let (a, b) = (inst.a, inst.b);
    let op = inst.opcode;

    let imm_operands = [a, b].iter().filter(|o| **o == Operand::Imm).count();
    if imm_operands > 1 {
        push(Rule::MultipleImmediates);
    }

    let a_ok = match op {
        Opcode::Load | Opcode::Store => matches!(a, Operand::Data(_)),
        Opcode::Move | Opcode::Not => a.is_writable(),
        _ if op.is_alu_binary() => a.is_writable(),
        Opcode::Compare => a.is_readable(),
        _ => a == Operand::None,
    };
    let b_ok = match op {
        Opcode::Store | Opcode::Move | Opcode::Compare => b.is_readable(),
        _ if op.is_alu_binary() => b.is_readable(),
        _ => b == Operand::None,
    };
    if !a_ok {
        push(Rule::BadOperand { which: 'a' });
    }
    if !b_ok {
        push(Rule::BadOperand { which: 'b' });
    }

    let uses_imm = op == Opcode::Load || op.is_jump() || imm_operands > 0;
    if !uses_imm && inst.imm != 0 {
        push(Rule::StrayImmediate);
    }

    let width_ok = matches!(op, Opcode::Move | Opcode::Store) || inst.flags.width().bytes() == 8;
    let sign_ok = op == Opcode::Compare || !inst.flags.signed();
    if !width_ok || !sign_ok {
        push(Rule::BadFlags);
    }

    match op {
        Opcode::Load => {
            if idx != 0 {
                push(Rule::LoadNotFirst);
            }
            if let Operand::Data(start) = a {
                if inst.imm == 0 || inst.imm > MAX_LOAD_WINDOW as u64 {
                    push(Rule::LoadWindow { start, len: inst.imm });
                }
            }
        }
        _ if op.is_jump() => {
            let target = inst.imm as usize;
            if inst.imm > usize::MAX as u64 || target >= len {
                push(Rule::JumpOutOfRange { target });
            } else if target <= idx {
                push(Rule::BackwardJump { target });
            }
        }
        _ => {
            let width = inst.access_width();
            for operand in [a, b] {
                match operand {
                    Operand::Sp(o) if o as usize + width > limits.scratch_pad_bytes => {
                        push(Rule::ScratchBounds { offset: o, width })
                    }
                    // Source-form offsets are field offsets; the analysis
                    // bounds them. STORE targets memory, not the register.
                    Operand::Data(o) if deployable && op != Opcode::Store && o as usize + width > MAX_LOAD_WINDOW => {
                        push(Rule::DataBounds { offset: o, width })
                    }
                    _ => {}
                }
            }
        }
    }
}

/// Every instruction reachable from the body start must eventually reach a
/// terminal without running past the last instruction.
fn check_paths(program: &Program, out: &mut Vec<Violation>) {
    let insts = &program.instructions;
    let n = insts.len();
    let start = program.body_start();
    if start >= n {
        return;
    }
    let mut reachable = vec![false; n];
    reachable[start] = true;
    for i in start..n {
        if !reachable[i] {
            continue;
        }
        let inst = &insts[i];
        if inst.opcode.is_terminal() {
            continue;
        }
        if let Some(t) = inst.jump_target() {
            if t > i && t < n {
                reachable[t] = true;
            }
        }
        if i + 1 < n {
            reachable[i + 1] = true;
        } else {
            out.push(Violation { index: Some(i), rule: Rule::FallsOffEnd });
        }
    }
}
