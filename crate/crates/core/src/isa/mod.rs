//! The traversal instruction set.
//!
//! A traversal program is the body of one iterator step: an optional `LOAD`
//! at index 0 fetches a window of bytes at `cur_ptr` into the `data`
//! register vector, and the rest of the body computes on `cur_ptr`, the
//! scratch pad and `data` until it reaches `NEXT_ITER` (go round again with
//! the updated `cur_ptr`) or `RETURN` (finish and hand back the scratch pad).
//!
//! Control flow only ever moves forward inside a body. `NEXT_ITER` is the
//! single backward transfer, which keeps the per-iteration instruction count
//! bounded and statically computable.

pub(crate) mod asm;
mod codec;
#[cfg(test)]
pub(crate) mod strategies;
mod validate;

pub use asm::{assemble, disassemble, AsmError, AsmErrorKind, KEY_NOT_FOUND};
pub use codec::{decode, encode, DecodeError, INSTRUCTION_BYTES};
pub use validate::{validate, validate_with, Limits, Rule, ValidationReport, Violation};

use alloc::vec::Vec;
use core::fmt;

/// Largest window a single `LOAD` may fetch, in bytes. Also the size of the
/// `data` register vector.
pub const MAX_LOAD_WINDOW: usize = 256;

/// Largest program, in instructions.
pub const MAX_PROGRAM_LEN: usize = 256;

/// Default scratch pad size in bytes.
pub const DEFAULT_SCRATCH_PAD_BYTES: usize = 4096;

/// Width of ALU and COMPARE operands, in bytes.
pub const WORD_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    Load = 0x01,
    Store = 0x02,
    Add = 0x03,
    Sub = 0x04,
    Mul = 0x05,
    Div = 0x06,
    And = 0x07,
    Or = 0x08,
    Not = 0x09,
    Move = 0x0A,
    Compare = 0x0B,
    JumpEq = 0x0C,
    JumpNeq = 0x0D,
    JumpLt = 0x0E,
    JumpGt = 0x0F,
    JumpLe = 0x10,
    NextIter = 0x11,
    JumpGe = 0x12,
    Return = 0x13,
}

impl Opcode {
    pub const ALL: [Opcode; 19] = [
        Opcode::Load,
        Opcode::Store,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::And,
        Opcode::Or,
        Opcode::Not,
        Opcode::Move,
        Opcode::Compare,
        Opcode::JumpEq,
        Opcode::JumpNeq,
        Opcode::JumpLt,
        Opcode::JumpGt,
        Opcode::JumpLe,
        Opcode::NextIter,
        Opcode::JumpGe,
        Opcode::Return,
    ];

    pub fn from_byte(byte: u8) -> Option<Opcode> {
        Opcode::ALL.iter().copied().find(|op| *op as u8 == byte)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Div => "DIV",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Not => "NOT",
            Opcode::Move => "MOVE",
            Opcode::Compare => "COMPARE",
            Opcode::JumpEq => "JUMP_EQ",
            Opcode::JumpNeq => "JUMP_NEQ",
            Opcode::JumpLt => "JUMP_LT",
            Opcode::JumpGt => "JUMP_GT",
            Opcode::JumpLe => "JUMP_LE",
            Opcode::JumpGe => "JUMP_GE",
            Opcode::NextIter => "NEXT_ITER",
            Opcode::Return => "RETURN",
        }
    }

    pub fn from_mnemonic(text: &str) -> Option<Opcode> {
        if text.eq_ignore_ascii_case("MV") {
            return Some(Opcode::Move);
        }
        Opcode::ALL.iter().copied().find(|op| op.mnemonic().eq_ignore_ascii_case(text))
    }

    pub fn is_jump(self) -> bool {
        matches!(
            self,
            Opcode::JumpEq | Opcode::JumpNeq | Opcode::JumpLt | Opcode::JumpGt | Opcode::JumpLe | Opcode::JumpGe
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Opcode::NextIter | Opcode::Return)
    }

    /// Two-operand arithmetic/logic: `a = a <op> b`.
    pub fn is_alu_binary(self) -> bool {
        matches!(self, Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div | Opcode::And | Opcode::Or)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Comparison outcome latched by `COMPARE` and consumed by `JUMP_*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Cond {
    Lt,
    #[default]
    Eq,
    Gt,
}

impl Cond {
    /// Whether a jump with this opcode is taken under the latched flag.
    pub fn satisfies(self, jump: Opcode) -> bool {
        match jump {
            Opcode::JumpEq => self == Cond::Eq,
            Opcode::JumpNeq => self != Cond::Eq,
            Opcode::JumpLt => self == Cond::Lt,
            Opcode::JumpGt => self == Cond::Gt,
            Opcode::JumpLe => self != Cond::Gt,
            Opcode::JumpGe => self != Cond::Lt,
            _ => false,
        }
    }
}

/// An instruction operand.
///
/// `Sp` and `Data` carry a byte offset into the scratch pad or the `data`
/// register vector. `Imm` stands for the instruction's 64-bit `imm` word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Operand {
    #[default]
    None,
    CurPtr,
    Sp(u16),
    Data(u16),
    Imm,
}

impl Operand {
    pub(crate) fn kind_byte(self) -> u8 {
        match self {
            Operand::None => 0,
            Operand::CurPtr => 1,
            Operand::Sp(_) => 2,
            Operand::Data(_) => 3,
            Operand::Imm => 4,
        }
    }

    pub(crate) fn offset(self) -> u16 {
        match self {
            Operand::Sp(o) | Operand::Data(o) => o,
            _ => 0,
        }
    }

    pub fn is_writable(self) -> bool {
        matches!(self, Operand::CurPtr | Operand::Sp(_) | Operand::Data(_))
    }

    pub fn is_readable(self) -> bool {
        !matches!(self, Operand::None)
    }
}

/// Access width for MOVE and STORE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Width {
    W1,
    W2,
    W4,
    #[default]
    W8,
}

impl Width {
    pub fn bytes(self) -> usize {
        match self {
            Width::W1 => 1,
            Width::W2 => 2,
            Width::W4 => 4,
            Width::W8 => 8,
        }
    }

    pub fn from_bytes(bytes: usize) -> Option<Width> {
        match bytes {
            1 => Some(Width::W1),
            2 => Some(Width::W2),
            4 => Some(Width::W4),
            8 => Some(Width::W8),
            _ => None,
        }
    }
}

/// Instruction flag byte.
///
/// Bits 0-1 hold the access width (`0` = 8 bytes, `1` = 1, `2` = 2,
/// `3` = 4) and bit 2 selects signed comparison. The remaining bits are
/// reserved and must be zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags(u8);

impl Flags {
    const WIDTH_MASK: u8 = 0b011;
    const SIGNED: u8 = 0b100;
    pub(crate) const RESERVED: u8 = !0b111;

    pub const fn empty() -> Flags {
        Flags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub(crate) fn from_bits(bits: u8) -> Option<Flags> {
        (bits & Self::RESERVED == 0).then_some(Flags(bits))
    }

    pub fn width(self) -> Width {
        match self.0 & Self::WIDTH_MASK {
            0 => Width::W8,
            1 => Width::W1,
            2 => Width::W2,
            _ => Width::W4,
        }
    }

    pub fn with_width(self, width: Width) -> Flags {
        let code = match width {
            Width::W8 => 0,
            Width::W1 => 1,
            Width::W2 => 2,
            Width::W4 => 3,
        };
        Flags((self.0 & !Self::WIDTH_MASK) | code)
    }

    pub fn signed(self) -> bool {
        self.0 & Self::SIGNED != 0
    }

    pub fn with_signed(self, signed: bool) -> Flags {
        if signed {
            Flags(self.0 | Self::SIGNED)
        } else {
            Flags(self.0 & !Self::SIGNED)
        }
    }
}

/// One instruction.
///
/// `imm` is the jump target index for `JUMP_*`, the window length for
/// `LOAD`, or the value of whichever operand is [`Operand::Imm`]. For `LOAD`,
/// `a` is `Data(start)`: the window begins `start` bytes past `cur_ptr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub flags: Flags,
    pub a: Operand,
    pub b: Operand,
    pub imm: u64,
}

impl Instruction {
    pub fn new(opcode: Opcode, a: Operand, b: Operand) -> Instruction {
        Instruction { opcode, flags: Flags::empty(), a, b, imm: 0 }
    }

    pub fn with_imm(mut self, imm: u64) -> Instruction {
        self.imm = imm;
        self
    }

    pub fn with_width(mut self, width: Width) -> Instruction {
        self.flags = self.flags.with_width(width);
        self
    }

    pub fn with_signed(mut self) -> Instruction {
        self.flags = self.flags.with_signed(true);
        self
    }

    pub fn load(start: u16, len: u16) -> Instruction {
        Instruction::new(Opcode::Load, Operand::Data(start), Operand::None).with_imm(len as u64)
    }

    pub fn mov(dst: Operand, src: Operand) -> Instruction {
        Instruction::new(Opcode::Move, dst, src)
    }

    pub fn mov_imm(dst: Operand, value: u64) -> Instruction {
        Instruction::new(Opcode::Move, dst, Operand::Imm).with_imm(value)
    }

    pub fn compare(a: Operand, b: Operand) -> Instruction {
        Instruction::new(Opcode::Compare, a, b)
    }

    pub fn compare_imm(a: Operand, value: u64) -> Instruction {
        Instruction::new(Opcode::Compare, a, Operand::Imm).with_imm(value)
    }

    pub fn alu(opcode: Opcode, dst: Operand, src: Operand) -> Instruction {
        Instruction::new(opcode, dst, src)
    }

    pub fn alu_imm(opcode: Opcode, dst: Operand, value: u64) -> Instruction {
        Instruction::new(opcode, dst, Operand::Imm).with_imm(value)
    }

    pub fn store(offset: u16, src: Operand, width: Width) -> Instruction {
        Instruction::new(Opcode::Store, Operand::Data(offset), src).with_width(width)
    }

    pub fn jump(opcode: Opcode, target: usize) -> Instruction {
        debug_assert!(opcode.is_jump());
        Instruction::new(opcode, Operand::None, Operand::None).with_imm(target as u64)
    }

    pub fn next_iter() -> Instruction {
        Instruction::new(Opcode::NextIter, Operand::None, Operand::None)
    }

    pub fn ret() -> Instruction {
        Instruction::new(Opcode::Return, Operand::None, Operand::None)
    }

    /// Bytes touched through operand `op`: MOVE and STORE use their width
    /// flag, everything else works on 8-byte words.
    pub fn access_width(&self) -> usize {
        match self.opcode {
            Opcode::Move | Opcode::Store => self.flags.width().bytes(),
            _ => WORD_BYTES,
        }
    }

    pub fn window(&self) -> Option<(u16, u16)> {
        match (self.opcode, self.a) {
            (Opcode::Load, Operand::Data(start)) => Some((start, self.imm as u16)),
            _ => None,
        }
    }

    pub fn jump_target(&self) -> Option<usize> {
        self.opcode.is_jump().then_some(self.imm as usize)
    }

    /// `DATA` operands that read the `data` register (STORE's destination is
    /// a memory offset, not a register read).
    pub fn data_reads(&self) -> impl Iterator<Item = u16> + '_ {
        let a = match (self.opcode, self.a) {
            (Opcode::Load | Opcode::Store | Opcode::Move, _) => None,
            (_, Operand::Data(o)) => Some(o),
            _ => None,
        };
        let b = match self.b {
            Operand::Data(o) => Some(o),
            _ => None,
        };
        a.into_iter().chain(b)
    }

    /// `DATA` operands written as a register destination.
    pub fn data_writes(&self) -> Option<u16> {
        match (self.opcode, self.a) {
            (Opcode::Load | Opcode::Store | Opcode::Compare, _) => None,
            (_, Operand::Data(o)) => Some(o),
            _ => None,
        }
    }
}

/// Whether a program still uses per-field memory accesses or has been
/// lowered to a single `LOAD` per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramForm {
    /// No LOAD; `DATA(o)` reads the field `o` bytes past `cur_ptr` directly.
    Source,
    /// LOAD at index 0; `DATA(o)` indexes the loaded window.
    Deployable,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Program {
    pub instructions: Vec<Instruction>,
}

impl Program {
    pub fn new(instructions: Vec<Instruction>) -> Program {
        Program { instructions }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn form(&self) -> ProgramForm {
        match self.instructions.first() {
            Some(i) if i.opcode == Opcode::Load => ProgramForm::Deployable,
            _ => ProgramForm::Source,
        }
    }

    /// Index of the first instruction executed by the logic pipeline.
    pub fn body_start(&self) -> usize {
        match self.form() {
            ProgramForm::Deployable => 1,
            ProgramForm::Source => 0,
        }
    }

    /// The LOAD window `(start, len)` of a deployable program.
    pub fn window(&self) -> Option<(u16, u16)> {
        self.instructions.first().and_then(Instruction::window)
    }

    pub fn uses_store(&self) -> bool {
        self.instructions.iter().any(|i| i.opcode == Opcode::Store)
    }

    /// One past the highest scratch pad byte any instruction touches.
    pub fn sp_extent(&self) -> usize {
        self.instructions
            .iter()
            .flat_map(|i| {
                let w = i.access_width();
                [i.a, i.b].into_iter().filter_map(move |op| match op {
                    Operand::Sp(o) => Some(o as usize + w),
                    _ => None,
                })
            })
            .max()
            .unwrap_or(0)
    }

    /// Longest forward path, in instructions, from the body start to a
    /// terminal, counting the terminal itself.
    ///
    /// Well defined for any program whose jumps all point forward; paths that
    /// fall off the end (or jump out of range) simply stop counting there.
    pub fn longest_path(&self) -> usize {
        let n = self.instructions.len();
        let start = self.body_start();
        if start >= n {
            return 0;
        }
        let mut best = alloc::vec![0usize; n + 1];
        for i in (start..n).rev() {
            let inst = &self.instructions[i];
            best[i] = if inst.opcode.is_terminal() {
                1
            } else if let Some(target) = inst.jump_target() {
                let taken = if target > i && target < n { best[target] } else { 0 };
                1 + taken.max(best[i + 1])
            } else {
                1 + best[i + 1]
            };
        }
        best[start]
    }
}

impl From<Vec<Instruction>> for Program {
    fn from(instructions: Vec<Instruction>) -> Program {
        Program { instructions }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_numbering_is_stable() {
        assert_eq!(Opcode::NextIter as u8, 0x11);
        assert_eq!(Opcode::JumpGe as u8, 0x12);
        assert_eq!(Opcode::Return as u8, 0x13);
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_byte(op as u8), Some(op));
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
        }
        assert_eq!(Opcode::from_byte(0x00), None);
        assert_eq!(Opcode::from_byte(0x14), None);
    }

    #[test]
    fn flags_round_trip_width_and_sign() {
        for w in [Width::W1, Width::W2, Width::W4, Width::W8] {
            let f = Flags::empty().with_width(w).with_signed(true);
            assert_eq!(f.width(), w);
            assert!(f.signed());
        }
        assert_eq!(Flags::empty().width(), Width::W8);
        assert!(Flags::from_bits(0x08).is_none());
    }

    #[test]
    fn cond_truth_table() {
        assert!(Cond::Lt.satisfies(Opcode::JumpLe));
        assert!(Cond::Eq.satisfies(Opcode::JumpGe));
        assert!(!Cond::Gt.satisfies(Opcode::JumpLe));
        assert!(Cond::Gt.satisfies(Opcode::JumpNeq));
        assert!(!Cond::Eq.satisfies(Opcode::Move));
    }

    #[test]
    fn longest_path_takes_worst_branch() {
        // 0 COMPARE, 1 JUMP_EQ 4, 2 MOVE, 3 RETURN, 4 RETURN
        let p = Program::new(alloc::vec![
            Instruction::compare(Operand::Sp(0), Operand::Data(0)),
            Instruction::jump(Opcode::JumpEq, 4),
            Instruction::mov(Operand::Sp(8), Operand::Data(8)),
            Instruction::ret(),
            Instruction::ret(),
        ]);
        assert_eq!(p.longest_path(), 4);
    }
}
