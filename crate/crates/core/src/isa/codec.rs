//! Fixed-width binary encoding.
//!
//! Each instruction is 16 little-endian bytes:
//!
//! ```text
//! 0      1      2       3       4..6   6..8   8..16
//! opcode flags  a_kind  b_kind  a_off  b_off  imm
//! ```
//!
//! Operand kinds: 0 none, 1 cur_ptr, 2 sp, 3 data, 4 imm. Offsets are only
//! meaningful for sp/data and must be zero otherwise.

use alloc::vec::Vec;
use thiserror::Error;

use super::{Flags, Instruction, Opcode, Operand, Program};

pub const INSTRUCTION_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated code: {len} bytes is not a multiple of {INSTRUCTION_BYTES}")]
    Truncated { len: usize },
    #[error("unknown opcode byte {byte:#04x} at instruction {index}")]
    UnknownOpcode { index: usize, byte: u8 },
    #[error("operand kind byte {byte} out of range at instruction {index}")]
    OperandKind { index: usize, byte: u8 },
    #[error("reserved flag bits set ({flags:#04x}) at instruction {index}")]
    ReservedFlags { index: usize, flags: u8 },
    #[error("non-zero offset on an operand without one at instruction {index}")]
    MalformedOperand { index: usize },
}

pub fn encode(program: &Program) -> Vec<u8> {
    let mut out = Vec::with_capacity(program.len() * INSTRUCTION_BYTES);
    for inst in &program.instructions {
        encode_into(inst, &mut out);
    }
    out
}

pub(crate) fn encode_into(inst: &Instruction, out: &mut Vec<u8>) {
    out.push(inst.opcode as u8);
    out.push(inst.flags.bits());
    out.push(inst.a.kind_byte());
    out.push(inst.b.kind_byte());
    out.extend_from_slice(&inst.a.offset().to_le_bytes());
    out.extend_from_slice(&inst.b.offset().to_le_bytes());
    out.extend_from_slice(&inst.imm.to_le_bytes());
}

pub fn decode(bytes: &[u8]) -> Result<Program, DecodeError> {
    if !bytes.len().is_multiple_of(INSTRUCTION_BYTES) {
        return Err(DecodeError::Truncated { len: bytes.len() });
    }
    bytes
        .chunks_exact(INSTRUCTION_BYTES)
        .enumerate()
        .map(|(index, chunk)| decode_one(index, chunk))
        .collect::<Result<Vec<_>, _>>()
        .map(Program::new)
}

fn decode_one(index: usize, b: &[u8]) -> Result<Instruction, DecodeError> {
    let opcode = Opcode::from_byte(b[0]).ok_or(DecodeError::UnknownOpcode { index, byte: b[0] })?;
    let flags = Flags::from_bits(b[1]).ok_or(DecodeError::ReservedFlags { index, flags: b[1] })?;
    let a_off = u16::from_le_bytes([b[4], b[5]]);
    let b_off = u16::from_le_bytes([b[6], b[7]]);
    let a = operand(index, b[2], a_off)?;
    let bb = operand(index, b[3], b_off)?;
    let mut imm = [0u8; 8];
    imm.copy_from_slice(&b[8..16]);
    Ok(Instruction { opcode, flags, a, b: bb, imm: u64::from_le_bytes(imm) })
}

fn operand(index: usize, kind: u8, off: u16) -> Result<Operand, DecodeError> {
    let op = match kind {
        0 => Operand::None,
        1 => Operand::CurPtr,
        2 => return Ok(Operand::Sp(off)),
        3 => return Ok(Operand::Data(off)),
        4 => Operand::Imm,
        byte => return Err(DecodeError::OperandKind { index, byte }),
    };
    if off != 0 {
        return Err(DecodeError::MalformedOperand { index });
    }
    Ok(op)
}
