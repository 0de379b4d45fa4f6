//! Instruction semantics shared by the timed accelerator and the untimed
//! reference interpreter.

use alloc::vec::Vec;

use crate::fabric::FaultCode;
use crate::isa::{Cond, Instruction, Opcode, Operand, Program, MAX_LOAD_WINDOW};
use crate::memory::VirtualAddress;

/// A buffered STORE: up to 8 little-endian bytes at an absolute address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingStore {
    pub addr: VirtualAddress,
    pub len: u8,
    pub bytes: [u8; 8],
}

impl PendingStore {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes[..self.len as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogicKind {
    NextIter,
    Return,
    Fault(FaultCode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogicOutcome {
    pub kind: LogicKind,
    /// Includes the terminal instruction.
    pub instructions_executed: usize,
}

/// Where `DATA` operands resolve.
pub(crate) trait DataPort {
    fn read(&mut self, offset: u16, width: usize) -> Result<u64, FaultCode>;
    fn write(&mut self, offset: u16, width: usize, value: u64) -> Result<(), FaultCode>;
}

/// The 256-byte `data` register vector.
pub(crate) struct DataRegister<'a>(pub &'a mut [u8; MAX_LOAD_WINDOW]);

impl DataPort for DataRegister<'_> {
    fn read(&mut self, offset: u16, width: usize) -> Result<u64, FaultCode> {
        read_le(&self.0[..], offset as usize, width)
    }

    fn write(&mut self, offset: u16, width: usize, value: u64) -> Result<(), FaultCode> {
        write_le(&mut self.0[..], offset as usize, width, value)
    }
}

pub(crate) fn read_le(buf: &[u8], off: usize, width: usize) -> Result<u64, FaultCode> {
    let bytes = buf.get(off..off + width).ok_or(FaultCode::OperandBounds)?;
    let mut w = [0u8; 8];
    w[..width].copy_from_slice(bytes);
    Ok(u64::from_le_bytes(w))
}

pub(crate) fn write_le(buf: &mut [u8], off: usize, width: usize, value: u64) -> Result<(), FaultCode> {
    let dst = buf.get_mut(off..off + width).ok_or(FaultCode::OperandBounds)?;
    dst.copy_from_slice(&value.to_le_bytes()[..width]);
    Ok(())
}

fn mask(width: usize) -> u64 {
    if width >= 8 {
        u64::MAX
    } else {
        (1u64 << (width * 8)) - 1
    }
}

/// Registers a body operates on.
pub(crate) struct Regs<'a> {
    pub cur_ptr: &'a mut VirtualAddress,
    pub scratch: &'a mut [u8],
    pub cond: &'a mut Cond,
}

impl Regs<'_> {
    fn read(&self, inst: &Instruction, op: Operand, width: usize, data: &mut dyn DataPort) -> Result<u64, FaultCode> {
        Ok(match op {
            Operand::None => 0,
            Operand::CurPtr => self.cur_ptr.0 & mask(width),
            Operand::Sp(o) => read_le(self.scratch, o as usize, width)?,
            Operand::Data(o) => data.read(o, width)?,
            Operand::Imm => inst.imm & mask(width),
        })
    }

    fn write(&mut self, op: Operand, width: usize, value: u64, data: &mut dyn DataPort) -> Result<(), FaultCode> {
        match op {
            Operand::CurPtr => *self.cur_ptr = VirtualAddress(value & mask(width)),
            Operand::Sp(o) => write_le(self.scratch, o as usize, width, value)?,
            Operand::Data(o) => data.write(o, width, value)?,
            Operand::None | Operand::Imm => return Err(FaultCode::InvalidProgram),
        }
        Ok(())
    }
}

/// Interprets one iteration body starting at `program.body_start()`.
///
/// STOREs resolve against `node_base`, the pointer the iteration started
/// from, and are appended to `stores` rather than applied.
pub(crate) fn run_body(
    program: &Program,
    node_base: VirtualAddress,
    regs: &mut Regs<'_>,
    data: &mut dyn DataPort,
    stores: &mut Vec<PendingStore>,
) -> LogicOutcome {
    let insts = &program.instructions;
    let mut pc = program.body_start();
    let mut executed = 0;
    loop {
        let Some(inst) = insts.get(pc) else {
            return LogicOutcome { kind: LogicKind::Fault(FaultCode::InvalidProgram), instructions_executed: executed };
        };
        executed += 1;
        match step(inst, node_base, regs, data, stores) {
            Ok(Flow::Next) => pc += 1,
            Ok(Flow::Jump(t)) if t > pc => pc = t,
            Ok(Flow::Jump(_)) => {
                return LogicOutcome {
                    kind: LogicKind::Fault(FaultCode::InvalidProgram),
                    instructions_executed: executed,
                }
            }
            Ok(Flow::End(kind)) => return LogicOutcome { kind, instructions_executed: executed },
            Err(f) => return LogicOutcome { kind: LogicKind::Fault(f), instructions_executed: executed },
        }
    }
}

enum Flow {
    Next,
    Jump(usize),
    End(LogicKind),
}

fn step(
    inst: &Instruction,
    node_base: VirtualAddress,
    regs: &mut Regs<'_>,
    data: &mut dyn DataPort,
    stores: &mut Vec<PendingStore>,
) -> Result<Flow, FaultCode> {
    let op = inst.opcode;
    match op {
        Opcode::Load => return Err(FaultCode::InvalidProgram),
        Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div | Opcode::And | Opcode::Or => {
            let x = regs.read(inst, inst.a, 8, data)?;
            let y = regs.read(inst, inst.b, 8, data)?;
            let r = match op {
                Opcode::Add => x.wrapping_add(y),
                Opcode::Sub => x.wrapping_sub(y),
                Opcode::Mul => x.wrapping_mul(y),
                Opcode::Div => x.checked_div(y).ok_or(FaultCode::DivByZero)?,
                Opcode::And => x & y,
                _ => x | y,
            };
            regs.write(inst.a, 8, r, data)?;
        }
        Opcode::Not => {
            let x = regs.read(inst, inst.a, 8, data)?;
            regs.write(inst.a, 8, !x, data)?;
        }
        Opcode::Move => {
            let w = inst.access_width();
            let v = regs.read(inst, inst.b, w, data)?;
            regs.write(inst.a, w, v, data)?;
        }
        Opcode::Compare => {
            let x = regs.read(inst, inst.a, 8, data)?;
            let y = regs.read(inst, inst.b, 8, data)?;
            let ord = if inst.flags.signed() { (x as i64).cmp(&(y as i64)) } else { x.cmp(&y) };
            *regs.cond = match ord {
                core::cmp::Ordering::Less => Cond::Lt,
                core::cmp::Ordering::Equal => Cond::Eq,
                core::cmp::Ordering::Greater => Cond::Gt,
            };
        }
        Opcode::Store => {
            let Operand::Data(off) = inst.a else { return Err(FaultCode::InvalidProgram) };
            let w = inst.access_width();
            let v = regs.read(inst, inst.b, w, data)?;
            stores.push(PendingStore { addr: node_base.offset(off as u64), len: w as u8, bytes: v.to_le_bytes() });
        }
        Opcode::NextIter => return Ok(Flow::End(LogicKind::NextIter)),
        Opcode::Return => return Ok(Flow::End(LogicKind::Return)),
        _ if op.is_jump() => {
            let target = inst.imm as usize;
            return Ok(if regs.cond.satisfies(op) { Flow::Jump(target) } else { Flow::Next });
        }
        _ => return Err(FaultCode::InvalidProgram),
    }
    Ok(Flow::Next)
}
