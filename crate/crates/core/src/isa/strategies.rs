//! Proptest strategies for random valid programs.

use alloc::vec::Vec;
use proptest::prelude::*;

use super::{Instruction, Opcode, Operand, Program, Width};

fn readable() -> impl Strategy<Value = Operand> {
    prop_oneof![
        Just(Operand::CurPtr),
        (0u16..64).prop_map(|o| Operand::Sp(o * 8)),
        (0u16..30).prop_map(|o| Operand::Data(o * 8)),
        Just(Operand::Imm),
    ]
}

fn writable() -> impl Strategy<Value = Operand> {
    prop_oneof![(0u16..64).prop_map(|o| Operand::Sp(o * 8)), (0u16..30).prop_map(|o| Operand::Data(o * 8)),]
}

fn width() -> impl Strategy<Value = Width> {
    prop_oneof![Just(Width::W1), Just(Width::W2), Just(Width::W4), Just(Width::W8)]
}

/// A non-control instruction whose operands avoid `cur_ptr` writes, so the
/// traversal pointer only changes where a generator says so.
pub(crate) fn straight_line() -> impl Strategy<Value = Instruction> {
    let alu = (
        prop_oneof![
            Just(Opcode::Add),
            Just(Opcode::Sub),
            Just(Opcode::Mul),
            Just(Opcode::Div),
            Just(Opcode::And),
            Just(Opcode::Or),
        ],
        writable(),
        readable(),
        any::<u64>(),
    )
        .prop_map(|(op, a, b, imm)| fix_imm(Instruction::new(op, a, b), imm));
    let not = writable().prop_map(|a| Instruction::new(Opcode::Not, a, Operand::None));
    let mov = (writable(), readable(), width(), any::<u64>())
        .prop_map(|(a, b, w, imm)| fix_imm(Instruction::mov(a, b).with_width(w), imm));
    let cmp = (readable(), readable(), any::<bool>(), any::<u64>()).prop_map(|(a, b, s, imm)| {
        let b = if a == Operand::Imm && b == Operand::Imm { Operand::Sp(0) } else { b };
        let mut i = fix_imm(Instruction::compare(a, b), imm);
        if s {
            i = i.with_signed();
        }
        i
    });
    prop_oneof![3 => alu, 1 => not, 3 => mov, 3 => cmp]
}

fn fix_imm(inst: Instruction, imm: u64) -> Instruction {
    if inst.a == Operand::Imm || inst.b == Operand::Imm {
        inst.with_imm(imm % 1024)
    } else {
        inst
    }
}

/// Random bodies whose jumps all point forward and whose every path ends in
/// a terminal; optionally LOAD-headed.
pub(crate) fn valid_program() -> impl Strategy<Value = Program> {
    (any::<bool>(), proptest::collection::vec((straight_line(), 0u8..10, any::<u16>()), 1..40)).prop_map(
        |(deployable, body)| {
            let mut insts = Vec::new();
            if deployable {
                insts.push(Instruction::load(0, 248));
            }
            let base = insts.len();
            let n = body.len() + 1;
            for (k, (inst, choice, target)) in body.into_iter().enumerate() {
                let idx = base + k;
                let last = base + n - 1;
                let inst = match choice {
                    0 | 1 if idx < last => {
                        let span = (last - idx) as u16;
                        let t = idx + 1 + (target % span) as usize;
                        let op = [
                            Opcode::JumpEq,
                            Opcode::JumpNeq,
                            Opcode::JumpLt,
                            Opcode::JumpGt,
                            Opcode::JumpLe,
                            Opcode::JumpGe,
                        ][(target % 6) as usize];
                        Instruction::jump(op, t)
                    }
                    2 => Instruction::ret(),
                    3 => Instruction::next_iter(),
                    _ => inst,
                };
                insts.push(inst);
            }
            insts.push(Instruction::ret());
            Program::new(insts)
        },
    )
}
