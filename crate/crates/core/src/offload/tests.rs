use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::accelerator::{run_reference, run_source, RefStatus};
use crate::fabric::{MsgType, RequestId, TraversalPacket};
use crate::isa::asm::tests::HASH_LOOKUP;
use crate::isa::{assemble, strategies, Width};
use crate::memory::{partition_base, MemoryPool, Perms, VirtualAddress};

const HASH_SOURCE: &str = "
    COMPARE sp[0] data[0]
    JUMP_EQ found
    COMPARE 0 data[40]
    JUMP_EQ missing
    MOVE cur_ptr data[40]
    NEXT_ITER
missing:
    MOVE sp[8] KEY_NOT_FOUND
    RETURN
found:
    MOVE sp[8] data[8]
    RETURN
";

#[test]
fn hash_source_window_and_path() {
    let a = analyze(&assemble(HASH_SOURCE).unwrap(), 7.0 / 6.0).unwrap();
    assert_eq!((a.window_start, a.window_len), (0, 48));
    assert_eq!(a.n, 6);
    assert_eq!(a.t_c, SimTime::from_ns(7));
    assert!(!a.uses_store);
    assert_eq!(a.scratch_bytes_used, 16);
}

#[test]
fn wide_window_is_rejected() {
    let p = Program::new(vec![
        Instruction::mov(Operand::Sp(0), Operand::Data(0)),
        Instruction::mov(Operand::Sp(8), Operand::Data(250)),
        Instruction::ret(),
    ]);
    let r = analyze(&p, 1.0);
    assert_eq!(r, Err(AnalysisError::WindowTooLarge { start: 0, len: 258 }));
    assert_eq!(decide(r.as_ref(), &OffloadConfig::default()), Decision::Host(HostReason::Window));
}

#[test]
fn no_data_references_get_minimal_window() {
    let p = Program::new(vec![Instruction::alu_imm(Opcode::Add, Operand::Sp(0), 1), Instruction::ret()]);
    let a = analyze(&p, 1.0).unwrap();
    assert_eq!((a.window_start, a.window_len), (0, 8));
}

#[test]
fn window_is_tight_around_offset_fields() {
    let p = Program::new(vec![
        Instruction::mov(Operand::Sp(0), Operand::Data(300)).with_width(Width::W4),
        Instruction::store(900, Operand::Imm, Width::W8).with_imm(1),
        Instruction::mov(Operand::Data(296), Operand::Sp(0)).with_width(Width::W2),
        Instruction::ret(),
    ]);
    let a = analyze(&p, 1.0).unwrap();
    assert_eq!((a.window_start, a.window_len), (296, 8));
    let d = lower(&p, &a).unwrap();
    assert_eq!(d.instructions[0], Instruction::load(296, 8));
    assert_eq!(d.instructions[1].b, Operand::Data(4));
    assert_eq!(d.instructions[2].a, Operand::Data(900));
    assert_eq!(d.instructions[3].a, Operand::Data(0));
}

#[test]
fn lowering_hash_source_yields_hash_lookup() {
    let src = assemble(HASH_SOURCE).unwrap();
    let a = analyze(&src, 7.0 / 6.0).unwrap();
    assert_eq!(lower(&src, &a).unwrap(), assemble(HASH_LOOKUP).unwrap());
}

#[test]
fn lowering_rejects_deployable_and_oversized() {
    let d = assemble(HASH_LOOKUP).unwrap();
    let a = analyze(&assemble(HASH_SOURCE).unwrap(), 1.0).unwrap();
    assert_eq!(lower(&d, &a), Err(LowerError::AlreadyLowered));
    let mut insts = vec![Instruction::alu_imm(Opcode::Add, Operand::Sp(0), 1); 255];
    insts.push(Instruction::ret());
    let big = Program::new(insts);
    let a = analyze(&big, 1.0).unwrap();
    assert_eq!(lower(&big, &a), Err(LowerError::TooLong(257)));
}

#[test]
fn gate_examples() {
    let cfg = OffloadConfig::default();
    let a = analyze(&assemble(HASH_SOURCE).unwrap(), cfg.t_i_ns).unwrap();
    assert_eq!(decide(Ok(&a), &cfg), Decision::Offload);
    let ratio = a.t_c.as_ns_f64() / cfg.t_d.as_ns_f64();
    assert!((ratio - 0.058).abs() < 0.001);
    let boundary = OffloadAnalysis { n: 6, t_c: SimTime::from_ns(120), ..a };
    assert_eq!(decide(Ok(&boundary), &cfg), Decision::Host(HostReason::Compute));
    let wide = OffloadAnalysis { scratch_bytes_used: 5000, ..a };
    assert_eq!(decide(Ok(&wide), &cfg), Decision::Host(HostReason::Scratch));
}

#[test]
fn gate_agrees_with_exact_arithmetic_on_a_grid() {
    // Oracle: N * t_i (integer picoseconds) < eta * t_d, all in integers.
    for n in 1..=40usize {
        for t_i_ps in [100u64, 500, 1000, 1167, 3000, 6000, 20_000, 30_000, 40_000] {
            for t_d_ns in [60u64, 100, 120, 240] {
                for eta in 1..=4u32 {
                    let cfg = OffloadConfig {
                        eta,
                        t_d: SimTime::from_ns(t_d_ns),
                        t_i_ns: t_i_ps as f64 / 1000.0,
                        ..Default::default()
                    };
                    let mut insts = vec![Instruction::alu_imm(Opcode::Add, Operand::Sp(0), 1); n - 1];
                    insts.push(Instruction::ret());
                    let a = analyze(&Program::new(insts), cfg.t_i_ns).unwrap();
                    let expect = (n as u64 * t_i_ps) < eta as u64 * t_d_ns * 1000;
                    assert_eq!(
                        decide(Ok(&a), &cfg) == Decision::Offload,
                        expect,
                        "n={n} t_i={t_i_ps}ps t_d={t_d_ns} eta={eta}"
                    );
                }
            }
        }
    }
}

#[test]
fn request_ids_increase_and_carry_cpu() {
    let mut g = RequestIdGen::new(7);
    let a = g.next_id();
    let b = g.next_id();
    assert!(b > a);
    assert_eq!((a.cpu(), b.cpu()), (7, 7));
    assert_eq!(b.counter(), a.counter() + 1);
}

fn sends(actions: &[EngineAction]) -> Vec<Vec<u8>> {
    actions
        .iter()
        .filter_map(|a| match a {
            EngineAction::Send { bytes, .. } => Some(bytes.clone()),
            _ => None,
        })
        .collect()
}

fn timer(actions: &[EngineAction]) -> (OpId, u32, SimTime) {
    actions
        .iter()
        .rev()
        .find_map(|a| match a {
            EngineAction::ArmTimer { op, generation, at } => Some((*op, *generation, *at)),
            _ => None,
        })
        .unwrap()
}

fn completion(actions: &[EngineAction]) -> Option<&OpResult> {
    actions.iter().find_map(|a| match a {
        EngineAction::Complete(r) => Some(r),
        _ => None,
    })
}

#[test]
fn retransmissions_are_byte_identical_then_give_up() {
    let mut e = OffloadEngine::new(0, 3, SimTime::from_ns(1000));
    let mut out = Vec::new();
    let p = assemble(HASH_LOOKUP).unwrap();
    let op = e.start(SimTime::ZERO, &p, partition_base(0), vec![0; 16], SimTime::from_ns(500), &mut out);
    let first = sends(&out);
    for k in 1..=3 {
        let (o, g, at) = timer(&out);
        assert_eq!(o, op);
        out.clear();
        e.on_timeout(at, o, g, &mut out);
        assert_eq!(sends(&out), first, "retransmit {k}");
        assert_eq!(e.request_state(op).unwrap().retransmits, k);
    }
    let (o, g, at) = timer(&out);
    out.clear();
    e.on_timeout(at, o, g, &mut out);
    assert_eq!(completion(&out).unwrap().result, Err(OpError::ExhaustedRetransmits));
}

#[test]
fn store_programs_fail_fast_on_timeout() {
    let mut e = OffloadEngine::new(0, 3, SimTime::from_ns(1000));
    let mut out = Vec::new();
    let p = assemble("LOAD 0 8\nSTORE.8 data[0] 1\nRETURN").unwrap();
    e.start(SimTime::ZERO, &p, partition_base(0), vec![], SimTime::from_ns(500), &mut out);
    let (o, g, at) = timer(&out);
    out.clear();
    e.on_timeout(at, o, g, &mut out);
    assert_eq!(sends(&out).len(), 0);
    assert_eq!(completion(&out).unwrap().result, Err(OpError::Timeout));
}

#[test]
fn stale_timers_and_responses_are_ignored() {
    let mut e = OffloadEngine::new(0, 3, SimTime::from_ns(1000));
    let mut out = Vec::new();
    let p = assemble(HASH_LOOKUP).unwrap();
    let op = e.start(SimTime::ZERO, &p, partition_base(0), vec![0; 16], SimTime::from_ns(500), &mut out);
    let req = TraversalPacket::deserialize(&sends(&out)[0]).unwrap();
    let mut limit = req.clone();
    limit.msg_type = MsgType::ResponseIterLimit;
    out.clear();
    e.on_packet(SimTime::from_ns(100), limit.clone(), &mut out);
    let resumed = TraversalPacket::deserialize(&sends(&out)[0]).unwrap();
    assert_ne!(resumed.request_id, req.request_id);
    assert_eq!(e.op_for(resumed.request_id), Some(op));
    out.clear();
    e.on_packet(SimTime::from_ns(110), limit, &mut out);
    e.on_timeout(SimTime::from_ns(500), op, 1, &mut out);
    assert!(out.is_empty());
    let mut done = resumed.clone();
    done.msg_type = MsgType::ResponseDone;
    e.on_packet(SimTime::from_ns(200), done, &mut out);
    let r = completion(&out).unwrap();
    assert_eq!((r.rounds, r.cpu_tx, r.cpu_rx), (2, 2, 2));
    assert_eq!(r.latency(), SimTime::from_ns(200));
    assert_eq!(e.in_flight(), 0);
    let _ = RequestId(0);
}

#[test]
fn host_run_matches_reference_and_pays_round_trips() {
    let mut pool = list_pool(&[5, 6, 7, 8]);
    let p = sum_walk();
    let want = run_reference(&p, head(), &[0; 16], 4096, &mut pool.clone(), None).unwrap();
    let timing = HostTiming { remote_access: SimTime::from_ns(10_000), host_instr_ns: 0.2 };
    let mut run = HostRun::new(p, head(), &[0; 16], 4096);
    let mut total = SimTime::ZERO;
    let got = loop {
        let (t, progress) = run.step(&mut pool, &timing);
        total += t;
        match progress {
            HostProgress::Continue => {}
            HostProgress::Done(s) => break s,
            HostProgress::Failed(e) => panic!("{e}"),
        }
    };
    assert_eq!(got, want.scratch);
    assert!(total >= SimTime::from_ns(40_000));
}

fn head() -> VirtualAddress {
    partition_base(0)
}

/// value@0, next@8, nodes 16 bytes apart.
fn list_pool(values: &[u64]) -> MemoryPool {
    let mut pool = MemoryPool::new(1, 1 << 16);
    pool.map(head(), 16 * values.len() as u64, Perms::READ).unwrap();
    for (i, v) in values.iter().enumerate() {
        let next = if i + 1 < values.len() { head().0 + 16 * (i as u64 + 1) } else { 0 };
        let mut b = v.to_le_bytes().to_vec();
        b.extend_from_slice(&next.to_le_bytes());
        pool.poke(head().offset(16 * i as u64), &b).unwrap();
    }
    pool
}

fn sum_walk() -> Program {
    assemble(
        "LOAD 0 16\nADD sp[0] data[0]\nCOMPARE data[8] 0\nJUMP_EQ done\nMOVE cur_ptr data[8]\nNEXT_ITER\ndone:\nRETURN",
    )
    .unwrap()
}

fn source_program() -> impl Strategy<Value = Program> {
    strategies::valid_program().prop_filter("source", |p| p.form() == ProgramForm::Source)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lowering_preserves_semantics(src in source_program(), img in proptest::collection::vec(any::<u8>(), 512),
                                    scratch in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut pool = MemoryPool::new(1, 1 << 16);
        pool.map(head(), 512, Perms::READ).unwrap();
        pool.poke(head(), &img).unwrap();
        let a = analyze(&src, 1.0).unwrap();
        let low = lower(&src, &a).unwrap();
        let by_field = run_source(&src, (a.window_start, a.window_len), head(), &scratch, 4096, &mut pool.clone(), Some(3));
        let lowered = run_reference(&low, head(), &scratch, 4096, &mut pool.clone(), Some(3));
        prop_assert_eq!(by_field, lowered);
    }

    #[test]
    fn analysis_and_gate_are_pure(src in source_program(), eta in 1u32..4) {
        let cfg = OffloadConfig { eta, ..Default::default() };
        let a = analyze(&src, cfg.t_i_ns);
        prop_assert_eq!(&a, &analyze(&src, cfg.t_i_ns));
        prop_assert_eq!(decide(a.as_ref(), &cfg), decide(a.as_ref(), &cfg));
        let a = a.unwrap();
        prop_assert!(a.n <= src.len());
    }

    #[test]
    fn resuming_at_any_boundary_is_seamless(values in proptest::collection::vec(any::<u64>(), 1..60), k in 1u64..10) {
        let pool = list_pool(&values);
        let p = sum_walk();
        let whole = run_reference(&p, head(), &[0; 16], 4096, &mut pool.clone(), None).unwrap();
        let (mut ptr, mut scratch) = (head(), vec![0u8; 16]);
        let mut rounds = 0u64;
        loop {
            rounds += 1;
            let r = run_reference(&p, ptr, &scratch, 4096, &mut pool.clone(), Some(k)).unwrap();
            (ptr, scratch) = (r.cur_ptr, r.scratch);
            if r.status == RefStatus::Done {
                break;
            }
        }
        prop_assert_eq!(scratch, whole.scratch);
        prop_assert_eq!(rounds, (values.len() as u64 - 1) / k + 1);
    }
}
