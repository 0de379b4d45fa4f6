use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::fabric::{Kernel, MsgType, TraversalPacket};
use crate::isa::asm::tests::HASH_LOOKUP;
use crate::isa::{assemble, encode, Instruction, Opcode, Operand, KEY_NOT_FOUND};
use crate::memory::{partition_base, MemoryPool, Perms};

fn hash_lookup() -> Program {
    assemble(HASH_LOOKUP).unwrap()
}

/// Hash-chain node: key@0, value@8, next@40.
fn node_bytes(key: u64, value: u64, next: u64) -> Vec<u8> {
    let mut b = vec![0u8; 48];
    b[0..8].copy_from_slice(&key.to_le_bytes());
    b[8..16].copy_from_slice(&value.to_le_bytes());
    b[40..48].copy_from_slice(&next.to_le_bytes());
    b
}

fn sp(key: u64) -> Vec<u8> {
    key.to_le_bytes().to_vec()
}

fn loaded(bytes: &[u8]) -> Workspace {
    let mut ws = Workspace::new(64);
    ws.data[..bytes.len()].copy_from_slice(bytes);
    ws
}

#[test]
fn hash_lookup_match_returns_after_four() {
    let mut ws = loaded(&node_bytes(7, 0xABCD, 0));
    ws.scratch[..8].copy_from_slice(&sp(7));
    let out = logic_step(&mut ws, &hash_lookup());
    assert_eq!(out, LogicOutcome { kind: LogicKind::Return, instructions_executed: 4 });
    assert_eq!(&ws.scratch[8..16], &0xABCDu64.to_le_bytes());
}

#[test]
fn hash_lookup_mismatch_follows_next_after_six() {
    let next = partition_base(0).0 + 96;
    let mut ws = loaded(&node_bytes(7, 1, next));
    ws.scratch[..8].copy_from_slice(&sp(9));
    let out = logic_step(&mut ws, &hash_lookup());
    assert_eq!(out, LogicOutcome { kind: LogicKind::NextIter, instructions_executed: 6 });
    assert_eq!(ws.cur_ptr.0, next);
}

#[test]
fn hash_lookup_end_of_chain_writes_sentinel() {
    let mut ws = loaded(&node_bytes(7, 1, 0));
    ws.scratch[..8].copy_from_slice(&sp(9));
    let out = logic_step(&mut ws, &hash_lookup());
    assert_eq!(out.kind, LogicKind::Return);
    assert_eq!(out.instructions_executed, 6);
    assert_eq!(&ws.scratch[8..16], &KEY_NOT_FOUND.to_le_bytes());
}

#[test]
fn div_by_zero_faults() {
    let p = Program::new(vec![
        Instruction::load(0, 8),
        Instruction::alu_imm(Opcode::Div, Operand::Sp(0), 0),
        Instruction::ret(),
    ]);
    let mut ws = loaded(&[]);
    assert_eq!(logic_step(&mut ws, &p).kind, LogicKind::Fault(FaultCode::DivByZero));
}

#[test]
fn executed_count_never_exceeds_longest_path() {
    let p = hash_lookup();
    for (key, next) in [(7, 0), (9, 0), (9, 1 << 40)] {
        let mut ws = loaded(&node_bytes(7, 1, next));
        ws.scratch[..8].copy_from_slice(&sp(key));
        assert!(logic_step(&mut ws, &p).instructions_executed <= p.longest_path());
    }
}

fn one_node_pool() -> MemoryPool {
    let mut pool = MemoryPool::new(2, 1 << 20);
    pool.map(partition_base(0), 4096, Perms::READ).unwrap();
    pool.map(partition_base(0).offset(8192), 4096, Perms::READ_WRITE).unwrap();
    pool
}

#[test]
fn memory_access_loads_local_window() {
    let mut pool = one_node_pool();
    let addr = partition_base(0).offset(64);
    let bytes = node_bytes(3, 4, 5);
    pool.poke(addr, &bytes).unwrap();
    let mut ws = Workspace::new(64);
    ws.data = [0xEE; MAX_LOAD_WINDOW];
    ws.cur_ptr = addr;
    assert_eq!(memory_access(&mut ws, &hash_lookup(), pool.node_mut(0)), MemOutcome::Loaded);
    assert_eq!(&ws.data[..48], &bytes[..]);
    assert!(ws.data[48..].iter().all(|b| *b == 0));
}

#[test]
fn memory_access_misses_on_foreign_partition() {
    let mut pool = one_node_pool();
    let mut ws = Workspace::new(64);
    ws.cur_ptr = partition_base(1).offset(64);
    assert_eq!(memory_access(&mut ws, &hash_lookup(), pool.node_mut(0)), MemOutcome::Miss);
}

#[test]
fn pending_store_into_read_only_faults() {
    let mut pool = one_node_pool();
    let mut ws = Workspace::new(64);
    ws.cur_ptr = partition_base(0);
    ws.store_buffer.push(PendingStore { addr: partition_base(0).offset(16), len: 8, bytes: [1; 8] });
    assert_eq!(memory_access(&mut ws, &hash_lookup(), pool.node_mut(0)), MemOutcome::Fault(FaultCode::Permission));
}

/// Single-accelerator harness: packets go in at chosen times, everything
/// the accelerator emits is collected.
struct Bench {
    acc: Accelerator,
    pool: MemoryPool,
    kernel: Kernel<AccelEvent>,
    out: Vec<Outgoing>,
    trace: Vec<TraceEvent>,
}

impl Bench {
    fn new(config: AcceleratorConfig, pool: MemoryPool) -> Self {
        Bench { acc: Accelerator::new(0, config), pool, kernel: Kernel::new(), out: Vec::new(), trace: Vec::new() }
    }

    fn drain(&mut self, fx: Effects) {
        for (t, e) in fx.timers {
            self.kernel.schedule_at(t, e);
        }
        self.out.extend(fx.outgoing);
        self.trace.extend(fx.trace);
    }

    fn admit(&mut self, packet: TraversalPacket) {
        let mut fx = Effects::default();
        self.acc.admit(self.kernel.now(), packet, &mut fx);
        self.drain(fx);
    }

    fn run(&mut self) {
        while let Some((t, e)) = self.kernel.pop() {
            let mut fx = Effects::default();
            self.acc.on_event(t, e, self.pool.node_mut(0), &mut fx);
            self.drain(fx);
        }
    }
}

/// A chain of `len` list nodes on node 0 (value@0, next@8); returns the head.
fn chain(pool: &mut MemoryPool, len: usize, cross_at: Option<usize>) -> VirtualAddress {
    let base = partition_base(0).offset(8192);
    let addr = |i: usize| {
        if cross_at.is_some_and(|c| i >= c) {
            partition_base(1).offset(64 * i as u64)
        } else {
            base.offset(64 * i as u64)
        }
    };
    for i in 0..len {
        let next = if i + 1 < len { addr(i + 1).0 } else { 0 };
        let mut b = vec![0u8; 16];
        b[0..8].copy_from_slice(&(i as u64 + 100).to_le_bytes());
        b[8..16].copy_from_slice(&next.to_le_bytes());
        if pool.owner(addr(i)) == Some(0) {
            pool.poke(addr(i), &b).unwrap();
        }
    }
    addr(0)
}

/// Sums `value` into sp[0] along the chain, counts nodes in sp[8].
fn sum_walk() -> Program {
    assemble(
        "
        LOAD 0 16
        ADD sp[0] data[0]
        ADD sp[8] 1
        COMPARE data[8] 0
        JUMP_EQ done
        MOVE cur_ptr data[8]
        NEXT_ITER
    done:
        RETURN
    ",
    )
    .unwrap()
}

fn request(id: u64, ptr: VirtualAddress, program: &Program, scratch: Vec<u8>) -> TraversalPacket {
    TraversalPacket::request(RequestId(id), ptr, encode(program), scratch)
}

#[test]
fn admission_schedules_first_load_after_dispatch() {
    let mut b = Bench::new(AcceleratorConfig { trace: true, ..Default::default() }, one_node_pool());
    let mut fx = Effects::default();
    b.acc.admit(SimTime::from_ns(50), request(1, partition_base(0), &sum_walk(), vec![]), &mut fx);
    assert_eq!(fx.timers, vec![(SimTime::from_ns(54), AccelEvent::Dispatch { core: 0, ws: 0 })]);
}

#[test]
fn excess_requests_wait_in_fifo() {
    let cfg = AcceleratorConfig { cores: 1, ..Default::default() };
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 3, None);
    let mut b = Bench::new(cfg, pool);
    for id in 0..3 {
        b.admit(request(id, head, &sum_walk(), vec![0; 16]));
    }
    assert_eq!(b.acc.queued(0), 1);
    assert_eq!(b.acc.stats().queued, 1);
    b.run();
    assert_eq!(b.out.len(), 3);
    assert!(b.out.iter().all(|o| o.packet.msg_type == MsgType::ResponseDone));
    assert_eq!(b.out[2].packet.request_id, RequestId(2));
}

#[test]
fn invalid_code_gets_fault_response() {
    let mut b = Bench::new(AcceleratorConfig::default(), one_node_pool());
    let bad = Program::new(vec![Instruction::mov(Operand::Sp(0), Operand::Imm).with_imm(1)]);
    b.admit(request(5, partition_base(0), &bad, vec![]));
    assert_eq!(b.out.len(), 1);
    assert_eq!(b.out[0].packet.msg_type, MsgType::ResponseFault);
    assert_eq!(b.out[0].packet.fault_code(), FaultCode::InvalidProgram);
    let mut garbage = request(6, partition_base(0), &bad, vec![]);
    garbage.code = vec![0xFF; 16];
    b.admit(garbage);
    assert_eq!(b.out[1].packet.fault_code(), FaultCode::InvalidProgram);
}

#[test]
fn duplicate_request_ids_are_dropped() {
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 3, None);
    let mut b = Bench::new(AcceleratorConfig::default(), pool);
    b.admit(request(9, head, &sum_walk(), vec![0; 16]));
    b.admit(request(9, head, &sum_walk(), vec![0; 16]));
    b.run();
    assert_eq!(b.out.len(), 1);
    assert_eq!(b.acc.stats().duplicates_dropped, 1);
}

#[test]
fn three_iterations_use_three_slots_each() {
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 3, None);
    let mut b = Bench::new(AcceleratorConfig::default(), pool);
    b.admit(request(1, head, &sum_walk(), vec![0; 16]));
    b.run();
    let c: Vec<_> = b.acc.counters().collect();
    assert_eq!((c[0].mem_slots, c[0].logic_slots), (3, 3));
    let p = &b.out[0].packet;
    assert_eq!(p.msg_type, MsgType::ResponseDone);
    assert_eq!(&p.scratch[..8], &(100u64 + 101 + 102).to_le_bytes());
    assert_eq!(&p.scratch[8..16], &3u64.to_le_bytes());
    // 4 ns dispatch, three 120 ns loads, logic 6+6+5 instructions at 7/6 ns,
    // then 4 ns emission.
    let logic = SimTime::from_ns_f64(7.0 / 6.0 * 17.0);
    assert_eq!(b.out[0].at, SimTime::from_ns(4 + 360 + 4) + logic);
}

#[test]
fn iteration_limit_and_resume_match_reference() {
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 5, None);
    let program = sum_walk();
    let expect = run_reference(&program, head, &[0; 16], 4096, &mut pool.clone(), None).unwrap();
    let cfg = AcceleratorConfig { core: CoreConfig { max_iter: 2, ..Default::default() }, ..Default::default() };
    let mut b = Bench::new(cfg, pool);
    let (mut ptr, mut scratch) = (head, vec![0u8; 16]);
    let mut rounds = 0;
    loop {
        rounds += 1;
        b.admit(request(rounds, ptr, &program, scratch.clone()));
        b.run();
        let p = b.out.pop().unwrap().packet;
        if rounds == 1 {
            assert_eq!((p.msg_type, p.iter_used), (MsgType::ResponseIterLimit, 2));
        }
        (ptr, scratch) = (p.cur_ptr, p.scratch);
        if p.msg_type == MsgType::ResponseDone {
            break;
        }
    }
    assert!(rounds <= 3);
    assert_eq!(scratch, expect.scratch);
}

#[test]
fn miss_forwards_live_scratch() {
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 6, Some(3));
    let mut b = Bench::new(AcceleratorConfig::default(), pool);
    b.admit(request(1, head, &sum_walk(), vec![0; 16]));
    b.run();
    let p = &b.out[0].packet;
    assert_eq!(p.msg_type, MsgType::Request);
    assert_eq!(p.cur_ptr, partition_base(1).offset(192));
    assert_eq!(p.iter_used, 3);
    assert_eq!(&p.scratch[..8], &(100u64 + 101 + 102).to_le_bytes());
    assert_eq!(&p.scratch[8..16], &3u64.to_le_bytes());
    assert_eq!(p.code, encode(&sum_walk()));
    assert!(!p.detour());
}

#[test]
fn detour_mode_flags_forwarded_continuations() {
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 6, Some(3));
    let mut b = Bench::new(AcceleratorConfig { detour_on_miss: true, ..Default::default() }, pool);
    b.admit(request(1, head, &sum_walk(), vec![0; 16]));
    b.run();
    assert!(b.out[0].packet.detour());
}

#[test]
fn unmapped_pointer_in_own_partition_is_invalid() {
    let mut b = Bench::new(AcceleratorConfig::default(), one_node_pool());
    b.admit(request(1, partition_base(0).offset(1 << 30), &sum_walk(), vec![]));
    b.run();
    assert_eq!(b.out[0].packet.msg_type, MsgType::ResponseInvalidAddr);
}

#[test]
fn stores_flush_in_a_final_slot() {
    let mut pool = one_node_pool();
    let head = chain(&mut pool, 1, None);
    let program = assemble("LOAD 0 16\nSTORE.8 data[0] 77\nRETURN").unwrap();
    let mut b = Bench::new(AcceleratorConfig::default(), pool);
    b.admit(request(1, head, &program, vec![]));
    b.run();
    assert_eq!(b.out[0].packet.msg_type, MsgType::ResponseDone);
    assert_eq!(b.acc.counters().next().unwrap().mem_slots, 2);
    assert_eq!(b.pool.read_virtual(head, 8).unwrap(), 77u64.to_le_bytes());
}

/// Self-looping body of exactly `n` instructions plus the LOAD.
fn spin(n: usize) -> Program {
    let mut insts = vec![Instruction::load(0, 8)];
    insts.extend((1..n).map(|_| Instruction::alu_imm(Opcode::Add, Operand::Sp(0), 1)));
    insts.push(Instruction::next_iter());
    Program::new(insts)
}

/// Keeps `resident` spinning traversals on one core and returns memory
/// pipeline utilization over a window after warm-up.
fn steady_utilization(eta: usize, per_logic: usize, resident: usize, t_c_ns: u64) -> f64 {
    let n = 6;
    let t_d = SimTime::from_ns(120);
    let cfg = AcceleratorConfig {
        cores: 1,
        core: CoreConfig {
            eta,
            workspaces_per_logic: per_logic,
            t_d,
            t_i_ns: t_c_ns as f64 / n as f64,
            max_iter: u16::MAX,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut b = Bench::new(cfg, one_node_pool());
    let (start, end) = (SimTime::from_ns(20_000), SimTime::from_ns(80_000));
    b.acc.set_measurement_window(start, end);
    for id in 0..resident as u64 {
        b.admit(request(id, partition_base(0), &spin(n), vec![0; 8]));
    }
    while b.kernel.peek_time().is_some_and(|t| t < end) {
        let (t, e) = b.kernel.pop().unwrap();
        let mut fx = Effects::default();
        b.acc.on_event(t, e, b.pool.node_mut(0), &mut fx);
        b.drain(fx);
    }
    let busy = b.acc.counters().next().unwrap().mem_busy_window;
    busy.as_ps() as f64 / (end - start).as_ps() as f64
}

#[test]
fn staggered_workspaces_saturate_memory_pipeline() {
    for eta in [1, 2, 4] {
        let u = steady_utilization(eta, 2, 2 * eta, 120 * eta as u64);
        assert!(u >= 0.99, "eta {eta}: {u}");
    }
}

#[test]
fn one_workspace_per_logic_leaves_a_gap() {
    for eta in [1, 2, 4] {
        let u = steady_utilization(eta, 1, eta, 120 * eta as u64);
        let want = eta as f64 / (eta as f64 + 1.0);
        assert!((u - want).abs() <= 0.01, "eta {eta}: {u} vs {want}");
    }
}

#[test]
fn single_traversal_alternates_memory_and_logic() {
    for t_c in [7, 60, 120, 300] {
        let u = steady_utilization(1, 2, 1, t_c);
        let want = 120.0 / (120.0 + t_c as f64);
        assert!((u - want).abs() <= 0.01, "t_c {t_c}: {u} vs {want}");
    }
}

#[test]
fn traces_are_deterministic() {
    let run = || {
        let mut pool = one_node_pool();
        let head = chain(&mut pool, 4, None);
        let mut b = Bench::new(AcceleratorConfig { trace: true, ..Default::default() }, pool);
        for id in 0..7 {
            b.admit(request(id, head, &sum_walk(), vec![0; 16]));
        }
        b.run();
        (b.trace, b.out)
    };
    let (t1, o1) = run();
    let (t2, o2) = run();
    assert!(!t1.is_empty());
    assert_eq!(t1, t2);
    assert_eq!(o1, o2);
}

fn image() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(any::<u8>(), 512)
}

fn run_accelerated(pool: MemoryPool, jobs: &[(Program, Vec<u8>)], max_iter: u16) -> Vec<TraversalPacket> {
    let cfg = AcceleratorConfig { cores: 1, core: CoreConfig { max_iter, ..Default::default() }, ..Default::default() };
    let mut b = Bench::new(cfg, pool);
    for (i, (p, s)) in jobs.iter().enumerate() {
        b.admit(request(i as u64, partition_base(0), p, s.clone()));
    }
    b.run();
    let mut out: Vec<_> = b.out.into_iter().map(|o| o.packet).collect();
    out.sort_by_key(|p| p.request_id);
    out
}

fn image_pool(bytes: &[u8]) -> MemoryPool {
    let mut pool = MemoryPool::new(1, 1 << 16);
    pool.map(partition_base(0), bytes.len() as u64, Perms::READ).unwrap();
    pool.poke(partition_base(0), bytes).unwrap();
    pool
}

fn deployable() -> impl Strategy<Value = Program> {
    crate::isa::strategies::valid_program()
        .prop_filter("deployable", |p| p.form() == crate::isa::ProgramForm::Deployable)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn accelerator_matches_reference(program in deployable(), img in image(), scratch in proptest::collection::vec(any::<u8>(), 0..64)) {
        let pool = image_pool(&img);
        let got = run_accelerated(pool.clone(), &[(program.clone(), scratch.clone())], 3);
        let want = run_reference(&program, partition_base(0), &scratch, 4096, &mut pool.clone(), Some(3));
        let p = &got[0];
        match want {
            Ok(r) => {
                let kind = if r.status == RefStatus::Done { MsgType::ResponseDone } else { MsgType::ResponseIterLimit };
                prop_assert_eq!(p.msg_type, kind);
                prop_assert_eq!(&p.scratch, &r.scratch);
            }
            Err(RefError::Fault(f)) => {
                prop_assert_eq!(p.msg_type, MsgType::ResponseFault);
                prop_assert_eq!(p.fault_code(), f);
            }
            Err(RefError::InvalidAddress(_)) => prop_assert!(false, "image is mapped"),
        }
    }

    #[test]
    fn interleaved_workspaces_stay_isolated(
        a in deployable(), b in deployable(), img in image(),
        canary_a in proptest::collection::vec(any::<u8>(), 64), canary_b in proptest::collection::vec(any::<u8>(), 64),
    ) {
        let pool = image_pool(&img);
        let together = run_accelerated(pool.clone(), &[(a.clone(), canary_a.clone()), (b.clone(), canary_b.clone())], 4);
        let alone_a = run_accelerated(pool.clone(), &[(a, canary_a)], 4);
        let alone_b = run_accelerated(pool, &[(b, canary_b)], 4);
        prop_assert_eq!(&together[0].scratch, &alone_a[0].scratch);
        prop_assert_eq!(&together[1].scratch, &alone_b[0].scratch);
        prop_assert_eq!(together[0].msg_type, alone_a[0].msg_type);
        prop_assert_eq!(together[1].msg_type, alone_b[0].msg_type);
    }
}
