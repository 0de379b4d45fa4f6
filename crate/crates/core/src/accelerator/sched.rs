//! Signal-driven scheduler: admission, pipeline queues, packet emission.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use super::{
    flush_stores, logic_step, memory_access, AcceleratorConfig, LogicKind, LogicOutcome, MemOutcome, TraceEvent, Unit,
    Workspace,
};
use crate::fabric::{FaultCode, MsgType, RequestId, TraversalPacket, FLAG_DETOUR};
use crate::isa::{decode, validate_with, Limits, Program, ProgramForm, MAX_PROGRAM_LEN};
use crate::memory::{partition_base, partition_len, MemoryNodeStore, NodeId};
use crate::time::SimTime;

/// Timer events the accelerator asks its host simulation to deliver back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccelEvent {
    /// Admission dispatch finished; the workspace joins the memory queue.
    Dispatch {
        core: usize,
        ws: usize,
    },
    MemDone {
        core: usize,
        ws: usize,
    },
    LogicDone {
        core: usize,
        pipe: usize,
        ws: usize,
    },
}

/// A packet leaving the node at `at`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub at: SimTime,
    pub packet: TraversalPacket,
}

/// Side effects of one accelerator call, drained by the caller.
#[derive(Debug, Default)]
pub struct Effects {
    pub timers: Vec<(SimTime, AccelEvent)>,
    pub outgoing: Vec<Outgoing>,
    pub trace: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreCounters {
    pub mem_busy: SimTime,
    pub logic_busy: SimTime,
    pub mem_busy_window: SimTime,
    pub logic_busy_window: SimTime,
    pub mem_slots: u64,
    pub logic_slots: u64,
    pub iterations: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceleratorStats {
    pub admitted: u64,
    pub duplicates_dropped: u64,
    pub queued: u64,
    pub responses: u64,
    pub forwarded: u64,
    pub faults: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotKind {
    Load,
    /// Final store flush before emitting a terminal response.
    Flush(MsgType),
}

struct Binding {
    request_id: RequestId,
    flags: u16,
    code: Vec<u8>,
    program: Program,
    scratch_len: usize,
    iterations: u16,
    slot: SlotKind,
    pending: Option<LogicOutcome>,
}

struct Admission {
    packet: TraversalPacket,
    program: Program,
}

#[derive(Default)]
struct LogicPipe {
    queue: VecDeque<usize>,
    busy: bool,
}

struct Core {
    workspaces: Vec<Workspace>,
    bindings: Vec<Option<Binding>>,
    mem_queue: VecDeque<usize>,
    mem_busy: bool,
    logic: Vec<LogicPipe>,
    admission: VecDeque<Admission>,
    counters: CoreCounters,
}

impl Core {
    fn idle_workspace(&self) -> Option<usize> {
        self.bindings.iter().position(Option::is_none)
    }

    fn load(&self) -> isize {
        let idle = self.bindings.iter().filter(|b| b.is_none()).count();
        self.admission.len() as isize - idle as isize
    }
}

pub struct Accelerator {
    node: NodeId,
    config: AcceleratorConfig,
    cores: Vec<Core>,
    mem_in_flight: usize,
    window: Option<(SimTime, SimTime)>,
    stats: AcceleratorStats,
}

fn overlap(a: (SimTime, SimTime), b: (SimTime, SimTime)) -> SimTime {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if hi > lo {
        hi - lo
    } else {
        SimTime::ZERO
    }
}

impl Accelerator {
    pub fn new(node: NodeId, config: AcceleratorConfig) -> Self {
        assert!(config.cores >= 1 && config.core.eta >= 1 && config.core.workspaces_per_logic >= 1);
        let cores = (0..config.cores)
            .map(|_| {
                let n = config.core.workspaces();
                Core {
                    workspaces: (0..n).map(|_| Workspace::new(config.core.scratch_pad_bytes)).collect(),
                    bindings: (0..n).map(|_| None).collect(),
                    mem_queue: VecDeque::new(),
                    mem_busy: false,
                    logic: (0..config.core.eta).map(|_| LogicPipe::default()).collect(),
                    admission: VecDeque::new(),
                    counters: CoreCounters::default(),
                }
            })
            .collect();
        Accelerator { node, config, cores, mem_in_flight: 0, window: None, stats: AcceleratorStats::default() }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn config(&self) -> &AcceleratorConfig {
        &self.config
    }

    pub fn stats(&self) -> AcceleratorStats {
        self.stats
    }

    pub fn counters(&self) -> impl Iterator<Item = CoreCounters> + '_ {
        self.cores.iter().map(|c| c.counters)
    }

    /// Restricts the `*_window` busy counters to `[start, end)`.
    pub fn set_measurement_window(&mut self, start: SimTime, end: SimTime) {
        self.window = Some((start, end));
    }

    /// Resident traversals (bound workspaces plus queued admissions).
    pub fn resident(&self) -> usize {
        self.cores.iter().map(|c| c.bindings.iter().filter(|b| b.is_some()).count() + c.admission.len()).sum()
    }

    pub fn queued(&self, core: usize) -> usize {
        self.cores[core].admission.len()
    }

    fn is_resident(&self, id: RequestId) -> bool {
        self.cores.iter().any(|c| {
            c.bindings.iter().flatten().any(|b| b.request_id == id)
                || c.admission.iter().any(|a| a.packet.request_id == id)
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn trace(
        &self,
        fx: &mut Effects,
        t: SimTime,
        core: usize,
        unit: Unit,
        event: &'static str,
        id: RequestId,
        iteration: u16,
    ) {
        if self.config.trace {
            fx.trace.push(TraceEvent {
                t,
                node: self.node,
                core: core as u16,
                unit,
                event,
                request_id: id.0,
                iteration: iteration as u32,
            });
        }
    }

    fn decode_program(&self, code: &[u8]) -> Option<Program> {
        let program = decode(code).ok()?;
        let limits =
            Limits { scratch_pad_bytes: self.config.core.scratch_pad_bytes, max_instructions: MAX_PROGRAM_LEN };
        let ok = program.form() == ProgramForm::Deployable && validate_with(&program, &limits).is_ok();
        ok.then_some(program)
    }

    /// Accepts a REQUEST packet arriving at `now`.
    pub fn admit(&mut self, now: SimTime, packet: TraversalPacket, fx: &mut Effects) {
        let id = packet.request_id;
        if self.is_resident(id) {
            self.stats.duplicates_dropped += 1;
            self.trace(fx, now, 0, Unit::Sched, "duplicate_dropped", id, packet.iter_used);
            return;
        }
        let Some(program) = self.decode_program(&packet.code) else {
            let mut reply = packet;
            reply.msg_type = MsgType::ResponseFault;
            reply.set_fault_code(FaultCode::InvalidProgram);
            self.stats.faults += 1;
            self.trace(fx, now, 0, Unit::Sched, "invalid_program", id, reply.iter_used);
            fx.outgoing.push(Outgoing { at: now + self.config.core.t_sched, packet: reply });
            return;
        };
        self.stats.admitted += 1;
        let core = (0..self.cores.len()).min_by_key(|&c| (self.cores[c].load(), c)).expect("at least one core");
        let admission = Admission { packet, program };
        match self.cores[core].idle_workspace() {
            Some(ws) => self.bind(now, core, ws, admission, fx),
            None => {
                self.stats.queued += 1;
                self.trace(fx, now, core, Unit::Sched, "queued", id, admission.packet.iter_used);
                self.cores[core].admission.push_back(admission);
            }
        }
    }

    fn bind(&mut self, now: SimTime, core: usize, ws: usize, a: Admission, fx: &mut Effects) {
        let p = a.packet;
        let scratch_len = p.scratch.len().max(a.program.sp_extent());
        self.trace(fx, now, core, Unit::Sched, "admit", p.request_id, p.iter_used);
        let c = &mut self.cores[core];
        c.workspaces[ws].bind(p.request_id, p.cur_ptr, &p.scratch);
        c.bindings[ws] = Some(Binding {
            request_id: p.request_id,
            flags: p.flags & !FLAG_DETOUR,
            code: p.code,
            program: a.program,
            scratch_len,
            iterations: p.iter_used,
            slot: SlotKind::Load,
            pending: None,
        });
        fx.timers.push((now + self.config.core.t_sched, AccelEvent::Dispatch { core, ws }));
    }

    /// Handles a timer previously emitted through [`Effects::timers`].
    pub fn on_event(&mut self, now: SimTime, event: AccelEvent, store: &mut MemoryNodeStore, fx: &mut Effects) {
        match event {
            AccelEvent::Dispatch { core, ws } => {
                self.cores[core].mem_queue.push_back(ws);
                self.pump_mem(now, fx);
            }
            AccelEvent::MemDone { core, ws } => {
                self.cores[core].mem_busy = false;
                self.mem_in_flight -= 1;
                self.mem_done(now, core, ws, store, fx);
                self.pump_mem(now, fx);
            }
            AccelEvent::LogicDone { core, pipe, ws } => {
                self.cores[core].logic[pipe].busy = false;
                self.logic_done(now, core, ws, fx);
                self.pump_logic(now, core, pipe, fx);
                self.pump_mem(now, fx);
            }
        }
    }

    fn channel_free(&self) -> bool {
        self.config.mem_channels.is_none_or(|m| self.mem_in_flight < m)
    }

    fn pump_mem(&mut self, now: SimTime, fx: &mut Effects) {
        for core in 0..self.cores.len() {
            if !self.channel_free() {
                return;
            }
            let c = &mut self.cores[core];
            if c.mem_busy {
                continue;
            }
            let Some(ws) = c.mem_queue.pop_front() else { continue };
            c.mem_busy = true;
            self.mem_in_flight += 1;
            let end = now + self.config.core.t_d;
            let c = &mut self.cores[core];
            c.counters.mem_busy += self.config.core.t_d;
            c.counters.mem_slots += 1;
            if let Some(w) = self.window {
                c.counters.mem_busy_window += overlap((now, end), w);
            }
            let b = c.bindings[ws].as_ref().expect("queued workspace is bound");
            let (id, it) = (b.request_id, b.iterations);
            self.trace(fx, now, core, Unit::Mem, "mem_start", id, it);
            fx.timers.push((end, AccelEvent::MemDone { core, ws }));
        }
    }

    fn pump_logic(&mut self, now: SimTime, core: usize, pipe: usize, fx: &mut Effects) {
        let c = &mut self.cores[core];
        if c.logic[pipe].busy {
            return;
        }
        let Some(ws) = c.logic[pipe].queue.pop_front() else { return };
        c.logic[pipe].busy = true;
        let b = c.bindings[ws].as_mut().expect("queued workspace is bound");
        let outcome = logic_step(&mut c.workspaces[ws], &b.program);
        b.pending = Some(outcome);
        let d = self.config.core.logic_time(outcome.instructions_executed);
        let end = now + d;
        c.counters.logic_busy += d;
        c.counters.logic_slots += 1;
        if let Some(w) = self.window {
            c.counters.logic_busy_window += overlap((now, end), w);
        }
        let (id, it) = (b.request_id, b.iterations);
        self.trace(fx, now, core, Unit::Logic, "logic_start", id, it);
        fx.timers.push((end, AccelEvent::LogicDone { core, pipe, ws }));
    }

    fn owns(&self, addr: crate::memory::VirtualAddress) -> bool {
        let base = partition_base(self.node).0;
        addr.0 >= base && addr.0 - base < partition_len()
    }

    fn mem_done(&mut self, now: SimTime, core: usize, ws: usize, store: &mut MemoryNodeStore, fx: &mut Effects) {
        let c = &mut self.cores[core];
        let b = c.bindings[ws].as_ref().expect("bound");
        let w = &mut c.workspaces[ws];
        let (id, it) = (b.request_id, b.iterations);
        match b.slot {
            SlotKind::Flush(kind) => {
                let result = flush_stores(w, store);
                self.trace(fx, now, core, Unit::Mem, "flush_done", id, it);
                match result {
                    Ok(()) => self.emit(now, core, ws, kind, None, fx),
                    Err(f) => self.emit(now, core, ws, MsgType::ResponseFault, Some(f), fx),
                }
            }
            SlotKind::Load => {
                let outcome = memory_access(w, &b.program, store);
                let cur = w.cur_ptr;
                match outcome {
                    MemOutcome::Loaded => {
                        self.trace(fx, now, core, Unit::Mem, "mem_done", id, it);
                        let pipe = ws % self.config.core.eta;
                        self.cores[core].logic[pipe].queue.push_back(ws);
                        self.pump_logic(now, core, pipe, fx);
                    }
                    MemOutcome::Miss if self.owns(cur) => {
                        self.trace(fx, now, core, Unit::Mem, "invalid_addr", id, it);
                        self.emit(now, core, ws, MsgType::ResponseInvalidAddr, None, fx);
                    }
                    MemOutcome::Miss => {
                        self.trace(fx, now, core, Unit::Mem, "mem_miss", id, it);
                        self.stats.forwarded += 1;
                        self.emit(now, core, ws, MsgType::Request, None, fx);
                    }
                    MemOutcome::Fault(f) => {
                        self.trace(fx, now, core, Unit::Mem, "mem_fault", id, it);
                        self.emit(now, core, ws, MsgType::ResponseFault, Some(f), fx);
                    }
                }
            }
        }
    }

    fn logic_done(&mut self, now: SimTime, core: usize, ws: usize, fx: &mut Effects) {
        let max_iter = self.config.core.max_iter;
        let c = &mut self.cores[core];
        let b = c.bindings[ws].as_mut().expect("bound");
        let outcome = b.pending.take().expect("logic outcome");
        let id = b.request_id;
        let terminal = match outcome.kind {
            LogicKind::NextIter => {
                b.iterations = b.iterations.saturating_add(1);
                c.counters.iterations += 1;
                if b.iterations >= max_iter {
                    Some(MsgType::ResponseIterLimit)
                } else {
                    c.mem_queue.push_back(ws);
                    None
                }
            }
            LogicKind::Return => {
                c.counters.iterations += 1;
                Some(MsgType::ResponseDone)
            }
            LogicKind::Fault(f) => {
                c.workspaces[ws].store_buffer.clear();
                let it = b.iterations;
                self.trace(fx, now, core, Unit::Logic, "logic_fault", id, it);
                self.emit(now, core, ws, MsgType::ResponseFault, Some(f), fx);
                return;
            }
        };
        let it = b.iterations;
        self.trace(fx, now, core, Unit::Logic, "logic_done", id, it);
        let Some(kind) = terminal else { return };
        let c = &mut self.cores[core];
        if c.workspaces[ws].store_buffer.is_empty() {
            self.emit(now, core, ws, kind, None, fx);
        } else {
            c.bindings[ws].as_mut().expect("bound").slot = SlotKind::Flush(kind);
            c.mem_queue.push_back(ws);
        }
    }

    /// Builds the outgoing packet from the workspace, frees it, and admits
    /// the next queued request on this core.
    fn emit(
        &mut self,
        now: SimTime,
        core: usize,
        ws: usize,
        kind: MsgType,
        fault: Option<FaultCode>,
        fx: &mut Effects,
    ) {
        let c = &mut self.cores[core];
        let b = c.bindings[ws].take().expect("bound");
        let w = &mut c.workspaces[ws];
        let mut packet = TraversalPacket {
            msg_type: kind,
            flags: b.flags,
            request_id: b.request_id,
            cur_ptr: w.cur_ptr,
            iter_used: b.iterations,
            code: b.code,
            scratch: w.scratch[..b.scratch_len].to_vec(),
        };
        w.release();
        if let Some(f) = fault {
            packet.set_fault_code(f);
            self.stats.faults += 1;
        }
        if kind == MsgType::Request && self.config.detour_on_miss {
            packet.flags |= FLAG_DETOUR;
        }
        if kind.is_response() {
            self.stats.responses += 1;
        }
        let event = match kind {
            MsgType::Request => "forward",
            MsgType::ResponseDone => "response_done",
            MsgType::ResponseIterLimit => "response_iter_limit",
            MsgType::ResponseFault => "response_fault",
            MsgType::ResponseInvalidAddr => "response_invalid_addr",
        };
        self.trace(fx, now, core, Unit::Sched, event, packet.request_id, packet.iter_used);
        fx.outgoing.push(Outgoing { at: now + self.config.core.t_sched, packet });
        if let Some(next) = self.cores[core].admission.pop_front() {
            self.bind(now, core, ws, next, fx);
        }
    }
}
