//! The simulated rack: one CPU node, a switch and memory nodes with
//! accelerators, driven by a single event kernel.
//!
//! Packets travel serialized. Every send crosses the sender's network stack
//! and one link to the switch, then one link to the destination; the switch
//! itself adds no time.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use crate::accelerator::{AccelEvent, Accelerator, AcceleratorConfig, Effects, TraceEvent};
use crate::datastructs::{self, BuildOptions, DsError, Kind, StructureHandle};
use crate::fabric::{
    Endpoint, Kernel, LinkConfig, LinkModel, MsgType, Route, RouteTable, TraversalPacket, HEADER_BYTES,
};
use crate::isa::{Program, ProgramForm};
use crate::memory::{partition_owner, AllocationPolicy, Allocator, MemoryPool, NodeId, VirtualAddress};
use crate::offload::{
    analyze, analyze_deployable, decide, lower, AnalysisError, Decision, EngineAction, HostProgress, HostRun,
    HostTiming, LowerError, OffloadConfig, OffloadEngine, OpError, OpId, OpMode, OpResult,
};
use crate::time::SimTime;

/// The only CPU node.
pub const CPU: u16 = 0;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RackConfig {
    pub nodes: usize,
    pub accelerator: AcceleratorConfig,
    pub link: LinkConfig,
    pub seed: u64,
    pub allocation_policy: AllocationPolicy,
    pub node_capacity: u64,
    /// Overrides the derived per-round timeout.
    pub timeout: Option<SimTime>,
    pub max_retransmits: u32,
    pub cpu_processing: SimTime,
    pub host_instr_ns: f64,
}

impl Default for RackConfig {
    fn default() -> Self {
        RackConfig {
            nodes: 1,
            accelerator: AcceleratorConfig::default(),
            link: LinkConfig::default(),
            seed: 0,
            allocation_policy: AllocationPolicy::Uniform,
            node_capacity: 1 << 30,
            timeout: None,
            max_retransmits: 3,
            cpu_processing: SimTime::from_ns(1000),
            host_instr_ns: 0.2,
        }
    }
}

impl RackConfig {
    pub fn chase_acc(&self) -> bool {
        self.accelerator.detour_on_miss
    }

    pub fn offload_config(&self) -> OffloadConfig {
        let core = &self.accelerator.core;
        OffloadConfig {
            eta: core.eta as u32,
            t_d: core.t_d,
            t_i_ns: core.t_i_ns,
            max_iter: core.max_iter,
            timeout: self.timeout,
            max_retransmits: self.max_retransmits,
            scratch_pad_bytes: core.scratch_pad_bytes,
            host_instr_ns: self.host_instr_ns,
            cpu_processing: self.cpu_processing,
        }
    }

    /// CPU to node and back with no iterations.
    pub fn round_trip(&self) -> SimTime {
        let l = &self.link;
        (l.stack + l.cpu_switch + l.switch_node + self.accelerator.core.t_sched) * 2
    }

    /// One remote read or write issued by the host.
    pub fn remote_access(&self) -> SimTime {
        let l = &self.link;
        (l.stack + l.cpu_switch + l.switch_node) * 2 + self.accelerator.core.t_d
    }

    /// Per-round timeout for a program whose iterations take `t_c`: ten
    /// times the worst case of `max_iter` iterations that each hop nodes.
    pub fn timeout_for(&self, t_c: SimTime) -> SimTime {
        if let Some(t) = self.timeout {
            return t;
        }
        let l = &self.link;
        let core = &self.accelerator.core;
        let mut hop = l.stack + l.switch_node * 2 + core.t_sched * 2;
        if self.chase_acc() {
            hop += l.stack + l.cpu_switch * 2 + self.cpu_processing;
        }
        let per_iter = core.t_d + t_c + hop;
        (self.round_trip() + per_iter * core.max_iter as u64) * 10
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Lower(#[from] LowerError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RackEvent {
    SwitchIngress { from: Endpoint, bytes: Vec<u8> },
    Deliver { to: Endpoint, bytes: Vec<u8> },
    Accel { node: NodeId, event: AccelEvent },
    Timeout { op: OpId, generation: u32 },
    HostStep { op: OpId },
    HostDone { op: OpId },
}

/// Rack-level trace record.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum TraceRecord {
    Accel(TraceEvent),
    Net { t: SimTime, event: &'static str, from: Endpoint, to: Option<Endpoint>, request_id: u64, bytes: u32 },
    Op { t: SimTime, event: &'static str, op: u32, mode: OpMode },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub packets_sent: u64,
    pub bytes_sent: u64,
    pub packets_dropped: u64,
    /// Packets the switch could not parse.
    pub corrupt: u64,
    /// Bytes moved by host-mode remote accesses.
    pub host_bytes: u64,
}

struct HostOp {
    run: HostRun,
    issued: SimTime,
    window: u16,
    outcome: Option<Result<Vec<u8>, OpError>>,
}

pub struct Rack {
    config: RackConfig,
    offload: OffloadConfig,
    kernel: Kernel<RackEvent>,
    pool: MemoryPool,
    allocator: Allocator,
    accelerators: Vec<Accelerator>,
    routes: RouteTable,
    link: LinkModel,
    engine: OffloadEngine,
    host_ops: BTreeMap<OpId, HostOp>,
    completions: VecDeque<OpResult>,
    net: NetStats,
    trace: Option<Vec<TraceRecord>>,
}

impl Rack {
    pub fn new(config: RackConfig) -> Self {
        assert!(config.nodes > 0, "a rack needs at least one memory node");
        let offload = config.offload_config();
        Rack {
            kernel: Kernel::new(),
            pool: MemoryPool::new(config.nodes, config.node_capacity),
            allocator: Allocator::new(config.allocation_policy, config.nodes),
            accelerators: (0..config.nodes)
                .map(|n| Accelerator::new(n as NodeId, config.accelerator.clone()))
                .collect(),
            routes: RouteTable::for_partitions(config.nodes),
            link: LinkModel::new(config.link, config.seed),
            engine: OffloadEngine::new(CPU, config.max_retransmits, config.cpu_processing),
            host_ops: BTreeMap::new(),
            completions: VecDeque::new(),
            net: NetStats::default(),
            trace: config.accelerator.trace.then(Vec::new),
            offload,
            config,
        }
    }

    pub fn config(&self) -> &RackConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn pool(&self) -> &MemoryPool {
        &self.pool
    }

    pub fn pool_mut(&mut self) -> &mut MemoryPool {
        &mut self.pool
    }

    pub fn accelerators(&self) -> &[Accelerator] {
        &self.accelerators
    }

    pub fn net_stats(&self) -> NetStats {
        self.net
    }

    pub fn events_executed(&self) -> u64 {
        self.kernel.executed()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Restricts the accelerators' windowed busy counters to `[start, end)`.
    pub fn set_measurement_window(&mut self, start: SimTime, end: SimTime) {
        for a in &mut self.accelerators {
            a.set_measurement_window(start, end);
        }
    }

    /// Builds a structure in this rack's memory under its allocation policy.
    pub fn build(
        &mut self,
        kind: Kind,
        entries: &[(u64, u64)],
        opts: &BuildOptions,
    ) -> Result<StructureHandle, DsError> {
        let opts = BuildOptions { nodes: self.config.nodes, ..opts.clone() };
        datastructs::build(kind, entries, &opts, &mut self.allocator, &mut self.pool)
    }

    pub fn in_flight(&self) -> usize {
        self.engine.in_flight() + self.host_ops.len()
    }

    fn record(&mut self, r: TraceRecord) {
        if let Some(t) = self.trace.as_mut() {
            t.push(r);
        }
    }

    /// Starts a traversal of `program` (source or already lowered) at `at`. With
    /// [`OpMode::Offload`] the offload gate may still send it to the host.
    /// A null `cur_ptr` completes at once with the initial scratch pad.
    pub fn submit(
        &mut self,
        at: SimTime,
        program: &Program,
        cur_ptr: VirtualAddress,
        scratch: Vec<u8>,
        mode: OpMode,
    ) -> Result<OpId, SubmitError> {
        let at = at.max(self.kernel.now());
        let lowered = program.form() == ProgramForm::Deployable;
        let analysis = if lowered {
            analyze_deployable(program, self.offload.t_i_ns)
        } else {
            analyze(program, self.offload.t_i_ns)
        };
        let offload = mode == OpMode::Offload && decide(analysis.as_ref(), &self.offload) == Decision::Offload;
        let analysis = analysis?;
        let deployable = if lowered { program.clone() } else { lower(program, &analysis)? };
        let mode = if offload { OpMode::Offload } else { OpMode::Host };
        if cur_ptr.is_null() {
            let op = self.engine.reserve_op();
            let len = crate::accelerator::result_len(&deployable, scratch.len());
            let mut scratch = scratch;
            scratch.resize(len, 0);
            self.completions.push_back(OpResult {
                op,
                mode,
                result: Ok(scratch),
                issued: at,
                completed: at,
                rounds: 0,
                retransmits: 0,
                cpu_tx: 0,
                cpu_rx: 0,
                hops: 0,
            });
            return Ok(op);
        }
        let op = match mode {
            OpMode::Offload => {
                let timeout = self.config.timeout_for(analysis.t_c);
                let mut actions = Vec::new();
                let op = self.engine.start(at, &deployable, cur_ptr, scratch, timeout, &mut actions);
                self.apply(actions);
                op
            }
            OpMode::Host => {
                let op = self.engine.reserve_op();
                let run = HostRun::new(deployable, cur_ptr, &scratch, self.offload.scratch_pad_bytes);
                let window = analysis.window_len;
                self.host_ops.insert(op, HostOp { run, issued: at, window, outcome: None });
                self.kernel.schedule_at(at, RackEvent::HostStep { op });
                op
            }
        };
        self.record(TraceRecord::Op { t: at, event: "issue", op: op.0, mode });
        Ok(op)
    }

    fn apply(&mut self, actions: Vec<EngineAction>) {
        for a in actions {
            match a {
                EngineAction::Send { at, bytes } => self.send(Endpoint::Cpu(CPU), at, bytes),
                EngineAction::ArmTimer { op, generation, at } => {
                    self.kernel.schedule_at(at, RackEvent::Timeout { op, generation })
                }
                EngineAction::Complete(r) => self.complete(r),
            }
        }
    }

    fn complete(&mut self, r: OpResult) {
        self.record(TraceRecord::Op { t: r.completed, event: "complete", op: r.op.0, mode: r.mode });
        self.completions.push_back(r);
    }

    fn send(&mut self, from: Endpoint, at: SimTime, bytes: Vec<u8>) {
        let request_id = TraversalPacket::peek_request_id(&bytes).unwrap_or(0);
        self.net.packets_sent += 1;
        self.net.bytes_sent += bytes.len() as u64;
        let dropped = self.link.should_drop();
        let event = if dropped { "drop" } else { "send" };
        self.record(TraceRecord::Net { t: at, event, from, to: None, request_id, bytes: bytes.len() as u32 });
        if dropped {
            self.net.packets_dropped += 1;
            return;
        }
        let arrive = self.link.to_switch(from, at);
        self.kernel.schedule_at(arrive, RackEvent::SwitchIngress { from, bytes });
    }

    fn drain(&mut self, node: NodeId, fx: Effects) {
        for (at, event) in fx.timers {
            self.kernel.schedule_at(at, RackEvent::Accel { node, event });
        }
        if self.trace.is_some() {
            for t in fx.trace {
                self.record(TraceRecord::Accel(t));
            }
        }
        for out in fx.outgoing {
            if out.packet.msg_type == MsgType::Request && !out.packet.detour() {
                self.engine.note_hop(out.packet.request_id);
            }
            self.send(Endpoint::Node(node), out.at, out.packet.serialize());
        }
    }

    fn handle(&mut self, now: SimTime, event: RackEvent) {
        match event {
            RackEvent::SwitchIngress { from, bytes } => {
                let Ok(mut packet) = TraversalPacket::deserialize(&bytes) else {
                    self.net.corrupt += 1;
                    return;
                };
                let to = match self.routes.route(&packet) {
                    Route::Node(n) => {
                        assert_eq!(
                            partition_owner(packet.cur_ptr, self.config.nodes),
                            Some(n),
                            "route disagrees with partitions"
                        );
                        Endpoint::Node(n)
                    }
                    Route::Cpu(c) => Endpoint::Cpu(c),
                    Route::Invalid(c) => {
                        packet.msg_type = MsgType::ResponseInvalidAddr;
                        Endpoint::Cpu(c)
                    }
                };
                let bytes = if packet.msg_type == MsgType::ResponseInvalidAddr { packet.serialize() } else { bytes };
                let request_id = packet.request_id.0;
                self.record(TraceRecord::Net {
                    t: now,
                    event: "switch",
                    from,
                    to: Some(to),
                    request_id,
                    bytes: bytes.len() as u32,
                });
                let at = self.link.from_switch(to, now);
                self.kernel.schedule_at(at, RackEvent::Deliver { to, bytes });
            }
            RackEvent::Deliver { to, bytes } => {
                let packet = TraversalPacket::deserialize(&bytes).expect("switch forwards parsed packets");
                match to {
                    Endpoint::Node(n) => {
                        let mut fx = Effects::default();
                        self.accelerators[n as usize].admit(now, packet, &mut fx);
                        self.drain(n, fx);
                    }
                    Endpoint::Cpu(_) => {
                        let mut actions = Vec::new();
                        self.engine.on_packet(now, packet, &mut actions);
                        self.apply(actions);
                    }
                    Endpoint::Switch => unreachable!("the switch is never a destination"),
                }
            }
            RackEvent::Accel { node, event } => {
                let mut fx = Effects::default();
                self.accelerators[node as usize].on_event(now, event, self.pool.node_mut(node), &mut fx);
                self.drain(node, fx);
            }
            RackEvent::Timeout { op, generation } => {
                let mut actions = Vec::new();
                self.engine.on_timeout(now, op, generation, &mut actions);
                self.apply(actions);
            }
            RackEvent::HostStep { op } => {
                let timing = HostTiming {
                    remote_access: self.config.remote_access(),
                    host_instr_ns: self.offload.host_instr_ns,
                };
                let h = self.host_ops.get_mut(&op).expect("live host op");
                let before = h.run.accesses();
                let (spent, progress) = h.run.step(&mut self.pool, &timing);
                let accesses = h.run.accesses() - before;
                self.net.host_bytes += accesses * (2 * HEADER_BYTES as u64 + h.window as u64);
                let at = now + spent;
                match progress {
                    HostProgress::Continue => self.kernel.schedule_at(at, RackEvent::HostStep { op }),
                    HostProgress::Done(s) => {
                        h.outcome = Some(Ok(s));
                        self.kernel.schedule_at(at, RackEvent::HostDone { op });
                    }
                    HostProgress::Failed(e) => {
                        h.outcome = Some(Err(e));
                        self.kernel.schedule_at(at, RackEvent::HostDone { op });
                    }
                }
            }
            RackEvent::HostDone { op } => {
                let h = self.host_ops.remove(&op).expect("live host op");
                self.complete(OpResult {
                    op,
                    mode: OpMode::Host,
                    result: h.outcome.expect("finished host op"),
                    issued: h.issued,
                    completed: now,
                    rounds: 1,
                    retransmits: 0,
                    cpu_tx: h.run.accesses() as u32,
                    cpu_rx: h.run.accesses() as u32,
                    hops: 0,
                });
            }
        }
    }

    /// Processes one event; false once the queue is empty.
    pub fn step(&mut self) -> bool {
        match self.kernel.pop() {
            Some((now, event)) => {
                self.handle(now, event);
                true
            }
            None => false,
        }
    }

    /// Runs until some traversal completes and returns it, or `None` when
    /// nothing is left to run.
    pub fn run_until_next_completion(&mut self) -> Option<OpResult> {
        loop {
            if let Some(r) = self.completions.pop_front() {
                return Some(r);
            }
            if !self.step() {
                return None;
            }
        }
    }

    /// Runs every pending event and returns all completions in order.
    pub fn run_to_quiescence(&mut self) -> Vec<OpResult> {
        while self.step() {}
        self.completions.drain(..).collect()
    }

    /// Submits one traversal now and runs until it finishes. Other
    /// completions seen on the way stay queued.
    pub fn execute(
        &mut self,
        program: &Program,
        cur_ptr: VirtualAddress,
        scratch: Vec<u8>,
        mode: OpMode,
    ) -> Result<OpResult, SubmitError> {
        let op = self.submit(self.now(), program, cur_ptr, scratch, mode)?;
        let mut others = Vec::new();
        let r = loop {
            let r = self.run_until_next_completion().expect("submitted op completes");
            if r.op == op {
                break r;
            }
            others.push(r);
        };
        for o in others.into_iter().rev() {
            self.completions.push_front(o);
        }
        Ok(r)
    }
}
