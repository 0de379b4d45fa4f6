//! Request bookkeeping for offloaded traversals: ids, timeouts,
//! retransmission and resume after the iteration limit.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::fabric::{FaultCode, MsgType, RequestId, TraversalPacket, FLAG_DETOUR};
use crate::isa::{encode, Program};
use crate::memory::VirtualAddress;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OpMode {
    Offload,
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum OpError {
    #[error("{0}")]
    Fault(FaultCode),
    #[error("invalid address {0}")]
    InvalidAddress(VirtualAddress),
    #[error("timed out; programs with STORE are not retransmitted")]
    Timeout,
    #[error("no response after all retransmissions")]
    ExhaustedRetransmits,
    #[error("host execution exceeded its iteration cap")]
    HostIterationCap,
}

/// Outcome and accounting for one traversal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpResult {
    pub op: OpId,
    pub mode: OpMode,
    pub result: Result<Vec<u8>, OpError>,
    pub issued: SimTime,
    pub completed: SimTime,
    /// Request rounds (1 + resumes after the iteration limit).
    pub rounds: u32,
    pub retransmits: u32,
    /// Packets the CPU node sent / received for this traversal.
    pub cpu_tx: u32,
    pub cpu_rx: u32,
    /// Continuations forwarded between memory nodes.
    pub hops: u32,
}

impl OpResult {
    pub fn latency(&self) -> SimTime {
        self.completed - self.issued
    }
}

/// Per-CPU monotonically increasing request ids.
#[derive(Debug, Clone)]
pub struct RequestIdGen {
    cpu: u16,
    next: u64,
}

impl RequestIdGen {
    pub fn new(cpu: u16) -> Self {
        RequestIdGen { cpu, next: 1 }
    }

    pub fn next_id(&mut self) -> RequestId {
        let id = RequestId::new(self.cpu, self.next);
        self.next += 1;
        id
    }
}

/// The in-flight request of one traversal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestState {
    pub request_id: RequestId,
    /// Exact bytes re-sent on retransmission.
    pub packet: Vec<u8>,
    pub deadline: SimTime,
    pub retransmits: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineAction {
    Send { at: SimTime, bytes: Vec<u8> },
    ArmTimer { op: OpId, generation: u32, at: SimTime },
    Complete(OpResult),
}

struct Op {
    code: Vec<u8>,
    uses_store: bool,
    timeout: SimTime,
    request: RequestState,
    generation: u32,
    issued: SimTime,
    rounds: u32,
    retransmits: u32,
    cpu_tx: u32,
    cpu_rx: u32,
    hops: u32,
}

pub struct OffloadEngine {
    ids: RequestIdGen,
    next_op: u32,
    ops: BTreeMap<OpId, Op>,
    by_request: BTreeMap<RequestId, OpId>,
    max_retransmits: u32,
    cpu_processing: SimTime,
}

impl OffloadEngine {
    pub fn new(cpu: u16, max_retransmits: u32, cpu_processing: SimTime) -> Self {
        OffloadEngine {
            ids: RequestIdGen::new(cpu),
            next_op: 0,
            ops: BTreeMap::new(),
            by_request: BTreeMap::new(),
            max_retransmits,
            cpu_processing,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.ops.len()
    }

    pub fn op_for(&self, id: RequestId) -> Option<OpId> {
        self.by_request.get(&id).copied()
    }

    pub fn request_state(&self, op: OpId) -> Option<&RequestState> {
        self.ops.get(&op).map(|o| &o.request)
    }

    /// Reserves an id for a traversal that will not go through the engine
    /// (host execution), so op ids stay unique.
    pub fn reserve_op(&mut self) -> OpId {
        let op = OpId(self.next_op);
        self.next_op += 1;
        op
    }

    /// Counts a forwarded continuation against the traversal that owns `id`.
    pub fn note_hop(&mut self, id: RequestId) {
        if let Some(op) = self.by_request.get(&id).and_then(|o| self.ops.get_mut(o)) {
            op.hops += 1;
        }
    }

    /// Issues a new traversal; `timeout` bounds each request round.
    pub fn start(
        &mut self,
        now: SimTime,
        program: &Program,
        cur_ptr: VirtualAddress,
        scratch: Vec<u8>,
        timeout: SimTime,
        out: &mut Vec<EngineAction>,
    ) -> OpId {
        let op_id = self.reserve_op();
        let code = encode(program);
        let id = self.ids.next_id();
        let packet = TraversalPacket::request(id, cur_ptr, code.clone(), scratch).serialize();
        let op = Op {
            code,
            uses_store: program.uses_store(),
            timeout,
            request: RequestState { request_id: id, packet, deadline: now + timeout, retransmits: 0 },
            generation: 0,
            issued: now,
            rounds: 1,
            retransmits: 0,
            cpu_tx: 0,
            cpu_rx: 0,
            hops: 0,
        };
        self.by_request.insert(id, op_id);
        self.ops.insert(op_id, op);
        self.transmit(now, op_id, out);
        op_id
    }

    fn transmit(&mut self, at: SimTime, op_id: OpId, out: &mut Vec<EngineAction>) {
        let op = self.ops.get_mut(&op_id).expect("live op");
        op.cpu_tx += 1;
        op.generation += 1;
        op.request.deadline = at + op.timeout;
        out.push(EngineAction::Send { at, bytes: op.request.packet.clone() });
        out.push(EngineAction::ArmTimer { op: op_id, generation: op.generation, at: op.request.deadline });
    }

    fn finish(&mut self, now: SimTime, op_id: OpId, result: Result<Vec<u8>, OpError>, out: &mut Vec<EngineAction>) {
        let op = self.ops.remove(&op_id).expect("live op");
        self.by_request.remove(&op.request.request_id);
        out.push(EngineAction::Complete(OpResult {
            op: op_id,
            mode: OpMode::Offload,
            result,
            issued: op.issued,
            completed: now,
            rounds: op.rounds,
            retransmits: op.retransmits,
            cpu_tx: op.cpu_tx,
            cpu_rx: op.cpu_rx,
            hops: op.hops,
        }));
    }

    /// Handles a packet delivered to the CPU node. Packets for unknown or
    /// superseded request ids are ignored.
    pub fn on_packet(&mut self, now: SimTime, packet: TraversalPacket, out: &mut Vec<EngineAction>) {
        let Some(&op_id) = self.by_request.get(&packet.request_id) else { return };
        let op = self.ops.get_mut(&op_id).expect("indexed op");
        op.cpu_rx += 1;
        match packet.msg_type {
            MsgType::ResponseDone => self.finish(now, op_id, Ok(packet.scratch), out),
            MsgType::ResponseFault => self.finish(now, op_id, Err(OpError::Fault(packet.fault_code())), out),
            MsgType::ResponseInvalidAddr => self.finish(now, op_id, Err(OpError::InvalidAddress(packet.cur_ptr)), out),
            MsgType::ResponseIterLimit => {
                self.by_request.remove(&packet.request_id);
                let id = self.ids.next_id();
                let op = self.ops.get_mut(&op_id).expect("indexed op");
                op.rounds += 1;
                op.request = RequestState {
                    request_id: id,
                    packet: TraversalPacket::request(id, packet.cur_ptr, op.code.clone(), packet.scratch).serialize(),
                    deadline: now,
                    retransmits: 0,
                };
                self.by_request.insert(id, op_id);
                self.transmit(now, op_id, out);
            }
            MsgType::Request => {
                // A continuation detouring through the CPU: re-issue it
                // toward its next node under the same id.
                op.hops += 1;
                let mut fwd = packet;
                fwd.flags &= !FLAG_DETOUR;
                op.request.packet = fwd.serialize();
                self.transmit(now + self.cpu_processing, op_id, out);
            }
        }
    }

    pub fn on_timeout(&mut self, now: SimTime, op_id: OpId, generation: u32, out: &mut Vec<EngineAction>) {
        let Some(op) = self.ops.get_mut(&op_id) else { return };
        if op.generation != generation {
            return;
        }
        if op.uses_store {
            self.finish(now, op_id, Err(OpError::Timeout), out);
        } else if op.request.retransmits >= self.max_retransmits {
            self.finish(now, op_id, Err(OpError::ExhaustedRetransmits), out);
        } else {
            op.request.retransmits += 1;
            op.retransmits += 1;
            self.transmit(now, op_id, out);
        }
    }
}
