//! The per-node traversal accelerator.
//!
//! Each core pairs one memory pipeline with `eta` logic pipelines and
//! `workspaces_per_logic * eta` workspaces. A workspace alternates between
//! a memory slot (flush pending stores, then LOAD the window at `cur_ptr`)
//! and a logic slot (run the body once). The scheduler in [`Accelerator`]
//! moves workspaces between the two and emits packets when a traversal
//! finishes, faults, or leaves the node.

mod exec;
mod reference;
mod sched;

pub use exec::{LogicKind, LogicOutcome, PendingStore};
pub use reference::{
    result_len, run_reference, run_source, step_reference, RefError, RefRun, RefState, RefStatus, RefStep,
};
pub use sched::{AccelEvent, Accelerator, AcceleratorStats, CoreCounters, Effects, Outgoing};

use alloc::vec;
use alloc::vec::Vec;

use crate::fabric::{FaultCode, RequestId};
use crate::isa::{Cond, Program, DEFAULT_SCRATCH_PAD_BYTES, MAX_LOAD_WINDOW};
use crate::memory::{Access, FaultKind, MemoryNodeStore, NodeId, Translation, VirtualAddress};
use crate::time::SimTime;
use exec::{run_body, DataRegister, Regs};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoreConfig {
    pub eta: usize,
    pub workspaces_per_logic: usize,
    /// Memory pipeline occupancy per slot.
    pub t_d: SimTime,
    /// Logic time per executed instruction, in nanoseconds.
    pub t_i_ns: f64,
    /// Scheduler dispatch cost on admission and on every emitted packet.
    pub t_sched: SimTime,
    pub max_iter: u16,
    pub scratch_pad_bytes: usize,
}

impl Default for CoreConfig {
    fn default() -> Self {
        CoreConfig {
            eta: 1,
            workspaces_per_logic: 2,
            t_d: SimTime::from_ns(120),
            t_i_ns: 7.0 / 6.0,
            t_sched: SimTime::from_ns(4),
            max_iter: 512,
            scratch_pad_bytes: DEFAULT_SCRATCH_PAD_BYTES,
        }
    }
}

impl CoreConfig {
    pub fn logic_time(&self, instructions: usize) -> SimTime {
        SimTime::from_ns_f64(self.t_i_ns * instructions as f64)
    }

    pub fn workspaces(&self) -> usize {
        self.eta * self.workspaces_per_logic
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcceleratorConfig {
    pub cores: usize,
    pub core: CoreConfig,
    /// Cap on memory slots in flight across all cores of the node.
    pub mem_channels: Option<usize>,
    /// Send MISS continuations back through the CPU node instead of
    /// straight to the next memory node.
    pub detour_on_miss: bool,
    pub trace: bool,
}

impl Default for AcceleratorConfig {
    fn default() -> Self {
        AcceleratorConfig {
            cores: 2,
            core: CoreConfig::default(),
            mem_channels: None,
            detour_on_miss: false,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WsState {
    #[default]
    Idle,
    AwaitMem,
    AwaitLogic,
}

/// Per-traversal register state.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub cur_ptr: VirtualAddress,
    pub scratch: Vec<u8>,
    pub data: [u8; MAX_LOAD_WINDOW],
    pub cond: Cond,
    pub store_buffer: Vec<PendingStore>,
    pub state: WsState,
    pub request: Option<RequestId>,
    /// `cur_ptr` as of the most recent LOAD; STORE offsets are relative to it.
    pub node_base: VirtualAddress,
}

impl Workspace {
    pub fn new(scratch_pad_bytes: usize) -> Self {
        Workspace {
            cur_ptr: VirtualAddress::NULL,
            scratch: vec![0; scratch_pad_bytes],
            data: [0; MAX_LOAD_WINDOW],
            cond: Cond::Eq,
            store_buffer: Vec::new(),
            state: WsState::Idle,
            request: None,
            node_base: VirtualAddress::NULL,
        }
    }

    /// Loads a traversal's entry state, clearing everything else.
    pub fn bind(&mut self, request: RequestId, cur_ptr: VirtualAddress, scratch: &[u8]) {
        self.scratch.fill(0);
        let n = scratch.len().min(self.scratch.len());
        self.scratch[..n].copy_from_slice(&scratch[..n]);
        self.data = [0; MAX_LOAD_WINDOW];
        self.cur_ptr = cur_ptr;
        self.node_base = cur_ptr;
        self.cond = Cond::Eq;
        self.store_buffer.clear();
        self.request = Some(request);
        self.state = WsState::AwaitMem;
    }

    pub fn release(&mut self) {
        self.request = None;
        self.state = WsState::Idle;
        self.store_buffer.clear();
    }
}

/// Runs one iteration body against a workspace whose `data` holds this
/// iteration's window. The comparison flag starts each iteration at EQ.
pub fn logic_step(ws: &mut Workspace, program: &Program) -> LogicOutcome {
    ws.cond = Cond::Eq;
    let node_base = ws.node_base;
    let mut regs = Regs { cur_ptr: &mut ws.cur_ptr, scratch: &mut ws.scratch, cond: &mut ws.cond };
    let mut data = DataRegister(&mut ws.data);
    run_body(program, node_base, &mut regs, &mut data, &mut ws.store_buffer)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemOutcome {
    Loaded,
    /// The window is not on this node.
    Miss,
    Fault(FaultCode),
}

pub(crate) fn fault_code(kind: FaultKind) -> FaultCode {
    match kind {
        FaultKind::Permission => FaultCode::Permission,
        FaultKind::Straddle => FaultCode::Straddle,
    }
}

/// Flushes the workspace's pending stores to the node. Stores that do not
/// translate locally fault.
pub fn flush_stores(ws: &mut Workspace, node: &mut MemoryNodeStore) -> Result<(), FaultCode> {
    for st in core::mem::take(&mut ws.store_buffer) {
        match node.translate(st.addr, st.len as u64, Access::Write) {
            Translation::Hit(phys) => node.write(phys, st.bytes()).map_err(|_| FaultCode::Permission)?,
            Translation::Miss => return Err(FaultCode::StoreMiss),
            Translation::Fault(k) => return Err(fault_code(k)),
        }
    }
    Ok(())
}

/// One memory slot: flush pending stores, then fetch the program's window
/// at `cur_ptr` into `data` (zero-filling the rest of the register).
pub fn memory_access(ws: &mut Workspace, program: &Program, node: &mut MemoryNodeStore) -> MemOutcome {
    if let Err(f) = flush_stores(ws, node) {
        return MemOutcome::Fault(f);
    }
    let Some((start, len)) = program.window() else {
        return MemOutcome::Fault(FaultCode::InvalidProgram);
    };
    let addr = ws.cur_ptr.offset(start as u64);
    match node.translate(addr, len as u64, Access::Read) {
        Translation::Hit(phys) => {
            ws.data = [0; MAX_LOAD_WINDOW];
            if node.read_into(phys, &mut ws.data[..len as usize]).is_err() {
                return MemOutcome::Fault(FaultCode::Permission);
            }
            ws.node_base = ws.cur_ptr;
            ws.state = WsState::AwaitLogic;
            MemOutcome::Loaded
        }
        Translation::Miss => MemOutcome::Miss,
        Translation::Fault(k) => MemOutcome::Fault(fault_code(k)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Unit {
    Mem,
    Logic,
    Sched,
}

/// One accelerator trace record.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TraceEvent {
    pub t: SimTime,
    pub node: NodeId,
    pub core: u16,
    pub unit: Unit,
    pub event: &'static str,
    pub request_id: u64,
    pub iteration: u32,
}

#[cfg(test)]
mod tests;
