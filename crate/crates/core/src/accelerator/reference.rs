//! Untimed sequential interpreter over the whole rack's memory.

use alloc::vec;
use alloc::vec::Vec;

use super::exec::{run_body, DataPort, DataRegister, LogicKind, PendingStore, Regs};
use crate::fabric::FaultCode;
use crate::isa::{Cond, Program, ProgramForm, MAX_LOAD_WINDOW};
use crate::memory::{Access, AccessError, MemoryPool, VirtualAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RefError {
    #[error("{0}")]
    Fault(FaultCode),
    #[error("invalid address {0}")]
    InvalidAddress(VirtualAddress),
}

fn access_error(e: AccessError) -> RefError {
    match e {
        AccessError::Unmapped(a) => RefError::InvalidAddress(a),
        AccessError::Fault(_, k) => RefError::Fault(super::fault_code(k)),
        AccessError::Memory(_) => RefError::Fault(FaultCode::Unknown),
    }
}

/// A failed iteration LOAD reports the pointer it started from.
fn load_error(e: AccessError, cur_ptr: VirtualAddress) -> RefError {
    match e {
        AccessError::Unmapped(_) => RefError::InvalidAddress(cur_ptr),
        e => access_error(e),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefState {
    pub cur_ptr: VirtualAddress,
    /// Full-size scratch pad.
    pub scratch: Vec<u8>,
    pub iterations: u64,
}

impl RefState {
    pub fn new(cur_ptr: VirtualAddress, init_scratch: &[u8], scratch_pad_bytes: usize) -> Self {
        let mut scratch = vec![0; scratch_pad_bytes.max(init_scratch.len())];
        scratch[..init_scratch.len()].copy_from_slice(init_scratch);
        RefState { cur_ptr, scratch, iterations: 0 }
    }
}

/// What one reference iteration did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefStep {
    pub returned: bool,
    pub instructions_executed: usize,
    /// Whether the iteration issued STOREs (a write-back after the body).
    pub stored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefStatus {
    Done,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefRun {
    /// Scratch pad truncated to the result length.
    pub scratch: Vec<u8>,
    pub cur_ptr: VirtualAddress,
    pub iterations: u64,
    pub status: RefStatus,
}

/// Result length: what the caller passed in, widened to cover every scratch
/// byte the program names.
pub fn result_len(program: &Program, init_len: usize) -> usize {
    init_len.max(program.sp_extent())
}

fn apply_stores(pool: &mut MemoryPool, node_base: VirtualAddress, stores: Vec<PendingStore>) -> Result<(), RefError> {
    let home = pool.owner(node_base);
    for st in stores {
        if pool.owner(st.addr) != home {
            return Err(RefError::Fault(FaultCode::StoreMiss));
        }
        pool.write_virtual(st.addr, st.bytes()).map_err(|e| match e {
            AccessError::Unmapped(_) => RefError::Fault(FaultCode::StoreMiss),
            e => access_error(e),
        })?;
    }
    Ok(())
}

fn finish(kind: LogicKind, executed: usize, stored: bool) -> Result<RefStep, RefError> {
    match kind {
        LogicKind::NextIter => Ok(RefStep { returned: false, instructions_executed: executed, stored }),
        LogicKind::Return => Ok(RefStep { returned: true, instructions_executed: executed, stored }),
        LogicKind::Fault(f) => Err(RefError::Fault(f)),
    }
}

/// Runs one iteration of a deployable program: LOAD, body, then apply the
/// iteration's stores.
pub fn step_reference(program: &Program, state: &mut RefState, pool: &mut MemoryPool) -> Result<RefStep, RefError> {
    let (start, len) = program.window().ok_or(RefError::Fault(FaultCode::InvalidProgram))?;
    let node_base = state.cur_ptr;
    let window =
        pool.read_virtual(node_base.offset(start as u64), len as usize).map_err(|e| load_error(e, node_base))?;
    let mut data = [0u8; MAX_LOAD_WINDOW];
    data[..window.len()].copy_from_slice(&window);
    let mut cond = Cond::Eq;
    let mut stores = Vec::new();
    let mut regs = Regs { cur_ptr: &mut state.cur_ptr, scratch: &mut state.scratch, cond: &mut cond };
    let out = run_body(program, node_base, &mut regs, &mut DataRegister(&mut data), &mut stores);
    if out.kind == LogicKind::NextIter {
        state.iterations += 1;
    }
    let stored = !stores.is_empty();
    if !matches!(out.kind, LogicKind::Fault(_)) {
        apply_stores(pool, node_base, stores)?;
    }
    finish(out.kind, out.instructions_executed, stored)
}

fn drive(
    program: &Program,
    cur_ptr: VirtualAddress,
    init_scratch: &[u8],
    scratch_pad_bytes: usize,
    max_iter: Option<u64>,
    mut step: impl FnMut(&mut RefState) -> Result<RefStep, RefError>,
) -> Result<RefRun, RefError> {
    let len = result_len(program, init_scratch.len());
    let mut state = RefState::new(cur_ptr, init_scratch, scratch_pad_bytes.max(len));
    let status = loop {
        if step(&mut state)?.returned {
            break RefStatus::Done;
        }
        if max_iter.is_some_and(|m| state.iterations >= m) {
            break RefStatus::IterLimit;
        }
    };
    state.scratch.truncate(len);
    Ok(RefRun { scratch: state.scratch, cur_ptr: state.cur_ptr, iterations: state.iterations, status })
}

/// Runs a deployable program to completion (or to `max_iter` iterations).
pub fn run_reference(
    program: &Program,
    cur_ptr: VirtualAddress,
    init_scratch: &[u8],
    scratch_pad_bytes: usize,
    pool: &mut MemoryPool,
    max_iter: Option<u64>,
) -> Result<RefRun, RefError> {
    if program.form() != ProgramForm::Deployable {
        return Err(RefError::Fault(FaultCode::InvalidProgram));
    }
    drive(program, cur_ptr, init_scratch, scratch_pad_bytes, max_iter, |s| step_reference(program, s, pool))
}

/// Field-at-a-time view of the node at `base`, with register writes kept in
/// an overlay. Every access must fall inside `window`.
struct SourceFields<'a> {
    pool: &'a MemoryPool,
    base: VirtualAddress,
    window: (u16, u16),
    overlay: [Option<u8>; MAX_LOAD_WINDOW],
}

impl SourceFields<'_> {
    fn slot(&self, offset: u16, width: usize) -> usize {
        let (start, len) = self.window;
        assert!(
            offset >= start && offset as usize + width <= start as usize + len as usize,
            "DATA access at {offset}+{width} outside window {start}+{len}"
        );
        (offset - start) as usize
    }
}

impl DataPort for SourceFields<'_> {
    fn read(&mut self, offset: u16, width: usize) -> Result<u64, FaultCode> {
        let slot = self.slot(offset, width);
        let bytes =
            self.pool.read_virtual(self.base.offset(offset as u64), width).map_err(|_| FaultCode::OperandBounds)?;
        let mut w = [0u8; 8];
        for i in 0..width {
            w[i] = self.overlay[slot + i].unwrap_or(bytes[i]);
        }
        Ok(u64::from_le_bytes(w))
    }

    fn write(&mut self, offset: u16, width: usize, value: u64) -> Result<(), FaultCode> {
        let slot = self.slot(offset, width);
        for (i, b) in value.to_le_bytes()[..width].iter().enumerate() {
            self.overlay[slot + i] = Some(*b);
        }
        Ok(())
    }
}

/// Runs a source-form program with per-field memory reads.
///
/// Each iteration first checks that `window` (relative to `cur_ptr`) is
/// readable, as the lowered program's LOAD would.
pub fn run_source(
    program: &Program,
    window: (u16, u16),
    cur_ptr: VirtualAddress,
    init_scratch: &[u8],
    scratch_pad_bytes: usize,
    pool: &mut MemoryPool,
    max_iter: Option<u64>,
) -> Result<RefRun, RefError> {
    if program.form() != ProgramForm::Source {
        return Err(RefError::Fault(FaultCode::InvalidProgram));
    }
    drive(program, cur_ptr, init_scratch, scratch_pad_bytes, max_iter, |state| {
        let node_base = state.cur_ptr;
        pool.resolve(node_base.offset(window.0 as u64), window.1 as u64, Access::Read)
            .map_err(|e| load_error(e, node_base))?;
        let mut cond = Cond::Eq;
        let mut stores = Vec::new();
        let out = {
            let mut fields = SourceFields { pool, base: node_base, window, overlay: [None; MAX_LOAD_WINDOW] };
            let mut regs = Regs { cur_ptr: &mut state.cur_ptr, scratch: &mut state.scratch, cond: &mut cond };
            run_body(program, node_base, &mut regs, &mut fields, &mut stores)
        };
        if out.kind == LogicKind::NextIter {
            state.iterations += 1;
        }
        let stored = !stores.is_empty();
        if !matches!(out.kind, LogicKind::Fault(_)) {
            apply_stores(pool, node_base, stores)?;
        }
        finish(out.kind, out.instructions_executed, stored)
    })
}
