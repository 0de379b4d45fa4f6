//! Host-side execution with ordinary remote memory accesses.

use alloc::vec::Vec;

use super::engine::OpError;
use crate::accelerator::{step_reference, RefError, RefState};
use crate::isa::Program;
use crate::memory::{MemoryPool, VirtualAddress};
use crate::time::SimTime;

/// Traversals running longer than this on the host are abandoned.
pub const HOST_ITERATION_CAP: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HostTiming {
    /// One remote read or write: a full round trip plus a memory slot.
    pub remote_access: SimTime,
    pub host_instr_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostProgress {
    Continue,
    Done(Vec<u8>),
    Failed(OpError),
}

/// A deployable program interpreted at the CPU node, one iteration at a
/// time so that concurrent traversals interleave in simulated time.
#[derive(Debug, Clone)]
pub struct HostRun {
    program: Program,
    state: RefState,
    result_len: usize,
    accesses: u64,
}

impl HostRun {
    pub fn new(program: Program, cur_ptr: VirtualAddress, init_scratch: &[u8], scratch_pad_bytes: usize) -> Self {
        let result_len = crate::accelerator::result_len(&program, init_scratch.len());
        let state = RefState::new(cur_ptr, init_scratch, scratch_pad_bytes.max(result_len));
        HostRun { program, state, result_len, accesses: 0 }
    }

    pub fn iterations(&self) -> u64 {
        self.state.iterations
    }

    /// Remote reads and write-backs issued so far.
    pub fn accesses(&self) -> u64 {
        self.accesses
    }

    /// Runs one iteration and returns how long it took on the host.
    pub fn step(&mut self, pool: &mut MemoryPool, timing: &HostTiming) -> (SimTime, HostProgress) {
        let load = timing.remote_access;
        self.accesses += 1;
        match step_reference(&self.program, &mut self.state, pool) {
            Ok(s) => {
                let mut t = load + SimTime::from_ns_f64(timing.host_instr_ns * s.instructions_executed as f64);
                if s.stored {
                    self.accesses += 1;
                    t += timing.remote_access;
                }
                let progress = if s.returned {
                    let mut scratch = self.state.scratch.clone();
                    scratch.truncate(self.result_len);
                    HostProgress::Done(scratch)
                } else if self.state.iterations >= HOST_ITERATION_CAP {
                    HostProgress::Failed(OpError::HostIterationCap)
                } else {
                    HostProgress::Continue
                };
                (t, progress)
            }
            Err(RefError::Fault(f)) => (load, HostProgress::Failed(OpError::Fault(f))),
            Err(RefError::InvalidAddress(a)) => (load, HostProgress::Failed(OpError::InvalidAddress(a))),
        }
    }
}
