//! CPU-side offload: static analysis, lowering, the offload gate, request
//! bookkeeping and the host-side fallback.

mod engine;
mod host;

pub use engine::{EngineAction, OffloadEngine, OpError, OpId, OpMode, OpResult, RequestIdGen, RequestState};
pub use host::{HostProgress, HostRun, HostTiming};

use alloc::vec::Vec;

use crate::isa::{
    validate_with, Instruction, Limits, Opcode, Operand, Program, ProgramForm, ValidationReport,
    DEFAULT_SCRATCH_PAD_BYTES, MAX_LOAD_WINDOW, MAX_PROGRAM_LEN,
};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OffloadConfig {
    pub eta: u32,
    pub t_d: SimTime,
    pub t_i_ns: f64,
    pub max_iter: u16,
    /// Overrides the derived per-request timeout.
    pub timeout: Option<SimTime>,
    pub max_retransmits: u32,
    pub scratch_pad_bytes: usize,
    pub host_instr_ns: f64,
    /// CPU time to re-issue a continuation that detoured through the CPU.
    pub cpu_processing: SimTime,
}

impl Default for OffloadConfig {
    fn default() -> Self {
        OffloadConfig {
            eta: 1,
            t_d: SimTime::from_ns(120),
            t_i_ns: 7.0 / 6.0,
            max_iter: 512,
            timeout: None,
            max_retransmits: 3,
            scratch_pad_bytes: DEFAULT_SCRATCH_PAD_BYTES,
            host_instr_ns: 0.2,
            cpu_processing: SimTime::from_ns(1000),
        }
    }
}

impl OffloadConfig {
    pub fn compute_time(&self, instructions: usize) -> SimTime {
        SimTime::from_ns_f64(self.t_i_ns * instructions as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffloadAnalysis {
    /// Longest path through one iteration, counting its terminal.
    pub n: usize,
    /// `t_i * n`, rounded to the picosecond.
    pub t_c: SimTime,
    pub window_start: u16,
    pub window_len: u16,
    pub uses_store: bool,
    pub scratch_bytes_used: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("program already has a LOAD; expected source form")]
    NotSource,
    #[error("program does not start with a LOAD")]
    NotDeployable,
    #[error("invalid program: {0}")]
    Invalid(ValidationReport),
    #[error("load window [{start}, {start}+{len}) exceeds {MAX_LOAD_WINDOW} bytes")]
    WindowTooLarge { start: u32, len: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LowerError {
    #[error("already lowered")]
    AlreadyLowered,
    #[error("program too long after lowering: {0} instructions")]
    TooLong(usize),
    #[error("lowered program is invalid: {0}")]
    Invalid(ValidationReport),
}

/// Byte ranges `(offset, width)` an instruction touches in the node, as seen
/// from source form. STORE destinations are excluded: they go to memory.
fn data_touches(inst: &Instruction) -> impl Iterator<Item = (u16, usize)> + '_ {
    let w = inst.access_width();
    inst.data_reads().chain(inst.data_writes()).map(move |o| (o, w))
}

pub fn analyze(source: &Program, t_i_ns: f64) -> Result<OffloadAnalysis, AnalysisError> {
    if source.form() != ProgramForm::Source {
        return Err(AnalysisError::NotSource);
    }
    let report = validate_with(source, &Limits { scratch_pad_bytes: usize::MAX, max_instructions: MAX_PROGRAM_LEN });
    if !report.is_ok() {
        return Err(AnalysisError::Invalid(report));
    }
    let mut lo = u32::MAX;
    let mut hi = 0u32;
    for inst in &source.instructions {
        for (o, w) in data_touches(inst) {
            lo = lo.min(o as u32);
            hi = hi.max(o as u32 + w as u32);
        }
    }
    if lo == u32::MAX {
        (lo, hi) = (0, 8);
    }
    if hi - lo > MAX_LOAD_WINDOW as u32 {
        return Err(AnalysisError::WindowTooLarge { start: lo, len: hi - lo });
    }
    let n = source.longest_path();
    Ok(OffloadAnalysis {
        n,
        t_c: SimTime::from_ns_f64(t_i_ns * n as f64),
        window_start: lo as u16,
        window_len: (hi - lo) as u16,
        uses_store: source.uses_store(),
        scratch_bytes_used: source.sp_extent(),
    })
}

/// Analysis of an already lowered program, taking its window from the LOAD.
pub fn analyze_deployable(program: &Program, t_i_ns: f64) -> Result<OffloadAnalysis, AnalysisError> {
    let report = validate_with(program, &Limits { scratch_pad_bytes: usize::MAX, max_instructions: MAX_PROGRAM_LEN });
    if !report.is_ok() {
        return Err(AnalysisError::Invalid(report));
    }
    let Some((start, len)) = program.window() else {
        return Err(AnalysisError::NotDeployable);
    };
    let n = program.longest_path();
    Ok(OffloadAnalysis {
        n,
        t_c: SimTime::from_ns_f64(t_i_ns * n as f64),
        window_start: start,
        window_len: len,
        uses_store: program.uses_store(),
        scratch_bytes_used: program.sp_extent(),
    })
}

/// Prepends the aggregated LOAD, shifts jump targets past it and rebases
/// register `DATA` offsets onto the window.
pub fn lower(source: &Program, analysis: &OffloadAnalysis) -> Result<Program, LowerError> {
    if source.form() != ProgramForm::Source {
        return Err(LowerError::AlreadyLowered);
    }
    let len = source.len() + 1;
    if len > MAX_PROGRAM_LEN {
        return Err(LowerError::TooLong(len));
    }
    let start = analysis.window_start;
    let mut out = Vec::with_capacity(len);
    out.push(Instruction::load(start, analysis.window_len));
    for inst in &source.instructions {
        let mut i = *inst;
        if i.opcode.is_jump() {
            i.imm += 1;
        }
        if i.opcode != Opcode::Store {
            if let Operand::Data(o) = i.a {
                i.a = Operand::Data(o - start);
            }
        }
        if let Operand::Data(o) = i.b {
            i.b = Operand::Data(o - start);
        }
        out.push(i);
    }
    let program = Program::new(out);
    let report = validate_with(&program, &Limits { scratch_pad_bytes: usize::MAX, max_instructions: MAX_PROGRAM_LEN });
    if !report.is_ok() {
        return Err(LowerError::Invalid(report));
    }
    Ok(program)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HostReason {
    /// Per-iteration compute does not hide under the memory slot.
    Compute,
    Window,
    Scratch,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Offload,
    Host(HostReason),
}

/// The offload gate: offload iff `t_c < eta * t_d` and the program fits the
/// accelerator's window and scratch pad.
pub fn decide(analysis: Result<&OffloadAnalysis, &AnalysisError>, config: &OffloadConfig) -> Decision {
    let a = match analysis {
        Ok(a) => a,
        Err(AnalysisError::WindowTooLarge { .. }) => return Decision::Host(HostReason::Window),
        Err(_) => return Decision::Host(HostReason::Invalid),
    };
    if a.window_len as usize > MAX_LOAD_WINDOW {
        return Decision::Host(HostReason::Window);
    }
    if a.scratch_bytes_used > config.scratch_pad_bytes {
        return Decision::Host(HostReason::Scratch);
    }
    if a.t_c.as_ps() as u128 >= config.eta as u128 * config.t_d.as_ps() as u128 {
        return Decision::Host(HostReason::Compute);
    }
    Decision::Offload
}

#[cfg(test)]
mod tests;
