//! Deterministic simulator and toolchain for near-memory pointer-traversal
//! offload on rack-scale disaggregated memory.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation driven by a discrete-event kernel; file formats, the CLI and
//! tracing sinks live in the `nearmem` companion crate.
//!
//! Module map:
//!
//! - [`isa`]: the traversal instruction set, its validator, binary codec and
//!   assembler.
//! - [`memory`]: range-based translation, per-node byte stores and
//!   allocation policies.
//! - [`accelerator`]: the per-node pipelined engine (workspaces, memory and
//!   logic pipelines, scheduler) plus the untimed reference interpreter.
//! - [`offload`]: CPU-side static analysis, lowering, the offload gate and
//!   request bookkeeping.
//! - [`fabric`]: wire format, switch routing, link model and the event kernel.
//! - [`rack`]: the simulation world wiring a CPU node, the switch and memory
//!   nodes together.
//! - [`datastructs`]: linked structures laid into remote memory, traversal
//!   generators and in-process oracles.
//! - [`workload`]: workload generators, closed-loop runs and metrics.
#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod accelerator;
pub mod datastructs;
pub mod fabric;
pub mod isa;
pub mod memory;
pub mod offload;
pub mod rack;
pub mod time;
pub mod workload;

pub use isa::{Instruction, Opcode, Operand, Program};
pub use memory::VirtualAddress;
pub use time::SimTime;
