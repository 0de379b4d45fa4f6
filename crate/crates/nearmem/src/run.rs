//! Single traversals against an optional prebuilt structure.

use std::path::Path;
use std::str::FromStr;

use nearmem_core::datastructs::{
    gen_traversal, Agg, BuildOptions, DsError, Kind, Operation, Oracle, Placement, StructureHandle,
};
use nearmem_core::isa::{assemble, decode, AsmError, DecodeError, Program};
use nearmem_core::offload::{OpMode, OpResult};
use nearmem_core::rack::{Rack, RackConfig, SubmitError};
use nearmem_core::{SimTime, VirtualAddress};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Build(#[from] DsError),
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error("{0}")]
    Usage(String),
}

/// A structure to build before the traversal runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    pub kind: Kind,
    pub entries: Vec<(u64, u64)>,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    #[serde(default = "default_value_bytes")]
    pub hash_value_bytes: u16,
    #[serde(default)]
    pub placement: Placement,
}

fn default_buckets() -> usize {
    BuildOptions::default().buckets
}

fn default_value_bytes() -> u16 {
    BuildOptions::default().hash_value_bytes
}

impl StructureFile {
    pub fn options(&self) -> BuildOptions {
        BuildOptions {
            buckets: self.buckets,
            hash_value_bytes: self.hash_value_bytes,
            placement: self.placement,
            nodes: 1,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, RunError> {
    std::fs::read(path).map_err(|source| RunError::Io { path: path.display().to_string(), source })
}

pub fn load_structure(path: &Path) -> Result<StructureFile, RunError> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|source| RunError::Parse { path: path.display().to_string(), source })
}

/// Reads assembler text, or the binary encoding when the file is not UTF-8
/// or ends in `.bin`.
pub fn load_program(path: &Path) -> Result<Program, RunError> {
    let bytes = read(path)?;
    let binary = path.extension().is_some_and(|e| e == "bin");
    match std::str::from_utf8(&bytes) {
        Ok(text) if !binary => Ok(assemble(text)?),
        _ => Ok(decode(&bytes)?),
    }
}

fn parse_u64(s: &str) -> Result<u64, RunError> {
    let bad = || RunError::Usage(format!("not a number: `{s}`"));
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(h) => u64::from_str_radix(h, 16).map_err(|_| bad()),
        None => s.parse().map_err(|_| bad()),
    }
}

/// Where a traversal starts: an address, the structure root, or a hash
/// bucket head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurPtr {
    Addr(u64),
    Root,
    Bucket(usize),
}

impl FromStr for CurPtr {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        if s == "root" {
            return Ok(CurPtr::Root);
        }
        if let Some(b) = s.strip_prefix("bucket:") {
            return Ok(CurPtr::Bucket(parse_u64(b)? as usize));
        }
        Ok(CurPtr::Addr(parse_u64(s)?))
    }
}

impl CurPtr {
    fn resolve(self, handle: Option<&StructureHandle>) -> Result<VirtualAddress, RunError> {
        let need = || RunError::Usage("`root` and `bucket:N` need --structure".into());
        match self {
            CurPtr::Addr(a) => Ok(VirtualAddress(a)),
            CurPtr::Root => Ok(handle.ok_or_else(need)?.root),
            CurPtr::Bucket(i) => handle
                .ok_or_else(need)?
                .buckets
                .get(i)
                .copied()
                .ok_or_else(|| RunError::Usage(format!("no bucket {i}"))),
        }
    }
}

/// `find:K`, `lower_bound:K` or `scan:AGG:LO:HI`.
pub fn parse_op(s: &str) -> Result<Operation, RunError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || RunError::Usage(format!("bad operation `{s}`; expected find:K, lower_bound:K or scan:AGG:LO:HI"));
    match parts.as_slice() {
        ["find", k] => Ok(Operation::Find(parse_u64(k)?)),
        ["lower_bound", k] => Ok(Operation::LowerBound(parse_u64(k)?)),
        ["scan", agg, lo, hi] => {
            let agg = match *agg {
                "sum" => Agg::Sum,
                "count" => Agg::Count,
                "min" => Agg::Min,
                "max" => Agg::Max,
                _ => return Err(bad()),
            };
            Ok(Operation::ScanAgg { agg, lo: parse_u64(lo)?, hi: parse_u64(hi)? })
        }
        _ => Err(bad()),
    }
}

/// Inputs to one traversal. Either `program` or `op` must be set; explicit
/// `cur_ptr` and `scratch` override what `op` derives.
#[derive(Debug, Clone, Default)]
pub struct RunRequest {
    pub structure: Option<StructureFile>,
    pub program: Option<Program>,
    pub op: Option<Operation>,
    pub cur_ptr: Option<CurPtr>,
    pub scratch: Option<Vec<u8>>,
    pub host: bool,
}

pub struct RunReport {
    pub result: OpResult,
    /// Bytes of the result range when an operation was given.
    pub answer: Option<Vec<u8>>,
    /// Whether `answer` equals the in-process oracle.
    pub oracle_match: Option<bool>,
    pub rack: Rack,
}

impl RunReport {
    pub fn latency(&self) -> SimTime {
        self.result.completed.saturating_sub(self.result.issued)
    }
}

pub fn run_one(config: RackConfig, req: RunRequest) -> Result<RunReport, RunError> {
    let mut rack = Rack::new(config);
    let handle = match &req.structure {
        Some(s) => Some(rack.build(s.kind, &s.entries, &s.options())?),
        None => None,
    };
    let traversal = match (&req.op, &handle) {
        (Some(op), Some(h)) => Some(gen_traversal(h, op)?),
        (Some(_), None) => return Err(RunError::Usage("--op needs --structure".into())),
        (None, _) => None,
    };
    let program = match (&req.program, &traversal) {
        (Some(p), _) => p.clone(),
        (None, Some(t)) => t.program.clone(),
        (None, None) => return Err(RunError::Usage("give --program or --op".into())),
    };
    let cur_ptr = match (req.cur_ptr, &traversal) {
        (Some(c), _) => c.resolve(handle.as_ref())?,
        (None, Some(t)) => t.init_cur_ptr,
        (None, None) => return Err(RunError::Usage("--cur-ptr is required without --op".into())),
    };
    let scratch = match (&req.scratch, &traversal) {
        (Some(s), _) => s.clone(),
        (None, Some(t)) => t.init_scratch.clone(),
        (None, None) => Vec::new(),
    };
    let mode = if req.host { OpMode::Host } else { OpMode::Offload };
    let result = rack.execute(&program, cur_ptr, scratch, mode)?;
    let (answer, oracle_match) = match (&req.op, &handle, &traversal, &result.result) {
        (Some(op), Some(h), Some(t), Ok(bytes)) => {
            let answer = bytes.get(t.result.clone()).map(<[u8]>::to_vec);
            let entries = req.structure.as_ref().map_or(&[][..], |s| &s.entries[..]);
            let expected = Oracle::new(h, entries).run(op)?;
            let matched = answer.as_deref() == Some(expected.as_slice());
            (answer, Some(matched))
        }
        _ => (None, None),
    };
    Ok(RunReport { result, answer, oracle_match, rack })
}
