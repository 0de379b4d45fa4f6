//! Linked data structures laid out in rack memory, traversal program
//! generators for them, and in-process oracles.
//!
//! Every structure stores fixed-size nodes whose fields all fall inside one
//! LOAD window. Builders run host-side and write bytes through the pool;
//! generators emit source-form programs plus the initial pointer and scratch
//! pad that the host computes before offloading.

mod build;
mod gen;
mod oracle;

pub use build::{build, BuildOptions, Placement};
pub use gen::{gen_traversal, result_range, sp as slots};
pub use oracle::Oracle;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::ops::Range;

use crate::isa::Program;
use crate::memory::{AccessError, MemoryError, VirtualAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Kind {
    List,
    HashMap,
    #[cfg_attr(feature = "serde", serde(rename = "btree"))]
    BTree,
    RbMap,
    Avl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Agg {
    Sum,
    Count,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Find(u64),
    LowerBound(u64),
    /// Aggregate values whose keys fall in `lo..=hi`.
    ScanAgg {
        agg: Agg,
        lo: u64,
        hi: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field {
    pub name: &'static str,
    pub offset: u16,
    pub width: u16,
}

/// Byte layout of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLayout {
    pub size: u16,
    pub fields: Vec<Field>,
}

impl NodeLayout {
    fn of(size: u16, fields: &[(&'static str, u16, u16)]) -> NodeLayout {
        let fields = fields.iter().map(|&(name, offset, width)| Field { name, offset, width }).collect();
        let layout = NodeLayout { size, fields };
        debug_assert!(layout.is_well_formed());
        layout
    }

    /// Panics on unknown field names; layouts are fixed per kind.
    pub fn offset(&self, name: &str) -> u16 {
        self.field(name).unwrap_or_else(|| panic!("no field {name}")).offset
    }

    pub fn field(&self, name: &str) -> Option<Field> {
        self.fields.iter().copied().find(|f| f.name == name)
    }

    /// Fields in bounds and pairwise disjoint.
    pub fn is_well_formed(&self) -> bool {
        let mut spans: Vec<(u16, u16)> = self.fields.iter().map(|f| (f.offset, f.offset + f.width)).collect();
        spans.sort_unstable();
        spans.iter().all(|s| s.1 <= self.size) && spans.windows(2).all(|w| w[0].1 <= w[1].0)
    }

    /// key@0, next@8.
    pub fn list() -> NodeLayout {
        Self::of(16, &[("key", 0, 8), ("next", 8, 8)])
    }

    /// key@0, value@8, next after the value.
    pub fn hash(value_bytes: u16) -> NodeLayout {
        Self::of(value_bytes + 16, &[("key", 0, 8), ("value", 8, value_bytes), ("next", 8 + value_bytes, 8)])
    }

    /// Leaves reuse `children[0..8]` for values and `children[8]` as the
    /// link to the next leaf.
    pub fn btree() -> NodeLayout {
        Self::of(
            152,
            &[
                ("is_leaf", 0, 1),
                ("num_keys", 1, 1),
                ("keys", 8, 8 * BTREE_FANOUT as u16),
                ("children", 72, 8 * (BTREE_FANOUT as u16 + 1)),
            ],
        )
    }

    pub fn bst() -> NodeLayout {
        Self::of(40, &[("key", 0, 8), ("value", 8, 8), ("left", 16, 8), ("right", 24, 8), ("meta", 32, 8)])
    }
}

/// Keys per B+tree node.
pub const BTREE_FANOUT: usize = 8;

/// Value field width of the canonical hash layout.
pub const HASH_VALUE_BYTES: u16 = 32;

const HASH_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn bucket_of(key: u64, buckets: usize) -> usize {
    ((key.wrapping_mul(HASH_MULTIPLIER) >> 32) % buckets as u64) as usize
}

/// A built structure.
#[derive(Debug, Clone)]
pub struct StructureHandle {
    pub kind: Kind,
    pub layout: NodeLayout,
    /// Head, root or null when empty. Unused for hash maps.
    pub root: VirtualAddress,
    /// Hash bucket heads, kept host-side.
    pub buckets: Vec<VirtualAddress>,
    pub len: usize,
    /// Levels from root to leaf (B+tree and binary trees).
    pub height: usize,
    /// Node address per key.
    pub addrs: BTreeMap<u64, VirtualAddress>,
}

/// What to run and how to start it, plus where the answer lands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraversalSpec {
    pub program: Program,
    pub init_cur_ptr: VirtualAddress,
    pub init_scratch: Vec<u8>,
    /// Scratch bytes that hold the answer.
    pub result: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DsError {
    #[error("{0:?} does not support this operation")]
    Unsupported(Kind),
    #[error("duplicate key {0}")]
    DuplicateKey(u64),
    #[error("value {0:#x} is reserved as the not-found sentinel")]
    ReservedValue(u64),
    #[error("value does not fit the {0}-byte value field")]
    ValueTooWide(u16),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Access(#[from] AccessError),
}
