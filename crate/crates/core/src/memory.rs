//! Disaggregated memory: per-node byte stores with range-based translation
//! and protection, the rack-wide static partitioning of the virtual address
//! space, and host-side allocation policies.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use thiserror::Error;

/// log2 of the virtual span owned by each memory node.
pub const PARTITION_SHIFT: u32 = 40;

/// Default logical capacity of a memory node (backing bytes grow lazily).
pub const DEFAULT_NODE_CAPACITY: u64 = 1 << 32;

/// Allocation granularity.
const ALIGN: u64 = 8;

/// An address in the rack-wide virtual space. Zero is the null sentinel and
/// is never mapped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VirtualAddress(pub u64);

impl VirtualAddress {
    pub const NULL: VirtualAddress = VirtualAddress(0);

    pub fn is_null(self) -> bool {
        self.0 == 0
    }

    pub fn offset(self, by: u64) -> VirtualAddress {
        VirtualAddress(self.0.wrapping_add(by))
    }
}

impl fmt::Display for VirtualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

pub type NodeId = u16;

/// First address of the static virtual partition owned by `node`.
///
/// Node `i` owns `[(i + 1) << 40, (i + 2) << 40)`; the span below `1 << 40`
/// belongs to nobody so that null and small integers never route.
pub fn partition_base(node: NodeId) -> VirtualAddress {
    VirtualAddress((node as u64 + 1) << PARTITION_SHIFT)
}

pub fn partition_len() -> u64 {
    1 << PARTITION_SHIFT
}

/// Which node's static partition contains `addr`, given `nodes` nodes.
pub fn partition_owner(addr: VirtualAddress, nodes: usize) -> Option<NodeId> {
    let slot = addr.0 >> PARTITION_SHIFT;
    if slot == 0 || slot > nodes as u64 {
        None
    } else {
        Some((slot - 1) as NodeId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Perms(u8);

impl Perms {
    pub const NONE: Perms = Perms(0);
    pub const READ: Perms = Perms(1);
    pub const WRITE: Perms = Perms(2);
    pub const READ_WRITE: Perms = Perms(3);

    pub fn allows(self, access: Access) -> bool {
        match access {
            Access::Read => self.0 & 1 != 0,
            Access::Write => self.0 & 2 != 0,
        }
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Perms {
        Perms(bits & 3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TranslationEntry {
    pub vbase: VirtualAddress,
    pub length: u64,
    /// Offset of `vbase` inside the owning node's store.
    pub pbase: u64,
    pub perms: Perms,
}

impl TranslationEntry {
    pub fn vend(&self) -> u64 {
        self.vbase.0 + self.length
    }

    pub fn covers(&self, addr: u64) -> bool {
        addr >= self.vbase.0 && addr < self.vend()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    /// An entry covers the address but lacks the needed permission.
    Permission,
    /// The access starts inside an entry but runs past its end.
    Straddle,
}

/// Outcome of a range translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Translation {
    Hit(u64),
    Miss,
    Fault(FaultKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("access [{offset}, +{len}) out of bounds (capacity {capacity})")]
    OutOfBounds { offset: u64, len: u64, capacity: u64 },
    #[error("out of capacity: {requested} bytes requested")]
    OutOfCapacity { requested: u64 },
    #[error("zero-sized allocation or mapping")]
    ZeroSize,
    #[error("mapping {vbase} overlaps an existing entry")]
    Overlap { vbase: VirtualAddress },
    #[error("mapping {vbase} lies outside node {node}'s partition")]
    OutsidePartition { vbase: VirtualAddress, node: NodeId },
    #[error("no such node {0}")]
    NoSuchNode(NodeId),
}

/// One memory node: a byte store plus its local translation table.
#[derive(Debug, Clone)]
pub struct MemoryNodeStore {
    node_id: NodeId,
    capacity: u64,
    contents: Vec<u8>,
    table: BTreeMap<u64, TranslationEntry>,
    /// Next free physical offset for bump allocation.
    phys_cursor: u64,
}

impl MemoryNodeStore {
    pub fn new(node_id: NodeId, capacity: u64) -> Self {
        MemoryNodeStore { node_id, capacity, contents: Vec::new(), table: BTreeMap::new(), phys_cursor: 0 }
    }

    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Bytes actually materialized (everything above reads as zero).
    pub fn contents(&self) -> &[u8] {
        &self.contents
    }

    pub fn entries(&self) -> impl Iterator<Item = &TranslationEntry> {
        self.table.values()
    }

    pub fn phys_used(&self) -> u64 {
        self.phys_cursor
    }

    /// Installs a translation entry. It must be non-empty, fit in the store
    /// and not overlap any existing entry in virtual space.
    pub fn install(&mut self, entry: TranslationEntry) -> Result<(), MemoryError> {
        if entry.length == 0 {
            return Err(MemoryError::ZeroSize);
        }
        let pend = entry.pbase.checked_add(entry.length);
        if pend.is_none_or(|end| end > self.capacity) {
            return Err(MemoryError::OutOfBounds { offset: entry.pbase, len: entry.length, capacity: self.capacity });
        }
        let overlaps_prev =
            self.table.range(..=entry.vbase.0).next_back().is_some_and(|(_, e)| e.vend() > entry.vbase.0);
        let overlaps_next = self.table.range(entry.vbase.0..).next().is_some_and(|(start, _)| *start < entry.vend());
        if overlaps_prev || overlaps_next {
            return Err(MemoryError::Overlap { vbase: entry.vbase });
        }
        self.table.insert(entry.vbase.0, entry);
        self.phys_cursor = self.phys_cursor.max(entry.pbase + entry.length);
        Ok(())
    }

    /// Grows the entry starting at `vbase` by `extra` bytes. Used by the bump
    /// allocator to keep one entry per contiguous run.
    fn extend(&mut self, vbase: VirtualAddress, extra: u64) {
        if let Some(e) = self.table.get_mut(&vbase.0) {
            e.length += extra;
            self.phys_cursor = self.phys_cursor.max(e.pbase + e.length);
        }
    }

    pub fn translate(&self, addr: VirtualAddress, len: u64, access: Access) -> Translation {
        let Some((_, entry)) = self.table.range(..=addr.0).next_back() else {
            return Translation::Miss;
        };
        if !entry.covers(addr.0) {
            return Translation::Miss;
        }
        if !entry.perms.allows(access) {
            return Translation::Fault(FaultKind::Permission);
        }
        match addr.0.checked_add(len) {
            Some(end) if end <= entry.vend() => Translation::Hit(entry.pbase + (addr.0 - entry.vbase.0)),
            _ => Translation::Fault(FaultKind::Straddle),
        }
    }

    fn check(&self, offset: u64, len: u64) -> Result<(), MemoryError> {
        match offset.checked_add(len) {
            Some(end) if end <= self.capacity && (len > 0 || offset < self.capacity) => Ok(()),
            _ => Err(MemoryError::OutOfBounds { offset, len, capacity: self.capacity }),
        }
    }

    /// Copies `buf.len()` bytes starting at physical `offset` into `buf`.
    pub fn read_into(&self, offset: u64, buf: &mut [u8]) -> Result<(), MemoryError> {
        if buf.is_empty() {
            return Ok(());
        }
        self.check(offset, buf.len() as u64)?;
        let start = offset as usize;
        let have = self.contents.len();
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if start + i < have { self.contents[start + i] } else { 0 };
        }
        Ok(())
    }

    pub fn read(&self, offset: u64, len: usize) -> Result<Vec<u8>, MemoryError> {
        let mut out = vec![0; len];
        self.read_into(offset, &mut out)?;
        Ok(out)
    }

    pub fn write(&mut self, offset: u64, bytes: &[u8]) -> Result<(), MemoryError> {
        if bytes.is_empty() {
            return Ok(());
        }
        self.check(offset, bytes.len() as u64)?;
        let end = offset as usize + bytes.len();
        if self.contents.len() < end {
            self.contents.resize(end, 0);
        }
        self.contents[offset as usize..end].copy_from_slice(bytes);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AllocationPolicy {
    /// Round-robin across nodes, one allocation at a time.
    #[default]
    Uniform,
    /// A partition hint pins the allocation to node `hint % nodes`.
    Partitioned,
}

/// All memory nodes of a rack.
#[derive(Debug, Clone)]
pub struct MemoryPool {
    nodes: Vec<MemoryNodeStore>,
}

impl MemoryPool {
    pub fn new(nodes: usize, capacity: u64) -> Self {
        MemoryPool { nodes: (0..nodes).map(|i| MemoryNodeStore::new(i as NodeId, capacity)).collect() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &MemoryNodeStore {
        &self.nodes[id as usize]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut MemoryNodeStore {
        &mut self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[MemoryNodeStore] {
        &self.nodes
    }

    pub fn owner(&self, addr: VirtualAddress) -> Option<NodeId> {
        partition_owner(addr, self.nodes.len())
    }

    /// Maps `[vbase, vbase + len)` on the node owning `vbase`, backed by fresh
    /// physical space.
    pub fn map(&mut self, vbase: VirtualAddress, len: u64, perms: Perms) -> Result<NodeId, MemoryError> {
        let node = self.owner(vbase).ok_or(MemoryError::OutsidePartition { vbase, node: 0 })?;
        let last = vbase.0.checked_add(len.saturating_sub(1));
        if last.map(VirtualAddress).and_then(|a| self.owner(a)) != Some(node) {
            return Err(MemoryError::OutsidePartition { vbase, node });
        }
        let store = &mut self.nodes[node as usize];
        let pbase = store.phys_cursor.next_multiple_of(ALIGN);
        store.install(TranslationEntry { vbase, length: len, pbase, perms })?;
        Ok(node)
    }

    /// Resolves and reads `len` bytes at a virtual address anywhere in the
    /// rack (the untimed view used by host-side code and oracles).
    pub fn read_virtual(&self, addr: VirtualAddress, len: usize) -> Result<Vec<u8>, AccessError> {
        let (node, phys) = self.resolve(addr, len as u64, Access::Read)?;
        Ok(self.nodes[node as usize].read(phys, len)?)
    }

    pub fn write_virtual(&mut self, addr: VirtualAddress, bytes: &[u8]) -> Result<(), AccessError> {
        let (node, phys) = self.resolve(addr, bytes.len() as u64, Access::Write)?;
        Ok(self.nodes[node as usize].write(phys, bytes)?)
    }

    /// Host-side initialization write that ignores permissions.
    pub fn poke(&mut self, addr: VirtualAddress, bytes: &[u8]) -> Result<(), AccessError> {
        let node = self.owner(addr).ok_or(AccessError::Unmapped(addr))?;
        let store = &mut self.nodes[node as usize];
        let Some((_, e)) = store.table.range(..=addr.0).next_back() else {
            return Err(AccessError::Unmapped(addr));
        };
        if !e.covers(addr.0) {
            return Err(AccessError::Unmapped(addr));
        }
        if addr.0 + bytes.len() as u64 > e.vend() {
            return Err(AccessError::Fault(addr, FaultKind::Straddle));
        }
        let phys = e.pbase + (addr.0 - e.vbase.0);
        Ok(store.write(phys, bytes)?)
    }

    pub fn resolve(&self, addr: VirtualAddress, len: u64, access: Access) -> Result<(NodeId, u64), AccessError> {
        let node = self.owner(addr).ok_or(AccessError::Unmapped(addr))?;
        match self.nodes[node as usize].translate(addr, len, access) {
            Translation::Hit(p) => Ok((node, p)),
            Translation::Miss => Err(AccessError::Unmapped(addr)),
            Translation::Fault(kind) => Err(AccessError::Fault(addr, kind)),
        }
    }
}

/// Failure of a rack-wide virtual access.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("address {0} is not mapped")]
    Unmapped(VirtualAddress),
    #[error("{1:?} fault at {0}")]
    Fault(VirtualAddress, FaultKind),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Bump allocator over a [`MemoryPool`].
///
/// Consecutive allocations on a node extend that node's current translation
/// entry, so a node ends up with one entry per contiguous run.
#[derive(Debug, Clone)]
pub struct Allocator {
    policy: AllocationPolicy,
    next_rr: usize,
    /// Per node: (vbase of the open entry, bytes handed out in it).
    open: Vec<Option<(VirtualAddress, u64)>>,
}

impl Allocator {
    pub fn new(policy: AllocationPolicy, nodes: usize) -> Self {
        Allocator { policy, next_rr: 0, open: vec![None; nodes] }
    }

    pub fn policy(&self) -> AllocationPolicy {
        self.policy
    }

    /// Picks the node for the next allocation without allocating.
    pub fn choose(&mut self, hint: Option<u32>) -> NodeId {
        let n = self.open.len();
        match (self.policy, hint) {
            (AllocationPolicy::Partitioned, Some(h)) => (h as usize % n) as NodeId,
            _ => {
                let node = self.next_rr % n;
                self.next_rr += 1;
                node as NodeId
            }
        }
    }

    pub fn allocate(
        &mut self,
        pool: &mut MemoryPool,
        size: u64,
        hint: Option<u32>,
    ) -> Result<VirtualAddress, MemoryError> {
        if size == 0 {
            return Err(MemoryError::ZeroSize);
        }
        let node = self.choose(hint);
        self.allocate_on(pool, node, size)
    }

    /// Allocates on an explicit node, bypassing the policy.
    pub fn allocate_on(
        &mut self,
        pool: &mut MemoryPool,
        node: NodeId,
        size: u64,
    ) -> Result<VirtualAddress, MemoryError> {
        if size == 0 {
            return Err(MemoryError::ZeroSize);
        }
        if node as usize >= pool.len() {
            return Err(MemoryError::NoSuchNode(node));
        }
        let size = size.next_multiple_of(ALIGN);
        let store = pool.node_mut(node);
        if store.phys_cursor + size > store.capacity {
            return Err(MemoryError::OutOfCapacity { requested: size });
        }
        match self.open[node as usize] {
            Some((vbase, used))
                if store.table.get(&vbase.0).map(|e| e.length) == Some(used)
                    && store.phys_cursor == store.table[&vbase.0].pbase + used =>
            {
                store.extend(vbase, size);
                self.open[node as usize] = Some((vbase, used + size));
                Ok(vbase.offset(used))
            }
            _ => {
                // Start a fresh run past everything already mapped on the node.
                let vstart = store
                    .table
                    .values()
                    .map(|e| e.vend())
                    .max()
                    .unwrap_or(partition_base(node).0)
                    .next_multiple_of(ALIGN);
                let vbase = VirtualAddress(vstart);
                let pbase = store.phys_cursor.next_multiple_of(ALIGN);
                if pbase + size > store.capacity {
                    return Err(MemoryError::OutOfCapacity { requested: size });
                }
                store.install(TranslationEntry { vbase, length: size, pbase, perms: Perms::READ_WRITE })?;
                self.open[node as usize] = Some((vbase, size));
                Ok(vbase)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_rotates_nodes() {
        let mut pool = MemoryPool::new(2, 1 << 20);
        let mut alloc = Allocator::new(AllocationPolicy::Uniform, 2);
        let a = alloc.allocate(&mut pool, 48, None).unwrap();
        let b = alloc.allocate(&mut pool, 48, None).unwrap();
        assert_ne!(pool.owner(a), pool.owner(b));
    }

    #[test]
    fn partitioned_pins_hint() {
        let mut pool = MemoryPool::new(2, 1 << 20);
        let mut alloc = Allocator::new(AllocationPolicy::Partitioned, 2);
        for _ in 0..10 {
            let a = alloc.allocate(&mut pool, 48, Some(0)).unwrap();
            assert_eq!(pool.owner(a), Some(0));
        }
    }

    #[test]
    fn out_of_capacity() {
        let mut pool = MemoryPool::new(1, 4096);
        let mut alloc = Allocator::new(AllocationPolicy::Uniform, 1);
        assert_eq!(alloc.allocate(&mut pool, 4097, None), Err(MemoryError::OutOfCapacity { requested: 4104 }));
        assert_eq!(alloc.allocate(&mut pool, 0, None), Err(MemoryError::ZeroSize));
    }

    #[test]
    fn translate_hit_fault_miss() {
        let mut node = MemoryNodeStore::new(0, 1 << 20);
        let entry = TranslationEntry { vbase: VirtualAddress(0x1000), length: 4096, pbase: 0x8000, perms: Perms::READ };
        node.install(entry).unwrap();
        assert_eq!(node.translate(VirtualAddress(0x1010), 48, Access::Read), Translation::Hit(0x8010));
        assert_eq!(
            node.translate(VirtualAddress(0x1010), 48, Access::Write),
            Translation::Fault(FaultKind::Permission)
        );
        assert_eq!(node.translate(VirtualAddress(0x9000), 8, Access::Read), Translation::Miss);
        assert_eq!(node.translate(VirtualAddress(0x1ff8), 16, Access::Read), Translation::Fault(FaultKind::Straddle));
        assert_eq!(node.translate(VirtualAddress(0x2000), 8, Access::Read), Translation::Miss);
        assert_eq!(node.translate(VirtualAddress(0xfff), 8, Access::Read), Translation::Miss);
    }

    #[test]
    fn install_rejects_overlap_and_empty() {
        let mut node = MemoryNodeStore::new(0, 1 << 20);
        let e = |v, l| TranslationEntry { vbase: VirtualAddress(v), length: l, pbase: 0, perms: Perms::READ };
        node.install(e(0x1000, 0x100)).unwrap();
        assert!(matches!(node.install(e(0x10f0, 0x100)), Err(MemoryError::Overlap { .. })));
        assert!(matches!(node.install(e(0x0f00, 0x101)), Err(MemoryError::Overlap { .. })));
        assert_eq!(node.install(e(0x3000, 0)), Err(MemoryError::ZeroSize));
        node.install(e(0x1100, 0x100)).unwrap();
        let big = TranslationEntry { vbase: VirtualAddress(0x9000), length: 2 << 20, pbase: 0, perms: Perms::READ };
        assert!(matches!(node.install(big), Err(MemoryError::OutOfBounds { .. })));
    }

    #[test]
    fn read_write_bounds() {
        let mut node = MemoryNodeStore::new(0, 4096);
        let bytes: Vec<u8> = (0..48).collect();
        node.write(0, &bytes).unwrap();
        assert_eq!(node.read(0, 48).unwrap(), bytes);
        assert!(matches!(node.read(4096, 1), Err(MemoryError::OutOfBounds { .. })));
        assert!(matches!(node.read(4090, 8), Err(MemoryError::OutOfBounds { .. })));
        assert_eq!(node.read(10, 0).unwrap(), Vec::<u8>::new());
        assert_eq!(node.read(1000, 4).unwrap(), [0; 4]);
    }

    #[test]
    fn partitions_exclude_null() {
        assert_eq!(partition_owner(VirtualAddress::NULL, 4), None);
        assert_eq!(partition_owner(partition_base(0), 4), Some(0));
        assert_eq!(partition_owner(partition_base(3).offset(5), 4), Some(3));
        assert_eq!(partition_owner(partition_base(4), 4), None);
    }

    proptest! {
        #[test]
        fn allocations_disjoint_and_readable(
            sizes in proptest::collection::vec((1u64..300, proptest::option::of(0u32..4)), 1..60),
            partitioned in any::<bool>(),
            nodes in 1usize..4,
        ) {
            let policy = if partitioned { AllocationPolicy::Partitioned } else { AllocationPolicy::Uniform };
            let mut pool = MemoryPool::new(nodes, 1 << 24);
            let mut alloc = Allocator::new(policy, nodes);
            let mut ranges: Vec<(u64, u64)> = Vec::new();
            for (size, hint) in sizes {
                let a = alloc.allocate(&mut pool, size, hint).unwrap();
                let node = pool.owner(a).unwrap();
                if partitioned {
                    if let Some(h) = hint {
                        prop_assert_eq!(node as usize, h as usize % nodes);
                    }
                }
                for off in [0, size / 2, size - 1] {
                    let hit = pool.node(node).translate(a.offset(off), 1, Access::Read);
                    prop_assert!(matches!(hit, Translation::Hit(_)));
                }
                prop_assert!(matches!(pool.node(node).translate(a, size, Access::Write), Translation::Hit(_)));
                ranges.push((a.0, a.0 + size));
            }
            ranges.sort();
            for w in ranges.windows(2) {
                prop_assert!(w[0].1 <= w[1].0);
            }
        }

        #[test]
        fn translation_is_total(addr in any::<u64>(), len in 1u64..512) {
            let mut node = MemoryNodeStore::new(0, 1 << 20);
            node.install(TranslationEntry { vbase: VirtualAddress(1 << 12), length: 1 << 16, pbase: 0, perms: Perms::READ }).unwrap();
            match node.translate(VirtualAddress(addr), len, Access::Read) {
                Translation::Hit(p) => {
                    prop_assert!(addr >= 1 << 12 && addr.saturating_add(len) <= (1 << 12) + (1 << 16));
                    prop_assert_eq!(p, addr - (1 << 12));
                }
                Translation::Miss => prop_assert!(!((1 << 12)..(1 << 12) + (1 << 16)).contains(&addr)),
                Translation::Fault(FaultKind::Straddle) => prop_assert!(addr.saturating_add(len) > (1 << 12) + (1 << 16)),
                Translation::Fault(FaultKind::Permission) => prop_assert!(false),
            }
        }
    }
}
