//! Switch routing: one rule per memory node, keyed on `cur_ptr`.

use alloc::vec::Vec;

use super::packet::{MsgType, TraversalPacket};
use crate::memory::{partition_base, partition_len, NodeId, VirtualAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub vbase: VirtualAddress,
    pub length: u64,
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Node(NodeId),
    Cpu(u16),
    /// A request whose pointer no rule covers; the switch turns it into an
    /// invalid-address response for this CPU.
    Invalid(u16),
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    entries: Vec<RouteEntry>,
}

impl RouteTable {
    /// Panics on overlapping entries.
    pub fn new(entries: Vec<RouteEntry>) -> Self {
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                let disjoint = a.vbase.0 + a.length <= b.vbase.0 || b.vbase.0 + b.length <= a.vbase.0;
                assert!(disjoint, "overlapping route entries");
            }
        }
        RouteTable { entries }
    }

    /// One rule per node covering its static partition.
    pub fn for_partitions(nodes: usize) -> Self {
        Self::new(
            (0..nodes as NodeId)
                .map(|n| RouteEntry { vbase: partition_base(n), length: partition_len(), node: n })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[RouteEntry] {
        &self.entries
    }

    pub fn lookup(&self, addr: VirtualAddress) -> Option<NodeId> {
        self.entries.iter().find(|e| addr.0 >= e.vbase.0 && addr.0 - e.vbase.0 < e.length).map(|e| e.node)
    }

    pub fn route(&self, packet: &TraversalPacket) -> Route {
        let cpu = packet.request_id.cpu();
        if packet.msg_type != MsgType::Request || packet.detour() {
            return Route::Cpu(cpu);
        }
        match self.lookup(packet.cur_ptr) {
            Some(n) => Route::Node(n),
            None => Route::Invalid(cpu),
        }
    }
}
