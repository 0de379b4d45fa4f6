//! Textbook in-process answers rendered in the scratch conventions of the
//! generated programs.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{Agg, DsError, Kind, Operation, StructureHandle};
use crate::isa::KEY_NOT_FOUND;

/// An ordinary ordered map built from the same entries as a structure, plus
/// the node addresses the structure assigned.
#[derive(Debug, Clone)]
pub struct Oracle {
    kind: Kind,
    map: BTreeMap<u64, u64>,
    addrs: BTreeMap<u64, u64>,
}

fn words(ws: &[u64]) -> Vec<u8> {
    ws.iter().flat_map(|w| w.to_le_bytes()).collect()
}

impl Oracle {
    pub fn new(handle: &StructureHandle, entries: &[(u64, u64)]) -> Self {
        Oracle {
            kind: handle.kind,
            map: entries.iter().copied().collect(),
            addrs: handle.addrs.iter().map(|(&k, a)| (k, a.0)).collect(),
        }
    }

    /// Expected bytes of the result range for `op`.
    pub fn run(&self, op: &Operation) -> Result<Vec<u8>, DsError> {
        match (self.kind, *op) {
            (Kind::List, Operation::Find(k)) => Ok(words(&[self.addrs.get(&k).copied().unwrap_or(KEY_NOT_FOUND)])),
            (Kind::HashMap | Kind::BTree, Operation::Find(k)) => {
                Ok(words(&[self.map.get(&k).copied().unwrap_or(KEY_NOT_FOUND)]))
            }
            (Kind::BTree, Operation::ScanAgg { agg, lo, hi }) => {
                let values = || self.map.range(lo..).take_while(|e| *e.0 <= hi).map(|e| *e.1);
                Ok(match agg {
                    Agg::Sum => words(&[values().fold(0u64, u64::wrapping_add), values().count() as u64]),
                    Agg::Count => words(&[values().count() as u64]),
                    Agg::Min => words(&[values().min().unwrap_or(u64::MAX)]),
                    Agg::Max => words(&[values().max().unwrap_or(0)]),
                })
            }
            (Kind::RbMap | Kind::Avl, Operation::LowerBound(k)) => Ok(match self.map.range(k..).next() {
                Some((&key, &value)) => words(&[value, self.addrs[&key], key]),
                None => words(&[KEY_NOT_FOUND, 0, KEY_NOT_FOUND]),
            }),
            (kind, _) => Err(DsError::Unsupported(kind)),
        }
    }
}
