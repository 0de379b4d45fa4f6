//! Source-program generators, one per (kind, operation).
//!
//! Programs are produced as assembler text and assembled, so the text form
//! doubles as a golden artifact.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::{bucket_of, Agg, DsError, Kind, NodeLayout, Operation, StructureHandle, TraversalSpec, BTREE_FANOUT};
use crate::isa::{assemble, KEY_NOT_FOUND};
use crate::memory::VirtualAddress;

/// Scratch-pad slots shared by the generated programs.
pub mod sp {
    pub const KEY: usize = 0;
    pub const LO: usize = 0;
    pub const HI: usize = 8;
    pub const RESULT: usize = 8;
    pub const SUM: usize = 16;
    pub const NODE: usize = 16;
    pub const COUNT: usize = 24;
    pub const FOUND_KEY: usize = 24;
    pub const MIN: usize = 32;
    pub const MAX: usize = 40;
    pub const NUM_KEYS: usize = 48;
    pub const IS_LEAF: usize = 56;
    pub const BTREE_BYTES: usize = 64;
}

fn scratch(len: usize, slots: &[(usize, u64)]) -> Vec<u8> {
    let mut s = vec![0u8; len];
    for &(off, v) in slots {
        s[off..off + 8].copy_from_slice(&v.to_le_bytes());
    }
    s
}

fn spec(text: &str, cur_ptr: VirtualAddress, init_scratch: Vec<u8>, result: core::ops::Range<usize>) -> TraversalSpec {
    let program = assemble(text).unwrap_or_else(|e| panic!("generated program does not assemble: {e}\n{text}"));
    TraversalSpec { program, init_cur_ptr: cur_ptr, init_scratch, result }
}

/// Text of the chain walk shared by list and hash lookups. `hit` is the
/// operand copied to the result slot on a match.
fn chain_find_text(key_off: u16, next_off: u16, hit: &str) -> String {
    format!(
        "\
Iter_Start:
    COMPARE sp[0] data[{key_off}]
    JUMP_EQ Return_success
    COMPARE 0 data[{next_off}]
    JUMP_EQ Return_fail
    MOVE cur_ptr data[{next_off}]
    NEXT_ITER
Return_fail:
    MOVE sp[8] KEY_NOT_FOUND
    RETURN
Return_success:
    MOVE sp[8] {hit}
    RETURN
"
    )
}

/// Descends internal nodes to the child covering `sp[0]`; falls through to
/// `leaf:` on a leaf. Expects `num_keys` and `is_leaf` already staged.
fn btree_descend_text(out: &mut String, layout: &NodeLayout) {
    let keys = layout.offset("keys");
    let children = layout.offset("children");
    let _ = writeln!(out, "    MOVE.1 sp[{}] data[{}]", sp::IS_LEAF, layout.offset("is_leaf"));
    let _ = writeln!(out, "    MOVE.1 sp[{}] data[{}]", sp::NUM_KEYS, layout.offset("num_keys"));
    let _ = writeln!(out, "    COMPARE sp[{}] 0", sp::IS_LEAF);
    let _ = writeln!(out, "    JUMP_NEQ leaf");
    for i in 0..BTREE_FANOUT {
        let _ = writeln!(out, "    COMPARE sp[{}] {i}", sp::NUM_KEYS);
        let _ = writeln!(out, "    JUMP_EQ child_{i}");
        let _ = writeln!(out, "    COMPARE sp[{}] data[{}]", sp::KEY, keys + 8 * i as u16);
        let _ = writeln!(out, "    JUMP_LE child_{i}");
    }
    for i in (0..=BTREE_FANOUT).rev() {
        let _ = writeln!(out, "child_{i}:");
        let _ = writeln!(out, "    MOVE cur_ptr data[{}]", children + 8 * i as u16);
        let _ = writeln!(out, "    NEXT_ITER");
    }
    let _ = writeln!(out, "leaf:");
}

fn btree_find_text(layout: &NodeLayout) -> String {
    let keys = layout.offset("keys");
    let children = layout.offset("children");
    let mut t = String::new();
    btree_descend_text(&mut t, layout);
    for i in 0..BTREE_FANOUT {
        let _ = writeln!(t, "    COMPARE sp[{}] {i}", sp::NUM_KEYS);
        let _ = writeln!(t, "    JUMP_EQ miss");
        let _ = writeln!(t, "    COMPARE sp[{}] data[{}]", sp::KEY, keys + 8 * i as u16);
        let _ = writeln!(t, "    JUMP_EQ hit_{i}");
    }
    let _ = writeln!(t, "miss:");
    let _ = writeln!(t, "    MOVE sp[{}] KEY_NOT_FOUND", sp::RESULT);
    let _ = writeln!(t, "    RETURN");
    for i in 0..BTREE_FANOUT {
        let _ = writeln!(t, "hit_{i}:");
        let _ = writeln!(t, "    MOVE sp[{}] data[{}]", sp::RESULT, children + 8 * i as u16);
        let _ = writeln!(t, "    RETURN");
    }
    t
}

/// Descends to the first leaf that may hold `lo`, then walks the leaf chain
/// folding values of keys in `[lo, hi]` into the scratch pad.
fn btree_scan_text(layout: &NodeLayout, agg: Agg) -> String {
    let keys = layout.offset("keys");
    let children = layout.offset("children");
    let next = children + 8 * BTREE_FANOUT as u16;
    let mut t = String::new();
    btree_descend_text(&mut t, layout);
    for i in 0..BTREE_FANOUT {
        let key = keys + 8 * i as u16;
        let value = children + 8 * i as u16;
        let skip = format!("key_{}", i + 1);
        let _ = writeln!(t, "key_{i}:");
        let _ = writeln!(t, "    COMPARE sp[{}] {i}", sp::NUM_KEYS);
        let _ = writeln!(t, "    JUMP_EQ next_leaf");
        let _ = writeln!(t, "    COMPARE data[{key}] sp[{}]", sp::LO);
        let _ = writeln!(t, "    JUMP_LT {skip}");
        let _ = writeln!(t, "    COMPARE data[{key}] sp[{}]", sp::HI);
        let _ = writeln!(t, "    JUMP_GT done");
        match agg {
            Agg::Count => {
                let _ = writeln!(t, "    ADD sp[{}] 1", sp::COUNT);
            }
            Agg::Sum => {
                let _ = writeln!(t, "    ADD sp[{}] data[{value}]", sp::SUM);
                let _ = writeln!(t, "    ADD sp[{}] 1", sp::COUNT);
            }
            Agg::Min | Agg::Max => {
                let (slot, keep) = if agg == Agg::Min { (sp::MIN, "JUMP_GE") } else { (sp::MAX, "JUMP_LE") };
                let _ = writeln!(t, "    COMPARE data[{value}] sp[{slot}]");
                let _ = writeln!(t, "    {keep} {skip}");
                let _ = writeln!(t, "    MOVE sp[{slot}] data[{value}]");
            }
        }
    }
    let _ = writeln!(t, "key_{BTREE_FANOUT}:");
    let _ = writeln!(t, "next_leaf:");
    let _ = writeln!(t, "    COMPARE 0 data[{next}]");
    let _ = writeln!(t, "    JUMP_EQ done");
    let _ = writeln!(t, "    MOVE cur_ptr data[{next}]");
    let _ = writeln!(t, "    NEXT_ITER");
    let _ = writeln!(t, "done:");
    let _ = writeln!(t, "    RETURN");
    t
}

/// Lower bound over a binary search tree, remembering the last node whose
/// key is not below the target. `mirrored` flips the comparison operands
/// the way the AVL loop writes it.
fn bst_lower_bound_text(layout: &NodeLayout, mirrored: bool) -> String {
    let (key, value) = (layout.offset("key"), layout.offset("value"));
    let (left, right) = (layout.offset("left"), layout.offset("right"));
    let test = if mirrored {
        format!("    COMPARE sp[{}] data[{key}]\n    JUMP_GT go_right", sp::KEY)
    } else {
        format!("    COMPARE data[{key}] sp[{}]\n    JUMP_LT go_right", sp::KEY)
    };
    format!(
        "\
{test}
    MOVE sp[{result}] data[{value}]
    MOVE sp[{node}] cur_ptr
    MOVE sp[{found}] data[{key}]
    COMPARE 0 data[{left}]
    JUMP_EQ done
    MOVE cur_ptr data[{left}]
    NEXT_ITER
go_right:
    COMPARE 0 data[{right}]
    JUMP_EQ done
    MOVE cur_ptr data[{right}]
    NEXT_ITER
done:
    RETURN
",
        result = sp::RESULT,
        node = sp::NODE,
        found = sp::FOUND_KEY,
    )
}

/// Scratch bytes holding the answer of `op`.
pub fn result_range(kind: Kind, op: &Operation) -> core::ops::Range<usize> {
    match (kind, op) {
        (Kind::RbMap | Kind::Avl, Operation::LowerBound(_)) => sp::RESULT..sp::FOUND_KEY + 8,
        (_, Operation::ScanAgg { agg, .. }) => match agg {
            Agg::Sum => sp::SUM..sp::COUNT + 8,
            Agg::Count => sp::COUNT..sp::COUNT + 8,
            Agg::Min => sp::MIN..sp::MIN + 8,
            Agg::Max => sp::MAX..sp::MAX + 8,
        },
        _ => sp::RESULT..sp::RESULT + 8,
    }
}

/// Builds the traversal for `op`, including the host-side `init()` work
/// (hashing to a bucket head, seeding the scratch pad).
pub fn gen_traversal(handle: &StructureHandle, op: &Operation) -> Result<TraversalSpec, DsError> {
    let layout = &handle.layout;
    let result = result_range(handle.kind, op);
    match (handle.kind, *op) {
        (Kind::List, Operation::Find(k)) => {
            let text = chain_find_text(layout.offset("key"), layout.offset("next"), "cur_ptr");
            Ok(spec(&text, handle.root, scratch(16, &[(sp::KEY, k), (sp::RESULT, KEY_NOT_FOUND)]), result))
        }
        (Kind::HashMap, Operation::Find(k)) => {
            let text = chain_find_text(
                layout.offset("key"),
                layout.offset("next"),
                &format!("data[{}]", layout.offset("value")),
            );
            let head = match handle.buckets.len() {
                0 => VirtualAddress::NULL,
                n => handle.buckets[bucket_of(k, n)],
            };
            Ok(spec(&text, head, scratch(16, &[(sp::KEY, k), (sp::RESULT, KEY_NOT_FOUND)]), result))
        }
        (Kind::BTree, Operation::Find(k)) => {
            let init = scratch(sp::BTREE_BYTES, &[(sp::KEY, k), (sp::RESULT, KEY_NOT_FOUND)]);
            Ok(spec(&btree_find_text(layout), handle.root, init, result))
        }
        (Kind::BTree, Operation::ScanAgg { agg, lo, hi }) => {
            let init = scratch(sp::BTREE_BYTES, &[(sp::LO, lo), (sp::HI, hi), (sp::MIN, u64::MAX)]);
            Ok(spec(&btree_scan_text(layout, agg), handle.root, init, result))
        }
        (Kind::RbMap | Kind::Avl, Operation::LowerBound(k)) => {
            let text = bst_lower_bound_text(layout, handle.kind == Kind::Avl);
            let init = scratch(32, &[(sp::KEY, k), (sp::RESULT, KEY_NOT_FOUND), (sp::FOUND_KEY, KEY_NOT_FOUND)]);
            Ok(spec(&text, handle.root, init, result))
        }
        (kind, _) => Err(DsError::Unsupported(kind)),
    }
}
