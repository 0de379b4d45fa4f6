//! Host-side construction of structures in rack memory.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use super::{bucket_of, DsError, Kind, NodeLayout, StructureHandle, BTREE_FANOUT, HASH_VALUE_BYTES};
use crate::isa::KEY_NOT_FOUND;
use crate::memory::{Allocator, MemoryPool, VirtualAddress};

/// How node positions map to partition hints. Only consulted by the
/// partitioned allocation policy; hash maps always hint by bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Placement {
    /// Contiguous key ranges per node.
    #[default]
    Range,
    /// Runs of `n` consecutive nodes, round robin over memory nodes.
    Stripe(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildOptions {
    pub buckets: usize,
    pub hash_value_bytes: u16,
    pub placement: Placement,
    /// Memory nodes the hints spread over.
    pub nodes: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { buckets: 64, hash_value_bytes: HASH_VALUE_BYTES, placement: Placement::Range, nodes: 1 }
    }
}

impl BuildOptions {
    fn hint(&self, idx: usize, count: usize) -> u32 {
        match self.placement {
            Placement::Range => (idx * self.nodes.max(1) / count.max(1)) as u32,
            Placement::Stripe(n) => (idx / n.max(1) as usize) as u32,
        }
    }
}

fn put_u64(buf: &mut [u8], off: u16, v: u64) {
    buf[off as usize..off as usize + 8].copy_from_slice(&v.to_le_bytes());
}

fn poke(pool: &mut MemoryPool, addr: VirtualAddress, bytes: &[u8]) -> Result<(), DsError> {
    Ok(pool.poke(addr, bytes)?)
}

fn check_unique(entries: &[(u64, u64)]) -> Result<(), DsError> {
    let mut seen = BTreeSet::new();
    for &(k, _) in entries {
        if !seen.insert(k) {
            return Err(DsError::DuplicateKey(k));
        }
    }
    Ok(())
}

/// Values equal to `KEY_NOT_FOUND` would be indistinguishable from a miss.
fn check_values(entries: &[(u64, u64)]) -> Result<(), DsError> {
    match entries.iter().find(|e| e.1 == KEY_NOT_FOUND) {
        Some(&(_, v)) => Err(DsError::ReservedValue(v)),
        None => Ok(()),
    }
}

/// Lays `entries` out in rack memory. List nodes keep entry order and store
/// only keys; every other kind ignores entry order.
pub fn build(
    kind: Kind,
    entries: &[(u64, u64)],
    opts: &BuildOptions,
    alloc: &mut Allocator,
    pool: &mut MemoryPool,
) -> Result<StructureHandle, DsError> {
    check_unique(entries)?;
    match kind {
        Kind::List => build_list(entries, opts, alloc, pool),
        Kind::HashMap => {
            check_values(entries)?;
            build_hash(entries, opts, alloc, pool)
        }
        Kind::BTree => {
            check_values(entries)?;
            build_btree(entries, opts, alloc, pool)
        }
        Kind::RbMap | Kind::Avl => {
            check_values(entries)?;
            build_bst(kind, entries, opts, alloc, pool)
        }
    }
}

fn empty_handle(kind: Kind, layout: NodeLayout) -> StructureHandle {
    StructureHandle {
        kind,
        layout,
        root: VirtualAddress::NULL,
        buckets: Vec::new(),
        len: 0,
        height: 0,
        addrs: BTreeMap::new(),
    }
}

fn build_list(
    entries: &[(u64, u64)],
    opts: &BuildOptions,
    alloc: &mut Allocator,
    pool: &mut MemoryPool,
) -> Result<StructureHandle, DsError> {
    let layout = NodeLayout::list();
    let mut h = empty_handle(Kind::List, layout.clone());
    let n = entries.len();
    let addrs = entries
        .iter()
        .enumerate()
        .map(|(i, _)| alloc.allocate(pool, layout.size as u64, Some(opts.hint(i, n))))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, &(k, _)) in entries.iter().enumerate() {
        let mut buf = vec![0u8; layout.size as usize];
        put_u64(&mut buf, layout.offset("key"), k);
        put_u64(&mut buf, layout.offset("next"), addrs.get(i + 1).map_or(0, |a| a.0));
        poke(pool, addrs[i], &buf)?;
        h.addrs.insert(k, addrs[i]);
    }
    h.root = addrs.first().copied().unwrap_or(VirtualAddress::NULL);
    h.len = n;
    h.height = n;
    Ok(h)
}

fn build_hash(
    entries: &[(u64, u64)],
    opts: &BuildOptions,
    alloc: &mut Allocator,
    pool: &mut MemoryPool,
) -> Result<StructureHandle, DsError> {
    if opts.hash_value_bytes < 8 {
        return Err(DsError::ValueTooWide(opts.hash_value_bytes));
    }
    let layout = NodeLayout::hash(opts.hash_value_bytes);
    let mut h = empty_handle(Kind::HashMap, layout.clone());
    let buckets = opts.buckets.max(1);
    let mut chains: Vec<Vec<(u64, u64, VirtualAddress)>> = vec![Vec::new(); buckets];
    for &(k, v) in entries {
        let b = bucket_of(k, buckets);
        let addr = alloc.allocate(pool, layout.size as u64, Some(b as u32))?;
        chains[b].push((k, v, addr));
    }
    for chain in &chains {
        for (i, &(k, v, addr)) in chain.iter().enumerate() {
            let mut buf = vec![0u8; layout.size as usize];
            put_u64(&mut buf, layout.offset("key"), k);
            put_u64(&mut buf, layout.offset("value"), v);
            put_u64(&mut buf, layout.offset("next"), chain.get(i + 1).map_or(0, |c| c.2 .0));
            poke(pool, addr, &buf)?;
            h.addrs.insert(k, addr);
        }
        h.height = h.height.max(chain.len());
    }
    h.buckets = chains.iter().map(|c| c.first().map_or(VirtualAddress::NULL, |e| e.2)).collect();
    h.len = entries.len();
    Ok(h)
}

/// Splits `n` items into the fewest groups of at most `cap`, sizes as even
/// as possible.
fn even_groups(n: usize, cap: usize) -> Vec<usize> {
    let groups = n.div_ceil(cap);
    (0..groups).map(|g| n / groups + usize::from(g < n % groups)).collect()
}

fn build_btree(
    entries: &[(u64, u64)],
    opts: &BuildOptions,
    alloc: &mut Allocator,
    pool: &mut MemoryPool,
) -> Result<StructureHandle, DsError> {
    let layout = NodeLayout::btree();
    let mut h = empty_handle(Kind::BTree, layout.clone());
    if entries.is_empty() {
        return Ok(h);
    }
    let mut sorted = entries.to_vec();
    sorted.sort_unstable();
    let (keys_off, children_off) = (layout.offset("keys"), layout.offset("children"));

    // Leaves first, in key order, so placement follows the leaf chain.
    let sizes = even_groups(sorted.len(), BTREE_FANOUT);
    let leaf_count = sizes.len();
    let leaf_addrs = (0..leaf_count)
        .map(|i| alloc.allocate(pool, layout.size as u64, Some(opts.hint(i, leaf_count))))
        .collect::<Result<Vec<_>, _>>()?;
    // (address, max key, first leaf index) per node of the current level.
    let mut level = Vec::with_capacity(leaf_count);
    let mut rest = &sorted[..];
    for (i, &size) in sizes.iter().enumerate() {
        let (chunk, tail) = rest.split_at(size);
        rest = tail;
        let mut buf = vec![0u8; layout.size as usize];
        buf[0] = 1;
        buf[1] = size as u8;
        for (j, &(k, v)) in chunk.iter().enumerate() {
            put_u64(&mut buf, keys_off + 8 * j as u16, k);
            put_u64(&mut buf, children_off + 8 * j as u16, v);
            h.addrs.insert(k, leaf_addrs[i]);
        }
        let next = leaf_addrs.get(i + 1).map_or(0, |a| a.0);
        put_u64(&mut buf, children_off + 8 * BTREE_FANOUT as u16, next);
        poke(pool, leaf_addrs[i], &buf)?;
        level.push((leaf_addrs[i], chunk[size - 1].0, i));
    }
    h.height = 1;
    while level.len() > 1 {
        let mut upper = Vec::new();
        let mut rest = &level[..];
        for size in even_groups(level.len(), BTREE_FANOUT + 1) {
            let (group, tail) = rest.split_at(size);
            rest = tail;
            let first_leaf = group[0].2;
            let addr = alloc.allocate(pool, layout.size as u64, Some(opts.hint(first_leaf, leaf_count)))?;
            let mut buf = vec![0u8; layout.size as usize];
            buf[1] = (size - 1) as u8;
            for (j, &(child, max, _)) in group.iter().enumerate() {
                if j + 1 < size {
                    put_u64(&mut buf, keys_off + 8 * j as u16, max);
                }
                put_u64(&mut buf, children_off + 8 * j as u16, child.0);
            }
            poke(pool, addr, &buf)?;
            upper.push((addr, group[size - 1].1, first_leaf));
        }
        level = upper;
        h.height += 1;
    }
    h.root = level[0].0;
    h.len = sorted.len();
    Ok(h)
}

#[derive(Debug, Clone, Copy)]
struct ArenaNode {
    key: u64,
    value: u64,
    left: Option<usize>,
    right: Option<usize>,
    height: u32,
}

/// Balanced BST from sorted entries; returns the root index.
fn balanced(arena: &mut Vec<ArenaNode>, sorted: &[(u64, u64)]) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let mid = sorted.len() / 2;
    let left = balanced(arena, &sorted[..mid]);
    let right = balanced(arena, &sorted[mid + 1..]);
    let h = |i: Option<usize>, a: &Vec<ArenaNode>| i.map_or(0, |i| a[i].height);
    let height = 1 + h(left, arena).max(h(right, arena));
    arena.push(ArenaNode { key: sorted[mid].0, value: sorted[mid].1, left, right, height });
    Some(arena.len() - 1)
}

struct Avl {
    arena: Vec<ArenaNode>,
}

impl Avl {
    fn height(&self, n: Option<usize>) -> u32 {
        n.map_or(0, |i| self.arena[i].height)
    }

    fn fix(&mut self, n: usize) {
        let (l, r) = (self.arena[n].left, self.arena[n].right);
        self.arena[n].height = 1 + self.height(l).max(self.height(r));
    }

    fn balance(&self, n: usize) -> i64 {
        self.height(self.arena[n].left) as i64 - self.height(self.arena[n].right) as i64
    }

    fn rotate_right(&mut self, n: usize) -> usize {
        let l = self.arena[n].left.expect("left child");
        self.arena[n].left = self.arena[l].right;
        self.arena[l].right = Some(n);
        self.fix(n);
        self.fix(l);
        l
    }

    fn rotate_left(&mut self, n: usize) -> usize {
        let r = self.arena[n].right.expect("right child");
        self.arena[n].right = self.arena[r].left;
        self.arena[r].left = Some(n);
        self.fix(n);
        self.fix(r);
        r
    }

    fn insert(&mut self, node: Option<usize>, key: u64, value: u64) -> usize {
        let Some(n) = node else {
            self.arena.push(ArenaNode { key, value, left: None, right: None, height: 1 });
            return self.arena.len() - 1;
        };
        if key < self.arena[n].key {
            let l = self.insert(self.arena[n].left, key, value);
            self.arena[n].left = Some(l);
        } else {
            let r = self.insert(self.arena[n].right, key, value);
            self.arena[n].right = Some(r);
        }
        self.fix(n);
        let b = self.balance(n);
        if b > 1 {
            let l = self.arena[n].left.expect("left-heavy");
            if self.balance(l) < 0 {
                self.arena[n].left = Some(self.rotate_left(l));
            }
            return self.rotate_right(n);
        }
        if b < -1 {
            let r = self.arena[n].right.expect("right-heavy");
            if self.balance(r) > 0 {
                self.arena[n].right = Some(self.rotate_right(r));
            }
            return self.rotate_left(n);
        }
        n
    }
}

fn build_bst(
    kind: Kind,
    entries: &[(u64, u64)],
    opts: &BuildOptions,
    alloc: &mut Allocator,
    pool: &mut MemoryPool,
) -> Result<StructureHandle, DsError> {
    let layout = NodeLayout::bst();
    let mut h = empty_handle(kind, layout.clone());
    let (arena, root) = if kind == Kind::Avl {
        let mut t = Avl { arena: Vec::with_capacity(entries.len()) };
        let mut root = None;
        for &(k, v) in entries {
            root = Some(t.insert(root, k, v));
        }
        (t.arena, root)
    } else {
        let mut sorted = entries.to_vec();
        sorted.sort_unstable();
        let mut arena = Vec::with_capacity(sorted.len());
        let root = balanced(&mut arena, &sorted);
        (arena, root)
    };
    let Some(root) = root else { return Ok(h) };

    // Allocate in key order so range placement splits the key space.
    let mut order: Vec<usize> = (0..arena.len()).collect();
    order.sort_unstable_by_key(|&i| arena[i].key);
    let n = arena.len();
    let mut addrs = vec![VirtualAddress::NULL; n];
    for (rank, &i) in order.iter().enumerate() {
        addrs[i] = alloc.allocate(pool, layout.size as u64, Some(opts.hint(rank, n)))?;
    }
    let tree_height = arena[root].height;
    let link = |c: Option<usize>| c.map_or(0, |c| addrs[c].0);
    for (i, node) in arena.iter().enumerate() {
        let mut buf = vec![0u8; layout.size as usize];
        put_u64(&mut buf, layout.offset("key"), node.key);
        put_u64(&mut buf, layout.offset("value"), node.value);
        put_u64(&mut buf, layout.offset("left"), link(node.left));
        put_u64(&mut buf, layout.offset("right"), link(node.right));
        // AVL nodes keep their height; red-black nodes their colour, with
        // the bottom level of an incomplete balanced tree coloured red.
        let meta = match kind {
            Kind::Avl => node.height as u64,
            _ => u64::from(node.height == 1 && tree_height > 1 && n + 1 < 1 << tree_height),
        };
        put_u64(&mut buf, layout.offset("meta"), meta);
        poke(pool, addrs[i], &buf)?;
        h.addrs.insert(node.key, addrs[i]);
    }
    h.root = addrs[root];
    h.len = n;
    h.height = tree_height as usize;
    Ok(h)
}
