//! Online KD-tree with bucketed leaves.
//!
//! Leaves hold up to `2b - 1` entries. When a leaf receives its `2b`-th
//! entry it splits at the median of those values along its split
//! dimension and becomes a branch; its children split on the next
//! dimension (cyclically). A balanced tree can also be built in one pass
//! from an initial batch of points. Entries that land exactly on a split
//! value go left or right by a seeded coin flip.
//!
//! Nodes and entries live in flat arenas indexed by `u32`, so the tree is
//! cheap to traverse and trivially `Send + Sync`. There is no deletion.

mod balance;
mod merge;
mod snapshot;

pub use balance::median_split_error_prob;
pub use merge::{merge_pm, KeepExisting, MergeFn, PseudoMarginalMerge};
pub use snapshot::{read_snapshot, write_snapshot};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// The value stored alongside each point: log of the running average of
/// (estimated) posterior values and the number of estimates averaged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueRecord {
    pub log_value: f64,
    pub count: u64,
}

impl ValueRecord {
    pub fn new(log_value: f64) -> Self {
        Self {
            log_value,
            count: 1,
        }
    }
}

/// A whitened point with its value record, as handed to the tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeEntry {
    pub position: Vec<f64>,
    pub log_value: f64,
    pub count: u64,
}

impl TreeEntry {
    pub fn new(position: Vec<f64>, log_value: f64) -> Self {
        Self {
            position,
            log_value,
            count: 1,
        }
    }

    pub fn record(&self) -> ValueRecord {
        ValueRecord {
            log_value: self.log_value,
            count: self.count,
        }
    }
}

/// Borrowed view of a stored entry.
#[derive(Clone, Copy, Debug)]
pub struct EntryView<'a> {
    pub index: usize,
    pub position: &'a [f64],
    pub record: ValueRecord,
}

impl EntryView<'_> {
    pub fn to_entry(&self) -> TreeEntry {
        TreeEntry {
            position: self.position.to_vec(),
            log_value: self.record.log_value,
            count: self.record.count,
        }
    }
}

/// One result of a nearest-neighbour query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbour {
    /// Arena index of the entry; see [`KdTree::entry`].
    pub index: usize,
    pub distance: f64,
    pub record: ValueRecord,
}

/// Summary of leaf depths (root has depth 0).
#[derive(Clone, Debug, PartialEq)]
pub struct TreeStats {
    pub entry_count: usize,
    pub leaf_count: usize,
    pub mean_leaf_depth: f64,
    pub min_leaf_depth: usize,
    pub max_leaf_depth: usize,
    /// Depth range covering the central 99% of leaves.
    pub central_99_depth: (usize, usize),
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        entries: Vec<u32>,
        split_dim: usize,
    },
    Branch {
        split_dim: usize,
        split_value: f64,
        left: u32,
        right: u32,
    },
}

const ROOT: u32 = 0;

/// Bucketed, online-growing KD-tree over whitened coordinates.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    half_bucket: usize,
    positions: Vec<f64>,
    records: Vec<ValueRecord>,
    nodes: Vec<Node>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl KdTree {
    /// An empty tree: a single leaf root splitting on the first coordinate.
    pub fn new(dim: usize, half_bucket: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("tree dimension must be at least 1"));
        }
        if half_bucket < 2 {
            return Err(invalid(format!(
                "half bucket size b must be at least 2, got {half_bucket}"
            )));
        }
        Ok(Self {
            dim,
            half_bucket,
            positions: Vec::new(),
            records: Vec::new(),
            nodes: vec![Node::Leaf {
                entries: Vec::new(),
                split_dim: 0,
            }],
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Builds a balanced tree by recursive median splitting, starting on the
    /// first coordinate at the root.
    pub fn build_balanced(
        entries: Vec<TreeEntry>,
        dim: usize,
        half_bucket: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut tree = Self::new(dim, half_bucket, seed)?;
        for e in &entries {
            tree.check_entry(e)?;
        }
        let mut ids = Vec::with_capacity(entries.len());
        for e in entries {
            ids.push(tree.push_entry(&e));
        }
        tree.nodes.clear();
        tree.build_node(ids, 0);
        Ok(tree)
    }

    fn build_node(&mut self, ids: Vec<u32>, split_dim: usize) -> u32 {
        if ids.len() < 2 * self.half_bucket {
            self.nodes.push(Node::Leaf {
                entries: ids,
                split_dim,
            });
            return (self.nodes.len() - 1) as u32;
        }
        let (split_value, left, right) = self.partition(ids, split_dim);
        let id = self.nodes.len() as u32;
        // placeholder, patched once both children exist
        self.nodes.push(Node::Leaf {
            entries: Vec::new(),
            split_dim,
        });
        let next = (split_dim + 1) % self.dim;
        let l = self.build_node(left, next);
        let r = self.build_node(right, next);
        self.nodes[id as usize] = Node::Branch {
            split_dim,
            split_value,
            left: l,
            right: r,
        };
        id
    }

    /// Median split of `ids` along `split_dim`; ties with the median are
    /// assigned by independent fair coin flips.
    fn partition(&mut self, ids: Vec<u32>, split_dim: usize) -> (f64, Vec<u32>, Vec<u32>) {
        let mut vals: Vec<f64> = ids.iter().map(|&i| self.coord(i, split_dim)).collect();
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        let median = if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        };
        let mut left = Vec::with_capacity(n / 2 + 1);
        let mut right = Vec::with_capacity(n / 2 + 1);
        for i in ids {
            let v = self.coord(i, split_dim);
            if v < median || (v == median && self.rng.random_bool(0.5)) {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        (median, left, right)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `b`: leaves split when they reach `2b` entries.
    pub fn half_bucket(&self) -> usize {
        self.half_bucket
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn entry(&self, index: usize) -> EntryView<'_> {
        EntryView {
            index,
            position: self.position(index as u32),
            record: self.records[index],
        }
    }

    /// All entries in insertion order.
    pub fn entries(&self) -> impl Iterator<Item = EntryView<'_>> + '_ {
        (0..self.len()).map(move |i| self.entry(i))
    }

    fn position(&self, i: u32) -> &[f64] {
        let s = i as usize * self.dim;
        &self.positions[s..s + self.dim]
    }

    fn coord(&self, i: u32, d: usize) -> f64 {
        self.positions[i as usize * self.dim + d]
    }

    fn check_entry(&self, e: &TreeEntry) -> Result<()> {
        if e.position.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: e.position.len(),
            });
        }
        if e.count == 0 {
            return Err(invalid("entry count must be at least 1"));
        }
        if e.position.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("entry position".into()));
        }
        Ok(())
    }

    fn push_entry(&mut self, e: &TreeEntry) -> u32 {
        let id = self.records.len() as u32;
        self.positions.extend_from_slice(&e.position);
        self.records.push(e.record());
        id
    }

    /// Adds an entry, splitting the receiving leaf if it fills up.
    pub fn insert(&mut self, entry: TreeEntry) -> Result<()> {
        self.check_entry(&entry)?;
        let id = self.push_entry(&entry);
        let mut node = ROOT;
        loop {
            match self.nodes[node as usize] {
                Node::Branch {
                    split_dim,
                    split_value,
                    left,
                    right,
                } => {
                    let v = self.coord(id, split_dim);
                    node = if v < split_value || (v == split_value && self.rng.random_bool(0.5)) {
                        left
                    } else {
                        right
                    };
                }
                Node::Leaf { .. } => break,
            }
        }
        let full = match &mut self.nodes[node as usize] {
            Node::Leaf { entries, .. } => {
                entries.push(id);
                entries.len() >= 2 * self.half_bucket
            }
            Node::Branch { .. } => unreachable!(),
        };
        if full {
            self.split_leaf(node);
        }
        Ok(())
    }

    fn split_leaf(&mut self, node: u32) {
        let (ids, split_dim) = match &mut self.nodes[node as usize] {
            Node::Leaf { entries, split_dim } => (std::mem::take(entries), *split_dim),
            Node::Branch { .. } => unreachable!(),
        };
        let (split_value, left, right) = self.partition(ids, split_dim);
        let next = (split_dim + 1) % self.dim;
        let cap = 2 * self.half_bucket;
        let (left_full, right_full) = (left.len() >= cap, right.len() >= cap);
        let l = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            entries: left,
            split_dim: next,
        });
        let r = l + 1;
        self.nodes.push(Node::Leaf {
            entries: right,
            split_dim: next,
        });
        self.nodes[node as usize] = Node::Branch {
            split_dim,
            split_value,
            left: l,
            right: r,
        };
        // only reachable when every value tied with the median
        if left_full {
            self.split_leaf(l);
        }
        if right_full {
            self.split_leaf(r);
        }
    }

    /// Exact `k` nearest neighbours of `query`, sorted by increasing
    /// Euclidean distance. Equal distances keep the entry met first.
    ///
    /// Descends to the leaf owning the query, then ascends towards the root,
    /// visiting a sibling subtree only when its box can still hold something
    /// closer than the current `k`-th distance.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbour>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if k > self.half_bucket {
            return Err(Error::KExceedsBucket {
                k,
                b: self.half_bucket,
            });
        }
        if k > self.len() {
            return Err(Error::TooFewEntries {
                requested: k,
                available: self.len(),
            });
        }
        let mut best = Candidates::new(k);

        let mut path = Vec::with_capacity(32);
        let mut node = ROOT;
        while let Node::Branch {
            split_dim,
            split_value,
            left,
            right,
        } = self.nodes[node as usize]
        {
            path.push(node);
            node = if query[split_dim] <= split_value { left } else { right };
        }
        self.scan_leaf(node, query, &mut best);

        let mut offsets = vec![0.0; self.dim];
        let mut child = node;
        while let Some(parent) = path.pop() {
            if let Node::Branch {
                split_dim,
                split_value,
                left,
                right,
            } = self.nodes[parent as usize]
            {
                let diff = query[split_dim] - split_value;
                let gap = diff * diff;
                if best.admits(gap) {
                    let other = if child == left { right } else { left };
                    offsets[split_dim] = diff;
                    self.descend(other, query, &mut offsets, gap, &mut best);
                    offsets[split_dim] = 0.0;
                }
            }
            child = parent;
        }

        Ok(best
            .items
            .into_iter()
            .map(|(d2, i)| Neighbour {
                index: i as usize,
                distance: d2.sqrt(),
                record: self.records[i as usize],
            })
            .collect())
    }

    /// `offsets` holds, per coordinate, the signed distance from the query
    /// to the box of `node`; `box_dist2` is its squared norm.
    fn descend(
        &self,
        node: u32,
        query: &[f64],
        offsets: &mut [f64],
        box_dist2: f64,
        best: &mut Candidates,
    ) {
        if !best.admits(box_dist2) {
            return;
        }
        match self.nodes[node as usize] {
            Node::Leaf { .. } => self.scan_leaf(node, query, best),
            Node::Branch {
                split_dim,
                split_value,
                left,
                right,
            } => {
                let diff = query[split_dim] - split_value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.descend(near, query, offsets, box_dist2, best);
                let old = offsets[split_dim];
                let far_dist2 = box_dist2 - old * old + diff * diff;
                if best.admits(far_dist2) {
                    offsets[split_dim] = diff;
                    self.descend(far, query, offsets, far_dist2, best);
                    offsets[split_dim] = old;
                }
            }
        }
    }

    fn scan_leaf(&self, node: u32, query: &[f64], best: &mut Candidates) {
        if let Node::Leaf { entries, .. } = &self.nodes[node as usize] {
            for &i in entries {
                best.offer(dist2(self.position(i), query), i);
            }
        }
    }

    /// Nearest entry, or `None` for an empty tree.
    pub fn nearest(&self, query: &[f64]) -> Result<Option<Neighbour>> {
        if self.is_empty() {
            if query.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: query.len(),
                });
            }
            return Ok(None);
        }
        Ok(self.knn(query, 1)?.into_iter().next())
    }

    /// Merges `entry` into its nearest stored neighbour when that neighbour
    /// is strictly closer than `epsilon`, otherwise inserts it.
    /// Returns `true` when a merge took place.
    pub fn insert_or_merge<M: MergeFn + ?Sized>(
        &mut self,
        entry: TreeEntry,
        epsilon: f64,
        merge: &M,
    ) -> Result<bool> {
        if !(epsilon >= 0.0) {
            return Err(invalid(format!("merge radius must be non-negative, got {epsilon}")));
        }
        self.check_entry(&entry)?;
        if let Some(nn) = self.nearest(&entry.position)? {
            if nn.distance < epsilon {
                let merged = merge.merge(nn.record, entry.record())?;
                self.records[nn.index] = merged;
                return Ok(true);
            }
        }
        self.insert(entry)?;
        Ok(false)
    }

    /// Leaf depth statistics from a full traversal.
    pub fn tree_stats(&self) -> TreeStats {
        let mut depths = Vec::new();
        let mut stack = vec![(ROOT, 0usize)];
        while let Some((node, depth)) = stack.pop() {
            match self.nodes[node as usize] {
                Node::Leaf { .. } => depths.push(depth),
                Node::Branch { left, right, .. } => {
                    stack.push((right, depth + 1));
                    stack.push((left, depth + 1));
                }
            }
        }
        depths.sort_unstable();
        let n = depths.len();
        let mean = depths.iter().sum::<usize>() as f64 / n as f64;
        let lo = depths[((0.005 * n as f64).floor() as usize).min(n - 1)];
        let hi = depths[((0.995 * n as f64).ceil() as usize).clamp(1, n) - 1];
        TreeStats {
            entry_count: self.len(),
            leaf_count: n,
            mean_leaf_depth: mean,
            min_leaf_depth: depths[0],
            max_leaf_depth: depths[n - 1],
            central_99_depth: (lo, hi),
        }
    }

    /// Entry indices in left-to-right leaf order.
    pub fn traversal(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![ROOT];
        while let Some(node) = stack.pop() {
            match &self.nodes[node as usize] {
                Node::Leaf { entries, .. } => out.extend(entries.iter().map(|&i| i as usize)),
                Node::Branch { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    /// Structural audit: leaf capacity, split-dimension cycling, partition
    /// soundness against every ancestor, and entry conservation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut seen = vec![false; self.len()];
        // (node, expected split dim, constraints (dim, value, is_left))
        let mut stack: Vec<(u32, usize, Vec<(usize, f64, bool)>)> = vec![(ROOT, 0, Vec::new())];
        while let Some((node, expect_dim, constraints)) = stack.pop() {
            match &self.nodes[node as usize] {
                Node::Leaf { entries, split_dim } => {
                    if *split_dim != expect_dim {
                        return Err(format!("leaf {node} splits on {split_dim}, expected {expect_dim}"));
                    }
                    if entries.len() >= 2 * self.half_bucket {
                        return Err(format!("leaf {node} holds {} entries", entries.len()));
                    }
                    for &i in entries {
                        if std::mem::replace(&mut seen[i as usize], true) {
                            return Err(format!("entry {i} reachable twice"));
                        }
                        for &(d, v, is_left) in &constraints {
                            let x = self.coord(i, d);
                            if (is_left && x > v) || (!is_left && x < v) {
                                return Err(format!("entry {i} violates split {d}@{v}"));
                            }
                        }
                    }
                }
                Node::Branch {
                    split_dim,
                    split_value,
                    left,
                    right,
                } => {
                    if *split_dim != expect_dim {
                        return Err(format!("branch {node} splits on {split_dim}, expected {expect_dim}"));
                    }
                    let next = (split_dim + 1) % self.dim;
                    let mut lc = constraints.clone();
                    lc.push((*split_dim, *split_value, true));
                    let mut rc = constraints;
                    rc.push((*split_dim, *split_value, false));
                    stack.push((*left, next, lc));
                    stack.push((*right, next, rc));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(format!("entry {i} unreachable"));
        }
        Ok(())
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Up to `k` best (squared distance, index) pairs, kept sorted.
struct Candidates {
    k: usize,
    items: Vec<(f64, u32)>,
}

impl Candidates {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    /// Whether a region at squared distance `d2` may still hold a better
    /// candidate. The slack absorbs rounding in incremental box distances.
    fn admits(&self, d2: f64) -> bool {
        d2 <= self.worst() * (1.0 + 1e-12)
    }

    fn offer(&mut self, d2: f64, index: u32) {
        if self.items.len() == self.k && d2 >= self.worst() {
            return;
        }
        let pos = self.items.partition_point(|&(d, _)| d <= d2);
        self.items.insert(pos, (d2, index));
        self.items.truncate(self.k);
    }
}
