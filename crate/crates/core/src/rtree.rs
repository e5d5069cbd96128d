//! Guttman R-tree over 3D boxes keyed by `u64` ids, with node-visit
//! instrumentation.
//!
//! Splits use the quadratic PickNext rule seeded by the pair with the largest
//! normalized separation. Removal condenses underfull nodes by reinserting
//! their contents at their original level. Every search visits the root and
//! every further node whose box intersects the query; that count is the
//! "path length" the batch-query machinery tries to shrink.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::types::Aabb;

pub const DEFAULT_NODE_MAX: usize = 8;

/// Bytes charged for a node: 16-byte header plus 28 bytes per child entry.
pub const fn node_bytes(children: usize) -> u64 {
    16 + 28 * children as u64
}

/// Stable arena index of a node; doubles as its synthetic memory address
/// (`id × node_bytes(node_max)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RTreeStats {
    pub nodes_visited: u64,
    pub leaf_hits: u64,
    pub inserts: u64,
    pub removals: u64,
    pub searches: u64,
    pub bytes_touched: u64,
}

impl RTreeStats {
    pub fn merge(&mut self, o: &RTreeStats) {
        self.nodes_visited += o.nodes_visited;
        self.leaf_hits += o.leaf_hits;
        self.inserts += o.inserts;
        self.removals += o.removals;
        self.searches += o.searches;
        self.bytes_touched += o.bytes_touched;
    }
}

/// One node fetch during a traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeAccess {
    pub node: NodeId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    id: u64,
    bbox: Aabb,
}

#[derive(Debug, Clone)]
enum Children {
    Leaf(Vec<Entry>),
    Internal(Vec<NodeId>),
}

#[derive(Debug, Clone)]
struct Node {
    bbox: Aabb,
    parent: Option<NodeId>,
    /// 0 for leaves.
    level: usize,
    children: Children,
}

impl Node {
    fn len(&self) -> usize {
        match &self.children {
            Children::Leaf(e) => e.len(),
            Children::Internal(c) => c.len(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Entry(Entry),
    Node(NodeId),
}

/// Nested view of the tree, for audits and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeShape {
    pub id: NodeId,
    pub level: usize,
    pub bbox: Aabb,
    pub entries: Vec<(u64, Aabb)>,
    pub children: Vec<NodeShape>,
}

#[derive(Debug, Clone)]
pub struct RTree {
    nodes: Vec<Option<Node>>,
    free: Vec<usize>,
    root: NodeId,
    node_max: usize,
    node_min: usize,
    locations: HashMap<u64, NodeId>,
    stats: RTreeStats,
}

impl Default for RTree {
    fn default() -> Self {
        RTree::new(DEFAULT_NODE_MAX).expect("default fan-out is valid")
    }
}

/// Volume growth, then margin growth: zero-volume boxes still get ordered.
fn enlargement(cover: &Aabb, add: &Aabb) -> (f64, f64) {
    let u = cover.union(add);
    (u.volume() - cover.volume(), u.margin() - cover.margin())
}

fn cost_lt(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl RTree {
    pub fn new(node_max: usize) -> Result<Self> {
        if node_max < 2 {
            return Err(Error::Config("R-tree fan-out must be at least 2".into()));
        }
        let root = Node { bbox: Aabb::EMPTY, parent: None, level: 0, children: Children::Leaf(Vec::new()) };
        Ok(RTree {
            nodes: vec![Some(root)],
            free: Vec::new(),
            root: NodeId(0),
            node_max,
            node_min: node_max.div_ceil(2),
            locations: HashMap::new(),
            stats: RTreeStats::default(),
        })
    }

    pub fn node_max(&self) -> usize {
        self.node_max
    }

    pub fn node_min(&self) -> usize {
        self.node_min
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Number of node levels (1 for a lone leaf root).
    pub fn height(&self) -> usize {
        self.node(self.root).level + 1
    }

    pub fn bounds(&self) -> Aabb {
        self.node(self.root).bbox
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn stats(&self) -> RTreeStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = RTreeStats::default();
    }

    /// Bytes of the largest possible node, used as the address stride.
    pub fn node_stride(&self) -> u64 {
        node_bytes(self.node_max)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.locations.contains_key(&id)
    }

    /// The box an id is stored under.
    pub fn get(&self, id: u64) -> Option<Aabb> {
        let leaf = self.locations.get(&id)?;
        match &self.node(*leaf).children {
            Children::Leaf(entries) => entries.iter().find(|e| e.id == id).map(|e| e.bbox),
            Children::Internal(_) => None,
        }
    }

    fn node(&self, id: NodeId) -> &Node {
        self.nodes[id.0].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id.0].as_mut().expect("live node")
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        match self.free.pop() {
            Some(i) => {
                self.nodes[i] = Some(node);
                NodeId(i)
            }
            None => {
                self.nodes.push(Some(node));
                NodeId(self.nodes.len() - 1)
            }
        }
    }

    fn release(&mut self, id: NodeId) {
        self.nodes[id.0] = None;
        self.free.push(id.0);
    }

    fn touch(&mut self, id: NodeId) {
        let bytes = node_bytes(self.node(id).len());
        self.stats.nodes_visited += 1;
        self.stats.bytes_touched += bytes;
    }

    fn item_box(&self, item: &Item) -> Aabb {
        match item {
            Item::Entry(e) => e.bbox,
            Item::Node(n) => self.node(*n).bbox,
        }
    }

    fn recompute_bbox(&mut self, id: NodeId) {
        let bbox = match &self.node(id).children {
            Children::Leaf(entries) => entries.iter().fold(Aabb::EMPTY, |b, e| b.union(&e.bbox)),
            Children::Internal(kids) => kids.iter().fold(Aabb::EMPTY, |b, k| b.union(&self.node(*k).bbox)),
        };
        self.node_mut(id).bbox = bbox;
    }

    pub fn insert(&mut self, id: u64, bbox: Aabb) -> Result<()> {
        if self.locations.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        if bbox.is_empty() || (0..3).any(|i| !bbox.lo[i].is_finite() || !bbox.hi[i].is_finite()) {
            return Err(Error::Config(format!("cannot index id {id} under an empty or non-finite box")));
        }
        self.insert_item(Item::Entry(Entry { id, bbox }), 0, true);
        self.stats.inserts += 1;
        Ok(())
    }

    /// Places `item` in a node at `level` (0 = leaf) and repairs the path.
    fn insert_item(&mut self, item: Item, level: usize, count: bool) {
        let bbox = self.item_box(&item);
        let mut cur = self.root;
        if count {
            self.touch(cur);
        }
        while self.node(cur).level > level {
            let Children::Internal(kids) = &self.node(cur).children else { unreachable!() };
            let mut best = kids[0];
            let mut best_cost = enlargement(&self.node(best).bbox, &bbox);
            for &k in &kids[1..] {
                let c = enlargement(&self.node(k).bbox, &bbox);
                let better = cost_lt(c, best_cost)
                    || (c == best_cost && self.node(k).bbox.volume() < self.node(best).bbox.volume());
                if better {
                    best = k;
                    best_cost = c;
                }
            }
            cur = best;
            if count {
                self.touch(cur);
            }
        }
        match item {
            Item::Entry(e) => {
                let Children::Leaf(entries) = &mut self.node_mut(cur).children else { unreachable!() };
                entries.push(e);
                self.locations.insert(e.id, cur);
            }
            Item::Node(n) => {
                self.node_mut(n).parent = Some(cur);
                let Children::Internal(kids) = &mut self.node_mut(cur).children else { unreachable!() };
                kids.push(n);
            }
        }
        let node = self.node_mut(cur);
        node.bbox = node.bbox.union(&bbox);
        self.repair_upwards(cur, count);
    }

    /// Splits overflowing nodes from `start` to the root and re-tightens
    /// every ancestor box.
    fn repair_upwards(&mut self, start: NodeId, count: bool) {
        let mut cur = start;
        loop {
            let sibling = if self.node(cur).len() > self.node_max {
                if count {
                    self.stats.nodes_visited += 1;
                }
                Some(self.split(cur))
            } else {
                None
            };
            match self.node(cur).parent {
                Some(p) => {
                    if let Some(s) = sibling {
                        self.node_mut(s).parent = Some(p);
                        let Children::Internal(kids) = &mut self.node_mut(p).children else { unreachable!() };
                        kids.push(s);
                    }
                    self.recompute_bbox(p);
                    cur = p;
                }
                None => {
                    if let Some(s) = sibling {
                        let level = self.node(cur).level + 1;
                        let bbox = self.node(cur).bbox.union(&self.node(s).bbox);
                        let root = self.alloc(Node {
                            bbox,
                            parent: None,
                            level,
                            children: Children::Internal(vec![cur, s]),
                        });
                        self.node_mut(cur).parent = Some(root);
                        self.node_mut(s).parent = Some(root);
                        self.root = root;
                    }
                    return;
                }
            }
        }
    }

    /// Quadratic split of an overflowing node; `id` keeps the first group and
    /// the returned node holds the second.
    fn split(&mut self, id: NodeId) -> NodeId {
        let level = self.node(id).level;
        let items: Vec<Item> = match &mut self.node_mut(id).children {
            Children::Leaf(e) => std::mem::take(e).into_iter().map(Item::Entry).collect(),
            Children::Internal(k) => std::mem::take(k).into_iter().map(Item::Node).collect(),
        };
        let boxes: Vec<Aabb> = items.iter().map(|i| self.item_box(i)).collect();
        let (s1, s2) = pick_seeds(&boxes);
        let mut groups = [vec![s1], vec![s2]];
        let mut covers = [boxes[s1], boxes[s2]];
        let mut remaining: Vec<usize> = (0..items.len()).filter(|&i| i != s1 && i != s2).collect();
        while !remaining.is_empty() {
            let mut forced = None;
            for g in 0..2 {
                if groups[g].len() + remaining.len() <= self.node_min {
                    forced = Some(g);
                }
            }
            if let Some(g) = forced {
                for &i in &remaining {
                    covers[g] = covers[g].union(&boxes[i]);
                }
                groups[g].append(&mut remaining);
                break;
            }
            // PickNext: the entry with the strongest preference for one group.
            let mut pick = 0;
            let mut pick_diff = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (pos, &i) in remaining.iter().enumerate() {
                let d1 = enlargement(&covers[0], &boxes[i]);
                let d2 = enlargement(&covers[1], &boxes[i]);
                let diff = ((d1.0 - d2.0).abs(), (d1.1 - d2.1).abs());
                if cost_lt(pick_diff, diff) {
                    pick = pos;
                    pick_diff = diff;
                }
            }
            let i = remaining.remove(pick);
            let d1 = enlargement(&covers[0], &boxes[i]);
            let d2 = enlargement(&covers[1], &boxes[i]);
            let g = if cost_lt(d1, d2) {
                0
            } else if cost_lt(d2, d1) {
                1
            } else if covers[0].volume() != covers[1].volume() {
                usize::from(covers[1].volume() < covers[0].volume())
            } else {
                usize::from(groups[1].len() < groups[0].len())
            };
            covers[g] = covers[g].union(&boxes[i]);
            groups[g].push(i);
        }
        let take = |g: &Vec<usize>| g.iter().map(|&i| items[i]).collect::<Vec<_>>();
        let (first, second) = (take(&groups[0]), take(&groups[1]));
        let sibling = self.alloc(Node {
            bbox: covers[1],
            parent: None,
            level,
            children: if level == 0 { Children::Leaf(Vec::new()) } else { Children::Internal(Vec::new()) },
        });
        self.fill(id, first);
        self.fill(sibling, second);
        self.node_mut(id).bbox = covers[0];
        sibling
    }

    fn fill(&mut self, node: NodeId, items: Vec<Item>) {
        for item in items {
            match item {
                Item::Entry(e) => {
                    self.locations.insert(e.id, node);
                    let Children::Leaf(v) = &mut self.node_mut(node).children else { unreachable!() };
                    v.push(e);
                }
                Item::Node(n) => {
                    self.node_mut(n).parent = Some(node);
                    let Children::Internal(v) = &mut self.node_mut(node).children else { unreachable!() };
                    v.push(n);
                }
            }
        }
    }

    pub fn remove(&mut self, id: u64) -> Result<()> {
        let leaf = self.locations.remove(&id).ok_or(Error::UnknownId(id))?;
        let Children::Leaf(entries) = &mut self.node_mut(leaf).children else { unreachable!() };
        let pos = entries.iter().position(|e| e.id == id).expect("location map is consistent");
        entries.remove(pos);
        self.stats.removals += 1;
        self.touch(leaf);
        self.condense(leaf);
        Ok(())
    }

    fn condense(&mut self, leaf: NodeId) {
        let mut orphans: Vec<(Item, usize)> = Vec::new();
        let mut cur = leaf;
        while let Some(parent) = self.node(cur).parent {
            if self.node(cur).len() < self.node_min {
                let Children::Internal(kids) = &mut self.node_mut(parent).children else { unreachable!() };
                kids.retain(|k| *k != cur);
                let node = self.nodes[cur.0].take().expect("live node");
                self.free.push(cur.0);
                match node.children {
                    Children::Leaf(entries) => {
                        for e in entries {
                            self.locations.remove(&e.id);
                            orphans.push((Item::Entry(e), 0));
                        }
                    }
                    Children::Internal(kids) => {
                        orphans.extend(kids.into_iter().map(|k| (Item::Node(k), node.level)));
                    }
                }
            } else {
                self.recompute_bbox(cur);
            }
            cur = parent;
        }
        self.recompute_bbox(cur);
        for (item, level) in orphans {
            self.insert_item(item, level, false);
        }
        loop {
            let root = self.root;
            let only = match &self.node(root).children {
                Children::Internal(kids) if kids.len() == 1 => kids[0],
                _ => break,
            };
            self.release(root);
            self.node_mut(only).parent = None;
            self.root = only;
        }
    }

    /// Ids whose boxes intersect `query`; visits are added to the tree's counters.
    pub fn search(&mut self, query: &Aabb) -> Vec<u64> {
        let (ids, s) = self.probe(query);
        self.stats.merge(&s);
        ids
    }

    /// Read-only search returning its own visit counters.
    pub fn probe(&self, query: &Aabb) -> (Vec<u64>, RTreeStats) {
        self.probe_traced(query, &mut |_| {})
    }

    /// Read-only search reporting every node fetch to `on_access`, in order.
    pub fn probe_traced(&self, query: &Aabb, on_access: &mut dyn FnMut(NodeAccess)) -> (Vec<u64>, RTreeStats) {
        let mut stats = RTreeStats { searches: 1, ..Default::default() };
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = self.node(id);
            let bytes = node_bytes(node.len());
            stats.nodes_visited += 1;
            stats.bytes_touched += bytes;
            on_access(NodeAccess { node: id, bytes });
            if !node.bbox.intersects(query) {
                continue;
            }
            match &node.children {
                Children::Leaf(entries) => {
                    for e in entries.iter().filter(|e| e.bbox.intersects(query)) {
                        out.push(e.id);
                        stats.leaf_hits += 1;
                    }
                }
                Children::Internal(kids) => {
                    // Reverse push keeps depth-first, left-to-right order.
                    for k in kids.iter().rev() {
                        if self.node(*k).bbox.intersects(query) {
                            stack.push(*k);
                        }
                    }
                }
            }
        }
        (out, stats)
    }

    /// Runs the queries one after another; returns per-query results and the
    /// summed `nodes_visited` delta.
    pub fn visits_for(&mut self, queries: &[Aabb]) -> (Vec<Vec<u64>>, u64) {
        let before = self.stats.nodes_visited;
        let results = queries.iter().map(|q| self.search(q)).collect();
        (results, self.stats.nodes_visited - before)
    }

    /// Every stored (id, box), in traversal order.
    pub fn entries(&self) -> Vec<(u64, Aabb)> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match &self.node(id).children {
                Children::Leaf(e) => out.extend(e.iter().map(|e| (e.id, e.bbox))),
                Children::Internal(k) => stack.extend(k.iter().rev()),
            }
        }
        out
    }

    pub fn shape(&self) -> NodeShape {
        self.shape_of(self.root)
    }

    fn shape_of(&self, id: NodeId) -> NodeShape {
        let n = self.node(id);
        let (entries, children) = match &n.children {
            Children::Leaf(e) => (e.iter().map(|e| (e.id, e.bbox)).collect(), Vec::new()),
            Children::Internal(k) => (Vec::new(), k.iter().map(|k| self.shape_of(*k)).collect()),
        };
        NodeShape { id, level: n.level, bbox: n.bbox, entries, children }
    }

    /// Full structural check: fill factors, exact parent boxes, uniform leaf
    /// depth, parent links and the id→leaf map.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let mut seen = 0usize;
        let root = self.node(self.root);
        if root.parent.is_some() {
            return Err("root has a parent".into());
        }
        if root.level > 0 && root.len() < 2 {
            return Err("internal root with fewer than two children".into());
        }
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = self.node(id);
            if id != self.root && (n.len() < self.node_min || n.len() > self.node_max) {
                return Err(format!("node {} holds {} children", id.0, n.len()));
            }
            if n.len() > self.node_max {
                return Err(format!("root holds {} children", n.len()));
            }
            let tight = match &n.children {
                Children::Leaf(entries) => {
                    if n.level != 0 {
                        return Err(format!("leaf {} at level {}", id.0, n.level));
                    }
                    for e in entries {
                        seen += 1;
                        if self.locations.get(&e.id) != Some(&id) {
                            return Err(format!("id {} not mapped to its leaf", e.id));
                        }
                    }
                    entries.iter().fold(Aabb::EMPTY, |b, e| b.union(&e.bbox))
                }
                Children::Internal(kids) => {
                    let mut b = Aabb::EMPTY;
                    for k in kids {
                        let child = self.node(*k);
                        if child.parent != Some(id) {
                            return Err(format!("node {} has a stale parent link", k.0));
                        }
                        if child.level + 1 != n.level {
                            return Err(format!("node {} breaks uniform leaf depth", k.0));
                        }
                        b = b.union(&child.bbox);
                        stack.push(*k);
                    }
                    b
                }
            };
            if tight != n.bbox {
                return Err(format!("node {} box is not the tight cover of its children", id.0));
            }
        }
        if seen != self.locations.len() {
            return Err(format!("{} entries reachable, {} mapped", seen, self.locations.len()));
        }
        Ok(())
    }
}

/// Seeds with the largest separation normalized by the set's extent along
/// that axis; ties resolve to the lowest axis and lowest indices.
fn pick_seeds(boxes: &[Aabb]) -> (usize, usize) {
    let all = boxes.iter().fold(Aabb::EMPTY, |b, x| b.union(x));
    let mut best: Option<(f64, usize, usize)> = None;
    for axis in 0..3 {
        let mut low_high = 0; // lowest high side
        let mut high_low = 0; // highest low side
        for (i, b) in boxes.iter().enumerate() {
            if b.hi[axis] < boxes[low_high].hi[axis] {
                low_high = i;
            }
            if b.lo[axis] > boxes[high_low].lo[axis] {
                high_low = i;
            }
        }
        if low_high == high_low {
            // Same box on both extremes: take the next-highest low side.
            high_low = (0..boxes.len())
                .filter(|&i| i != low_high)
                .fold(None::<usize>, |acc, i| match acc {
                    Some(a) if boxes[a].lo[axis] >= boxes[i].lo[axis] => Some(a),
                    _ => Some(i),
                })
                .expect("at least two boxes");
        }
        let width = all.hi[axis] - all.lo[axis];
        let sep = boxes[high_low].lo[axis] - boxes[low_high].hi[axis];
        let norm = if width > 0.0 { sep / width } else { 0.0 };
        if best.is_none_or(|(s, _, _)| norm > s) {
            best = Some((norm, low_high, high_low));
        }
    }
    let (_, a, b) = best.expect("three axes");
    (a.min(b), a.max(b))
}
