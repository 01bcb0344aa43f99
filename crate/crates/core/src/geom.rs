//! Observation locations and the adaptive quadtree over them.
//!
//! The tree stores a single permutation of `0..n` such that every node owns a
//! contiguous slice of it. A node's slice is the concatenation of its
//! children's slices in SW, SE, NW, NE order, so the partition and nesting
//! properties hold by construction.

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// A set of 2D observation locations. Index `i` of `coords` is observation `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    coords: Vec<Point>,
}

impl PointSet {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::input("point set must contain at least one point"));
        }
        if let Some(i) = coords
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { coords })
    }

    /// `side × side` regular grid discretizing `[0, extent]²`, row-major in y.
    pub fn grid(side: usize, extent: f64) -> Result<Self> {
        if side == 0 {
            return Err(Error::input("grid side must be positive"));
        }
        let step = if side > 1 {
            extent / (side - 1) as f64
        } else {
            0.0
        };
        let coords = (0..side)
            .flat_map(|j| (0..side).map(move |i| [i as f64 * step, j as f64 * step]))
            .collect();
        Self::new(coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn get(&self, i: usize) -> Point {
        self.coords[i]
    }

    /// Concatenation `[self; other]`, used for joint train/test factorizations.
    pub fn concat(&self, other: &PointSet) -> PointSet {
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        PointSet { coords }
    }

    pub fn translated(&self, shift: Point) -> PointSet {
        PointSet {
            coords: self
                .coords
                .iter()
                .map(|p| [p[0] + shift[0], p[1] + shift[1]])
                .collect(),
        }
    }
}

/// Identifier of a node inside a [`QuadTree`].
pub type NodeId = usize;

#[derive(Clone, Debug)]
pub struct Node {
    pub level: usize,
    pub center: Point,
    pub half_width: f64,
    pub parent: Option<NodeId>,
    /// Non-empty children in SW, SE, NW, NE order.
    pub children: Vec<NodeId>,
    /// Position of this node in its parent's `children` list.
    pub child_index: usize,
    /// Leaf that still holds more than `n_occ` points because they coincide.
    pub degenerate: bool,
    start: usize,
    end: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Circumscribed radius of the node's square.
    pub fn radius(&self) -> f64 {
        self.half_width * std::f64::consts::SQRT_2
    }

    /// Half-open membership, `[lo, hi)` on each axis.
    pub fn contains(&self, p: Point) -> bool {
        let lo = [self.center[0] - self.half_width, self.center[1] - self.half_width];
        let hi = [self.center[0] + self.half_width, self.center[1] + self.half_width];
        p[0] >= lo[0] && p[0] < hi[0] && p[1] >= lo[1] && p[1] < hi[1]
    }
}

// Subdivision stops here even if points are distinct but closer than the
// floating-point resolution of the box.
const MAX_DEPTH: usize = 48;

#[derive(Clone, Debug)]
pub struct QuadTree {
    nodes: Vec<Node>,
    perm: Vec<usize>,
    depth: usize,
    n_occ: usize,
    by_level: Vec<Vec<NodeId>>,
}

impl QuadTree {
    /// Adaptive quadtree with at most `n_occ` points per leaf.
    ///
    /// The root is the smallest square enclosing the data, grown by `1e-6` of
    /// its side so that no point sits on its upper boundary.
    pub fn build(points: &PointSet, n_occ: usize) -> Result<Self> {
        if n_occ == 0 {
            return Err(Error::input("n_occ must be at least 1"));
        }
        let coords = points.coords();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in coords {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        if side == 0.0 {
            side = 1.0;
        }
        let half = 0.5 * side * (1.0 + 1e-6);
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];

        let mut tree = QuadTree {
            nodes: vec![Node {
                level: 0,
                center,
                half_width: half,
                parent: None,
                children: Vec::new(),
                child_index: 0,
                degenerate: false,
                start: 0,
                end: coords.len(),
            }],
            perm: (0..coords.len()).collect(),
            depth: 0,
            n_occ,
            by_level: Vec::new(),
        };
        tree.split(0, coords);
        tree.depth = tree.nodes.iter().map(|n| n.level).max().unwrap_or(0);
        tree.by_level = vec![Vec::new(); tree.depth + 1];
        for (id, node) in tree.nodes.iter().enumerate() {
            tree.by_level[node.level].push(id);
        }
        Ok(tree)
    }

    fn split(&mut self, id: NodeId, coords: &[Point]) {
        let (start, end, level, center, half) = {
            let n = &self.nodes[id];
            (n.start, n.end, n.level, n.center, n.half_width)
        };
        if end - start <= self.n_occ {
            return;
        }
        let first = coords[self.perm[start]];
        let all_same = self.perm[start..end].iter().all(|&i| coords[i] == first);
        if all_same || level >= MAX_DEPTH {
            self.nodes[id].degenerate = true;
            return;
        }

        let quadrant = |p: Point| -> usize {
            usize::from(p[0] >= center[0]) + 2 * usize::from(p[1] >= center[1])
        };
        let mut buckets: [Vec<usize>; 4] = Default::default();
        for &i in &self.perm[start..end] {
            buckets[quadrant(coords[i])].push(i);
        }
        let mut offset = start;
        let h = 0.5 * half;
        for (q, bucket) in buckets.iter().enumerate() {
            if bucket.is_empty() {
                continue;
            }
            let c = [
                center[0] + if q & 1 == 1 { h } else { -h },
                center[1] + if q & 2 == 2 { h } else { -h },
            ];
            self.perm[offset..offset + bucket.len()].copy_from_slice(bucket);
            let child = self.nodes.len();
            let child_index = self.nodes[id].children.len();
            self.nodes.push(Node {
                level: level + 1,
                center: c,
                half_width: h,
                parent: Some(id),
                children: Vec::new(),
                child_index,
                degenerate: false,
                start: offset,
                end: offset + bucket.len(),
            });
            self.nodes[id].children.push(child);
            offset += bucket.len();
        }
        let children = self.nodes[id].children.clone();
        for child in children {
            self.split(child, coords);
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    /// Depth `L`: levels run from 0 (root) to `L`.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_occ(&self) -> usize {
        self.n_occ
    }

    pub fn n_points(&self) -> usize {
        self.perm.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Observation indices owned by a node.
    pub fn indices(&self, id: NodeId) -> &[usize] {
        let n = &self.nodes[id];
        &self.perm[n.start..n.end]
    }

    /// All nodes at exactly level `level`, in tree order.
    pub fn nodes_at(&self, level: usize) -> &[NodeId] {
        self.by_level.get(level).map_or(&[], |v| v.as_slice())
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn degenerate_leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].degenerate)
    }

    /// Largest number of points in any leaf.
    pub fn max_leaf_size(&self) -> usize {
        self.leaves().map(|l| self.nodes[l].len()).max().unwrap_or(0)
    }

    /// The partition of `0..n` at level `level`: the nodes at that level plus
    /// any leaf that stopped subdividing above it.
    pub fn level_sets(&self, level: usize) -> Result<Vec<&[usize]>> {
        if level > self.depth {
            return Err(Error::input(format!(
                "level {level} out of range 0..={}",
                self.depth
            )));
        }
        Ok(self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.level == level || (n.level < level && n.is_leaf()))
            .map(|(id, _)| self.indices(id))
            .collect())
    }

    /// Other children of the node's parent; empty for the root.
    pub fn siblings(&self, id: NodeId) -> Vec<NodeId> {
        match self.nodes[id].parent {
            None => Vec::new(),
            Some(p) => self.nodes[p]
                .children
                .iter()
                .copied()
                .filter(|&c| c != id)
                .collect(),
        }
    }
}
