//! Colored, edge-labelled rooted trees and the operator calculus acting on
//! them.
//!
//! Nodes live in an arena and are identified by their index. Each node also
//! keeps its `rank` among its siblings at creation time, so the word of ranks
//! along the root path identifies a node across trees derived from one
//! another (pruning, deleting white nodes, taking subtrees). Tree equality
//! is equality of those node sets together with edge labels and colors.

mod gw;
mod ops;

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use thiserror::Error;

pub use gw::{generate_gw, lazy_reveal, GwSpec, OffspringLaw, Reveal, TreeDriver};
pub use ops::PhiOutcome;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Green,
    Red,
    White,
}

impl Color {
    pub fn as_str(self) -> &'static str {
        match self {
            Color::Green => "green",
            Color::Red => "red",
            Color::White => "white",
        }
    }

    fn code(self) -> u64 {
        match self {
            Color::Green => 0,
            Color::Red => 1,
            Color::White => 2,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("tree has no green node")]
    NoGreen,
    #[error("price node has no white child")]
    NoWhiteChild,
    #[error("node {0} is not in the tree")]
    NoSuchNode(NodeId),
    #[error("offspring of node {0} is already finalized")]
    Finalized(NodeId),
    #[error("green and red nodes do not form a connected set containing the root")]
    Disconnected,
    #[error("root is white")]
    WhiteRoot,
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    rank: u32,
    edge: f64,
    /// Sum of edge labels from the root; the label is `root_label + offset`.
    offset: f64,
    depth: u32,
    color: Color,
    finalized: bool,
}

#[derive(Debug, Clone)]
pub struct ColoredTree {
    nodes: Vec<Node>,
    root_label: f64,
    truncated: bool,
}

impl ColoredTree {
    /// A single node with the given color and label.
    pub fn root_only(color: Color, label: f64) -> Self {
        Self {
            nodes: vec![Node {
                parent: None,
                children: Vec::new(),
                rank: 0,
                edge: 0.0,
                offset: 0.0,
                depth: 0,
                color,
                finalized: false,
            }],
            root_label: label,
            truncated: false,
        }
    }

    /// The green root at 0 that every realization starts from.
    pub fn initial() -> Self {
        Self::root_only(Color::Green, 0.0)
    }

    /// The tree with no nodes, produced when a barrier removes the root.
    pub fn empty() -> Self {
        Self {
            nodes: Vec::new(),
            root_label: 0.0,
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> Option<NodeId> {
        (!self.nodes.is_empty()).then_some(0)
    }

    pub fn root_label(&self) -> f64 {
        self.root_label
    }

    /// Whether generation stopped at a cap with offspring left undrawn.
    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub(crate) fn set_truncated(&mut self) {
        self.truncated = true;
    }

    pub fn contains(&self, v: NodeId) -> bool {
        v < self.nodes.len()
    }

    pub fn label(&self, v: NodeId) -> f64 {
        self.root_label + self.nodes[v].offset
    }

    /// Label on the edge from `v` to its parent (0 for the root).
    pub fn edge_label(&self, v: NodeId) -> f64 {
        self.nodes[v].edge
    }

    pub fn color(&self, v: NodeId) -> Color {
        self.nodes[v].color
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.nodes[v].parent
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.nodes[v].children
    }

    pub fn depth(&self, v: NodeId) -> usize {
        self.nodes[v].depth as usize
    }

    pub fn rank(&self, v: NodeId) -> u32 {
        self.nodes[v].rank
    }

    pub fn is_finalized(&self, v: NodeId) -> bool {
        self.nodes[v].finalized
    }

    pub(crate) fn finalize(&mut self, v: NodeId) {
        self.nodes[v].finalized = true;
    }

    pub(crate) fn set_color(&mut self, v: NodeId, color: Color) {
        self.nodes[v].color = color;
    }

    /// Appends a child after all existing children of `parent`.
    pub fn add_child(&mut self, parent: NodeId, edge: f64, color: Color) -> NodeId {
        let rank = self.nodes[parent]
            .children
            .last()
            .map_or(0, |&c| self.nodes[c].rank + 1);
        self.push_node(parent, rank, edge, color)
    }

    fn push_node(&mut self, parent: NodeId, rank: u32, edge: f64, color: Color) -> NodeId {
        let id = self.nodes.len();
        let (offset, depth) = {
            let p = &self.nodes[parent];
            (p.offset + edge, p.depth + 1)
        };
        self.nodes.push(Node {
            parent: Some(parent),
            children: Vec::new(),
            rank,
            edge,
            offset,
            depth,
            color,
            finalized: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Nodes in lexicographic (depth-first, children in order) order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let Some(root) = self.root() else {
            return out;
        };
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    /// Lexicographic order of the rank words of `u` and `v`.
    pub fn lex_cmp(&self, mut u: NodeId, mut v: NodeId) -> Ordering {
        if u == v {
            return Ordering::Equal;
        }
        let (du, dv) = (self.nodes[u].depth, self.nodes[v].depth);
        // An ancestor precedes its descendants.
        let mut tie = Ordering::Equal;
        if du > dv {
            for _ in dv..du {
                u = self.nodes[u].parent.expect("depth > 0 has a parent");
            }
            tie = Ordering::Greater;
        } else if dv > du {
            for _ in du..dv {
                v = self.nodes[v].parent.expect("depth > 0 has a parent");
            }
            tie = Ordering::Less;
        }
        if u == v {
            return tie;
        }
        loop {
            let (pu, pv) = (self.nodes[u].parent, self.nodes[v].parent);
            if pu == pv {
                return self.nodes[u].rank.cmp(&self.nodes[v].rank);
            }
            u = pu.expect("distinct nodes at equal depth below the root");
            v = pv.expect("distinct nodes at equal depth below the root");
        }
    }

    /// Rank word of `v` from the root.
    pub fn word(&self, mut v: NodeId) -> Vec<u32> {
        let mut w = Vec::with_capacity(self.nodes[v].depth as usize);
        while let Some(p) = self.nodes[v].parent {
            w.push(self.nodes[v].rank);
            v = p;
        }
        w.reverse();
        w
    }

    /// The node with rank word `word`, if present.
    pub fn node_at(&self, word: &[u32]) -> Option<NodeId> {
        let mut v = self.root()?;
        for &r in word {
            v = *self.nodes[v].children.iter().find(|&&c| self.nodes[c].rank == r)?;
        }
        Some(v)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.nodes.len()
    }

    pub fn greens(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&v| self.nodes[v].color == Color::Green)
    }

    pub fn reds(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|&v| self.nodes[v].color == Color::Red)
    }

    pub fn green_count(&self) -> usize {
        self.greens().count()
    }

    pub fn red_count(&self) -> usize {
        self.reds().count()
    }

    /// Number of children of `v`.
    pub fn child_count(&self, v: NodeId) -> usize {
        self.nodes[v].children.len()
    }

    /// Checks the structural invariants: non-white nodes form a connected
    /// set that contains the root (or is empty), and cached offsets, depths
    /// and parent links agree with the edges.
    pub fn check_invariants(&self) -> Result<(), TreeError> {
        for v in self.nodes() {
            let n = &self.nodes[v];
            match n.parent {
                None => {
                    if v != 0 || n.offset != 0.0 || n.depth != 0 {
                        return Err(TreeError::Disconnected);
                    }
                }
                Some(p) => {
                    let pn = &self.nodes[p];
                    if !pn.children.contains(&v) || n.depth != pn.depth + 1 || n.offset != pn.offset + n.edge {
                        return Err(TreeError::Disconnected);
                    }
                    if n.color != Color::White && pn.color == Color::White {
                        return Err(TreeError::Disconnected);
                    }
                }
            }
            if n.children.windows(2).any(|w| self.nodes[w[0]].rank >= self.nodes[w[1]].rank) {
                return Err(TreeError::Disconnected);
            }
        }
        if let Some(r) = self.root() {
            if self.nodes[r].color == Color::White && self.nodes().any(|v| self.nodes[v].color != Color::White) {
                return Err(TreeError::WhiteRoot);
            }
        }
        Ok(())
    }

    /// Preorder encoding `(depth, rank, edge bits, color)`; two trees are
    /// equal iff their root labels and encodings agree.
    pub fn encoding(&self) -> Vec<(u32, u32, u64, Color)> {
        self.preorder()
            .into_iter()
            .map(|v| {
                let n = &self.nodes[v];
                (n.depth, n.rank, normalized_bits(n.edge), n.color)
            })
            .collect()
    }

    /// Compact hashable key of the same data as [`ColoredTree::encoding`].
    pub fn key(&self) -> Vec<u64> {
        let mut k = Vec::with_capacity(2 * self.nodes.len() + 1);
        k.push(normalized_bits(self.root_label));
        for v in self.preorder() {
            let n = &self.nodes[v];
            k.push(((n.depth as u64) << 34) | ((n.rank as u64) << 2) | n.color.code());
            k.push(normalized_bits(n.edge));
        }
        k
    }

    /// Snapshot in the line format `nodeId parentId edgeLabel color`, root
    /// first, then nodes in lexicographic order. Ids are preorder positions;
    /// the root's parent is `-` and its edge label column holds the root
    /// label.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let order = self.preorder();
        let mut pos = vec![0usize; self.nodes.len()];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        for (i, &v) in order.iter().enumerate() {
            let n = &self.nodes[v];
            match n.parent {
                None => writeln!(out, "{i} - {} {}", self.root_label, n.color.as_str())?,
                Some(p) => writeln!(out, "{i} {} {} {}", pos[p], n.edge, n.color.as_str())?,
            }
        }
        Ok(())
    }

    /// Copies the nodes selected by `keep` (which must be closed under
    /// taking parents, relative to `new_root`) into a fresh arena in
    /// preorder, preserving ranks, edges and colors.
    fn extract(&self, new_root: NodeId, root_label: f64, keep: impl Fn(NodeId) -> bool) -> ColoredTree {
        let r = &self.nodes[new_root];
        let mut out = ColoredTree::root_only(r.color, root_label);
        out.nodes[0].finalized = r.finalized;
        let mut stack: Vec<(NodeId, NodeId)> = vec![(new_root, 0)];
        while let Some((src, dst)) = stack.pop() {
            let mut kids = Vec::new();
            for &c in &self.nodes[src].children {
                if keep(c) {
                    let cn = &self.nodes[c];
                    let id = out.push_node(dst, cn.rank, cn.edge, cn.color);
                    out.nodes[id].finalized = cn.finalized;
                    kids.push((c, id));
                }
            }
            stack.extend(kids.into_iter().rev());
        }
        out
    }
}

fn normalized_bits(x: f64) -> u64 {
    (x + 0.0).to_bits()
}

impl PartialEq for ColoredTree {
    fn eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.is_empty() || self.root_label == other.root_label)
            && self.encoding() == other.encoding()
    }
}

impl fmt::Display for ColoredTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_snapshot(&mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// root(0) -> a(+1) -> c(+2); root -> b(-1)
    fn small() -> (ColoredTree, [NodeId; 3]) {
        let mut t = ColoredTree::initial();
        let a = t.add_child(0, 1.0, Color::Green);
        let b = t.add_child(0, -1.0, Color::White);
        let c = t.add_child(a, 2.0, Color::White);
        (t, [a, b, c])
    }

    #[test]
    fn labels_accumulate_edges() {
        let (t, [a, b, c]) = small();
        assert_eq!(t.label(a), 1.0);
        assert_eq!(t.label(b), -1.0);
        assert_eq!(t.label(c), 3.0);
        assert_eq!(t.depth(c), 2);
        t.check_invariants().unwrap();
    }

    #[test]
    fn lex_order_is_preorder() {
        let (t, [a, b, c]) = small();
        assert_eq!(t.preorder(), vec![0, a, c, b]);
        assert_eq!(t.lex_cmp(0, a), Ordering::Less);
        assert_eq!(t.lex_cmp(c, b), Ordering::Less);
        assert_eq!(t.lex_cmp(b, c), Ordering::Greater);
        assert_eq!(t.lex_cmp(a, c), Ordering::Less);
        let order = t.preorder();
        for (i, &u) in order.iter().enumerate() {
            for (j, &v) in order.iter().enumerate() {
                assert_eq!(t.lex_cmp(u, v), i.cmp(&j));
            }
        }
    }

    #[test]
    fn words_round_trip() {
        let (t, [a, b, c]) = small();
        assert_eq!(t.word(c), vec![0, 0]);
        assert_eq!(t.word(b), vec![1]);
        for v in [0, a, b, c] {
            assert_eq!(t.node_at(&t.word(v)), Some(v));
        }
        assert_eq!(t.node_at(&[5]), None);
    }

    #[test]
    fn equality_ignores_arena_order() {
        let (t, [_, b, _]) = small();
        let mut u = ColoredTree::initial();
        let a2 = u.add_child(0, 1.0, Color::Green);
        u.add_child(0, -1.0, Color::White);
        u.add_child(a2, 2.0, Color::White);
        assert_eq!(t, u);
        let mut v = t.clone();
        v.set_color(b, Color::Green);
        assert_ne!(t, v);
    }

    #[test]
    fn invariant_violations() {
        let mut t = ColoredTree::initial();
        let a = t.add_child(0, 1.0, Color::White);
        t.add_child(a, 1.0, Color::Green);
        assert_eq!(t.check_invariants(), Err(TreeError::Disconnected));
        let mut w = ColoredTree::root_only(Color::White, 0.0);
        w.add_child(0, 1.0, Color::Green);
        assert!(w.check_invariants().is_err());
    }

    #[test]
    fn snapshot_format() {
        let (t, _) = small();
        let mut buf = Vec::new();
        t.write_snapshot(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "0 - 0 green\n1 0 1 green\n2 1 2 white\n3 0 -1 white\n"
        );
    }
}
