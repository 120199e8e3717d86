use std::cmp::Ordering;
use std::collections::BTreeMap;

use ordered_float::OrderedFloat;

use super::{Color, ColoredTree, NodeId, PhiOutcome, TreeError};
use crate::book::Book;
use crate::displacement::DisplacementDist;
use crate::rng::Source;

/// Offspring law of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OffspringLaw {
    /// `P(N = k) = (1 - p) p^k` on `{0, 1, ...}`.
    #[default]
    Geometric,
    /// `P(N = k) = (1 - p) p^(k-1)` on `{1, 2, ...}`. Wrong for the
    /// coupling; kept as a control for the statistical tests.
    ShiftedGeometric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwSpec {
    pub p: f64,
    pub dist: DisplacementDist,
    pub max_depth: usize,
    pub max_nodes: usize,
    pub law: OffspringLaw,
}

impl GwSpec {
    pub fn new(p: f64, dist: DisplacementDist, max_depth: usize, max_nodes: usize) -> Self {
        assert!(max_depth > 0 && max_nodes > 0, "caps must be positive");
        Self {
            p,
            dist,
            max_depth,
            max_nodes,
            law: OffspringLaw::Geometric,
        }
    }

    pub fn with_law(mut self, law: OffspringLaw) -> Self {
        self.law = law;
        self
    }
}

/// Draws the offspring of `v` as white children until the first tails (or
/// the forced first child for the shifted law). Returns false if the node
/// cap interrupted the draw.
fn expand<S: Source + ?Sized>(
    tree: &mut ColoredTree,
    v: NodeId,
    p: f64,
    dist: &DisplacementDist,
    law: OffspringLaw,
    max_nodes: usize,
    src: &mut S,
) -> bool {
    let mut forced = law == OffspringLaw::ShiftedGeometric;
    loop {
        let heads = forced || src.coin(p);
        forced = false;
        if !heads {
            tree.finalize(v);
            return true;
        }
        if tree.len() >= max_nodes {
            return false;
        }
        let x = dist.sample(src);
        tree.add_child(v, x, Color::White);
    }
}

/// Eagerly generates a labelled Galton–Watson tree: green root at 0, every
/// other node white. Nodes are expanded depth first. Nodes at the depth cap
/// are not expanded (one coin tells whether anything was cut), and the node
/// cap stops generation; either sets the truncation flag.
pub fn generate_gw<S: Source + ?Sized>(spec: &GwSpec, src: &mut S) -> ColoredTree {
    let mut tree = ColoredTree::initial();
    let mut stack = vec![0];
    while let Some(v) = stack.pop() {
        if tree.depth(v) >= spec.max_depth {
            if spec.law == OffspringLaw::ShiftedGeometric || src.coin(spec.p) {
                tree.set_truncated();
            } else {
                tree.finalize(v);
            }
            continue;
        }
        if !expand(&mut tree, v, spec.p, &spec.dist, spec.law, spec.max_nodes, src) {
            tree.set_truncated();
            break;
        }
        stack.extend(tree.children(v).iter().rev());
    }
    tree
}

/// Reveals one more child of `v`: on heads a white child with a fresh edge
/// label is appended, on tails the offspring of `v` is finalized.
pub fn lazy_reveal<S: Source + ?Sized>(
    tree: &mut ColoredTree,
    v: NodeId,
    src: &mut S,
    p: f64,
    dist: &DisplacementDist,
) -> Result<Option<NodeId>, TreeError> {
    if !tree.contains(v) {
        return Err(TreeError::NoSuchNode(v));
    }
    if tree.is_finalized(v) {
        return Err(TreeError::Finalized(v));
    }
    if src.coin(p) {
        let x = dist.sample(src);
        Ok(Some(tree.add_child(v, x, Color::White)))
    } else {
        tree.finalize(v);
        Ok(None)
    }
}

/// How a driven tree realizes offspring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reveal {
    /// One coin per step at the price node, drawn in the same order as the
    /// book chain.
    Lazy,
    /// All children of a node are drawn the first time it becomes the
    /// price node.
    Expand(OffspringLaw),
}

/// Applies the price-node step to a growing tree in place, keeping an index
/// of green nodes by label so the price node is found without a scan.
#[derive(Debug, Clone)]
pub struct TreeDriver<'a> {
    p: f64,
    dist: &'a DisplacementDist,
    mode: Reveal,
    tree: ColoredTree,
    /// Green nodes by label, each bucket in lexicographic order.
    greens: BTreeMap<OrderedFloat<f64>, Vec<NodeId>>,
    measure: Book,
}

impl<'a> TreeDriver<'a> {
    pub fn new(p: f64, dist: &'a DisplacementDist, mode: Reveal) -> Self {
        let mut d = Self {
            p,
            dist,
            mode,
            tree: ColoredTree::empty(),
            greens: BTreeMap::new(),
            measure: Book::empty(),
        };
        d.regenerate();
        d
    }

    /// Starts over from a fresh tree.
    pub fn regenerate(&mut self) {
        self.tree = ColoredTree::initial();
        self.greens.clear();
        self.greens.insert(OrderedFloat(0.0), vec![0]);
        self.measure = Book::dirac(0.0);
    }

    pub fn tree(&self) -> &ColoredTree {
        &self.tree
    }

    pub fn into_tree(self) -> ColoredTree {
        self.tree
    }

    /// Point measure of the green labels, kept up to date.
    pub fn green_measure(&self) -> &Book {
        &self.measure
    }

    pub fn has_green(&self) -> bool {
        !self.greens.is_empty()
    }

    pub fn price_node(&self) -> Option<NodeId> {
        self.greens.values().next_back().and_then(|b| b.last().copied())
    }

    fn add_green(&mut self, v: NodeId) {
        let label = self.tree.label(v);
        let tree = &self.tree;
        let bucket = self.greens.entry(OrderedFloat(label)).or_default();
        let at = bucket.partition_point(|&u| tree.lex_cmp(u, v) == Ordering::Less);
        bucket.insert(at, v);
        self.measure.insert(label);
    }

    fn kill(&mut self, g: NodeId) {
        let label = self.tree.label(g);
        let key = OrderedFloat(label);
        let bucket = self.greens.get_mut(&key).expect("price node is indexed");
        let last = bucket.pop();
        debug_assert_eq!(last, Some(g));
        if bucket.is_empty() {
            self.greens.remove(&key);
        }
        self.tree.set_color(g, Color::Red);
        self.measure.remove_one(label);
    }

    /// One step. Returns `Idle` (consuming nothing) when no green is left.
    pub fn step<S: Source + ?Sized>(&mut self, src: &mut S) -> PhiOutcome {
        let Some(g) = self.price_node() else {
            return PhiOutcome::Idle;
        };
        let child = match self.mode {
            Reveal::Lazy => {
                if self.tree.is_finalized(g) {
                    None
                } else {
                    lazy_reveal(&mut self.tree, g, src, self.p, self.dist).expect("price node is open")
                }
            }
            Reveal::Expand(law) => {
                if !self.tree.is_finalized(g) {
                    expand(&mut self.tree, g, self.p, self.dist, law, usize::MAX, src);
                }
                self.tree.first_white_child(g)
            }
        };
        match child {
            Some(c) => {
                self.tree.set_color(c, Color::Green);
                self.add_green(c);
                PhiOutcome::Activated(c)
            }
            None => {
                self.kill(g);
                PhiOutcome::Killed(g)
            }
        }
    }
}
