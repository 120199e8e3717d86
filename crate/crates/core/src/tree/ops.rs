use std::cmp::Ordering;

use super::{Color, ColoredTree, NodeId, TreeError};
use crate::book::Book;

/// What one application of the price-node step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiOutcome {
    /// No green node; the tree is unchanged.
    Idle,
    /// This white child of the price node turned green.
    Activated(NodeId),
    /// The price node turned red.
    Killed(NodeId),
}

impl ColoredTree {
    /// Point measure of green-node labels.
    pub fn green_measure(&self) -> Book {
        Book::from_positions(self.greens().map(|v| self.label(v)))
    }

    /// Order used to pick the price node: label first, then lexicographic
    /// position, so the maximum is the last green node of largest label.
    pub(crate) fn price_cmp(&self, u: NodeId, v: NodeId) -> Ordering {
        self.label(u)
            .total_cmp(&self.label(v))
            .then_with(|| self.lex_cmp(u, v))
    }

    /// The green node of largest label, last in lexicographic order on ties.
    pub fn price_node(&self) -> Option<NodeId> {
        self.greens().max_by(|&u, &v| self.price_cmp(u, v))
    }

    pub fn white_count(&self, v: NodeId) -> usize {
        self.children(v)
            .iter()
            .filter(|&&c| self.color(c) == Color::White)
            .count()
    }

    /// White children of the price node.
    pub fn price_white_count(&self) -> Result<usize, TreeError> {
        self.price_node()
            .map(|g| self.white_count(g))
            .ok_or(TreeError::NoGreen)
    }

    pub fn first_white_child(&self, v: NodeId) -> Option<NodeId> {
        self.children(v)
            .iter()
            .copied()
            .find(|&c| self.color(c) == Color::White)
    }

    /// One step in place: the first white child of the price node turns
    /// green, or the price node turns red if it has none.
    pub fn phi_in_place(&mut self) -> PhiOutcome {
        let Some(g) = self.price_node() else {
            return PhiOutcome::Idle;
        };
        match self.first_white_child(g) {
            Some(c) => {
                self.set_color(c, Color::Green);
                PhiOutcome::Activated(c)
            }
            None => {
                self.set_color(g, Color::Red);
                PhiOutcome::Killed(g)
            }
        }
    }

    pub fn phi(&self) -> ColoredTree {
        let mut t = self.clone();
        t.phi_in_place();
        t
    }

    pub fn phi_n(&self, n: usize) -> ColoredTree {
        let mut t = self.clone();
        for _ in 0..n {
            if t.phi_in_place() == PhiOutcome::Idle {
                break;
            }
        }
        t
    }

    /// First number of steps after which no green node is left, if that
    /// happens within `cap` steps.
    pub fn kappa(&self, cap: usize) -> Option<usize> {
        let mut t = self.clone();
        for n in 0..=cap {
            if t.green_count() == 0 {
                return Some(n);
            }
            t.phi_in_place();
        }
        None
    }

    /// `|greens| + 2 |reds| - 1`: counts the steps taken from a fresh tree.
    pub fn sigma(&self) -> i64 {
        self.green_count() as i64 + 2 * self.red_count() as i64 - 1
    }

    /// The tree with every white node deleted.
    pub fn without_whites(&self) -> ColoredTree {
        match self.root() {
            None => ColoredTree::empty(),
            Some(r) if self.color(r) == Color::White => ColoredTree::empty(),
            Some(r) => self.extract(r, self.root_label(), |v| self.color(v) != Color::White),
        }
    }

    /// Adds a green child with edge label `edge` to the price node, after
    /// all its existing children.
    pub fn add_green_child(&self, edge: f64) -> Result<ColoredTree, TreeError> {
        let g = self.price_node().ok_or(TreeError::NoGreen)?;
        let mut t = self.clone();
        t.add_child(g, edge, Color::Green);
        Ok(t)
    }

    /// Turns the price node red.
    pub fn kill_price_node(&self) -> Result<ColoredTree, TreeError> {
        let g = self.price_node().ok_or(TreeError::NoGreen)?;
        let mut t = self.clone();
        t.set_color(g, Color::Red);
        Ok(t)
    }

    /// Turns the first white child of the price node green.
    pub fn activate_first_white(&self) -> Result<ColoredTree, TreeError> {
        let g = self.price_node().ok_or(TreeError::NoGreen)?;
        let c = self.first_white_child(g).ok_or(TreeError::NoWhiteChild)?;
        let mut t = self.clone();
        t.set_color(c, Color::Green);
        Ok(t)
    }

    /// Edge label between the price node and its first white child.
    pub fn first_white_edge(&self) -> Option<f64> {
        let g = self.price_node()?;
        self.first_white_child(g).map(|c| self.edge_label(c))
    }

    /// Shifts every label by `shift` (moves the root label).
    pub fn shifted(&self, shift: f64) -> ColoredTree {
        let mut t = self.clone();
        t.root_label += shift;
        t
    }

    /// Removes every node with label below `level`, together with its
    /// descendants.
    pub fn barrier(&self, level: f64) -> ColoredTree {
        match self.root() {
            Some(r) if self.label(r) >= level => {
                self.extract(r, self.root_label(), |v| self.label(v) >= level)
            }
            _ => ColoredTree::empty(),
        }
    }

    /// Barrier at the root's own label.
    pub fn barrier_at_root(&self) -> ColoredTree {
        self.barrier(self.root_label())
    }

    /// Subtree rooted at `v`, keeping absolute labels.
    pub fn subtree(&self, v: NodeId) -> Result<ColoredTree, TreeError> {
        if !self.contains(v) {
            return Err(TreeError::NoSuchNode(v));
        }
        Ok(self.extract(v, self.label(v), |_| true))
    }

    /// Largest label at depth `n`, `-inf` if there is no such node.
    pub fn rightmost(&self, n: usize) -> f64 {
        self.nodes()
            .filter(|&v| self.depth(v) == n)
            .map(|v| self.label(v))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Number of children of `v` (white or not).
    pub fn offspring(&self, v: NodeId) -> usize {
        self.child_count(v)
    }

    /// Whether `self` is a subtree of `other`: every node of `self` exists
    /// in `other` under the same rank word with the same edge label.
    pub fn is_subtree_of(&self, other: &ColoredTree) -> bool {
        if self.is_empty() {
            return true;
        }
        if other.is_empty() {
            return false;
        }
        let mut stack = vec![(0, 0)];
        while let Some((u, v)) = stack.pop() {
            for &c in self.children(u) {
                let rank = self.rank(c);
                let Some(&d) = other.children(v).iter().find(|&&d| other.rank(d) == rank) else {
                    return false;
                };
                if other.edge_label(d) != self.edge_label(c) {
                    return false;
                }
                stack.push((c, d));
            }
        }
        true
    }
}
