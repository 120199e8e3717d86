//! Order-book state and the book Markov chain.

use std::collections::BTreeMap;
use std::fmt;

use ordered_float::OrderedFloat;
use serde::Serialize;

use crate::displacement::DisplacementDist;
use crate::rng::Source;

/// Finite point measure on the line: resting orders with multiplicity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Book {
    orders: BTreeMap<OrderedFloat<f64>, u64>,
    mass: u64,
}

/// What one transition of the chain did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Add,
    Remove,
    Restart,
}

impl Event {
    pub fn as_str(self) -> &'static str {
        match self {
            Event::Add => "add",
            Event::Remove => "remove",
            Event::Restart => "restart",
        }
    }
}

impl Book {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The Dirac mass at `x`.
    pub fn dirac(x: f64) -> Self {
        let mut b = Self::empty();
        b.insert(x);
        b
    }

    pub fn from_positions(positions: impl IntoIterator<Item = f64>) -> Self {
        let mut b = Self::empty();
        for x in positions {
            b.insert(x);
        }
        b
    }

    pub fn mass(&self) -> u64 {
        self.mass
    }

    pub fn is_empty(&self) -> bool {
        self.mass == 0
    }

    /// Rightmost order, 0 for the empty book.
    pub fn price(&self) -> f64 {
        self.orders.keys().next_back().map_or(0.0, |k| k.0)
    }

    pub fn count_at(&self, x: f64) -> u64 {
        self.orders.get(&OrderedFloat(x)).copied().unwrap_or(0)
    }

    /// `(position, multiplicity)` in increasing position.
    pub fn iter(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.orders.iter().map(|(k, &c)| (k.0, c))
    }

    pub fn distinct_positions(&self) -> usize {
        self.orders.len()
    }

    pub fn insert(&mut self, x: f64) {
        debug_assert!(x.is_finite());
        *self.orders.entry(OrderedFloat(x)).or_insert(0) += 1;
        self.mass += 1;
    }

    /// Removes one order at `x`; returns false if there was none.
    pub fn remove_one(&mut self, x: f64) -> bool {
        let key = OrderedFloat(x);
        match self.orders.get_mut(&key) {
            Some(c) if *c > 1 => *c -= 1,
            Some(_) => {
                self.orders.remove(&key);
            }
            None => return false,
        }
        self.mass -= 1;
        true
    }

    /// One transition in place. `x` is only read on heads.
    pub fn apply(&mut self, heads: bool, x: f64) -> Event {
        if self.is_empty() {
            self.insert(0.0);
            Event::Restart
        } else if heads {
            self.insert(self.price() + x);
            Event::Add
        } else {
            self.remove_one(self.price());
            Event::Remove
        }
    }
}

impl fmt::Display for Book {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (x, c) in self.iter() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            if c > 1 {
                write!(f, "{c}")?;
            }
            write!(f, "δ{x}")?;
        }
        Ok(())
    }
}

/// The price of `book`.
pub fn price(book: &Book) -> f64 {
    book.price()
}

/// One transition of the chain as a pure function.
pub fn step(book: &Book, heads: bool, x: f64) -> Book {
    let mut next = book.clone();
    next.apply(heads, x);
    next
}

/// Runs the chain forward one step at a time, drawing from a [`Source`].
/// Restart steps consume nothing; other steps consume one coin and, on
/// heads, one displacement.
#[derive(Debug, Clone)]
pub struct BookChain<'a> {
    p: f64,
    dist: &'a DisplacementDist,
    book: Book,
}

impl<'a> BookChain<'a> {
    pub fn new(p: f64, dist: &'a DisplacementDist) -> Self {
        Self {
            p,
            dist,
            book: Book::dirac(0.0),
        }
    }

    pub fn book(&self) -> &Book {
        &self.book
    }

    pub fn step<S: Source + ?Sized>(&mut self, source: &mut S) -> Event {
        if self.book.is_empty() {
            return self.book.apply(false, 0.0);
        }
        let heads = source.coin(self.p);
        let x = if heads { self.dist.sample(source) } else { 0.0 };
        self.book.apply(heads, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BookTrajectory {
    /// Full states, only kept when requested.
    pub states: Option<Vec<Book>>,
    pub prices: Vec<f64>,
    pub masses: Vec<u64>,
    /// `events[n]` is the transition from step n to n+1.
    pub events: Vec<Event>,
    pub tau: Option<usize>,
}

impl BookTrajectory {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn final_price(&self) -> f64 {
        *self.prices.last().expect("trajectory has at least one state")
    }
}

/// Simulates `horizon` steps from `B_0 = δ_0`.
pub fn simulate<S: Source + ?Sized>(
    p: f64,
    dist: &DisplacementDist,
    horizon: usize,
    source: &mut S,
    keep_states: bool,
) -> BookTrajectory {
    let mut chain = BookChain::new(p, dist);
    let mut states = keep_states.then(|| vec![chain.book().clone()]);
    let mut prices = Vec::with_capacity(horizon + 1);
    let mut masses = Vec::with_capacity(horizon + 1);
    let mut events = Vec::with_capacity(horizon);
    let mut tau = None;
    prices.push(chain.book().price());
    masses.push(chain.book().mass());
    for n in 1..=horizon {
        events.push(chain.step(source));
        let b = chain.book();
        prices.push(b.price());
        masses.push(b.mass());
        if tau.is_none() && b.is_empty() {
            tau = Some(n);
        }
        if let Some(s) = states.as_mut() {
            s.push(b.clone());
        }
    }
    BookTrajectory {
        states,
        prices,
        masses,
        events,
        tau,
    }
}

/// Final price only, without storing the path.
pub fn final_price<S: Source + ?Sized>(p: f64, dist: &DisplacementDist, horizon: usize, source: &mut S) -> f64 {
    let mut chain = BookChain::new(p, dist);
    for _ in 0..horizon {
        chain.step(source);
    }
    chain.book().price()
}

/// First step with an empty book.
pub fn extinction_time(traj: &BookTrajectory) -> Option<usize> {
    match &traj.states {
        Some(states) => states.iter().position(Book::is_empty),
        None => traj.masses.iter().position(|&m| m == 0),
    }
}

/// CSV with header `step,price,mass[,event]`. The event column names the
/// transition that produced the row; the first row has none.
pub fn write_csv<W: std::io::Write>(traj: &BookTrajectory, with_events: bool, mut out: W) -> std::io::Result<()> {
    if with_events {
        writeln!(out, "step,price,mass,event")?;
    } else {
        writeln!(out, "step,price,mass")?;
    }
    for (n, (price, mass)) in traj.prices.iter().zip(&traj.masses).enumerate() {
        if with_events {
            let ev = n.checked_sub(1).map_or("", |i| traj.events[i].as_str());
            writeln!(out, "{n},{price},{mass},{ev}")?;
        } else {
            writeln!(out, "{n},{price},{mass}")?;
        }
    }
    Ok(())
}
