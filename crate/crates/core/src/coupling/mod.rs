//! The book chain realized as the price-node dynamic on a random tree.
//!
//! [`coupled_run`] drives both from the same randomness and checks that the
//! green-label measure of the tree is the book at every step.
//! [`y_chain`] records the white-free trees `Y_n` of a fully expanded tree,
//! and [`distributional_test`] compares book and tree marginals when they
//! do not share randomness.

pub mod stats;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::book::{Book, BookChain, BookTrajectory, Event};
use crate::displacement::DisplacementDist;
use crate::rng::{RandomStream, Source};
use crate::tree::{ColoredTree, OffspringLaw, PhiOutcome, Reveal, TreeDriver};

pub use stats::{chi_square_gof, chi_square_homogeneity, ks_critical, ks_two_sample, ChiSquareResult, KsResult, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("the Y chain needs a discrete displacement law")]
    NotDiscrete,
    #[error("measure sequence is empty")]
    EmptySequence,
    #[error("step {0}: measure change matches no transition")]
    NoTransition(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// One excursion between regenerations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Segment {
    /// Step at which the segment starts from `δ_0`.
    pub start: usize,
    /// Steps until the book empties, if within the horizon.
    pub tau: Option<usize>,
    /// Steps until the tree has no green node, if within the horizon.
    pub kappa: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub step: usize,
    pub book: Book,
    pub tree: Book,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub book: BookTrajectory,
    /// Green-label measures of the tree, kept with the book states.
    pub tree_books: Option<Vec<Book>>,
    /// Steps at which a fresh tree was drawn.
    pub regenerations: Vec<usize>,
    pub segments: Vec<Segment>,
    /// First step where the two sides disagree.
    pub mismatch: Option<Mismatch>,
}

impl CoupledRun {
    pub fn is_exact(&self) -> bool {
        self.mismatch.is_none() && self.segments.iter().all(|s| s.tau == s.kappa)
    }
}

/// Steps between full comparisons of the two measures. In between, each
/// step compares the price, the mass and the position that changed, which
/// together with equality at the last full check pins the multiset down.
const FULL_CHECK_EVERY: usize = 64;

/// Runs the book and a lazily revealed tree for `horizon` steps from equal
/// copies of `source`.
pub fn coupled_run_with<S: Source + Clone>(
    p: f64,
    dist: &DisplacementDist,
    horizon: usize,
    source: S,
    keep_states: bool,
) -> CoupledRun {
    let mut book_src = source.clone();
    let mut tree_src = source;
    let mut chain = BookChain::new(p, dist);
    let mut driver = TreeDriver::new(p, dist, Reveal::Lazy);

    let mut states = keep_states.then(|| vec![chain.book().clone()]);
    let mut tree_books = keep_states.then(|| vec![driver.green_measure().clone()]);
    let mut prices = vec![chain.book().price()];
    let mut masses = vec![chain.book().mass()];
    let mut events = Vec::with_capacity(horizon);
    let mut tau = None;
    let mut regenerations = Vec::new();
    let mut segments = vec![Segment {
        start: 0,
        tau: None,
        kappa: None,
    }];
    let mut mismatch = None;

    for n in 1..=horizon {
        let before = chain.book().price();
        let event = chain.step(&mut book_src);
        let outcome = if driver.has_green() {
            driver.step(&mut tree_src)
        } else {
            driver.regenerate();
            regenerations.push(n);
            segments.push(Segment {
                start: n,
                tau: None,
                kappa: None,
            });
            PhiOutcome::Idle
        };
        let b = chain.book();
        let t = driver.green_measure();

        let seg = segments.last_mut().expect("at least one segment");
        if b.is_empty() && seg.tau.is_none() {
            seg.tau = Some(n - seg.start);
        }
        if !driver.has_green() && seg.kappa.is_none() {
            seg.kappa = Some(n - seg.start);
        }

        let delta_ok = match (event, outcome) {
            (Event::Restart, PhiOutcome::Idle) => true,
            // Equal before the step, so a count mismatch here is the only
            // way the two added points can differ.
            (Event::Add, PhiOutcome::Activated(c)) => {
                let x = driver.tree().label(c);
                t.count_at(x) == b.count_at(x)
            }
            (Event::Remove, PhiOutcome::Killed(g)) => driver.tree().label(g) == before,
            _ => false,
        };
        let cheap_ok = delta_ok && b.mass() == t.mass() && b.price() == t.price();
        let full_due = n % FULL_CHECK_EVERY == 0 || n == horizon || b.is_empty() || keep_states;
        if mismatch.is_none() && (!cheap_ok || (full_due && b != t)) {
            mismatch = Some(Mismatch {
                step: n,
                book: b.clone(),
                tree: t.clone(),
            });
        }

        if tau.is_none() && b.is_empty() {
            tau = Some(n);
        }
        prices.push(b.price());
        masses.push(b.mass());
        events.push(event);
        if let Some(s) = states.as_mut() {
            s.push(b.clone());
        }
        if let Some(s) = tree_books.as_mut() {
            s.push(t.clone());
        }
    }

    CoupledRun {
        book: BookTrajectory {
            states,
            prices,
            masses,
            events,
            tau,
        },
        tree_books,
        regenerations,
        segments,
        mismatch,
    }
}

/// [`coupled_run_with`] on stream `(seed, 0)`.
pub fn coupled_run(p: f64, dist: &DisplacementDist, horizon: usize, seed: u64, keep_states: bool) -> CoupledRun {
    coupled_run_with(p, dist, horizon, RandomStream::new(seed, 0), keep_states)
}

/// How `Y_{n+1}` was obtained from `Y_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YTransition {
    /// No green node; nothing changes.
    Stay,
    /// A green child with this edge label was added to the price node.
    Grow(f64),
    /// The price node turned red.
    Kill,
}

/// The sequence `Y_n` (white nodes deleted) of a tree whose offspring is
/// drawn when a node first becomes the price node. Stops once no green
/// node is left or after `horizon` steps.
pub fn y_chain_with<S: Source>(
    p: f64,
    dist: &DisplacementDist,
    horizon: usize,
    source: &mut S,
) -> Result<Vec<ColoredTree>, CouplingError> {
    if !dist.is_discrete() {
        return Err(CouplingError::NotDiscrete);
    }
    let mut driver = TreeDriver::new(p, dist, Reveal::Expand(OffspringLaw::Geometric));
    let mut ys = vec![driver.tree().without_whites()];
    for _ in 0..horizon {
        if driver.step(source) == PhiOutcome::Idle {
            break;
        }
        ys.push(driver.tree().without_whites());
        if !driver.has_green() {
            break;
        }
    }
    Ok(ys)
}

pub fn y_chain(p: f64, dist: &DisplacementDist, horizon: usize, seed: u64) -> Result<Vec<ColoredTree>, CouplingError> {
    y_chain_with(p, dist, horizon, &mut RandomStream::new(seed, 0))
}

/// Identifies the transition from `y` to `next` among the candidates
/// allowed by the chain, trying every edge label in `support`.
pub fn classify_transition(y: &ColoredTree, next: &ColoredTree, support: &[f64]) -> Option<YTransition> {
    if y.green_count() == 0 {
        return (next == y).then_some(YTransition::Stay);
    }
    for &x in support {
        if y.add_green_child(x).ok().as_ref() == Some(next) {
            return Some(YTransition::Grow(x));
        }
    }
    (y.kill_price_node().ok().as_ref() == Some(next)).then_some(YTransition::Kill)
}

/// Rebuilds `Y_0, ..., Y_n` from the measures `Γ(Y_0), ..., Γ(Y_n)` alone:
/// an added point at `π + x` means a green child with edge `x`, a removed
/// point at the price means the price node died, no change means there was
/// no green node.
pub fn reconstruct_y(measures: &[Book], support: &[f64]) -> Result<Vec<ColoredTree>, CouplingError> {
    let first = measures.first().ok_or(CouplingError::EmptySequence)?;
    let mut y = ColoredTree::initial();
    if &y.green_measure() != first {
        return Err(CouplingError::NoTransition(0));
    }
    let mut out = vec![y.clone()];
    for (n, w) in measures.windows(2).enumerate() {
        let (cur, next) = (&w[0], &w[1]);
        y = match y.price_node() {
            None if next == cur => y,
            None => return Err(CouplingError::NoTransition(n + 1)),
            Some(g) => {
                let price = y.label(g);
                if next.mass() == cur.mass() + 1 {
                    let x = support
                        .iter()
                        .copied()
                        .find(|&x| {
                            let mut grown = cur.clone();
                            grown.insert(price + x);
                            &grown == next
                        })
                        .ok_or(CouplingError::NoTransition(n + 1))?;
                    y.add_green_child(x).expect("price node exists")
                } else {
                    let mut shrunk = cur.clone();
                    shrunk.remove_one(price);
                    if &shrunk != next {
                        return Err(CouplingError::NoTransition(n + 1));
                    }
                    y.kill_price_node().expect("price node exists")
                }
            }
        };
        out.push(y.clone());
    }
    Ok(out)
}

/// What the second side of a distributional test simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Book,
    Tree(OffspringLaw),
}

/// `(price, mass)` after `n` steps: one replica per stream.
fn marginal_sample(p: f64, dist: &DisplacementDist, n: usize, side: Side, seed: u64, m: usize) -> Vec<(f64, u64)> {
    (0..m as u64)
        .into_par_iter()
        .map(|i| {
            let mut src = RandomStream::new(seed, i);
            match side {
                Side::Book => {
                    let mut chain = BookChain::new(p, dist);
                    for _ in 0..n {
                        chain.step(&mut src);
                    }
                    (chain.book().price(), chain.book().mass())
                }
                Side::Tree(law) => {
                    let mut driver = TreeDriver::new(p, dist, Reveal::Expand(law));
                    for _ in 0..n {
                        if driver.has_green() {
                            driver.step(&mut src);
                        } else {
                            driver.regenerate();
                        }
                    }
                    let g = driver.green_measure();
                    (g.price(), g.mass())
                }
            }
        })
        .collect()
}

/// One line of a test report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub test: String,
    pub n: usize,
    pub m: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionalReport {
    pub alpha: f64,
    pub tests: Vec<TestReport>,
    pub pass: bool,
}

/// Compares the laws of `(π(B_n), |B_n|)` for the book (stream seed
/// `seed_a`) and `side` (stream seed `seed_b`), `m` replicas each: KS on
/// the price and chi-square homogeneity on the mass, each at `alpha / 2`.
pub fn distributional_test(
    p: f64,
    dist: &DisplacementDist,
    n: usize,
    m: usize,
    seed_a: u64,
    seed_b: u64,
    side: Side,
    alpha: f64,
) -> Result<DistributionalReport, CouplingError> {
    let a = marginal_sample(p, dist, n, Side::Book, seed_a, m);
    let b = marginal_sample(p, dist, n, side, seed_b, m);
    let level = alpha / 2.0;
    let label = match side {
        Side::Book => "book",
        Side::Tree(OffspringLaw::Geometric) => "tree",
        Side::Tree(OffspringLaw::ShiftedGeometric) => "tree_shifted",
    };

    let pa: Vec<f64> = a.iter().map(|s| s.0).collect();
    let pb: Vec<f64> = b.iter().map(|s| s.0).collect();
    let ks = ks_two_sample(&pa, &pb)?;
    let ks_threshold = ks_critical(m, m, level);

    let top = a.iter().chain(&b).map(|s| s.1).max().unwrap_or(0) as usize;
    let mut ca = vec![0u64; top + 1];
    let mut cb = vec![0u64; top + 1];
    for s in &a {
        ca[s.1 as usize] += 1;
    }
    for s in &b {
        cb[s.1 as usize] += 1;
    }
    let chi = chi_square_homogeneity(&ca, &cb)?;
    let chi_threshold = chi.critical(level);

    let tests = vec![
        TestReport {
            test: format!("book_vs_{label}_price_ks"),
            n,
            m,
            statistic: ks.statistic,
            threshold: ks_threshold,
            pass: ks.statistic <= ks_threshold,
        },
        TestReport {
            test: format!("book_vs_{label}_mass_chi2"),
            n,
            m,
            statistic: chi.statistic,
            threshold: chi_threshold,
            pass: chi.statistic <= chi_threshold,
        },
    ];
    let pass = tests.iter().all(|t| t.pass);
    Ok(DistributionalReport { alpha, tests, pass })
}

/// Pathwise coupling on `runs` streams `(seed, r)`. The statistic is the
/// number of runs with any disagreement; the test passes when it is 0.
pub fn pathwise_battery(p: f64, dist: &DisplacementDist, horizon: usize, runs: usize, seed: u64) -> TestReport {
    let failures = (0..runs as u64)
        .into_par_iter()
        .filter(|&r| !coupled_run_with(p, dist, horizon, RandomStream::new(seed, r), false).is_exact())
        .count();
    TestReport {
        test: "pathwise_coupling".to_string(),
        n: horizon,
        m: runs,
        statistic: failures as f64,
        threshold: 0.0,
        pass: failures == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YFrequencies {
    /// Transitions observed out of states with a green node.
    pub transitions: u64,
    /// `(x, count)` for each atom of the law.
    pub grow: Vec<(f64, u64)>,
    pub kill: u64,
    pub chains: u64,
    /// Chains whose trees could not be rebuilt from their measures.
    pub reconstruction_failures: u64,
    pub tests: Vec<TestReport>,
}

/// Runs `Y` chains on streams `(seed, i)` until `transitions` moves out of
/// states with a green node have been seen, classifies each move and tests
/// every frequency against `p P(X = x)` and `1 - p` with a 3 sigma band.
pub fn y_transition_test(
    p: f64,
    dist: &DisplacementDist,
    transitions: u64,
    horizon: usize,
    seed: u64,
) -> Result<YFrequencies, CouplingError> {
    let atoms = dist.as_discrete().ok_or(CouplingError::NotDiscrete)?.atoms().to_vec();
    let support: Vec<f64> = atoms.iter().map(|a| a.value).collect();
    let mut grow = vec![0u64; support.len()];
    let mut kill = 0u64;
    let mut seen = 0u64;
    let mut chains = 0u64;
    let mut failures = 0u64;
    while seen < transitions {
        let ys = y_chain_with(p, dist, horizon, &mut RandomStream::new(seed, chains))?;
        chains += 1;
        let measures: Vec<Book> = ys.iter().map(ColoredTree::green_measure).collect();
        if reconstruct_y(&measures, &support).ok().as_ref() != Some(&ys) {
            failures += 1;
        }
        for (k, w) in ys.windows(2).enumerate() {
            if seen == transitions {
                break;
            }
            match classify_transition(&w[0], &w[1], &support) {
                Some(YTransition::Grow(x)) => {
                    let i = support.iter().position(|&s| s == x).expect("x is in the support");
                    grow[i] += 1;
                }
                Some(YTransition::Kill) => kill += 1,
                Some(YTransition::Stay) | None => return Err(CouplingError::NoTransition(k + 1)),
            }
            seen += 1;
        }
    }
    let band = |name: String, count: u64, expected: f64| {
        let n = seen as f64;
        let sd = (expected * (1.0 - expected) / n).sqrt();
        let z = if sd > 0.0 { (count as f64 / n - expected) / sd } else { 0.0 };
        TestReport {
            test: name,
            n: seen as usize,
            m: count as usize,
            statistic: z,
            threshold: 3.0,
            pass: z.abs() <= 3.0,
        }
    };
    let mut tests: Vec<TestReport> = atoms
        .iter()
        .zip(&grow)
        .map(|(a, &c)| band(format!("grow_x={}", a.value), c, p * a.prob.value()))
        .collect();
    tests.push(band("kill".to_string(), kill, 1.0 - p));
    tests.push(TestReport {
        test: "reconstruction".to_string(),
        n: seen as usize,
        m: chains as usize,
        statistic: failures as f64,
        threshold: 0.0,
        pass: failures == 0,
    });
    Ok(YFrequencies {
        transitions: seen,
        grow: support.into_iter().zip(grow).collect(),
        kill,
        chains,
        reconstruction_failures: failures,
        tests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Scripted;

    fn d(pairs: &[(f64, &str)]) -> DisplacementDist {
        DisplacementDist::from_pairs(pairs).unwrap()
    }

    #[test]
    fn scripted_tails_then_restart() {
        let x = d(&[(-1.0, "2/3"), (1.0, "1/3")]);
        let run = coupled_run_with(0.5, &x, 2, Scripted::new([false], []), true);
        assert!(run.is_exact());
        let s = run.book.states.as_ref().unwrap();
        assert!(s[1].is_empty());
        assert_eq!(s[2], Book::dirac(0.0));
        assert_eq!(run.tree_books.as_ref().unwrap(), s);
        assert_eq!(run.regenerations, vec![2]);
        assert_eq!(run.segments[0].tau, Some(1));
        assert_eq!(run.segments[0].kappa, Some(1));
    }

    #[test]
    fn scripted_heads_tails_tails() {
        let x = d(&[(-1.0, "2/3"), (1.0, "1/3")]);
        let run = coupled_run_with(0.5, &x, 3, Scripted::new([true, false, false], [1.0]), true);
        assert!(run.is_exact());
        let s = run.tree_books.unwrap();
        assert_eq!(s[1], Book::from_positions([0.0, 1.0]));
        assert_eq!(s[2], Book::dirac(0.0));
        assert!(s[3].is_empty());
    }

    #[test]
    fn random_runs_agree() {
        let x = d(&[(-1.0, "2/3"), (1.0, "1/3")]);
        for seed in 0..20 {
            let run = coupled_run(0.7, &x, 2000, seed, seed < 3);
            assert!(run.is_exact(), "seed {seed}: {:?}", run.mismatch);
        }
        let heavy = DisplacementDist::heavy_tail(-1.0, "3/4".parse().unwrap(), 1.5, 1.0).unwrap();
        for seed in 0..5 {
            assert!(coupled_run(0.6, &heavy, 2000, seed, false).is_exact());
        }
    }

    #[test]
    fn y_chain_starts_at_root_and_moves_legally() {
        let x = d(&[(-1.0, "1/2"), (1.0, "1/2")]);
        let support = [-1.0, 1.0];
        for seed in 0..50 {
            let ys = y_chain(0.6, &x, 200, seed).unwrap();
            assert_eq!(ys[0], ColoredTree::initial());
            for (k, w) in ys.windows(2).enumerate() {
                assert!(classify_transition(&w[0], &w[1], &support).is_some());
                assert_eq!(w[1].sigma(), k as i64 + 1);
            }
            let measures: Vec<Book> = ys.iter().map(ColoredTree::green_measure).collect();
            assert_eq!(reconstruct_y(&measures, &support).unwrap(), ys);
        }
        let heavy = DisplacementDist::heavy_tail(-1.0, "3/4".parse().unwrap(), 1.5, 1.0).unwrap();
        assert_eq!(y_chain(0.6, &heavy, 10, 0), Err(CouplingError::NotDiscrete));
    }

    #[test]
    fn small_batteries() {
        let x = d(&[(-1.0, "1/2"), (1.0, "1/2")]);
        assert!(pathwise_battery(0.7, &x, 500, 8, 3).pass);
        let f = y_transition_test(0.6, &x, 5_000, 1_000, 1).unwrap();
        assert_eq!(f.transitions, 5_000);
        assert_eq!(f.grow.iter().map(|g| g.1).sum::<u64>() + f.kill, 5_000);
        assert!(f.tests.iter().all(|t| t.pass), "{:?}", f.tests);
    }

    #[test]
    fn book_against_itself() {
        let x = d(&[(-1.0, "2/3"), (1.0, "1/3")]);
        let r = distributional_test(0.65, &x, 30, 20_000, 1, 2, Side::Book, 0.01).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
