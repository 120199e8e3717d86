//! Regime of the price process: the analytic classification and Monte Carlo
//! estimates of the drift and of the survival of the barrier-pruned tree.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::book::final_price;
use crate::displacement::{DisplacementDist, DistError};
use crate::rng::{NodeKey, RandomStream, Source};

/// Two reals closer than this are treated as equal when deciding a regime.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Default node budget per replica in survival runs.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhaseError {
    #[error("at least {0} replicas are needed")]
    TooFewReplicas(usize),
    #[error("truncation levels must be nonnegative and increasing")]
    Levels,
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Recurrent,
    DivergesUp,
    DivergesDown,
    Boundary,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Recurrent => "Recurrent",
            Regime::DivergesUp => "DivergesUp",
            Regime::DivergesDown => "DivergesDown",
            Regime::Boundary => "Boundary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RegimeReport {
    pub regime: Regime,
    pub p: f64,
    pub mean_x: f64,
    pub prob_positive: f64,
    pub a: f64,
    pub theta_star: f64,
    pub mgf_finite_somewhere: bool,
    pub threshold: f64,
    pub reasons: Vec<String>,
}

/// Classifies the long-run behavior of the price for coin bias `p`.
pub fn classify(p: f64, dist: &DisplacementDist) -> RegimeReport {
    let mean_x = dist.mean();
    let prob_positive = dist.prob_positive();
    let mgf = dist.infimum_mgf();
    let mut reasons = Vec::new();
    let threshold = mgf.threshold;

    let regime = if p <= 0.5 {
        reasons.push(format!("p = {p} <= 1/2: the mass is a reflected walk without upward drift, so the price is recurrent"));
        Regime::Recurrent
    } else if mean_x.abs() <= BOUNDARY_TOL {
        reasons.push("E X = 0: boundary case, not classified".to_string());
        Regime::Boundary
    } else if mean_x > 0.0 {
        reasons.push(format!("p > 1/2 and E X = {mean_x} > 0"));
        Regime::DivergesUp
    } else if prob_positive == 0.0 {
        reasons.push("E X < 0 and P(X > 0) = 0: the price can never increase".to_string());
        reasons.push("outside the hypotheses of the classification (E X < 0 with no positive atom)".to_string());
        Regime::DivergesDown
    } else {
        if mgf.mgf_finite_somewhere {
            reasons.push(format!("E X < 0, P(X > 0) > 0, inf MGF a = {} at theta = {}", mgf.a, mgf.theta_star));
        } else {
            reasons.push("E X < 0, P(X > 0) > 0, no finite exponential moment: a = 1".to_string());
        }
        if (p - threshold).abs() <= BOUNDARY_TOL {
            reasons.push(format!("p = 1/(1+a) = {threshold}: boundary case, not classified"));
            Regime::Boundary
        } else if p > threshold {
            reasons.push(format!("p > 1/(1+a) = {threshold}"));
            Regime::DivergesUp
        } else {
            reasons.push(format!("p < 1/(1+a) = {threshold}"));
            Regime::DivergesDown
        }
    };

    RegimeReport {
        regime,
        p,
        mean_x,
        prob_positive,
        a: mgf.a,
        theta_star: mgf.theta_star,
        mgf_finite_somewhere: mgf.mgf_finite_somewhere,
        threshold,
        reasons,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DriftEstimate {
    /// Mean of `π(B_H) / H` over replicas.
    pub slope: f64,
    /// Half-width of the 95% Student t interval for the slope.
    pub ci95: f64,
    pub horizon: usize,
    pub replicas: usize,
    /// Fraction of replicas with `π(B_H) > 0`.
    pub fraction_positive: f64,
}

impl DriftEstimate {
    pub fn lower(&self) -> f64 {
        self.slope - self.ci95
    }

    pub fn upper(&self) -> f64 {
        self.slope + self.ci95
    }
}

/// Runs `replicas` independent books for `horizon` steps, replica `r` on
/// stream `(seed, r)`.
pub fn drift_estimate(
    p: f64,
    dist: &DisplacementDist,
    horizon: usize,
    replicas: usize,
    seed: u64,
) -> Result<DriftEstimate, PhaseError> {
    if replicas < 2 {
        return Err(PhaseError::TooFewReplicas(2));
    }
    let finals: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| final_price(p, dist, horizon, &mut RandomStream::new(seed, r)))
        .collect();
    let h = horizon.max(1) as f64;
    let slopes: Vec<f64> = finals.iter().map(|&x| x / h).collect();
    let n = replicas as f64;
    let slope = slopes.iter().sum::<f64>() / n;
    let var = slopes.iter().map(|s| (s - slope) * (s - slope)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive dof").inverse_cdf(0.975);
    let ci95 = t * (var / n).sqrt();
    let fraction_positive = finals.iter().filter(|&&x| x > 0.0).count() as f64 / n;
    Ok(DriftEstimate {
        slope,
        ci95,
        horizon,
        replicas,
        fraction_positive,
    })
}

/// Wilson score interval for `k` successes in `n` trials at 95%.
pub fn wilson(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054;
    let (k, n) = (k as f64, n as f64);
    let phat = k / n;
    let denom = 1.0 + z * z / n;
    let centre = (phat + z * z / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Result of exploring one barrier-pruned tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exploration {
    /// Deepest depth reached (capped at the requested depth).
    pub depth: usize,
    /// Whether the node budget ran out before the requested depth.
    pub budget_hit: bool,
    pub nodes: u64,
}

/// Explores the tree pruned at barrier 0 rooted at `key` depth first, up to
/// `max_depth`. Each node draws its offspring from its own keyed stream, so
/// the realized tree does not depend on the exploration order, and a node
/// has at least as many children under a larger `p`. Edge labels above
/// `clip` are replaced by `clip`.
pub fn explore_barrier_tree(
    p: f64,
    dist: &DisplacementDist,
    key: NodeKey,
    max_depth: usize,
    budget: u64,
    clip: Option<f64>,
) -> Exploration {
    let mut best = 0;
    let mut nodes = 1u64;
    if max_depth == 0 {
        return Exploration {
            depth: 0,
            budget_hit: false,
            nodes,
        };
    }
    // (key, label, depth)
    let mut stack = vec![(key, 0.0f64, 0usize)];
    let mut kids = Vec::new();
    while let Some((k, label, depth)) = stack.pop() {
        let mut src = k.stream();
        kids.clear();
        let mut rank = 0u64;
        while src.coin(p) {
            let mut x = dist.sample(&mut src);
            if let Some(c) = clip {
                x = x.min(c);
            }
            let child = label + x;
            if child >= 0.0 {
                kids.push((k.child(rank), child, depth + 1));
            }
            rank += 1;
        }
        if !kids.is_empty() {
            best = best.max(depth + 1);
            if best >= max_depth {
                break;
            }
            nodes += kids.len() as u64;
            if nodes > budget {
                return Exploration {
                    depth: best,
                    budget_hit: true,
                    nodes,
                };
            }
            stack.extend(kids.drain(..).rev());
        }
    }
    Exploration {
        depth: best,
        budget_hit: false,
        nodes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SurvivalRow {
    pub d: usize,
    pub q_d: f64,
    /// Half-width of the Wilson interval.
    pub ci95: f64,
    pub lower: f64,
    pub upper: f64,
    pub survived: u64,
    /// Fraction of replicas stopped by the node budget before depth `d`;
    /// they are counted as surviving.
    pub budget_fraction: f64,
}

/// Estimates `P(Ξ_0(T) reaches depth d)` for each `d` in `depths` from the
/// same `replicas` trees (tree `r` keyed by `(seed, r)`).
pub fn survival_estimate(
    p: f64,
    dist: &DisplacementDist,
    depths: &[usize],
    replicas: usize,
    seed: u64,
    budget: u64,
    clip: Option<f64>,
) -> Result<Vec<SurvivalRow>, PhaseError> {
    if replicas == 0 {
        return Err(PhaseError::TooFewReplicas(1));
    }
    let max_depth = depths.iter().copied().max().unwrap_or(0);
    let runs: Vec<Exploration> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| explore_barrier_tree(p, dist, NodeKey::root(seed, r), max_depth, budget, clip))
        .collect();
    let n = replicas as u64;
    Ok(depths
        .iter()
        .map(|&d| {
            let reached = runs.iter().filter(|e| e.depth >= d).count() as u64;
            let by_budget = runs.iter().filter(|e| e.depth < d && e.budget_hit).count() as u64;
            let k = reached + by_budget;
            let (lower, upper) = wilson(k, n);
            SurvivalRow {
                d,
                q_d: k as f64 / n as f64,
                ci95: (upper - lower) / 2.0,
                lower,
                upper,
                survived: k,
                budget_fraction: by_budget as f64 / n as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TruncationRow {
    /// `None` for the untruncated law.
    pub k: Option<f64>,
    pub a_k: f64,
    pub threshold_k: f64,
    pub d: usize,
    pub q_d: f64,
    pub ci95: f64,
    pub budget_fraction: f64,
}

/// For each level `K`, the MGF infimum of `min(X, K)` and the survival
/// estimate of the tree with labels clipped at `K`, all on the same keyed
/// trees; a final row holds the untruncated law.
pub fn truncation_study(
    p: f64,
    dist: &DisplacementDist,
    levels: &[f64],
    depth: usize,
    replicas: usize,
    seed: u64,
    budget: u64,
) -> Result<Vec<TruncationRow>, PhaseError> {
    if levels.iter().any(|&k| !(k >= 0.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PhaseError::Levels);
    }
    let mut rows = Vec::with_capacity(levels.len() + 1);
    for k in levels.iter().map(|&k| Some(k)).chain([None]) {
        let mgf = match k {
            Some(k) => dist.truncate(k)?.infimum_mgf(),
            None => dist.infimum_mgf(),
        };
        let s = survival_estimate(p, dist, &[depth], replicas, seed, budget, k)?[0];
        rows.push(TruncationRow {
            k,
            a_k: mgf.a,
            threshold_k: mgf.threshold,
            d: depth,
            q_d: s.q_d,
            ci95: s.ci95,
            budget_fraction: s.budget_fraction,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub report: RegimeReport,
    pub drift: DriftEstimate,
}

/// Classification and drift for each `p` in `grid`, all on streams of the
/// same `seed`.
pub fn phase_sweep(
    grid: &[f64],
    dist: &DisplacementDist,
    horizon: usize,
    replicas: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, PhaseError> {
    grid.iter()
        .map(|&p| {
            Ok(SweepRow {
                report: classify(p, dist),
                drift: drift_estimate(p, dist, horizon, replicas, seed)?,
            })
        })
        .collect()
}
