//! The displacement law X of a newly placed order, relative to the price.
//!
//! Two families are supported: finite discrete laws with (optionally exact
//! rational) probabilities, and a lattice heavy-tail family whose positive
//! part has no finite exponential moment.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::CheckedAdd;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Source;

/// Largest theta tried while bracketing the MGF minimizer.
pub const THETA_CAP: f64 = 700.0;

/// Bisection stops once the bracket is narrower than this.
pub const THETA_TOL: f64 = 1e-12;

const SUM_TOL: f64 = 1e-12;

/// Largest number of atoms `truncate` will materialize.
const MAX_TRUNCATED_ATOMS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid probability {0:?}")]
    BadProbability(String),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("atom value {0} appears more than once")]
    DuplicateAtom(f64),
    #[error("atom value {0} is not finite")]
    NonFiniteAtom(f64),
    #[error("distribution has no atoms")]
    Empty,
    #[error("heavy tail needs alpha > 1 for a finite mean, got {0}")]
    InfiniteMean(f64),
    #[error("heavy tail scale must be positive, got {0}")]
    BadScale(f64),
    #[error("heavy tail negative atom must be < 0, got {0}")]
    BadNegativeAtom(f64),
    #[error("theta must be >= 0, got {0}")]
    NegativeTheta(f64),
    #[error("truncation level must be >= 0, got {0}")]
    NegativeTruncation(f64),
    #[error("truncation at {0} needs more than {MAX_TRUNCATED_ATOMS} atoms")]
    TruncationTooFine(f64),
}

/// A probability, kept as an exact rational when it was given as one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability {
    value: f64,
    exact: Option<Ratio<i64>>,
}

impl Probability {
    pub fn from_f64(value: f64) -> Result<Self, DistError> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(DistError::BadProbability(value.to_string()));
        }
        Ok(Self { value, exact: None })
    }

    pub fn from_ratio(r: Ratio<i64>) -> Result<Self, DistError> {
        if *r.numer() <= 0 || r > Ratio::from_integer(1) {
            return Err(DistError::BadProbability(r.to_string()));
        }
        Ok(Self {
            value: *r.numer() as f64 / *r.denom() as f64,
            exact: Some(r),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn exact(&self) -> Option<Ratio<i64>> {
        self.exact
    }

    fn complement(&self) -> f64 {
        match self.exact {
            Some(r) => {
                let c = Ratio::from_integer(1) - r;
                *c.numer() as f64 / *c.denom() as f64
            }
            None => 1.0 - self.value,
        }
    }
}

impl FromStr for Probability {
    type Err = DistError;

    /// Accepts `"a/b"` or a plain decimal such as `"0.25"`; both parse to
    /// an exact rational.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DistError::BadProbability(s.to_string());
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            return Self::from_ratio(Ratio::new(n, d));
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() && frac.is_empty()
            || !int.chars().all(|c| c.is_ascii_digit())
            || !frac.chars().all(|c| c.is_ascii_digit())
            || frac.len() > 17
        {
            return Err(bad());
        }
        let digits = format!("{int}{frac}");
        let numer: i64 = digits.parse().map_err(|_| bad())?;
        let denom = 10i64.checked_pow(frac.len() as u32).ok_or_else(bad)?;
        Self::from_ratio(Ratio::new(numer, denom))
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.exact {
            Some(r) => write!(f, "{r}"),
            None => write!(f, "{}", self.value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub value: f64,
    pub prob: Probability,
}

/// Finite discrete law; atoms sorted by value.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

impl Discrete {
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self, DistError> {
        if atoms.is_empty() {
            return Err(DistError::Empty);
        }
        if let Some(a) = atoms.iter().find(|a| !a.value.is_finite()) {
            return Err(DistError::NonFiniteAtom(a.value));
        }
        atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
        if let Some(w) = atoms.windows(2).find(|w| w[0].value == w[1].value) {
            return Err(DistError::DuplicateAtom(w[0].value));
        }
        let exact_sum = atoms
            .iter()
            .map(|a| a.prob.exact)
            .try_fold(Ratio::from_integer(0i64), |acc, r| r.and_then(|r| acc.checked_add(&r)));
        match exact_sum {
            Some(sum) if sum != Ratio::from_integer(1) => {
                return Err(DistError::NotNormalized(
                    *sum.numer() as f64 / *sum.denom() as f64,
                ))
            }
            Some(_) => {}
            None => {
                let sum: f64 = atoms.iter().map(|a| a.prob.value).sum();
                if (sum - 1.0).abs() > SUM_TOL {
                    return Err(DistError::NotNormalized(sum));
                }
            }
        }
        Ok(Self::from_sorted(atoms))
    }

    fn from_sorted(atoms: Vec<Atom>) -> Self {
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.prob.value;
                acc
            })
            .collect();
        Self { atoms, cumulative }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Probability of the atom at exactly `x`, zero if absent.
    pub fn mass_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.value == x)
            .map_or(0.0, |a| a.prob.value)
    }

    fn quantile(&self, u: f64) -> f64 {
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.atoms[i.min(self.atoms.len() - 1)].value
    }

    fn mgf(&self, theta: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.prob.value * (theta * a.value).exp())
            .sum()
    }

    fn mgf_slope(&self, theta: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|a| a.value != 0.0)
            .map(|a| a.prob.value * a.value * (theta * a.value).exp())
            .sum()
    }
}

/// Negative atom `neg_value` with probability `neg_prob`; otherwise
/// `scale * floor(Z)` with `P(Z > z) = z^-alpha` for `z >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeavyTail {
    neg_value: f64,
    neg_prob: Probability,
    alpha: f64,
    scale: f64,
}

impl HeavyTail {
    pub fn new(neg_value: f64, neg_prob: Probability, alpha: f64, scale: f64) -> Result<Self, DistError> {
        if !(neg_value < 0.0) || !neg_value.is_finite() {
            return Err(DistError::BadNegativeAtom(neg_value));
        }
        if !(alpha > 1.0) || !alpha.is_finite() {
            return Err(DistError::InfiniteMean(alpha));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(DistError::BadScale(scale));
        }
        if neg_prob.value >= 1.0 {
            return Err(DistError::BadProbability(neg_prob.to_string()));
        }
        Ok(Self {
            neg_value,
            neg_prob,
            alpha,
            scale,
        })
    }

    pub fn neg_value(&self) -> f64 {
        self.neg_value
    }

    pub fn neg_prob(&self) -> Probability {
        self.neg_prob
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn tail_prob(&self) -> f64 {
        self.neg_prob.complement()
    }

    /// `P(floor(Z) >= k)` for `k >= 1`.
    fn tail_survival(&self, k: u64) -> f64 {
        (k as f64).powf(-self.alpha)
    }

    fn quantile(&self, u: f64) -> f64 {
        let q = self.neg_prob.value;
        if u < q {
            return self.neg_value;
        }
        let v = ((u - q) / (1.0 - q)).min(1.0 - f64::EPSILON);
        let z = (1.0 - v).powf(-1.0 / self.alpha);
        self.scale * z.floor()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisplacementDist {
    Discrete(Discrete),
    HeavyTail(HeavyTail),
}

/// Result of minimizing the MGF over `theta >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfAnalysis {
    pub a: f64,
    pub theta_star: f64,
    pub mgf_finite_somewhere: bool,
    /// False when the infimum is only approached as theta grows without
    /// bound (no positive atoms).
    pub attained: bool,
    pub threshold: f64,
}

/// `1 / (1 + a)`.
pub fn threshold(analysis: &MgfAnalysis) -> f64 {
    1.0 / (1.0 + analysis.a)
}

impl DisplacementDist {
    /// Finite discrete law from `(value, probability)` pairs.
    pub fn discrete(atoms: impl IntoIterator<Item = (f64, Probability)>) -> Result<Self, DistError> {
        let atoms = atoms
            .into_iter()
            .map(|(value, prob)| Atom { value, prob })
            .collect();
        Discrete::new(atoms).map(Self::Discrete)
    }

    /// Convenience for tests and examples: probabilities as `"a/b"` strings.
    pub fn from_pairs(pairs: &[(f64, &str)]) -> Result<Self, DistError> {
        let atoms = pairs
            .iter()
            .map(|&(v, p)| p.parse().map(|p| (v, p)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::discrete(atoms)
    }

    pub fn heavy_tail(neg_value: f64, neg_prob: Probability, alpha: f64, scale: f64) -> Result<Self, DistError> {
        HeavyTail::new(neg_value, neg_prob, alpha, scale).map(Self::HeavyTail)
    }

    pub fn point(value: f64) -> Self {
        Self::discrete([(value, Probability::from_ratio(Ratio::from_integer(1)).unwrap())])
            .expect("point mass is valid")
    }

    pub fn as_discrete(&self) -> Option<&Discrete> {
        match self {
            Self::Discrete(d) => Some(d),
            Self::HeavyTail(_) => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete(_))
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Discrete(d) => d.atoms.iter().map(|a| a.prob.value * a.value).sum(),
            Self::HeavyTail(h) => {
                h.neg_prob.value * h.neg_value + h.tail_prob() * h.scale * riemann_zeta(h.alpha)
            }
        }
    }

    pub fn prob_positive(&self) -> f64 {
        match self {
            Self::Discrete(d) => d
                .atoms
                .iter()
                .filter(|a| a.value > 0.0)
                .map(|a| a.prob.value)
                .sum(),
            Self::HeavyTail(h) => h.tail_prob(),
        }
    }

    /// `E[exp(theta X)]`, `+inf` where it diverges.
    pub fn mgf(&self, theta: f64) -> Result<f64, DistError> {
        if !(theta >= 0.0) {
            return Err(DistError::NegativeTheta(theta));
        }
        if theta == 0.0 {
            return Ok(1.0);
        }
        Ok(match self {
            Self::Discrete(d) => d.mgf(theta),
            Self::HeavyTail(_) => f64::INFINITY,
        })
    }

    /// Whether the MGF is finite for some `theta > 0`. Declared per family,
    /// never probed numerically.
    pub fn mgf_finite_somewhere(&self) -> bool {
        matches!(self, Self::Discrete(_))
    }

    /// `a = inf_{theta >= 0} E[exp(theta X)]` and where it is reached.
    pub fn infimum_mgf(&self) -> MgfAnalysis {
        let analysis = |a: f64, theta_star: f64, attained: bool| MgfAnalysis {
            a,
            theta_star,
            mgf_finite_somewhere: self.mgf_finite_somewhere(),
            attained,
            threshold: 1.0 / (1.0 + a),
        };
        let d = match self {
            Self::HeavyTail(_) => return analysis(1.0, 0.0, true),
            Self::Discrete(d) => d,
        };
        if d.mgf_slope(0.0) >= 0.0 {
            return analysis(1.0, 0.0, true);
        }
        if self.prob_positive() == 0.0 {
            return analysis(d.mass_at(0.0), f64::INFINITY, false);
        }
        // phi is convex with phi'(0) < 0 and phi' -> +inf.
        let mut lo = 0.0;
        let mut hi = 1.0;
        while d.mgf_slope(hi) < 0.0 && hi < THETA_CAP {
            lo = hi;
            hi = (2.0 * hi).min(THETA_CAP);
        }
        if d.mgf_slope(hi) < 0.0 {
            return analysis(d.mgf(hi), hi, false);
        }
        while hi - lo > THETA_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if d.mgf_slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        analysis(d.mgf(theta).min(1.0), theta, true)
    }

    /// Law of `min(X, k)`.
    pub fn truncate(&self, k: f64) -> Result<DisplacementDist, DistError> {
        if !(k >= 0.0) {
            return Err(DistError::NegativeTruncation(k));
        }
        match self {
            Self::Discrete(d) => {
                let mut kept: Vec<Atom> = d.atoms.iter().filter(|a| a.value < k).copied().collect();
                let clipped: Vec<&Atom> = d.atoms.iter().filter(|a| a.value >= k).collect();
                if !clipped.is_empty() {
                    let value: f64 = clipped.iter().map(|a| a.prob.value).sum();
                    let exact = clipped
                        .iter()
                        .map(|a| a.prob.exact)
                        .try_fold(Ratio::from_integer(0i64), |acc, r| r.and_then(|r| acc.checked_add(&r)));
                    kept.push(Atom {
                        value: k,
                        prob: Probability { value, exact },
                    });
                }
                Ok(Self::Discrete(Discrete::from_sorted(kept)))
            }
            Self::HeavyTail(h) => {
                // Atoms scale*j for j < m lie strictly below k; the rest
                // collapses onto k.
                let m = ((k / h.scale).ceil() as u64).max(1);
                if m as usize > MAX_TRUNCATED_ATOMS {
                    return Err(DistError::TruncationTooFine(k));
                }
                let tail = h.tail_prob();
                let mut atoms = vec![Atom {
                    value: h.neg_value,
                    prob: h.neg_prob,
                }];
                for j in 1..m {
                    let mass = h.tail_survival(j) - h.tail_survival(j + 1);
                    atoms.push(Atom {
                        value: h.scale * j as f64,
                        prob: Probability {
                            value: tail * mass,
                            exact: None,
                        },
                    });
                }
                atoms.push(Atom {
                    value: k,
                    prob: Probability {
                        value: tail * h.tail_survival(m),
                        exact: None,
                    },
                });
                debug_assert!((atoms.iter().map(|a| a.prob.value).sum::<f64>() - 1.0).abs() < 1e-9);
                Ok(Self::Discrete(Discrete::from_sorted(atoms)))
            }
        }
    }

    /// Inverse CDF at `u` in [0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Discrete(d) => d.quantile(u),
            Self::HeavyTail(h) => h.quantile(u),
        }
    }

    pub fn sample<S: Source + ?Sized>(&self, source: &mut S) -> f64 {
        source.displacement(self)
    }

    pub fn to_spec(&self) -> DistSpec {
        match self {
            Self::Discrete(d) => DistSpec::Discrete {
                atoms: d
                    .atoms
                    .iter()
                    .map(|a| (a.value, ProbSpec::from(a.prob)))
                    .collect(),
            },
            Self::HeavyTail(h) => DistSpec::HeavyTail {
                neg: (h.neg_value, ProbSpec::from(h.neg_prob)),
                alpha: h.alpha,
                scale: h.scale,
            },
        }
    }
}

/// Riemann zeta for `s > 1` by Euler-Maclaurin summation.
pub fn riemann_zeta(s: f64) -> f64 {
    const N: u32 = 20;
    // B_2j / (2j)!
    const COEFFS: [f64; 5] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
    ];
    let n = N as f64;
    let mut sum: f64 = (1..N).map(|k| (k as f64).powf(-s)).sum();
    sum += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // rising factorial s (s+1) ... (s+2j-2) times N^(-s-2j+1)
    let mut rising = s;
    let mut power = n.powf(-s - 1.0);
    for (j, c) in COEFFS.iter().enumerate() {
        sum += c * rising * power;
        let j = j as f64;
        rising *= (s + 2.0 * j + 1.0) * (s + 2.0 * j + 2.0);
        power /= n * n;
    }
    sum
}

/// A probability as written in a config: `"2/3"`, `"0.25"` or `0.25`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbSpec {
    Text(String),
    Number(f64),
}

impl ProbSpec {
    pub fn resolve(&self) -> Result<Probability, DistError> {
        match self {
            ProbSpec::Text(s) => s.parse(),
            ProbSpec::Number(x) => Probability::from_f64(*x),
        }
    }
}

impl From<Probability> for ProbSpec {
    fn from(p: Probability) -> Self {
        match p.exact {
            Some(r) => ProbSpec::Text(r.to_string()),
            None => ProbSpec::Number(p.value),
        }
    }
}

/// Serialized form of a [`DisplacementDist`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Discrete {
        atoms: Vec<(f64, ProbSpec)>,
    },
    HeavyTail {
        neg: (f64, ProbSpec),
        alpha: f64,
        scale: f64,
    },
}

impl DistSpec {
    pub fn build(&self) -> Result<DisplacementDist, DistError> {
        match self {
            DistSpec::Discrete { atoms } => DisplacementDist::discrete(
                atoms
                    .iter()
                    .map(|(v, p)| p.resolve().map(|p| (*v, p)))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            DistSpec::HeavyTail { neg, alpha, scale } => {
                DisplacementDist::heavy_tail(neg.0, neg.1.resolve()?, *alpha, *scale)
            }
        }
    }
}
