//! Two-sample and goodness-of-fit tests used to compare the book and the
//! tree in distribution.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    Empty,
    #[error("count vectors have different lengths")]
    Shape,
    #[error("no bin has positive expected count")]
    NoBins,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// Largest distance between the two empirical CDFs.
    pub statistic: f64,
    /// Asymptotic p-value. Conservative for discrete data.
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(x) = 2 sum (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // The alternating series converges slowly here; Q is 1 to f64.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let p_value = kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d);
    Ok(KsResult { statistic: d, p_value })
}

/// Critical value of the two-sample KS statistic at level `alpha`
/// (asymptotic).
pub fn ks_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquareResult {
    /// Quantile of the reference law at `1 - alpha`.
    pub fn critical(&self, alpha: f64) -> f64 {
        if self.dof == 0 {
            return 0.0;
        }
        ChiSquared::new(self.dof as f64)
            .expect("positive dof")
            .inverse_cdf(1.0 - alpha)
    }
}

fn chi_sf(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let law = ChiSquared::new(dof as f64).expect("positive dof");
    law.sf(stat)
}

/// Merges adjacent bins until every merged bin has expected count at
/// least `min_expected` (the last bin absorbs any remainder).
fn pool(bins: &[(f64, f64)], min_expected: f64) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for &(o, e) in bins {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= min_expected {
            out.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match out.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => out.push(acc),
        }
    }
    out
}

/// Goodness of fit of observed counts against cell probabilities. Cells
/// are pooled left to right so each has expected count at least 5.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquareResult, StatsError> {
    if observed.len() != probs.len() {
        return Err(StatsError::Shape);
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(StatsError::Empty);
    }
    let bins: Vec<(f64, f64)> = observed
        .iter()
        .zip(probs)
        .map(|(&o, &q)| (o as f64, q * total as f64))
        .collect();
    let pooled = pool(&bins, 5.0);
    if pooled.iter().all(|b| b.1 <= 0.0) {
        return Err(StatsError::NoBins);
    }
    let statistic = pooled
        .iter()
        .filter(|b| b.1 > 0.0)
        .map(|&(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = pooled.len().saturating_sub(1);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: chi_sf(statistic, dof),
    })
}

/// Homogeneity of two count vectors over the same cells.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<ChiSquareResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::Shape);
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(StatsError::Empty);
    }
    // Pool on the smaller of the two expected counts.
    let frac = na.min(nb) / (na + nb);
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        acc.0 += x as f64;
        acc.1 += y as f64;
        if (acc.0 + acc.1) * frac >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let n = na + nb;
    let mut statistic = 0.0;
    for &(x, y) in &cells {
        let col = x + y;
        let (ea, eb) = (col * na / n, col * nb / n);
        statistic += (x - ea) * (x - ea) / ea + (y - eb) * (y - eb) / eb;
    }
    let dof = cells.len().saturating_sub(1);
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: chi_sf(statistic, dof),
    })
}
