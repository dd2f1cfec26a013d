//! Grade-dependent allocation of items over difficulty ranks.
//!
//! Below the pivot grade `m` the mass is a mixture of a geometric profile
//! that favors easy ranks and the uniform distribution. Above the pivot the
//! geometric profile is mirrored onto the hard ranks. At `g = m` both
//! branches reduce to the uniform distribution.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::Ranking;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("cannot allocate from an empty bank")]
    NoItems,
    #[error("grade {0} outside [0, 1]")]
    Grade(f64),
    #[error("steepness q = {0} outside [0, 1]")]
    Steepness(f64),
    #[error("pivot m = {0} outside (0, 1)")]
    Pivot(f64),
    #[error("malformed probability vector: {0}")]
    MalformedPmf(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationMode {
    Uniform,
    #[default]
    GradeAdaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    /// Steepness of the geometric profile.
    pub q: f64,
    /// Grade at which allocation is uniform.
    pub m: f64,
    #[serde(default)]
    pub mode: AllocationMode,
}

impl Default for AllocationPolicy {
    fn default() -> Self {
        Self {
            q: 0.85,
            m: 0.5,
            mode: AllocationMode::GradeAdaptive,
        }
    }
}

impl AllocationPolicy {
    pub fn uniform() -> Self {
        Self {
            mode: AllocationMode::Uniform,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AllocationError> {
        if !(0.0..=1.0).contains(&self.q) {
            return Err(AllocationError::Steepness(self.q));
        }
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(AllocationError::Pivot(self.m));
        }
        Ok(())
    }
}

pub fn uniform_pmf(n_items: usize) -> Result<Vec<f64>, AllocationError> {
    if n_items == 0 {
        return Err(AllocationError::NoItems);
    }
    Ok(vec![1.0 / n_items as f64; n_items])
}

/// `q^r / sum q^r'` for r = 1..=n, easiest rank first.
///
/// `q = 0` puts all weight on rank 1 and `q = 1` is flat.
fn geometric_profile(q: f64, n: usize) -> Vec<f64> {
    if q == 0.0 {
        let mut w = vec![0.0; n];
        w[0] = 1.0;
        return w;
    }
    // q^(r-1) has the same ratios and keeps rank 1 at weight 1
    let mut w = Vec::with_capacity(n);
    let mut x = 1.0;
    for _ in 0..n {
        w.push(x);
        x *= q;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Probability of allocating each difficulty rank (index 0 is rank 1) to a
/// student with grade `grade`.
pub fn allocation_pmf(
    policy: &AllocationPolicy,
    n_items: usize,
    grade: f64,
) -> Result<Vec<f64>, AllocationError> {
    policy.validate()?;
    if n_items == 0 {
        return Err(AllocationError::NoItems);
    }
    if !(0.0..=1.0).contains(&grade) {
        return Err(AllocationError::Grade(grade));
    }
    if policy.mode == AllocationMode::Uniform {
        return uniform_pmf(n_items);
    }

    let (q, m, g) = (policy.q, policy.m, grade);
    let n = n_items as f64;
    let profile = geometric_profile(q, n_items);
    let pmf = if g < m {
        let w_geo = (m - g) / m;
        let w_flat = g / (n * m);
        profile.iter().map(|p| p * w_geo + w_flat).collect()
    } else {
        let w_geo = (g - m) / (1.0 - m);
        let w_flat = (1.0 - g) / (n * (1.0 - m));
        profile.iter().rev().map(|p| p * w_geo + w_flat).collect()
    };
    Ok(pmf)
}

pub fn validate_pmf(pmf: &[f64]) -> Result<(), AllocationError> {
    if pmf.is_empty() {
        return Err(AllocationError::NoItems);
    }
    if let Some(bad) = pmf.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(AllocationError::MalformedPmf(format!("entry {bad}")));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AllocationError::MalformedPmf(format!("sums to {total}")));
    }
    Ok(())
}

/// Inverse-CDF draw of a 0-based rank index.
pub fn draw_rank<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> Result<usize, AllocationError> {
    validate_pmf(pmf)?;
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (k, p) in pmf.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return Ok(k);
        }
    }
    // rounding left u above the final cumulative sum
    Ok(pmf.iter().rposition(|&p| p > 0.0).expect("pmf has mass"))
}

/// Draws an item id from a rank-indexed probability vector.
pub fn draw_item<'a, R: Rng + ?Sized>(
    pmf: &[f64],
    ranking: &'a Ranking,
    rng: &mut R,
) -> Result<&'a str, AllocationError> {
    if pmf.len() != ranking.len() {
        return Err(AllocationError::MalformedPmf(format!(
            "{} probabilities for {} ranked items",
            pmf.len(),
            ranking.len()
        )));
    }
    let k = draw_rank(pmf, rng)?;
    Ok(ranking.item_at(k + 1).expect("rank in range"))
}
