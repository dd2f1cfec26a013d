//! Maximum-likelihood fit of `y = X β + Z b + ε` with one random intercept
//! per student, `b ~ N(0, σ_b²)` and `ε ~ N(0, σ²)`.
//!
//! For fixed `λ = σ_b²/σ²` the GLS estimate of β and the ML residual variance
//! have closed forms, so the likelihood is profiled down to a single
//! parameter. Within a student block `V⁻¹ ∝ I − k 11'` with
//! `k = λ / (1 + λ n)`, which keeps every evaluation at `O(n p + G p²)`.

use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CrossoverError, Term};

pub const LAMBDA_MAX: f64 = 1e4;
const LAMBDA_MIN: f64 = 1e-8;
const GRID_POINTS: usize = 60;
const RANK_TOL: f64 = 1e-10;
/// A positive variance ratio must beat the boundary by this much log-likelihood.
const BOUNDARY_GAIN: f64 = 1e-9;

/// Student membership of each observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomIntercepts {
    group_of: Vec<usize>,
    n_groups: usize,
}

impl RandomIntercepts {
    pub fn new(group_of: Vec<usize>, n_groups: usize) -> Result<Self, CrossoverError> {
        if let Some(&g) = group_of.iter().find(|&&g| g >= n_groups) {
            return Err(CrossoverError::DimensionMismatch(format!(
                "group {g} with only {n_groups} groups"
            )));
        }
        Ok(Self { group_of, n_groups })
    }

    /// Reads a 0/1 indicator matrix with exactly one 1 per row.
    pub fn from_indicator(z: &DMatrix<f64>) -> Result<Self, CrossoverError> {
        let mut group_of = Vec::with_capacity(z.nrows());
        for (i, row) in z.row_iter().enumerate() {
            let ones: Vec<usize> = (0..row.len()).filter(|&j| row[j] == 1.0).collect();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != row.len() {
                return Err(CrossoverError::DimensionMismatch(format!(
                    "row {i} of Z is not a single student indicator"
                )));
            }
            group_of.push(ones[0]);
        }
        Self::new(group_of, z.ncols())
    }

    pub fn indicator(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.group_of.len(), self.n_groups);
        for (i, &g) in self.group_of.iter().enumerate() {
            z[(i, g)] = 1.0;
        }
        z
    }

    pub fn n_obs(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    /// Fixed-effect terms present, empty when fitted from a raw design.
    pub terms: Vec<Term>,
    pub columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub cov_fixed: Vec<Vec<f64>>,
    pub sigma_b2: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_students: usize,
    /// Identifies the response and grouping, so likelihood-ratio tests can
    /// refuse fits to different data.
    pub data_key: u64,
}

impl LmmFit {
    pub fn n_fixed(&self) -> usize {
        self.coefficients.len()
    }

    pub fn index_of(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    pub fn coefficient(&self, column: &str) -> Option<f64> {
        self.index_of(column).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, column: &str) -> Option<f64> {
        self.index_of(column).map(|i| self.cov_fixed[i][i].max(0.0).sqrt())
    }

    pub fn has_term(&self, term: Term) -> bool {
        self.terms.contains(&term)
    }
}

/// Profiled quantities at one variance ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub lambda: f64,
    pub loglik: f64,
    /// Derivative of the profile log-likelihood with respect to λ.
    pub slope: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    /// `(X' V⁻¹ X)⁻¹` with `V` scaled to unit residual variance.
    pub a_inv: DMatrix<f64>,
}

struct Profile<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    groups: &'a RandomIntercepts,
    sizes: Vec<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    /// Per-student column sums of X.
    sx: Vec<DVector<f64>>,
    /// Per-student sums of y.
    sy: Vec<f64>,
}

impl<'a> Profile<'a> {
    fn new(x: &'a DMatrix<f64>, groups: &'a RandomIntercepts, y: &'a DVector<f64>) -> Self {
        let p = x.ncols();
        let mut sx = vec![DVector::zeros(p); groups.n_groups()];
        let mut sy = vec![0.0; groups.n_groups()];
        for (i, &g) in groups.group_of().iter().enumerate() {
            sx[g] += x.row(i).transpose();
            sy[g] += y[i];
        }
        Self {
            x,
            y,
            groups,
            sizes: groups.sizes().into_iter().map(|n| n as f64).collect(),
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            sx,
            sy,
        }
    }

    fn at(&self, lambda: f64) -> Result<ProfilePoint, CrossoverError> {
        let mut a = self.xtx.clone();
        let mut b = self.xty.clone();
        if lambda > 0.0 {
            for ((s, &t), &n) in self.sx.iter().zip(&self.sy).zip(&self.sizes) {
                let k = lambda / (1.0 + lambda * n);
                a.ger(-k, s, s, 1.0);
                b.axpy(-k * t, s, 1.0);
            }
        }
        let chol = a.cholesky().ok_or(CrossoverError::RankDeficient)?;
        let beta = chol.solve(&b);
        let resid = self.y - self.x * &beta;
        let mut group_resid = vec![0.0; self.groups.n_groups()];
        for (i, &g) in self.groups.group_of().iter().enumerate() {
            group_resid[g] += resid[i];
        }
        let n = self.y.len() as f64;
        let mut rss = resid.norm_squared();
        let mut log_det = 0.0;
        let mut drss = 0.0;
        let mut dlog_det = 0.0;
        for (&r, &m) in group_resid.iter().zip(&self.sizes) {
            let d = 1.0 + lambda * m;
            rss -= lambda / d * r * r;
            log_det += d.ln();
            drss -= r * r / (d * d);
            dlog_det += m / d;
        }
        if !(rss > 0.0) {
            return Err(CrossoverError::ZeroResidual);
        }
        let sigma2 = rss / n;
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * log_det;
        let slope = -0.5 * n * drss / rss - 0.5 * dlog_det;
        let mut a_inv = chol.inverse();
        a_inv = (&a_inv + a_inv.transpose()) * 0.5;
        Ok(ProfilePoint {
            lambda,
            loglik,
            slope,
            beta,
            sigma2,
            a_inv,
        })
    }
}

fn check_design(x: &DMatrix<f64>, groups: &RandomIntercepts, y: &DVector<f64>) -> Result<(), CrossoverError> {
    let (n, p) = x.shape();
    if y.len() != n || groups.n_obs() != n {
        return Err(CrossoverError::DimensionMismatch(format!(
            "X has {n} rows, y has {}, Z has {}",
            y.len(),
            groups.n_obs()
        )));
    }
    if n == 0 {
        return Err(CrossoverError::NoRecords);
    }
    if n <= p {
        return Err(CrossoverError::TooFewRows { rows: n, params: p });
    }
    if p == 0 || x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(CrossoverError::DimensionMismatch("design or response is empty or not finite".into()));
    }
    let mut scaled = x.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(CrossoverError::RankDeficient);
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    if sv.min() <= RANK_TOL * sv.max() {
        return Err(CrossoverError::RankDeficient);
    }
    Ok(())
}

/// Profile log-likelihood and GLS estimates at a fixed variance ratio.
/// `λ = 0` is ordinary least squares with the ML residual variance.
pub fn profile_at(
    x: &DMatrix<f64>,
    groups: &RandomIntercepts,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<ProfilePoint, CrossoverError> {
    check_design(x, groups, y)?;
    if !(0.0..=LAMBDA_MAX).contains(&lambda) {
        return Err(CrossoverError::DimensionMismatch(format!("λ = {lambda} outside [0, {LAMBDA_MAX}]")));
    }
    Profile::new(x, groups, y).at(lambda)
}

/// Finds the zero of the slope inside `[lo, hi]` (in `ln λ`), given that the
/// slope is positive at `lo` and negative at `hi`.
fn bisect_slope(profile: &Profile, mut lo: f64, mut hi: f64) -> Result<ProfilePoint, CrossoverError> {
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if profile.at(mid.exp())?.slope > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    profile.at((0.5 * (lo + hi)).exp())
}

fn maximize(profile: &Profile) -> Result<ProfilePoint, CrossoverError> {
    let (lo, hi) = (LAMBDA_MIN.ln(), LAMBDA_MAX.ln());
    let taus: Vec<f64> = (0..GRID_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let grid = taus
        .iter()
        .map(|t| profile.at(t.exp()))
        .collect::<Result<Vec<_>, _>>()?;
    let best = (0..grid.len())
        .max_by(|&a, &b| grid[a].loglik.total_cmp(&grid[b].loglik))
        .expect("grid is non-empty");

    let mut candidate = grid[best].clone();
    // Bracket a stationary point around the best grid value.
    let left = best.saturating_sub(1);
    let right = (best + 1).min(grid.len() - 1);
    for (a, b) in [(left, best), (best, right)] {
        if a < b && grid[a].slope > 0.0 && grid[b].slope <= 0.0 {
            let refined = bisect_slope(profile, taus[a], taus[b])?;
            if refined.loglik > candidate.loglik {
                candidate = refined;
            }
        }
    }

    let boundary = profile.at(0.0)?;
    if candidate.loglik - boundary.loglik > BOUNDARY_GAIN {
        Ok(candidate)
    } else {
        Ok(boundary)
    }
}

fn data_key(groups: &RandomIntercepts, y: &DVector<f64>) -> u64 {
    let mut h = DefaultHasher::new();
    groups.hash(&mut h);
    for v in y.iter() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// ML fit with `λ ∈ [0, 10⁴]`. Columns are named `x0, x1, …`;
/// [`super::Design::fit`] attaches term names.
pub fn fit_lmm(x: &DMatrix<f64>, groups: &RandomIntercepts, y: &DVector<f64>) -> Result<LmmFit, CrossoverError> {
    check_design(x, groups, y)?;
    let profile = Profile::new(x, groups, y);
    let point = maximize(&profile)?;
    let cov = &point.a_inv * point.sigma2;
    let p = x.ncols();
    Ok(LmmFit {
        terms: vec![],
        columns: (0..p).map(|j| format!("x{j}")).collect(),
        coefficients: point.beta.iter().copied().collect(),
        cov_fixed: (0..p).map(|i| (0..p).map(|j| cov[(i, j)]).collect()).collect(),
        sigma_b2: point.lambda * point.sigma2,
        sigma2: point.sigma2,
        lambda: point.lambda,
        loglik: point.loglik,
        n_obs: x.nrows(),
        n_students: groups.sizes().iter().filter(|&&n| n > 0).count(),
        data_key: data_key(groups, y),
    })
}
