//! Marginal maximum likelihood by EM over a Gauss–Hermite grid.
//!
//! The E-step computes, for every item and quadrature node, the expected
//! number of students at that node who answered the item (`n`) and who
//! answered it correctly (`r`). The M-step then maximizes each item's
//! expected complete-data log-likelihood by projected Fisher scoring inside
//! the parameter box. Every accepted M-step move is an ascent step, so the
//! marginal log-likelihood never decreases between iterations.

use serde::{Deserialize, Serialize};

use super::matrix::ResponseMatrix;
use super::model::{
    sigmoid, IrtModel, ItemFlag, ItemParams, Variant, ALPHA_BOUNDS, BETA_BOUNDS, GUESSING_BOUNDS,
};
use super::quadrature::GaussHermite;
use super::IrtError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub quadrature_nodes: usize,
    /// Stop when successive log-likelihoods differ by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            quadrature_nodes: 21,
            tol: 1e-7,
            max_iter: 5000,
        }
    }
}

/// Expected counts per (item, node), item-major.
struct Expected {
    nodes: usize,
    n: Vec<f64>,
    r: Vec<f64>,
}

impl Expected {
    fn new(items: usize, nodes: usize) -> Self {
        Self {
            nodes,
            n: vec![0.0; items * nodes],
            r: vec![0.0; items * nodes],
        }
    }

    fn item(&self, i: usize) -> (&[f64], &[f64]) {
        let span = i * self.nodes..(i + 1) * self.nodes;
        (&self.n[span.clone()], &self.r[span])
    }
}

/// Marginal log-likelihood; also accumulates posterior counts when asked.
/// Students are summed in row order so the result is reproducible.
fn marginal(
    items: &[ItemParams],
    matrix: &ResponseMatrix,
    quad: &GaussHermite,
    mut expected: Option<&mut Expected>,
) -> f64 {
    let q = quad.len();
    let mut ln_p = vec![0.0; items.len() * q];
    let mut ln_q = vec![0.0; items.len() * q];
    for (i, p) in items.iter().enumerate() {
        for (k, &z) in quad.nodes.iter().enumerate() {
            let (a, b) = p.log_probs(z);
            ln_p[i * q + k] = a;
            ln_q[i * q + k] = b;
        }
    }

    let mut total = 0.0;
    let mut logw = vec![0.0; q];
    for row in matrix.rows() {
        logw.copy_from_slice(&quad.log_weights);
        for &(i, x) in row {
            let table = if x { &ln_p } else { &ln_q };
            for (w, t) in logw.iter_mut().zip(&table[i * q..(i + 1) * q]) {
                *w += t;
            }
        }
        let peak = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logw.iter().map(|w| (w - peak).exp()).sum();
        let ll = peak + sum.ln();
        total += ll;

        if let Some(e) = expected.as_deref_mut() {
            for (k, w) in logw.iter().enumerate() {
                let post = (w - ll).exp();
                for &(i, x) in row {
                    e.n[i * q + k] += post;
                    if x {
                        e.r[i * q + k] += post;
                    }
                }
            }
        }
    }
    total
}

/// Expected complete-data log-likelihood of one item.
fn item_objective(p: &ItemParams, n: &[f64], r: &[f64], nodes: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(n.iter().zip(r))
        .map(|(&z, (&nk, &rk))| {
            let (lp, lq) = p.log_probs(z);
            let mut v = 0.0;
            if rk > 0.0 {
                v += rk * lp;
            }
            if nk - rk > 0.0 {
                v += (nk - rk) * lq;
            }
            v
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    Beta,
    Alpha,
    Guessing,
}

impl Param {
    fn get(self, p: &ItemParams) -> f64 {
        match self {
            Param::Beta => p.beta,
            Param::Alpha => p.alpha,
            Param::Guessing => p.guessing,
        }
    }

    fn set(self, p: &mut ItemParams, v: f64) {
        let (lo, hi) = self.bounds();
        let v = v.clamp(lo, hi);
        match self {
            Param::Beta => p.beta = v,
            Param::Alpha => p.alpha = v,
            Param::Guessing => p.guessing = v,
        }
    }

    fn bounds(self) -> (f64, f64) {
        match self {
            Param::Beta => BETA_BOUNDS,
            Param::Alpha => ALPHA_BOUNDS,
            Param::Guessing => GUESSING_BOUNDS,
        }
    }
}

/// Per-node score weights `dP/dθ / (P (1 - P))` and `P (1 - P)`.
#[inline]
fn node_terms(p: &ItemParams, z: f64) -> (f64, f64, [f64; 3]) {
    let eta = p.alpha * (z - p.beta);
    let l = sigmoid(eta);
    let lc = sigmoid(-eta);
    let c = p.guessing;
    let prob = c + (1.0 - c) * l;
    let var = prob * (1.0 - c) * lc;
    let g = if c == 0.0 {
        [-p.alpha, z - p.beta, 1.0 / prob]
    } else {
        [-p.alpha * l / prob, (z - p.beta) * l / prob, 1.0 / (prob * (1.0 - c))]
    };
    (prob, var, g)
}

fn param_slot(param: Param) -> usize {
    match param {
        Param::Beta => 0,
        Param::Alpha => 1,
        Param::Guessing => 2,
    }
}

/// Score and expected information of one item's objective.
fn item_score_info(
    p: &ItemParams,
    free: &[Param],
    n: &[f64],
    r: &[f64],
    nodes: &[f64],
) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut score = [0.0; 3];
    let mut info = [[0.0; 3]; 3];
    for (k, &z) in nodes.iter().enumerate() {
        let (prob, var, g) = node_terms(p, z);
        let resid = r[k] - n[k] * prob;
        for (a, &pa) in free.iter().enumerate() {
            let ga = g[param_slot(pa)];
            score[a] += resid * ga;
            for (b, &pb) in free.iter().enumerate() {
                info[a][b] += n[k] * var * ga * g[param_slot(pb)];
            }
        }
    }
    (score, info)
}

/// Solves a small symmetric positive system by Gaussian elimination with a
/// relative ridge. Returns `None` when the system is numerically singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-10 * scale;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn at_bound_outward(param: Param, value: f64, grad: f64) -> bool {
    let (lo, hi) = param.bounds();
    (value <= lo && grad < 0.0) || (value >= hi && grad > 0.0)
}

/// Projected Fisher scoring on one item, never decreasing its objective.
fn improve_item(
    p: &mut ItemParams,
    free: &[Param],
    n: &[f64],
    r: &[f64],
    nodes: &[f64],
    steps: usize,
) {
    for _ in 0..steps {
        let (score, info) = item_score_info(p, free, n, r, nodes);
        let open: Vec<usize> = (0..free.len())
            .filter(|&a| !at_bound_outward(free[a], free[a].get(p), score[a]))
            .collect();
        if open.is_empty() {
            return;
        }
        let sys = open.iter().map(|&a| open.iter().map(|&b| info[a][b]).collect()).collect();
        let rhs = open.iter().map(|&a| score[a]).collect();
        let Some(dir) = solve_small(sys, rhs) else {
            return;
        };

        let base = item_objective(p, n, r, nodes);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut cand = *p;
            for (k, &a) in open.iter().enumerate() {
                let param = free[a];
                param.set(&mut cand, param.get(p) + t * dir[k]);
            }
            if cand == *p {
                break;
            }
            if item_objective(&cand, n, r, nodes) >= base {
                let shift = free
                    .iter()
                    .map(|param| (param.get(&cand) - param.get(p)).abs())
                    .fold(0.0, f64::max);
                *p = cand;
                moved = shift > 1e-12;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return;
        }
    }
}

/// One Newton move on the slope shared by all items (`M2`).
fn improve_common_alpha(items: &mut [ItemParams], e: &Expected, nodes: &[f64], steps: usize) {
    for _ in 0..steps {
        let mut score = 0.0;
        let mut info = 0.0;
        for (i, p) in items.iter().enumerate() {
            let (n, r) = e.item(i);
            let (s, h) = item_score_info(p, &[Param::Alpha], n, r, nodes);
            score += s[0];
            info += h[0][0];
        }
        let alpha = items[0].alpha;
        if !(info > 0.0) || at_bound_outward(Param::Alpha, alpha, score) {
            return;
        }
        let total = |ps: &[ItemParams]| -> f64 {
            ps.iter()
                .enumerate()
                .map(|(i, p)| {
                    let (n, r) = e.item(i);
                    item_objective(p, n, r, nodes)
                })
                .sum()
        };
        let base = total(items);
        let step = score / info;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut probe = ItemParams::rasch(0.0);
            Param::Alpha.set(&mut probe, alpha + t * step);
            let cand_alpha = probe.alpha;
            if cand_alpha == alpha {
                break;
            }
            let cand: Vec<ItemParams> = items
                .iter()
                .map(|p| ItemParams {
                    alpha: cand_alpha,
                    ..*p
                })
                .collect();
            if total(&cand) >= base {
                items.copy_from_slice(&cand);
                moved = (cand_alpha - alpha).abs() > 1e-12;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return;
        }
    }
}

const INNER_STEPS: usize = 4;

fn m_step(variant: Variant, items: &mut [ItemParams], e: &Expected, nodes: &[f64]) {
    let free: &[Param] = match variant {
        Variant::M1 | Variant::M2 => &[Param::Beta],
        Variant::M3 => &[Param::Beta, Param::Alpha],
        Variant::M4 => &[Param::Beta, Param::Alpha, Param::Guessing],
    };
    for (i, p) in items.iter_mut().enumerate() {
        let (n, r) = e.item(i);
        improve_item(p, free, n, r, nodes, INNER_STEPS);
    }
    if variant == Variant::M2 {
        improve_common_alpha(items, e, nodes, INNER_STEPS);
    }
}

fn check_items(model: &IrtModel, matrix: &ResponseMatrix) -> Result<(), IrtError> {
    if model.item_ids != matrix.items() {
        return Err(IrtError::DimensionMismatch(format!(
            "model covers {} items, matrix has {} (or ids differ)",
            model.n_items(),
            matrix.n_items()
        )));
    }
    Ok(())
}

fn write_back(model: &mut IrtModel, items: &[ItemParams]) {
    for (i, p) in items.iter().enumerate() {
        model.beta[i] = p.beta;
    }
    match model.variant {
        Variant::M1 => {}
        Variant::M2 => model.alpha[0] = items[0].alpha,
        Variant::M3 | Variant::M4 => {
            for (i, p) in items.iter().enumerate() {
                model.alpha[i] = p.alpha;
            }
        }
    }
    if model.variant.has_guessing() {
        for (i, p) in items.iter().enumerate() {
            model.guessing[i] = p.guessing;
        }
    }
}

/// Marginal log-likelihood on an explicit quadrature grid.
pub fn log_likelihood_on(
    model: &IrtModel,
    matrix: &ResponseMatrix,
    quad: &GaussHermite,
) -> Result<f64, IrtError> {
    check_items(model, matrix)?;
    Ok(marginal(&model.items(), matrix, quad, None))
}

/// Marginal log-likelihood on the model's own grid (the default grid for
/// models that were never fitted).
pub fn log_likelihood(model: &IrtModel, matrix: &ResponseMatrix) -> Result<f64, IrtError> {
    let nodes = if model.quadrature > 0 {
        model.quadrature
    } else {
        FitConfig::default().quadrature_nodes
    };
    log_likelihood_on(model, matrix, &GaussHermite::standard_normal(nodes))
}

/// Analytic gradient of the marginal log-likelihood in
/// [`IrtModel::to_vector`] order.
pub fn score(model: &IrtModel, matrix: &ResponseMatrix, quad: &GaussHermite) -> Result<Vec<f64>, IrtError> {
    check_items(model, matrix)?;
    let items = model.items();
    let mut e = Expected::new(items.len(), quad.len());
    marginal(&items, matrix, quad, Some(&mut e));

    let all = [Param::Beta, Param::Alpha, Param::Guessing];
    let per_item: Vec<[f64; 3]> = items
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (n, r) = e.item(i);
            item_score_info(p, &all, n, r, &quad.nodes).0
        })
        .collect();

    let mut grad: Vec<f64> = per_item.iter().map(|s| s[0]).collect();
    match model.variant {
        Variant::M1 => {}
        Variant::M2 => grad.push(per_item.iter().map(|s| s[1]).sum()),
        Variant::M3 | Variant::M4 => grad.extend(per_item.iter().map(|s| s[1])),
    }
    if model.variant.has_guessing() {
        grad.extend(per_item.iter().map(|s| s[2]));
    }
    Ok(grad)
}

/// Default starting point: difficulty from the logit of the observed error
/// rate, unit slopes, guessing 0.1.
pub fn initial_model(matrix: &ResponseMatrix, variant: Variant) -> IrtModel {
    let beta = matrix
        .item_totals()
        .iter()
        .map(|&(n, c)| {
            let wrong = 1.0 - c as f64 / n as f64;
            (wrong / (1.0 - wrong)).ln().clamp(-4.0, 4.0)
        })
        .collect();
    let n = matrix.n_items();
    let alpha = vec![1.0; variant.n_alpha(n)];
    let guessing = if variant.has_guessing() { vec![0.1; n] } else { vec![] };
    IrtModel::with_params(variant, matrix.items().to_vec(), beta, alpha, guessing)
        .expect("consistent lengths")
}

pub fn fit(matrix: &ResponseMatrix, variant: Variant, config: &FitConfig) -> Result<IrtModel, IrtError> {
    if matrix.is_empty() {
        return Err(IrtError::EmptyMatrix);
    }
    fit_from(matrix, &initial_model(matrix, variant), config)
}

/// Fits `start.variant` beginning at `start`'s parameters (clamped into the
/// parameter box).
pub fn fit_from(matrix: &ResponseMatrix, start: &IrtModel, config: &FitConfig) -> Result<IrtModel, IrtError> {
    if matrix.is_empty() {
        return Err(IrtError::EmptyMatrix);
    }
    check_items(start, matrix)?;
    let quad = GaussHermite::standard_normal(config.quadrature_nodes.max(1));
    let variant = start.variant;
    let mut items = start.items();
    for p in &mut items {
        Param::Beta.set(p, p.beta);
        if variant != Variant::M1 {
            Param::Alpha.set(p, p.alpha);
        }
        if variant.has_guessing() {
            Param::Guessing.set(p, p.guessing);
        }
    }

    let mut previous = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        let mut e = Expected::new(items.len(), quad.len());
        let ll = marginal(&items, matrix, &quad, Some(&mut e));
        if (ll - previous).abs() < config.tol {
            converged = true;
            break;
        }
        previous = ll;
        m_step(variant, &mut items, &e, &quad.nodes);
        iterations += 1;
    }

    let mut model = start.clone();
    model.quadrature = quad.len();
    write_back(&mut model, &items);
    model.loglik = marginal(&items, matrix, &quad, None);
    model.converged = converged;
    model.iterations = iterations;
    model.flags = flags(&model, matrix);
    Ok(model)
}

fn flags(model: &IrtModel, matrix: &ResponseMatrix) -> Vec<ItemFlag> {
    let near = |v: f64, b: f64| (v - b).abs() <= 1e-6;
    let mut out = Vec::new();
    for (i, &(n, c)) in matrix.item_totals().iter().enumerate() {
        let item_id = model.item_ids[i].clone();
        if c == n {
            out.push(ItemFlag::AllCorrect { item_id: item_id.clone() });
        } else if c == 0 {
            out.push(ItemFlag::AllWrong { item_id: item_id.clone() });
        }
        let p = model.item(i).expect("index in range");
        let mut bound = |parameter: &str, value: f64| {
            out.push(ItemFlag::AtBound {
                item_id: item_id.clone(),
                parameter: parameter.to_string(),
                value,
            })
        };
        if near(p.beta, BETA_BOUNDS.0) || near(p.beta, BETA_BOUNDS.1) {
            bound("beta", p.beta);
        }
        if model.variant >= Variant::M3 && (near(p.alpha, ALPHA_BOUNDS.0) || near(p.alpha, ALPHA_BOUNDS.1)) {
            bound("alpha", p.alpha);
        }
        // c = 0 is the ordinary no-guessing case, only the upper bound is suspicious
        if model.variant.has_guessing() && near(p.guessing, GUESSING_BOUNDS.1) {
            bound("c", p.guessing);
        }
    }
    if model.variant == Variant::M2 {
        let a = model.alpha[0];
        if near(a, ALPHA_BOUNDS.0) || near(a, ALPHA_BOUNDS.1) {
            out.push(ItemFlag::AtBound {
                item_id: "*".into(),
                parameter: "alpha".into(),
                value: a,
            });
        }
    }
    out
}
