//! Gauss–Hermite quadrature against the standard normal density.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `sum_k w_k f(z_k) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials. Nodes are returned in ascending order.
    pub fn standard_normal(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let off = (k as f64).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        // symmetrize against eigen-solver rounding
        for k in 0..n / 2 {
            let j = n - 1 - k;
            let z = 0.5 * (pairs[j].0 - pairs[k].0);
            let w = 0.5 * (pairs[j].1 + pairs[k].1);
            pairs[k] = (-z, w);
            pairs[j] = (z, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let nodes = pairs.iter().map(|p| p.0).collect();
        let weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self {
            nodes,
            weights,
            log_weights,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}
