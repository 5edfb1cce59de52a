//! Gauss–Hermite rules for expectations under a normal distribution.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights for `E[f(X)]`, `X ~ N(0, 1)`.
///
/// Weights are normalized to sum to one. An `m`-node rule is exact for
/// polynomials of degree `2m - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Orthonormal probabilists' Hermite values `(h_{m-1}(x), h_m(x))`.
fn hermite_pair(m: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..m {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (prev, cur)
}

impl QuadratureRule {
    pub const DEFAULT_NODES: usize = 20;

    /// Build the `m`-node rule.
    ///
    /// Initial nodes are the eigenvalues of the Jacobi matrix; each is then
    /// polished by Newton's method on `He_m`, and the weights come from
    /// `1 / (m h_{m-1}(x)^2)`, which keeps the tail weights accurate.
    pub fn gauss_hermite(m: usize) -> Self {
        assert!(m >= 1, "quadrature needs at least one node");
        let jacobi = DMatrix::from_fn(m, m, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
        nodes.sort_by(f64::total_cmp);

        let mut weights = Vec::with_capacity(m);
        for x in nodes.iter_mut() {
            for _ in 0..50 {
                let (lower, value) = hermite_pair(m, *x);
                let step = value / ((m as f64).sqrt() * lower);
                *x -= step;
                if step.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (lower, _) = hermite_pair(m, *x);
            weights.push(1.0 / (m as f64 * lower * lower));
        }
        // symmetric rule: pin the exact symmetry and the unit mass
        for i in 0..m / 2 {
            let x = 0.5 * (nodes[m - 1 - i] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[m - 1 - i]);
            nodes[i] = -x;
            nodes[m - 1 - i] = x;
            weights[i] = w;
            weights[m - 1 - i] = w;
        }
        if m % 2 == 1 {
            nodes[m / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Iterate `(mean + sd * node, weight)`.
    pub fn scaled(&self, mean: f64, sd: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mean + sd * x, w))
    }

    /// `E[f(A)]` for `A ~ N(mean, sd^2)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut f: F) -> f64 {
        self.scaled(mean, sd).map(|(a, w)| w * f(a)).sum()
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(Self::DEFAULT_NODES)
    }
}
