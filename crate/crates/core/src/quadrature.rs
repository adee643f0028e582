//! Gauss-Legendre rules mapped onto finite intervals.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Nodes and weights of an `order`-point Gauss-Legendre rule on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl IntervalRule {
    /// # Panics
    ///
    /// Panics if `order == 0`.
    pub fn new(a: f64, b: f64, order: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("quadrature order must be > 0"));
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let (nodes, weights) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (mid + half * x, half * w))
            .unzip();
        IntervalRule { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}
