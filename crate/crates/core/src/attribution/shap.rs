//! Exact interventional Shapley values for tree ensembles.
//!
//! For a foreground row `x` and one background row `z` the game is
//! `v(S) = f(x_S, z_S̄)`. A tree is walked jointly for both rows: where they
//! split apart on a feature not yet seen, the `x` branch puts it in `A` and
//! the `z` branch in `B`. A leaf with value `v` reached through `(A, B)` is
//! the game `v·[A ⊆ S, S ∩ B = ∅]`, whose Shapley values are closed-form.

use super::forest::{ForestModel, Node, Tree};
use super::AttributionError;

/// `k! / (a+b)!`-style weights, from a factorial table.
struct Weights {
    fact: Vec<f64>,
}

impl Weights {
    fn new(max: usize) -> Self {
        let mut fact = vec![1.0; max + 1];
        for i in 1..=max {
            fact[i] = fact[i - 1] * i as f64;
        }
        Self { fact }
    }

    /// Weight for a member of `A` (positive) and of `B` (negative side).
    fn pair(&self, a: usize, b: usize) -> (f64, f64) {
        let total = self.fact[a + b];
        let wa = if a > 0 { self.fact[a - 1] * self.fact[b] / total } else { 0.0 };
        let wb = if b > 0 { self.fact[a] * self.fact[b - 1] / total } else { 0.0 };
        (wa, wb)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Free,
    X,
    Z,
}

struct Walk<'a> {
    tree: &'a Tree,
    x: &'a [f64],
    z: &'a [f64],
    side: Vec<Side>,
    a: Vec<usize>,
    b: Vec<usize>,
    w: &'a Weights,
}

impl Walk<'_> {
    fn go(&mut self, node: usize, phi: &mut [f64]) {
        match self.tree.nodes[node] {
            Node::Leaf { value } => {
                let (wa, wb) = self.w.pair(self.a.len(), self.b.len());
                for &i in &self.a {
                    phi[i] += value * wa;
                }
                for &i in &self.b {
                    phi[i] -= value * wb;
                }
            }
            Node::Split { feature, threshold, left, right } => {
                let xd = if self.x[feature] <= threshold { left } else { right };
                let zd = if self.z[feature] <= threshold { left } else { right };
                match self.side[feature] {
                    Side::X => self.go(xd, phi),
                    Side::Z => self.go(zd, phi),
                    Side::Free if xd == zd => self.go(xd, phi),
                    Side::Free => {
                        self.side[feature] = Side::X;
                        self.a.push(feature);
                        self.go(xd, phi);
                        self.a.pop();
                        self.side[feature] = Side::Z;
                        self.b.push(feature);
                        self.go(zd, phi);
                        self.b.pop();
                        self.side[feature] = Side::Free;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapExplanation {
    pub phi: Vec<f64>,
    /// Mean forest prediction over the background rows.
    pub base: f64,
    pub prediction: f64,
}

impl ShapExplanation {
    /// `prediction − (base + Σφ)`.
    pub fn local_accuracy_gap(&self) -> f64 {
        self.prediction - self.base - self.phi.iter().sum::<f64>()
    }
}

/// Shapley values of `x` against the background rows, averaged over the
/// background and over trees.
pub fn tree_shap(model: &ForestModel, x: &[f64], background: &[Vec<f64>]) -> Result<ShapExplanation, AttributionError> {
    if background.is_empty() {
        return Err(AttributionError::EmptyBackground);
    }
    let r = model.n_features;
    if x.len() != r || background.iter().any(|z| z.len() != r) {
        return Err(AttributionError::Shape(format!("rows must have {r} features")));
    }
    let max_depth = model.trees.iter().map(Tree::depth).max().unwrap_or(0);
    let w = Weights::new(max_depth);
    let mut phi = vec![0.0; r];
    let mut tree_phi = vec![0.0; r];
    for tree in &model.trees {
        tree_phi.iter_mut().for_each(|v| *v = 0.0);
        for z in background {
            let mut walk = Walk { tree, x, z, side: vec![Side::Free; r], a: Vec::new(), b: Vec::new(), w: &w };
            walk.go(0, &mut tree_phi);
        }
        for (p, t) in phi.iter_mut().zip(&tree_phi) {
            *p += t;
        }
    }
    let scale = 1.0 / (model.trees.len() as f64 * background.len() as f64);
    phi.iter_mut().for_each(|v| *v *= scale);
    let base = background.iter().map(|z| model.predict(z)).sum::<f64>() / background.len() as f64;
    Ok(ShapExplanation { phi, base, prediction: model.predict(x) })
}
