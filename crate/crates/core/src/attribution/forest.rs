//! Bagged regression trees with greedy variance-reduction splits.

use rand::seq::index::sample;
use rand::Rng;
use sha2::{Digest, Sha256};

use super::AttributionError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ⌈R/3⌉.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 6, min_leaf: 2, max_features: None, seed: 0 }
    }
}

pub const MIN_SUBJECTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Root at index 0; children always follow their parent.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.nodes.iter().any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub config: ForestConfig,
}

impl ForestModel {
    /// Mean of the tree predictions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    /// SHA-256 over every node, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_features as u64).to_le_bytes());
        for t in &self.trees {
            h.update((t.nodes.len() as u64).to_le_bytes());
            for n in &t.nodes {
                match *n {
                    Node::Split { feature, threshold, left, right } => {
                        h.update([0u8]);
                        h.update((feature as u64).to_le_bytes());
                        h.update(threshold.to_bits().to_le_bytes());
                        h.update((left as u64).to_le_bytes());
                        h.update((right as u64).to_le_bytes());
                    }
                    Node::Leaf { value } => {
                        h.update([1u8]);
                        h.update(value.to_bits().to_le_bytes());
                    }
                }
            }
        }
        hex::encode(h.finalize())
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

fn mean(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

impl Builder<'_> {
    /// Best `(feature, threshold, sse_reduction)` over the sampled features.
    fn best_split(&self, idx: &[usize], rng: &mut impl Rng) -> Option<(usize, f64)> {
        let n_feat = self.x[0].len();
        let n = idx.len();
        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in sample(rng, n_feat, self.mtry).into_iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.y[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                let (va, vb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if nl < self.cfg.min_leaf || nr < self.cfg.min_leaf || va == vb {
                    continue;
                }
                // SSE reduction up to a constant: Σ_L²/n_L + Σ_R²/n_R
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64;
                if best.is_none_or(|(_, _, s)| score > s) {
                    let mid = va + (vb - va) / 2.0;
                    // a midpoint that rounds onto the upper value would misroute it
                    let threshold = if mid < vb { mid } else { va };
                    best = Some((f, threshold, score));
                }
            }
        }
        let (f, t, score) = best?;
        let parent = total * total / n as f64;
        (score > parent + 1e-12 * parent.abs().max(1e-300)).then_some((f, t))
    }

    fn grow(&mut self, idx: &[usize], depth: usize, rng: &mut impl Rng) -> usize {
        let id = self.nodes.len();
        let value = mean(self.y, idx);
        self.nodes.push(Node::Leaf { value });
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(&l, depth + 1, rng);
        let right = self.grow(&r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

/// Fits one tree per bootstrap resample. Tree `t` draws from its own seed
/// stream, so the forest does not depend on fitting order.
pub fn rf_fit(x: &[Vec<f64>], y: &[f64], config: &ForestConfig) -> Result<ForestModel, AttributionError> {
    if x.len() != y.len() {
        return Err(AttributionError::Length(x.len(), y.len()));
    }
    if x.len() < MIN_SUBJECTS {
        return Err(AttributionError::TooFewSubjects { need: MIN_SUBJECTS, got: x.len() });
    }
    let r = x[0].len();
    if r == 0 || x.iter().any(|row| row.len() != r) {
        return Err(AttributionError::Shape("profile rows must share a positive length".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(AttributionError::NonFinite);
    }
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(AttributionError::Config("n_trees and min_leaf must be positive".into()));
    }
    let mtry = config.max_features.unwrap_or(r.div_ceil(3)).clamp(1, r);
    let n = x.len();
    let base = seed::derive_str(config.seed, "forest");
    let trees = (0..config.n_trees)
        .map(|t| {
            let mut rng = seed::rng(seed::derive(base, t as u64));
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            idx.sort_unstable();
            let mut b = Builder { x, y, cfg: config, mtry, nodes: Vec::new() };
            b.grow(&idx, 0, &mut rng);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel { trees, n_features: r, config: *config })
}
