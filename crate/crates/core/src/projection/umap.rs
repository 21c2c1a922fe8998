//! UMAP with an exact kNN graph and negative-sampling SGD.
//!
//! Membership `w_j|i = exp(-max(0, d_ij - ρ_i) / σ_i)` with `ρ_i` the nearest
//! positive neighbour distance and `σ_i` set by bisection so the memberships
//! of the k neighbours sum to `log2 k`. The fuzzy union `a + b - ab`
//! symmetrizes the graph. Low-dimensional similarity is `1 / (1 + a·d^{2b})`.

use nalgebra::DMatrix;
use rand::Rng;

use super::{squared_distances, ProjectionError, UmapParams, COMPONENTS};
use crate::seed;

const SIGMA_ITERS: usize = 64;
const SIGMA_TOL: f64 = 1e-5;
/// σ_i never drops below this fraction of the mean neighbour distance.
const MIN_SIGMA_SCALE: f64 = 1e-3;
const GRAD_CLIP: f64 = 4.0;
const INIT_RANGE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct UmapResult {
    pub embedding: Vec<[f64; COMPONENTS]>,
    pub a: f64,
    pub b: f64,
    /// Connected components of the symmetrized graph.
    pub graph_components: usize,
}

/// Indices of the k nearest other rows of each row, ties by index.
pub fn knn(d: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = d.nrows();
    (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            idx.sort_by(|&a, &b| d[(i, a)].total_cmp(&d[(i, b)]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect()
}

/// Per-point ρ and σ for the given neighbour distances.
pub fn smooth_knn(dists: &[f64], k: usize) -> (f64, f64) {
    let target = (k as f64).log2();
    let rho = dists.iter().copied().filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min);
    let rho = if rho.is_finite() { rho } else { 0.0 };
    let total = |sigma: f64| dists.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum::<f64>();
    let (mut lo, mut hi, mut sigma) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..SIGMA_ITERS {
        let s = total(sigma);
        if (s - target).abs() < SIGMA_TOL {
            break;
        }
        // the sum grows with sigma
        if s > target {
            hi = sigma;
            sigma = 0.5 * (lo + hi);
        } else {
            lo = sigma;
            sigma = if hi.is_finite() { 0.5 * (lo + hi) } else { sigma * 2.0 };
        }
    }
    let mean = dists.iter().sum::<f64>() / dists.len().max(1) as f64;
    if rho > 0.0 {
        sigma = sigma.max(MIN_SIGMA_SCALE * mean);
    }
    (rho, sigma)
}

/// Directed memberships `A[i][j] = w_j|i`, in (0, 1] on the kNN graph and
/// zero off it.
pub fn directed_memberships(d: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = d.nrows();
    let mut a = DMatrix::zeros(n, n);
    for (i, nb) in knn(d, k).into_iter().enumerate() {
        let dists: Vec<f64> = nb.iter().map(|&j| d[(i, j)]).collect();
        let (rho, sigma) = smooth_knn(&dists, k);
        for (&j, &dij) in nb.iter().zip(&dists) {
            let w = if sigma > 0.0 { (-(dij - rho).max(0.0) / sigma).exp() } else { f64::from(u8::from(dij <= rho)) };
            // kNN edges stay in the graph even when the membership underflows
            a[(i, j)] = w.max(f64::MIN_POSITIVE);
        }
    }
    a
}

/// Fuzzy union `a + b − ab`; exactly symmetric.
pub fn fuzzy_union(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let (x, y) = (a[(i, j)], a[(j, i)]);
            let v = x + y - x * y;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// Fuzzy-set cross-entropy between graph weights and embedding similarities,
/// summed over the given pairs. Terms with w ∈ {0, 1} drop their undefined
/// log factor.
pub fn cross_entropy(w: &[f64], w_hat: &[f64]) -> f64 {
    const EPS: f64 = 1e-300;
    w.iter()
        .zip(w_hat)
        .map(|(&p, &q)| {
            let mut c = 0.0;
            if p > 0.0 {
                c += p * (p / q.max(EPS)).ln();
            }
            if p < 1.0 {
                c += (1.0 - p) * ((1.0 - p) / (1.0 - q).max(EPS)).ln();
            }
            c
        })
        .sum()
}

/// Target low-dimensional membership curve for `min_dist` and `spread`.
pub fn target_curve(d: f64, min_dist: f64, spread: f64) -> f64 {
    if d < min_dist {
        1.0
    } else {
        (-(d - min_dist) / spread).exp()
    }
}

pub fn curve(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

/// Least-squares fit of `(a, b)` to the target curve on 300 points of
/// `[0, 3·spread]`, by Levenberg-Marquardt from (1, 1).
pub fn fit_ab(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target_curve(x, min_dist, spread)).collect();
    let sse = |a: f64, b: f64| xs.iter().zip(&ys).map(|(&x, &y)| (curve(x, a, b) - y).powi(2)).sum::<f64>();
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        // normal equations JᵀJ δ = -Jᵀr
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x <= 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let den = 1.0 + a * p;
            let f = 1.0 / den;
            let r = f - y;
            let da = -p / (den * den);
            let db = -a * p * 2.0 * x.ln() / (den * den);
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let (maa, mbb) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
        let det = maa * mbb - jab * jab;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = -(mbb * ga - jab * gb) / det;
        let step_b = -(maa * gb - jab * ga) / det;
        let (na, nb) = (a + step_a, b + step_b);
        let new_cost = if na > 0.0 && nb > 0.0 { sse(na, nb) } else { f64::INFINITY };
        if new_cost < cost {
            let done = (cost - new_cost) <= 1e-15 * cost.max(1e-300);
            a = na;
            b = nb;
            cost = new_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

/// Number of connected components of the graph with edges `w > 0`.
fn components(w: &DMatrix<f64>) -> usize {
    let n = w.nrows();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && w[(i, j)] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

pub fn embed(x: &DMatrix<f64>, params: &UmapParams, seed: u64) -> Result<UmapResult, ProjectionError> {
    let n = x.nrows();
    let k = params.n_neighbors;
    if n <= k {
        return Err(ProjectionError::TooFewSubjects { need: k + 1, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite("UMAP input"));
    }
    let d = squared_distances(x).map(f64::sqrt);
    let w = fuzzy_union(&directed_memberships(&d, k));
    let graph_components = components(&w);
    if graph_components > 1 {
        log::warn!("UMAP kNN graph has {graph_components} connected components");
    }
    let (a, b) = fit_ab(params.min_dist, params.spread);

    // directed edge list in row-major order, both directions
    let wmax = w.iter().copied().fold(0.0, f64::max);
    let epochs = params.epochs.max(1);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if i != j && v > 0.0 && v >= wmax / epochs as f64 {
                edges.push((i, j, wmax / v));
            }
        }
    }
    let neg_rate = params.negative_sample_rate as f64;
    let mut next_sample: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let mut next_negative: Vec<f64> = edges.iter().map(|e| e.2 / neg_rate.max(1.0)).collect();

    let mut rng = seed::rng(seed::derive_str(seed, "umap"));
    let mut y: Vec<[f64; COMPONENTS]> =
        (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))).collect();

    for epoch in 0..epochs {
        let alpha = params.learning_rate * (1.0 - epoch as f64 / epochs as f64);
        let e = epoch as f64;
        for (idx, &(i, j, per_sample)) in edges.iter().enumerate() {
            if next_sample[idx] > e + 1.0 {
                continue;
            }
            let d2: f64 = (0..COMPONENTS).map(|c| (y[i][c] - y[j][c]).powi(2)).sum();
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                for c in 0..COMPONENTS {
                    let g = clip(coeff * (y[i][c] - y[j][c])) * alpha;
                    y[i][c] += g;
                    y[j][c] -= g;
                }
            }
            next_sample[idx] += per_sample;
            if params.negative_sample_rate > 0 {
                let per_negative = per_sample / neg_rate;
                let count = ((e + 1.0 - next_negative[idx]) / per_negative).floor().max(0.0) as usize;
                for _ in 0..count {
                    let m = rng.random_range(0..n);
                    if m == i {
                        continue;
                    }
                    let d2: f64 = (0..COMPONENTS).map(|c| (y[i][c] - y[m][c]).powi(2)).sum();
                    if d2 > 0.0 {
                        let coeff = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                        for c in 0..COMPONENTS {
                            y[i][c] += clip(coeff * (y[i][c] - y[m][c])) * alpha;
                        }
                    }
                }
                next_negative[idx] += count as f64 * per_negative;
            }
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite("UMAP embedding"));
    }
    Ok(UmapResult { embedding: y, a, b, graph_components })
}
