//! Exact t-SNE (no Barnes-Hut).
//!
//! Conditional Gaussian affinities are calibrated per point by bisection on
//! the precision so that `exp(H(P_i))` equals the target perplexity, then
//! symmetrized to `p_ij = (p_j|i + p_i|j) / 2n`. The embedding follows
//! gradient descent on KL(P‖Q) with Student-t `q_ij`, momentum, per-parameter
//! gains and early exaggeration.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use super::{squared_distances, ProjectionError, TsneParams, COMPONENTS};
use crate::seed;

/// Allowed |perplexity(β) − target| at the end of bisection.
pub const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTION: usize = 200;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Vec<[f64; COMPONENTS]>,
    /// KL(P‖Q) after every iteration, exaggeration removed.
    pub kl_trace: Vec<f64>,
    pub perplexity_used: f64,
    /// Perplexity reached by each conditional distribution.
    pub achieved_perplexity: Vec<f64>,
}

/// Entropy (nats) and normalized row for precision `beta`.
fn row_distribution(d2: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let dmin = d2.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d2[j] - dmin)).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Row-stochastic conditional affinities `P[i][j] = p_j|i` and the
/// perplexity each row attains.
pub fn conditional_affinities(d2: &DMatrix<f64>, perplexity: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = d2.nrows();
    let target = perplexity.ln();
    let mut p = DMatrix::zeros(n, n);
    let mut achieved = vec![0.0; n];
    let mut row = vec![0.0; n];
    let mut out = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            row[j] = d2[(i, j)];
        }
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut h = row_distribution(&row, i, beta, &mut out);
        for _ in 0..MAX_BISECTION {
            if (h.exp() - perplexity).abs() <= PERPLEXITY_TOL {
                break;
            }
            // entropy falls as beta grows
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = row_distribution(&row, i, beta, &mut out);
        }
        achieved[i] = h.exp();
        for j in 0..n {
            p[(i, j)] = out[j];
        }
    }
    (p, achieved)
}

/// `(P + Pᵀ) / 2n`, summing to one.
pub fn joint_affinities(conditional: &DMatrix<f64>) -> DMatrix<f64> {
    let n = conditional.nrows() as f64;
    (conditional + conditional.transpose()) / (2.0 * n)
}

/// Student-t joint similarities of an embedding.
pub fn student_t(y: &[[f64; COMPONENTS]]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.len();
    let mut num = DMatrix::zeros(n, n);
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = (0..COMPONENTS).map(|c| (y[i][c] - y[j][c]).powi(2)).sum();
            let v = 1.0 / (1.0 + d);
            num[(i, j)] = v;
            num[(j, i)] = v;
            total += 2.0 * v;
        }
    }
    let q = &num / total;
    (q, num)
}

/// Σ_{i≠j} p_ij ln(p_ij / q_ij), with 0·ln 0 = 0.
pub fn kl_divergence(p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let mut kl = 0.0;
    for (a, b) in p.iter().zip(q.iter()) {
        if *a > 0.0 {
            kl += a * (a / b.max(f64::MIN_POSITIVE)).ln();
        }
    }
    kl
}

/// Perplexity actually used for `n` points: lowered to ⌊(n−1)/3⌋ when the
/// cohort is too small for the requested value.
pub fn effective_perplexity(n: usize, requested: f64) -> f64 {
    if (n as f64) <= 3.0 * requested {
        (((n.saturating_sub(1)) / 3).max(1)) as f64
    } else {
        requested
    }
}

/// Perturbs rows that coincide with an earlier row by seeded noise of scale
/// 1e-10 so every pairwise distance is positive.
fn jitter_duplicates(x: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let d2 = squared_distances(x);
    let n = x.nrows();
    let dup: Vec<bool> = (0..n).map(|i| (0..i).any(|j| d2[(i, j)] == 0.0)).collect();
    if !dup.iter().any(|&d| d) {
        return x.clone();
    }
    let mut rng = seed::rng(seed::derive_str(seed, "tsne/jitter"));
    let normal = Normal::new(0.0, 1e-10).expect("valid sigma");
    let mut out = x.clone();
    for i in (0..n).filter(|&i| dup[i]) {
        for j in 0..x.ncols() {
            out[(i, j)] += normal.sample(&mut rng);
        }
    }
    out
}

pub fn embed(x: &DMatrix<f64>, params: &TsneParams, seed: u64) -> Result<TsneResult, ProjectionError> {
    let n = x.nrows();
    if n < 4 {
        return Err(ProjectionError::TooFewSubjects { need: 4, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite("t-SNE input"));
    }
    let perplexity = effective_perplexity(n, params.perplexity);
    if perplexity != params.perplexity {
        log::warn!("t-SNE perplexity lowered from {} to {perplexity} for {n} points", params.perplexity);
    }
    let x = jitter_duplicates(x, seed);
    let d2 = squared_distances(&x);
    let (cond, achieved) = conditional_affinities(&d2, perplexity);
    let p = joint_affinities(&cond);

    let mut rng = seed::rng(seed::derive_str(seed, "tsne/init"));
    let init = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut y: Vec<[f64; COMPONENTS]> = (0..n).map(|_| std::array::from_fn(|_| init.sample(&mut rng))).collect();
    let mut update = vec![[0.0; COMPONENTS]; n];
    let mut gains = vec![[1.0f64; COMPONENTS]; n];
    let mut kl_trace = Vec::with_capacity(params.iterations);
    let mut grad = vec![[0.0; COMPONENTS]; n];

    for it in 0..params.iterations {
        let exaggerating = it < params.exaggeration_iters;
        let ex = if exaggerating { params.exaggeration } else { 1.0 };
        let momentum = if it < params.exaggeration_iters { params.momentum_initial } else { params.momentum_final };
        let (q, num) = student_t(&y);
        for (i, g) in grad.iter_mut().enumerate() {
            *g = [0.0; COMPONENTS];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let m = (ex * p[(i, j)] - q[(i, j)]) * num[(i, j)];
                for c in 0..COMPONENTS {
                    g[c] += 4.0 * m * (y[i][c] - y[j][c]);
                }
            }
        }
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(ProjectionError::NonFinite("t-SNE gradient"));
        }
        for i in 0..n {
            for c in 0..COMPONENTS {
                let same_sign = (grad[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(MIN_GAIN);
                update[i][c] = momentum * update[i][c] - params.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        let mean: [f64; COMPONENTS] = std::array::from_fn(|c| y.iter().map(|r| r[c]).sum::<f64>() / n as f64);
        for r in &mut y {
            for c in 0..COMPONENTS {
                r[c] -= mean[c];
            }
        }
        kl_trace.push(kl_divergence(&p, &student_t(&y).0));
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite("t-SNE embedding"));
    }
    Ok(TsneResult { embedding: y, kl_trace, perplexity_used: perplexity, achieved_perplexity: achieved })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_distributions_have_zero_kl() {
        let y = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.5, 0.5, 1.0]];
        let (q, _) = student_t(&y);
        assert_eq!(kl_divergence(&q, &q), 0.0);
        assert!((q.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_neighbours_give_perplexity_m() {
        // point 0 equidistant from m = 5 others: any beta gives a uniform row
        let m = 5;
        let mut d2 = DMatrix::from_element(m + 1, m + 1, 1.0);
        d2.fill_diagonal(0.0);
        let mut out = vec![0.0; m + 1];
        let row: Vec<f64> = d2.row(0).iter().copied().collect();
        let h = row_distribution(&row, 0, 0.37, &mut out);
        assert!((h.exp() - m as f64).abs() < 1e-12);
    }

    #[test]
    fn perplexity_lowered_for_small_cohorts() {
        assert_eq!(effective_perplexity(20, 30.0), 6.0);
        assert_eq!(effective_perplexity(91, 30.0), 30.0);
        assert_eq!(effective_perplexity(90, 30.0), 29.0);
    }

    #[test]
    fn calibrated_rows() {
        let x = DMatrix::from_fn(40, 5, |i, j| ((i * 13 + j * 7) % 17) as f64 * 0.3 + (i as f64).sin());
        let (p, achieved) = conditional_affinities(&squared_distances(&x), 10.0);
        for i in 0..40 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
            assert!((achieved[i] - 10.0).abs() < 1e-3);
            assert_eq!(p[(i, i)], 0.0);
        }
        let joint = joint_affinities(&p);
        assert!((joint.sum() - 1.0).abs() < 1e-12);
        assert_eq!(joint, joint.transpose());
    }
}
