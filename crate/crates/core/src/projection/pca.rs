//! Principal component analysis by symmetric eigendecomposition.
//!
//! When there are more features than subjects the n × n Gram matrix of the
//! centered data is decomposed instead of the p × p covariance; both share
//! their nonzero eigenvalues and the axes are recovered as `Xᵀu / √((n-1)λ)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{center_columns, ProjectionError, COMPONENTS};

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// p × k, orthonormal columns.
    pub axes: DMatrix<f64>,
    /// Descending, length k, zero-padded past the rank.
    pub eigenvalues: Vec<f64>,
    /// Number of components with nonzero variance.
    pub effective_rank: usize,
}

impl PcaModel {
    pub fn rank_deficient(&self) -> bool {
        self.effective_rank < self.eigenvalues.len()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= self.mean.transpose();
        }
        c * &self.axes
    }
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Completes `axes` (p × r, orthonormal) with standard-basis directions
/// orthogonalised against it until it has `k` columns.
fn complete_basis(axes: DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let p = axes.nrows();
    let mut cols: Vec<DVector<f64>> = axes.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < k && e < p {
        let mut v = DVector::zeros(p);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&v);
                v.axpy(-d, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Flips each axis so its largest-magnitude loading is positive.
fn fix_signs(axes: &mut DMatrix<f64>) {
    for mut col in axes.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`k` principal axes of `x` (rows = observations) and the scores of the
/// centered rows on them. Columns past `min(k, p)` and past the rank are zero
/// scores.
pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<PcaModel, ProjectionError> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(ProjectionError::TooFewSubjects { need: 2, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite("PCA input"));
    }
    let mean = DVector::from_fn(p, |j, _| x.column(j).mean());
    let xc = center_columns(x);
    let denom = (n - 1) as f64;
    let (values, axes) = if p <= n {
        sorted_eigen(xc.transpose() * &xc / denom)
    } else {
        let gram = &xc * xc.transpose() / denom;
        let (vals, u) = sorted_eigen(gram);
        let top = vals.first().copied().unwrap_or(0.0).max(0.0);
        let mut kept = Vec::new();
        for (i, &l) in vals.iter().enumerate().take(k) {
            if l > RANK_TOL * top && l > 0.0 {
                let w = xc.transpose() * u.column(i) / (denom * l).sqrt();
                kept.push(w);
            }
        }
        let axes = if kept.is_empty() { DMatrix::zeros(p, 0) } else { DMatrix::from_columns(&kept) };
        (vals, axes)
    };
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let m = k.min(p);
    let mut eigenvalues: Vec<f64> = values.iter().take(m).map(|&l| l.max(0.0)).collect();
    let effective_rank = eigenvalues.iter().filter(|&&l| l > RANK_TOL * top && l > 0.0).count();
    for l in eigenvalues.iter_mut().skip(effective_rank) {
        *l = 0.0;
    }
    eigenvalues.resize(k, 0.0);
    let mut axes = if p <= n {
        axes.columns(0, m).into_owned()
    } else {
        complete_basis(axes.columns(0, effective_rank.min(axes.ncols())).into_owned(), m)
    };
    fix_signs(&mut axes);
    Ok(PcaModel { mean, axes, eigenvalues, effective_rank })
}

/// PCA scores padded to three columns.
pub fn fit_transform(x: &DMatrix<f64>, k: usize) -> Result<(PcaModel, Vec<[f64; COMPONENTS]>), ProjectionError> {
    let model = fit(x, k)?;
    let scores = model.transform(x);
    let rows = (0..x.nrows())
        .map(|i| {
            std::array::from_fn(|c| if c < scores.ncols() && c < model.effective_rank { scores[(i, c)] } else { 0.0 })
        })
        .collect();
    Ok((model, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_in_the_plane() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, -1.0, 2.0, 2.0, -2.0, -2.0]);
        let m = fit(&x, 3).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.axes[(0, 0)] - s).abs() < 1e-12 && (m.axes[(1, 0)] - s).abs() < 1e-12);
        assert!((m.eigenvalues[0] - 20.0 / 3.0).abs() < 1e-12);
        assert!(m.eigenvalues[1].abs() < 1e-12);
        assert_eq!(m.effective_rank, 1);
        assert!(m.rank_deficient());
    }

    #[test]
    fn duplicated_rows_keep_axes() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.5, -1.0, 0.3, 2.0, 0.7, -2.0, 1.0, 3.0, 0.1, -1.0]);
        let doubled = DMatrix::from_fn(8, 3, |i, j| x[(i % 4, j)]);
        let a = fit(&x, 3).unwrap();
        let b = fit(&doubled, 3).unwrap();
        for c in 0..a.effective_rank {
            let dot = a.axes.column(c).dot(&b.axes.column(c));
            assert!((dot.abs() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn wide_matrix_uses_gram_path() {
        let x = DMatrix::from_fn(5, 40, |i, j| ((i * 7 + j * 3) % 11) as f64 + (i * j) as f64 * 0.01);
        let m = fit(&x, 3).unwrap();
        let wtw = m.axes.transpose() * &m.axes;
        assert!((wtw - DMatrix::identity(3, 3)).abs().max() < 1e-8);
        let scores = m.transform(&x);
        for c in 0..3 {
            let col = scores.column(c);
            let var = col.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - m.eigenvalues[c]).abs() < 1e-8 * m.eigenvalues[0].max(1.0));
        }
    }

    #[test]
    fn constant_data_has_zero_rank() {
        let x = DMatrix::from_element(4, 6, 0.7);
        let (m, rows) = fit_transform(&x, 3).unwrap();
        assert_eq!(m.effective_rank, 0);
        assert!(rows.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(m.axes.ncols(), 3);
    }

    #[test]
    fn single_row_rejected() {
        assert!(fit(&DMatrix::zeros(1, 3), 3).is_err());
    }
}
