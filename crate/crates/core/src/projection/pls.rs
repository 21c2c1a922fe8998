//! PLS2 by NIPALS with deflation of both blocks.
//!
//! X is standardized and Y centered. Each component's weight vector `w`
//! maximizes the squared covariance of `Xw` with the current Y residual;
//! both X and Y are then deflated by the rank-one fit on the score.

use nalgebra::{DMatrix, DVector};

use super::{center_columns, standardize_columns, ProjectionError, COMPONENTS};

const MAX_ITER: usize = 500;
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PlsModel {
    /// Unit-norm weight vectors, one per fitted component.
    pub weights: Vec<DVector<f64>>,
    pub scores: Vec<DVector<f64>>,
    /// X loadings `Xᵀt / tᵀt` used for deflation.
    pub x_loadings: Vec<DVector<f64>>,
    pub y_loadings: Vec<DVector<f64>>,
}

fn first_component(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    // start from the Y column with the largest sum of squares
    let start = (0..y.ncols()).max_by(|&a, &b| y.column(a).norm_squared().total_cmp(&y.column(b).norm_squared()))?;
    let mut u: DVector<f64> = y.column(start).into_owned();
    let mut t_old: Option<DVector<f64>> = None;
    for _ in 0..MAX_ITER {
        let mut w = x.transpose() * &u;
        let wn = w.norm();
        if wn <= TOL {
            return None;
        }
        w /= wn;
        let t = x * &w;
        let tt = t.norm_squared();
        if tt <= TOL {
            return None;
        }
        let c = y.transpose() * &t / tt;
        let cc = c.norm_squared();
        if cc <= TOL * TOL {
            return None;
        }
        u = y * &c / cc;
        let converged = t_old.as_ref().is_some_and(|o| (o - &t).norm() <= TOL * t.norm().max(1.0));
        t_old = Some(t.clone());
        if converged || y.ncols() == 1 {
            return Some((w, t, c));
        }
    }
    let w = {
        let w = x.transpose() * &u;
        let n = w.norm();
        w / n
    };
    let t = x * &w;
    let c = y.transpose() * &t / t.norm_squared();
    Some((w, t, c))
}

pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, k: usize) -> Result<PlsModel, ProjectionError> {
    let n = x.nrows();
    if n < 2 {
        return Err(ProjectionError::TooFewSubjects { need: 2, got: n });
    }
    if y.nrows() != n {
        return Err(ProjectionError::Shape(format!("X has {n} rows, Y has {}", y.nrows())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite("PLS input"));
    }
    let mut xr = standardize_columns(x);
    let mut yr = center_columns(y);
    if yr.iter().all(|v| v.abs() <= TOL) {
        return Err(ProjectionError::ConstantResponse);
    }
    let mut model = PlsModel { weights: Vec::new(), scores: Vec::new(), x_loadings: Vec::new(), y_loadings: Vec::new() };
    for _ in 0..k {
        let Some((mut w, mut t, mut c)) = first_component(&xr, &yr) else {
            break;
        };
        let mut best = 0.0f64;
        for &v in w.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            w.neg_mut();
            t.neg_mut();
            c.neg_mut();
        }
        let tt = t.norm_squared();
        let p = xr.transpose() * &t / tt;
        xr -= &t * p.transpose();
        yr -= &t * c.transpose();
        model.weights.push(w);
        model.scores.push(t);
        model.x_loadings.push(p);
        model.y_loadings.push(c);
    }
    if model.weights.is_empty() {
        return Err(ProjectionError::ConstantResponse);
    }
    Ok(model)
}

/// Scores padded with zero columns when fewer than three components exist.
pub fn fit_transform(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    k: usize,
) -> Result<(PlsModel, Vec<[f64; COMPONENTS]>), ProjectionError> {
    let model = fit(x, y, k)?;
    let rows = (0..x.nrows())
        .map(|i| std::array::from_fn(|c| model.scores.get(c).map_or(0.0, |t| t[i])))
        .collect();
    Ok((model, rows))
}

/// Sample covariance of two equal-length vectors.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Columns of ±1 patterns that are mutually orthogonal after centering.
    fn orthogonal_design() -> DMatrix<f64> {
        let rows = [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        DMatrix::from_fn(8, 3, |i, j| rows[i][j] * (j + 1) as f64)
    }

    #[test]
    fn response_equal_to_a_column_selects_that_axis() {
        let x = orthogonal_design();
        let xs = standardize_columns(&x);
        for j in 0..3 {
            let y = DMatrix::from_fn(8, 1, |i, _| xs[(i, j)]);
            let m = fit(&x, &y, 1).unwrap();
            for (a, &v) in m.weights[0].iter().enumerate() {
                let want = if a == j { 1.0 } else { 0.0 };
                assert!((v.abs() - want).abs() < 1e-10, "axis {j}: {:?}", m.weights[0]);
            }
        }
    }

    #[test]
    fn orthogonal_irrelevant_column_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
        let y = DMatrix::from_fn(n, 1, |i, _| labels[i]);
        // centered alternating-pair pattern is orthogonal to the centered labels
        let z: Vec<f64> = (0..n).map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let yc: Vec<f64> = labels.iter().map(|v| v - 0.5).collect();
        assert!(yc.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
        let wider = DMatrix::from_fn(n, 5, |i, j| if j < 4 { x[(i, j)] } else { z[i] });
        let a = fit(&x, &y, 1).unwrap();
        let b = fit(&wider, &y, 1).unwrap();
        for j in 0..4 {
            assert!((a.weights[0][j] - b.weights[0][j]).abs() < 1e-8);
        }
        assert!(b.weights[0][4].abs() < 1e-8);
    }

    #[test]
    fn unit_weights_and_constant_response_error() {
        let x = orthogonal_design();
        let y = DMatrix::from_fn(8, 2, |i, j| f64::from(u8::from((i % 2) == j)));
        let m = fit(&x, &y, 3).unwrap();
        assert!(m.weights.iter().all(|w| (w.norm() - 1.0).abs() < 1e-12));
        let flat = DMatrix::from_element(8, 1, 2.0);
        assert!(matches!(fit(&x, &flat, 1), Err(ProjectionError::ConstantResponse)));
    }
}
