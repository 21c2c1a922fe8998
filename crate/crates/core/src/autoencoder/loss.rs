//! Reconstruction losses: MSE, windowed 3D SSIM, and their convex mix.
//!
//! SSIM uses a uniform 7³ window (clamped to the volume size per axis),
//! `C1 = 0.01²`, `C2 = 0.03²` for dynamic range 1, averaged over all valid
//! window positions. Moments are biased (divide by the window size).

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Ssim,
    Combined,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Ssim => "ssim",
            LossKind::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mse" => Some(LossKind::Mse),
            "ssim" => Some(LossKind::Ssim),
            "combined" => Some(LossKind::Combined),
            _ => None,
        }
    }
}

pub fn mse(recon: &[f64], target: &[f64]) -> f64 {
    assert_eq!(recon.len(), target.len());
    recon.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / recon.len() as f64
}

fn window(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|d| d.min(SSIM_WINDOW))
}

/// Sums over every valid window placement, separably along each axis.
fn box_valid(field: &[f64], dims: [usize; 3], win: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    let mut cur = field.to_vec();
    let mut cd = dims;
    for axis in 0..3 {
        let mut nd = cd;
        nd[axis] = cd[axis] - win[axis] + 1;
        let mut next = vec![0.0; nd[0] * nd[1] * nd[2]];
        let stride_in = [1, cd[0], cd[0] * cd[1]][axis];
        for z in 0..nd[2] {
            for y in 0..nd[1] {
                for x in 0..nd[0] {
                    let base = (z * cd[1] + y) * cd[0] + x;
                    let mut s = 0.0;
                    for t in 0..win[axis] {
                        s += cur[base + t * stride_in];
                    }
                    next[(z * nd[1] + y) * nd[0] + x] = s;
                }
            }
        }
        cur = next;
        cd = nd;
    }
    (cur, cd)
}

/// Adjoint of [`box_valid`]: each voxel sums the values of every window
/// placement covering it.
fn box_adjoint(grid: &[f64], grid_dims: [usize; 3], win: [usize; 3]) -> Vec<f64> {
    let mut cur = grid.to_vec();
    let mut cd = grid_dims;
    for axis in 0..3 {
        let mut nd = cd;
        nd[axis] = cd[axis] + win[axis] - 1;
        let mut next = vec![0.0; nd[0] * nd[1] * nd[2]];
        let stride_out = [1, nd[0], nd[0] * nd[1]][axis];
        for z in 0..cd[2] {
            for y in 0..cd[1] {
                for x in 0..cd[0] {
                    let v = cur[(z * cd[1] + y) * cd[0] + x];
                    let base = (z * nd[1] + y) * nd[0] + x;
                    for t in 0..win[axis] {
                        next[base + t * stride_out] += v;
                    }
                }
            }
        }
        cur = next;
        cd = nd;
    }
    cur
}

struct SsimMaps {
    grid_dims: [usize; 3],
    win: [usize; 3],
    n: f64,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], dims: [usize; 3]) -> SsimMaps {
    let win = window(dims);
    let n = (win[0] * win[1] * win[2]) as f64;
    let scale = |v: Vec<f64>| v.into_iter().map(|s| s / n).collect::<Vec<_>>();
    let (sx, grid_dims) = box_valid(x, dims, win);
    let (sy, _) = box_valid(y, dims, win);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    SsimMaps {
        grid_dims,
        win,
        n,
        mu_x: scale(sx),
        mu_y: scale(sy),
        exx: scale(box_valid(&xx, dims, win).0),
        eyy: scale(box_valid(&yy, dims, win).0),
        exy: scale(box_valid(&xy, dims, win).0),
    }
}

/// Mean SSIM between two volumes of the same dims.
pub fn ssim(x: &[f64], y: &[f64], dims: [usize; 3]) -> f64 {
    assert_eq!(x.len(), y.len());
    let m = moments(x, y, dims);
    let total: f64 = (0..m.mu_x.len())
        .map(|i| {
            let (mx, my) = (m.mu_x[i], m.mu_y[i]);
            let vx = m.exx[i] - mx * mx;
            let vy = m.eyy[i] - my * my;
            let cxy = m.exy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    total / m.mu_x.len() as f64
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &[f64], y: &[f64], dims: [usize; 3]) -> (f64, Vec<f64>) {
    let m = moments(x, y, dims);
    let positions = m.mu_x.len();
    let mut g_mu = vec![0.0; positions];
    let mut g_xx = vec![0.0; positions];
    let mut g_xy = vec![0.0; positions];
    let mut total = 0.0;
    for i in 0..positions {
        let (mx, my) = (m.mu_x[i], m.mu_y[i]);
        let vx = m.exx[i] - mx * mx;
        let vy = m.eyy[i] - my * my;
        let cxy = m.exy[i] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * cxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = vx + vy + SSIM_C2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        // partials in (mu_x, var_x, cov_xy), then chained to raw moments
        let d_cov = 2.0 * a1 / (b1 * b2);
        let d_var = -s / b2;
        let d_mu_direct = 2.0 * my * a2 / (b1 * b2) - 2.0 * mx * s / b1;
        g_mu[i] = d_mu_direct + d_var * (-2.0 * mx) + d_cov * (-my);
        g_xx[i] = d_var;
        g_xy[i] = d_cov;
    }
    let scale = 1.0 / (positions as f64 * m.n);
    let a_mu = box_adjoint(&g_mu, m.grid_dims, m.win);
    let a_xx = box_adjoint(&g_xx, m.grid_dims, m.win);
    let a_xy = box_adjoint(&g_xy, m.grid_dims, m.win);
    let grad = (0..x.len()).map(|j| scale * (a_mu[j] + 2.0 * x[j] * a_xx[j] + y[j] * a_xy[j])).collect();
    (total / positions as f64, grad)
}

/// Loss value and its gradient with respect to `recon`.
pub fn loss_with_grad(recon: &[f64], target: &[f64], dims: [usize; 3], kind: LossKind, alpha: f64) -> (f64, Vec<f64>) {
    let n = recon.len() as f64;
    let mse_part = || {
        let v = mse(recon, target);
        let g: Vec<f64> = recon.iter().zip(target).map(|(a, b)| 2.0 * (a - b) / n).collect();
        (v, g)
    };
    match kind {
        LossKind::Mse => mse_part(),
        LossKind::Ssim => {
            let (s, g) = ssim_with_grad(recon, target, dims);
            (1.0 - s, g.into_iter().map(|v| -v).collect())
        }
        LossKind::Combined => {
            let (m, gm) = mse_part();
            let (s, gs) = ssim_with_grad(recon, target, dims);
            let value = alpha * m + (1.0 - alpha) * (1.0 - s);
            let g = gm.iter().zip(&gs).map(|(a, b)| alpha * a - (1.0 - alpha) * b).collect();
            (value, g)
        }
    }
}

pub fn loss(recon: &[f64], target: &[f64], dims: [usize; 3], kind: LossKind, alpha: f64) -> f64 {
    match kind {
        LossKind::Mse => mse(recon, target),
        LossKind::Ssim => 1.0 - ssim(recon, target, dims),
        LossKind::Combined => alpha * mse(recon, target) + (1.0 - alpha) * (1.0 - ssim(recon, target, dims)),
    }
}

/// `alpha·mse + (1 − alpha)·(1 − ssim)` from precomputed parts.
pub fn combine(mse: f64, ssim: f64, alpha: f64) -> f64 {
    alpha * mse + (1.0 - alpha) * (1.0 - ssim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(n: usize, salt: u64) -> Vec<f64> {
        (0..n as u64).map(|i| (crate::seed::derive(salt, i) >> 11) as f64 / (1u64 << 53) as f64).collect()
    }

    #[test]
    fn identical_volumes_zero_loss() {
        let dims = [9, 8, 7];
        let x = field(504, 1);
        assert_eq!(ssim(&x, &x, dims), 1.0);
        for kind in [LossKind::Mse, LossKind::Ssim, LossKind::Combined] {
            assert_eq!(loss(&x, &x, dims, kind, 0.5), 0.0);
        }
    }

    #[test]
    fn constant_zero_vs_one() {
        let a = vec![0.0; 27];
        let b = vec![1.0; 27];
        assert_eq!(mse(&a, &b), 1.0);
    }

    #[test]
    fn combined_arithmetic() {
        assert!((combine(0.02, 0.9, 0.5) - 0.06).abs() < 1e-15);
    }

    #[test]
    fn ssim_matches_direct_window_enumeration() {
        let dims = [8, 9, 7];
        let x = field(504, 2);
        let y = field(504, 3);
        let w = [7, 7, 7];
        let mut total = 0.0;
        let mut count = 0.0;
        for z0 in 0..=dims[2] - w[2] {
            for y0 in 0..=dims[1] - w[1] {
                for x0 in 0..=dims[0] - w[0] {
                    let mut vals = Vec::new();
                    for z in z0..z0 + 7 {
                        for yy in y0..y0 + 7 {
                            for xx in x0..x0 + 7 {
                                let i = (z * dims[1] + yy) * dims[0] + xx;
                                vals.push((x[i], y[i]));
                            }
                        }
                    }
                    let n = vals.len() as f64;
                    let mx = vals.iter().map(|v| v.0).sum::<f64>() / n;
                    let my = vals.iter().map(|v| v.1).sum::<f64>() / n;
                    let vx = vals.iter().map(|v| (v.0 - mx).powi(2)).sum::<f64>() / n;
                    let vy = vals.iter().map(|v| (v.1 - my).powi(2)).sum::<f64>() / n;
                    let cxy = vals.iter().map(|v| (v.0 - mx) * (v.1 - my)).sum::<f64>() / n;
                    total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1.0;
                }
            }
        }
        assert!((ssim(&x, &y, dims) - total / count).abs() < 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let dims = [8, 8, 8];
        let x = field(512, 4);
        let y = field(512, 5);
        let (_, g) = ssim_with_grad(&x, &y, dims);
        let h = 1e-6;
        for &j in &[0usize, 37, 200, 511] {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (ssim(&xp, &y, dims) - ssim(&xm, &y, dims)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8 * fd.abs().max(1.0), "j={j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let dims = [6, 6, 6];
        let x = field(216, 6);
        let y = field(216, 7);
        let (_, g) = loss_with_grad(&x, &y, dims, LossKind::Combined, 0.5);
        let h = 1e-6;
        for &j in &[1usize, 100, 215] {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (loss(&xp, &y, dims, LossKind::Combined, 0.5) - loss(&xm, &y, dims, LossKind::Combined, 0.5))
                / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn ssim_symmetric(salt in any::<u64>()) {
            let dims = [7, 8, 9];
            let x = field(504, salt);
            let y = field(504, salt ^ 0xABCD);
            prop_assert_eq!(ssim(&x, &y, dims), ssim(&y, &x, dims));
            prop_assert_eq!(ssim(&x, &x, dims), 1.0);
        }
    }
}
