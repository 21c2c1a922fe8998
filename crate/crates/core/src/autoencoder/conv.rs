//! Stride-2, padding-1, 3³-kernel correlation primitives.
//!
//! A convolution maps a "big" grid to a "small" one with
//! `big = 2·small − 1 + k`. The same geometry read backwards is the
//! transposed convolution. Weights are always laid out
//! `[small_channel][big_channel][kz][ky][kx]`, which matches both the
//! conventional `[out][in]` layout of a convolution and the `[in][out]`
//! layout of a transposed convolution.

pub const KERNEL: usize = 3;
pub const KERNEL_VOL: usize = 27;

/// Output size of a stride-2 padding-1 kernel-3 convolution along one axis.
pub fn conv_out_len(input: usize) -> Option<usize> {
    // floor((in + 2p - k) / s) + 1
    let padded = input + 2;
    if padded < KERNEL {
        return None;
    }
    Some((padded - KERNEL) / 2 + 1)
}

/// Output size of the transposed convolution along one axis.
pub fn conv_transpose_out_len(input: usize, output_padding: usize) -> usize {
    // (in - 1)·s - 2p + k + output_padding
    (input - 1) * 2 + KERNEL - 2 + output_padding
}

#[derive(Debug, Clone, Copy)]
struct AxisRange {
    start: usize,
    end: usize,
}

/// Small-grid indices `s` for which `2s - 1 + k` lands inside `0..big`.
fn valid_range(k: usize, small: usize, big: usize) -> AxisRange {
    let start = if k == 0 { 1 } else { 0 };
    // 2s - 1 + k <= big - 1  =>  s <= (big - k) / 2
    let end = if big >= k { ((big - k) / 2 + 1).min(small) } else { 0 };
    AxisRange { start, end: end.max(start) }
}

#[inline]
fn vol(d: [usize; 3]) -> usize {
    d[0] * d[1] * d[2]
}

/// Unfolds `big` into a `[big_ch·27][small_vol]` column matrix; entries whose
/// source falls in the padding are zero.
fn im2col(big: &[f64], big_ch: usize, big_dims: [usize; 3], small_dims: [usize; 3], col: &mut [f64]) {
    let bv = vol(big_dims);
    let sv = vol(small_dims);
    col.fill(0.0);
    let ranges: [[AxisRange; 3]; 3] =
        std::array::from_fn(|axis| std::array::from_fn(|k| valid_range(k, small_dims[axis], big_dims[axis])));
    for bc in 0..big_ch {
        let inp = &big[bc * bv..(bc + 1) * bv];
        for kz in 0..KERNEL {
            let rz = ranges[2][kz];
            for ky in 0..KERNEL {
                let ry = ranges[1][ky];
                for kx in 0..KERNEL {
                    let rx = ranges[0][kx];
                    let row = bc * KERNEL_VOL + (kz * KERNEL + ky) * KERNEL + kx;
                    let dst = &mut col[row * sv..(row + 1) * sv];
                    for sz in rz.start..rz.end {
                        let bz = 2 * sz + kz - 1;
                        for sy in ry.start..ry.end {
                            let by = 2 * sy + ky - 1;
                            let drow = &mut dst[(sz * small_dims[1] + sy) * small_dims[0]..];
                            let irow = &inp[(bz * big_dims[1] + by) * big_dims[0]..];
                            for sx in rx.start..rx.end {
                                drow[sx] = irow[2 * sx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates a column matrix back onto `big`.
fn col2im(col: &[f64], big: &mut [f64], big_ch: usize, big_dims: [usize; 3], small_dims: [usize; 3]) {
    let bv = vol(big_dims);
    let sv = vol(small_dims);
    let ranges: [[AxisRange; 3]; 3] =
        std::array::from_fn(|axis| std::array::from_fn(|k| valid_range(k, small_dims[axis], big_dims[axis])));
    for bc in 0..big_ch {
        let out = &mut big[bc * bv..(bc + 1) * bv];
        for kz in 0..KERNEL {
            let rz = ranges[2][kz];
            for ky in 0..KERNEL {
                let ry = ranges[1][ky];
                for kx in 0..KERNEL {
                    let rx = ranges[0][kx];
                    let row = bc * KERNEL_VOL + (kz * KERNEL + ky) * KERNEL + kx;
                    let src = &col[row * sv..(row + 1) * sv];
                    for sz in rz.start..rz.end {
                        let bz = 2 * sz + kz - 1;
                        for sy in ry.start..ry.end {
                            let by = 2 * sy + ky - 1;
                            let srow = &src[(sz * small_dims[1] + sy) * small_dims[0]..];
                            let orow = &mut out[(bz * big_dims[1] + by) * big_dims[0]..];
                            for sx in rx.start..rx.end {
                                orow[2 * sx + kx - 1] += srow[sx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix view: element `(i, j)` lives at `i·rs + j·cs`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

/// `c[m×n] = a[m×k]·b[k×n] + beta·c`, with `c` row-major contiguous.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    let last = |v: View<'_>, rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * v.rs + (cols as isize - 1) * v.cs
        }
    };
    assert!((last(a, m, k) as usize) < a.data.len().max(1));
    assert!((last(b, k, n) as usize) < b.data.len().max(1));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every strided access of `a` and `b`
    // inside their slices, and `c` holds at least m·n contiguous elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `small[sc] += Σ_bc Σ_k w[sc][bc][k] · big[bc][2s-1+k]`.
pub fn gather(
    big: &[f64],
    big_ch: usize,
    big_dims: [usize; 3],
    weights: &[f64],
    small: &mut [f64],
    small_ch: usize,
    small_dims: [usize; 3],
) {
    let sv = vol(small_dims);
    debug_assert_eq!(big.len(), big_ch * vol(big_dims));
    debug_assert_eq!(small.len(), small_ch * sv);
    debug_assert_eq!(weights.len(), small_ch * big_ch * KERNEL_VOL);
    let kk = big_ch * KERNEL_VOL;
    let mut col = vec![0.0; kk * sv];
    im2col(big, big_ch, big_dims, small_dims, &mut col);
    gemm(
        small_ch,
        kk,
        sv,
        View { data: weights, rs: kk as isize, cs: 1 },
        View { data: &col, rs: sv as isize, cs: 1 },
        1.0,
        small,
    );
}

/// Adjoint of [`gather`]: `big[bc][2s-1+k] += Σ_sc w[sc][bc][k] · small[sc][s]`.
pub fn scatter(
    small: &[f64],
    small_ch: usize,
    small_dims: [usize; 3],
    weights: &[f64],
    big: &mut [f64],
    big_ch: usize,
    big_dims: [usize; 3],
) {
    let sv = vol(small_dims);
    debug_assert_eq!(big.len(), big_ch * vol(big_dims));
    debug_assert_eq!(small.len(), small_ch * sv);
    let kk = big_ch * KERNEL_VOL;
    let mut col = vec![0.0; kk * sv];
    // col[kk×sv] = wᵀ[kk×sc] · small[sc×sv]
    gemm(
        kk,
        small_ch,
        sv,
        View { data: weights, rs: 1, cs: kk as isize },
        View { data: small, rs: sv as isize, cs: 1 },
        0.0,
        &mut col,
    );
    col2im(&col, big, big_ch, big_dims, small_dims);
}

/// `grad_w[sc][bc][k] += Σ_s small[sc][s] · big[bc][2s-1+k]`.
pub fn weight_grad(
    small: &[f64],
    small_ch: usize,
    small_dims: [usize; 3],
    big: &[f64],
    big_ch: usize,
    big_dims: [usize; 3],
    grad_w: &mut [f64],
) {
    let sv = vol(small_dims);
    let kk = big_ch * KERNEL_VOL;
    let mut col = vec![0.0; kk * sv];
    im2col(big, big_ch, big_dims, small_dims, &mut col);
    // grad_w[sc×kk] += small[sc×sv] · colᵀ[sv×kk]
    gemm(
        small_ch,
        sv,
        kk,
        View { data: small, rs: sv as isize, cs: 1 },
        View { data: &col, rs: 1, cs: sv as isize },
        1.0,
        grad_w,
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 7-loop reference for the strided correlation.
    fn naive_gather(big: &[f64], bc_n: usize, bd: [usize; 3], w: &[f64], sc_n: usize, sd: [usize; 3]) -> Vec<f64> {
        let mut out = vec![0.0; sc_n * vol(sd)];
        for sc in 0..sc_n {
            for sz in 0..sd[2] {
                for sy in 0..sd[1] {
                    for sx in 0..sd[0] {
                        let mut acc = 0.0;
                        for bc in 0..bc_n {
                            for kz in 0..3 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (z, y, x) = (
                                            2 * sz as isize - 1 + kz as isize,
                                            2 * sy as isize - 1 + ky as isize,
                                            2 * sx as isize - 1 + kx as isize,
                                        );
                                        if z < 0 || y < 0 || x < 0 {
                                            continue;
                                        }
                                        let (z, y, x) = (z as usize, y as usize, x as usize);
                                        if z >= bd[2] || y >= bd[1] || x >= bd[0] {
                                            continue;
                                        }
                                        acc += w[((sc * bc_n + bc) * 3 + kz) * 9 + ky * 3 + kx]
                                            * big[bc * vol(bd) + (z * bd[1] + y) * bd[0] + x];
                                    }
                                }
                            }
                        }
                        out[sc * vol(sd) + (sz * sd[1] + sy) * sd[0] + sx] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: u64) -> Vec<f64> {
        (0..n as u64).map(|i| (crate::seed::derive(salt, i) >> 11) as f64 / (1u64 << 53) as f64 - 0.5).collect()
    }

    #[test]
    fn shape_laws() {
        assert_eq!(conv_out_len(121), Some(61));
        assert_eq!(conv_out_len(145), Some(73));
        assert_eq!(conv_out_len(61), Some(31));
        assert_eq!(conv_out_len(31), Some(16));
        assert_eq!(conv_out_len(73), Some(37));
        assert_eq!(conv_out_len(37), Some(19));
        assert_eq!(conv_out_len(32), Some(16));
        assert_eq!(conv_out_len(1), Some(1));
        assert_eq!(conv_transpose_out_len(16, 0), 31);
        assert_eq!(conv_transpose_out_len(61, 0), 121);
        assert_eq!(conv_transpose_out_len(19, 0), 37);
    }

    #[test]
    fn gather_matches_naive() {
        for (bd, bc, sc) in [([5, 4, 3], 2, 3), ([6, 6, 6], 1, 2), ([7, 2, 1], 3, 1)] {
            let sd = bd.map(|d| conv_out_len(d).unwrap());
            let big = pseudo(bc * vol(bd), 1);
            let w = pseudo(sc * bc * 27, 2);
            let mut out = vec![0.0; sc * vol(sd)];
            gather(&big, bc, bd, &w, &mut out, sc, sd);
            let expect = naive_gather(&big, bc, bd, &w, sc, sd);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scatter_is_adjoint_of_gather() {
        // <gather(b), s> == <b, scatter(s)>
        let bd = [7, 5, 4];
        let sd = bd.map(|d| conv_out_len(d).unwrap());
        let (bc, sc) = (2, 3);
        let big = pseudo(bc * vol(bd), 3);
        let small = pseudo(sc * vol(sd), 4);
        let w = pseudo(sc * bc * 27, 5);
        let mut g = vec![0.0; small.len()];
        gather(&big, bc, bd, &w, &mut g, sc, sd);
        let mut s = vec![0.0; big.len()];
        scatter(&small, sc, sd, &w, &mut s, bc, bd);
        let lhs: f64 = g.iter().zip(&small).map(|(a, b)| a * b).sum();
        let rhs: f64 = big.iter().zip(&s).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // weight gradient: d<gather(b;w), s>/dw
        let mut gw = vec![0.0; w.len()];
        weight_grad(&small, sc, sd, &big, bc, bd, &mut gw);
        let mut e = vec![0.0; w.len()];
        e[17] = 1.0;
        let mut ge = vec![0.0; small.len()];
        gather(&big, bc, bd, &e, &mut ge, sc, sd);
        let direct: f64 = ge.iter().zip(&small).map(|(a, b)| a * b).sum();
        assert!((direct - gw[17]).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_samples_strided_positions() {
        let bd = [5, 5, 5];
        let sd = bd.map(|d| conv_out_len(d).unwrap());
        let big = vec![0.7; vol(bd)];
        let mut w = vec![0.0; 27];
        w[13] = 1.0;
        let mut out = vec![0.0; vol(sd)];
        gather(&big, 1, bd, &w, &mut out, 1, sd);
        assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }
}
