//! Dense GEMM micro-kernels and im2col packing for the convolution layers.
//!
//! Accumulation order is fixed, so results are bit-deterministic across
//! runs; tile and edge paths may round differently from each other, which
//! only matters against tolerance-based oracles.

/// Rows per register tile.
const MR: usize = 4;
/// Columns per register tile; MR*NR doubles stay in registers.
const NR: usize = 16;
/// Lanes for the split-accumulator dot products in [`gemm_nt`].
const LANES: usize = 8;

/// C += A * B with A m x k, B k x n, C m x n, all row-major.
pub(crate) fn gemm_nn(m: usize, n: usize, kd: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * kd && b.len() >= kd * n && c.len() >= m * n);
    let m_main = m / MR * MR;
    let n_main = n / NR * NR;
    for i0 in (0..m_main).step_by(MR) {
        for j0 in (0..n_main).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for p in 0..kd {
                let brow = &b[p * n + j0..p * n + j0 + NR];
                for (i, row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + i) * kd + p];
                    for (x, &bv) in row.iter_mut().zip(brow) {
                        *x += av * bv;
                    }
                }
            }
            for (i, row) in acc.iter().enumerate() {
                let crow = &mut c[(i0 + i) * n + j0..(i0 + i) * n + j0 + NR];
                for (cv, &x) in crow.iter_mut().zip(row) {
                    *cv += x;
                }
            }
        }
        if n_main < n {
            gemm_nn_edge(i0, i0 + MR, n_main, n, kd, a, b, c);
        }
    }
    if m_main < m {
        gemm_nn_edge(m_main, m, 0, n, kd, a, b, c);
    }
}

/// Scalar axpy fallback for tile edges of [`gemm_nn`]; covers rows
/// [i0, i1) and columns [j0, n) of C.
fn gemm_nn_edge(i0: usize, i1: usize, j0: usize, n: usize, kd: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in i0..i1 {
        for p in 0..kd {
            let av = a[i * kd + p];
            for j in j0..n {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
}

/// C += A * B^T with A m x kd, B n x kd, C m x n, all row-major.
/// Dot products accumulate in LANES split lanes so the reduction
/// vectorizes without changing results between runs.
pub(crate) fn gemm_nt(m: usize, n: usize, kd: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * kd && b.len() >= n * kd && c.len() >= m * n);
    const TI: usize = 2;
    const TJ: usize = 4;
    let m_main = m / TI * TI;
    let n_main = n / TJ * TJ;
    let k_main = kd / LANES * LANES;
    for i0 in (0..m_main).step_by(TI) {
        for j0 in (0..n_main).step_by(TJ) {
            let mut acc = [[[0.0f64; LANES]; TJ]; TI];
            for p0 in (0..k_main).step_by(LANES) {
                for (i, arow) in acc.iter_mut().enumerate() {
                    let av = &a[(i0 + i) * kd + p0..(i0 + i) * kd + p0 + LANES];
                    for (j, lane) in arow.iter_mut().enumerate() {
                        let bv = &b[(j0 + j) * kd + p0..(j0 + j) * kd + p0 + LANES];
                        for l in 0..LANES {
                            lane[l] += av[l] * bv[l];
                        }
                    }
                }
            }
            for (i, arow) in acc.iter_mut().enumerate() {
                for (j, lane) in arow.iter_mut().enumerate() {
                    for p in k_main..kd {
                        lane[0] += a[(i0 + i) * kd + p] * b[(j0 + j) * kd + p];
                    }
                    c[(i0 + i) * n + j0 + j] += lane.iter().sum::<f64>();
                }
            }
        }
        for i in i0..i0 + TI {
            for j in n_main..n {
                c[i * n + j] += dot(&a[i * kd..(i + 1) * kd], &b[j * kd..(j + 1) * kd]);
            }
        }
    }
    for i in m_main..m {
        for j in 0..n {
            c[i * n + j] += dot(&a[i * kd..(i + 1) * kd], &b[j * kd..(j + 1) * kd]);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let main = a.len() / LANES * LANES;
    for p0 in (0..main).step_by(LANES) {
        for l in 0..LANES {
            acc[l] += a[p0 + l] * b[p0 + l];
        }
    }
    for p in main..a.len() {
        acc[0] += a[p] * b[p];
    }
    acc.iter().sum()
}

/// Packs a [cin, h, w] plane into the K x M patch matrix with K =
/// cin*kh*kw and M = ho*wo; out-of-bounds taps become zeros.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    plane: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let m = ho * wo;
    debug_assert_eq!(col.len(), cin * kh * kw * m);
    let mut krow = 0;
    for ic in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let dst_all = &mut col[krow * m..(krow + 1) * m];
                krow += 1;
                for oy in 0..ho {
                    let dst = &mut dst_all[oy * wo..(oy + 1) * wo];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(ic * h + iy as usize) * w..(ic * h + iy as usize + 1) * w];
                    pack_row(dst, src, stride, kx, pad);
                }
            }
        }
    }
}

/// `dst[ox] = src[ox*stride + kx - pad]` with zeros outside the source row.
fn pack_row(dst: &mut [f64], src: &[f64], stride: usize, kx: usize, pad: usize) {
    let w = src.len();
    let wo = dst.len();
    let d = kx as isize - pad as isize;
    let ox0 = ((((-d).max(0) as usize) + stride - 1) / stride).min(wo);
    let ox1 = ((w as isize - 1 - d).div_euclid(stride as isize) + 1).clamp(ox0 as isize, wo as isize) as usize;
    dst[..ox0].fill(0.0);
    dst[ox1..].fill(0.0);
    if ox1 <= ox0 {
        return;
    }
    let s0 = (ox0 as isize * stride as isize + d) as usize;
    if stride == 1 {
        dst[ox0..ox1].copy_from_slice(&src[s0..s0 + (ox1 - ox0)]);
    } else {
        for (j, v) in dst[ox0..ox1].iter_mut().enumerate() {
            *v = src[s0 + j * stride];
        }
    }
}

/// Scatter-adds a K x M patch-matrix gradient back onto the [cin, h, w]
/// input-gradient plane; the adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    col: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    plane: &mut [f64],
) {
    let m = ho * wo;
    let mut krow = 0;
    for ic in 0..cin {
        for ky in 0..kh {
            for kx in 0..kw {
                let src_all = &col[krow * m..(krow + 1) * m];
                krow += 1;
                for oy in 0..ho {
                    let srow = &src_all[oy * wo..(oy + 1) * wo];
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[(ic * h + iy as usize) * w..(ic * h + iy as usize + 1) * w];
                    unpack_row_add(dst, srow, stride, kx, pad);
                }
            }
        }
    }
}

/// `dst[ox*stride + kx - pad] += src[ox]` over in-bounds taps.
fn unpack_row_add(dst: &mut [f64], src: &[f64], stride: usize, kx: usize, pad: usize) {
    let w = dst.len();
    let wo = src.len();
    let d = kx as isize - pad as isize;
    let ox0 = ((((-d).max(0) as usize) + stride - 1) / stride).min(wo);
    let ox1 = ((w as isize - 1 - d).div_euclid(stride as isize) + 1).clamp(ox0 as isize, wo as isize) as usize;
    if ox1 <= ox0 {
        return;
    }
    let s0 = (ox0 as isize * stride as isize + d) as usize;
    if stride == 1 {
        for (o, &v) in dst[s0..s0 + (ox1 - ox0)].iter_mut().zip(&src[ox0..ox1]) {
            *o += v;
        }
    } else {
        for (j, &v) in src[ox0..ox1].iter().enumerate() {
            dst[s0 + j * stride] += v;
        }
    }
}
