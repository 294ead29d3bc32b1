//! Flat-slice compute kernels behind the tape ops.
//!
//! Everything is written so the inner loop runs over contiguous memory and
//! auto-vectorizes. Reductions that need a fixed order keep it: results are
//! bit-identical across calls on the same build.

use super::Scalar;

/// out[m,n] += a[m,k] * b[k,n]
///
/// Rows are processed four at a time so each row of `b` is streamed once
/// per quad instead of once per output row; the j-loops vectorize.
pub fn mm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let quads = m / 4 * 4;
    let mut i = 0;
    while i < quads {
        let (o01, o23) = out[i * n..(i + 4) * n].split_at_mut(2 * n);
        let (o0, o1) = o01.split_at_mut(n);
        let (o2, o3) = o23.split_at_mut(n);
        for p in 0..k {
            let a0 = a[i * k + p];
            let a1 = a[(i + 1) * k + p];
            let a2 = a[(i + 2) * k + p];
            let a3 = a[(i + 3) * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                let bv = brow[j];
                o0[j] += a0 * bv;
                o1[j] += a1 * bv;
                o2[j] += a2 * bv;
                o3[j] += a3 * bv;
            }
        }
        i += 4;
    }
    for i in quads..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[cols, rows] = transpose of a[rows, cols]
pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
}

/// Output spatial size of a convolution/pool window sweep.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Expand one image [C,H,W] into columns [C*kh*kw, ho*wo].
#[allow(clippy::too_many_arguments)]
pub fn im2col<S: Scalar>(
    img: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [S],
) {
    debug_assert_eq!(col.len(), c * kh * kw * ho * wo);
    for col_row in 0..c * kh * kw {
        let kj = col_row % kw;
        let ki = (col_row / kw) % kh;
        let ch = col_row / (kw * kh);
        let src_plane = &img[ch * h * w..(ch + 1) * h * w];
        let dst = &mut col[col_row * ho * wo..(col_row + 1) * ho * wo];
        for oy in 0..ho {
            let iy = (oy * stride + ki) as isize - pad as isize;
            let drow = &mut dst[oy * wo..(oy + 1) * wo];
            if iy < 0 || iy >= h as isize {
                for v in drow.iter_mut() {
                    *v = S::ZERO;
                }
                continue;
            }
            let srow = &src_plane[iy as usize * w..(iy as usize + 1) * w];
            for (ox, v) in drow.iter_mut().enumerate() {
                let ix = (ox * stride + kj) as isize - pad as isize;
                *v = if ix < 0 || ix >= w as isize {
                    S::ZERO
                } else {
                    srow[ix as usize]
                };
            }
        }
    }
}

/// Scatter-add columns [C*kh*kw, ho*wo] back onto an image [C,H,W].
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<S: Scalar>(
    col: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    img: &mut [S],
) {
    debug_assert_eq!(col.len(), c * kh * kw * ho * wo);
    debug_assert_eq!(img.len(), c * h * w);
    for col_row in 0..c * kh * kw {
        let kj = col_row % kw;
        let ki = (col_row / kw) % kh;
        let ch = col_row / (kw * kh);
        let dst_plane = &mut img[ch * h * w..(ch + 1) * h * w];
        let src = &col[col_row * ho * wo..(col_row + 1) * ho * wo];
        for oy in 0..ho {
            let iy = (oy * stride + ki) as isize - pad as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            let drow = &mut dst_plane[iy as usize * w..(iy as usize + 1) * w];
            let srow = &src[oy * wo..(oy + 1) * wo];
            for (ox, &v) in srow.iter().enumerate() {
                let ix = (ox * stride + kj) as isize - pad as isize;
                if ix >= 0 && ix < w as isize {
                    drow[ix as usize] += v;
                }
            }
        }
    }
}
