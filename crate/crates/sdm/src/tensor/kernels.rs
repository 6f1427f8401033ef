//! Raw compute kernels behind the tensor ops.
//!
//! Every kernel has a sequential implementation; the hot ones (matmul,
//! conv2d, softmax rows) also have a rayon path used when the `parallel`
//! feature is on and the work is large enough to amortize the fork. Parallel
//! kernels only split over disjoint output regions with sequential inner
//! reductions, so results are bit-identical to the sequential path
//! regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work threshold (multiply-accumulates) below which parallel dispatch is
/// never worth the fork overhead.
const PAR_MIN_MACS: usize = 1 << 17;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

fn matmul_nn_row(c_row: &mut [f64], a_row: &[f64], b: &[f64], k: usize, n: usize) {
    for (p, &av) in a_row.iter().enumerate().take(k) {
        let b_row = &b[p * n..p * n + n];
        for (cv, bv) in c_row.iter_mut().zip(b_row) {
            *cv += av * *bv;
        }
    }
}

/// C[m,n] = A[m,k] * B[k,n]
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    #[cfg(feature = "parallel")]
    if m * n * k >= PAR_MIN_MACS && m > 1 {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(c_row, a_row)| matmul_nn_row(c_row, a_row, b, k, n));
        return c;
    }
    matmul_nn_seq_into(&mut c, a, b, m, k, n);
    c
}

/// Sequential matmul, exposed for benchmarking against the parallel path.
pub fn matmul_nn_seq(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_nn_seq_into(&mut c, a, b, m, k, n);
    c
}

fn matmul_nn_seq_into(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        matmul_nn_row(&mut c[i * n..i * n + n], &a[i * k..i * k + k], b, k, n);
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_nn_par(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    c.par_chunks_mut(n)
        .zip(a.par_chunks(k))
        .for_each(|(c_row, a_row)| matmul_nn_row(c_row, a_row, b, k, n));
    c
}

/// C[m,n] = A[m,k] * B[n,k]^T  (dot products of rows)
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    let row = |c_row: &mut [f64], a_row: &[f64]| {
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..j * k + k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv = acc;
        }
    };
    #[cfg(feature = "parallel")]
    if m * n * k >= PAR_MIN_MACS && m > 1 {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(c_row, a_row)| row(c_row, a_row));
        return c;
    }
    for i in 0..m {
        row(&mut c[i * n..i * n + n], &a[i * k..i * k + k]);
    }
    c
}

/// C[k,n] = A[m,k]^T * B[m,n]
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    let row = |c_row: &mut [f64], i: usize| {
        for p in 0..m {
            let av = a[p * k + i];
            let b_row = &b[p * n..p * n + n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * *bv;
            }
        }
    };
    #[cfg(feature = "parallel")]
    if m * n * k >= PAR_MIN_MACS && k > 1 {
        c.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, c_row)| row(c_row, i));
        return c;
    }
    for i in 0..k {
        row(&mut c[i * n..i * n + n], i);
    }
    c
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Output coordinate range [lo, hi) for which `o*stride + tap - pad` lands
/// inside [0, extent).
fn out_range(extent: usize, out_extent: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
    let hi_num = extent as i64 - 1 + pad as i64 - tap as i64;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

#[derive(Clone, Copy)]
pub struct ConvDims {
    pub ci: usize,
    pub h: usize,
    pub w: usize,
    pub co: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn out_hw(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
        let hn = h as i64 + 2 * pad as i64 - kh as i64;
        let wn = w as i64 + 2 * pad as i64 - kw as i64;
        if hn < 0 || wn < 0 {
            return None;
        }
        Some((hn as usize / stride + 1, wn as usize / stride + 1))
    }

    fn macs(&self) -> usize {
        self.co * self.ci * self.kh * self.kw * self.ho * self.wo
    }
}

fn conv2d_one_out_channel(out_plane: &mut [f64], oc: usize, x: &[f64], wgt: &[f64], bias: Option<&[f64]>, d: &ConvDims) {
    let fill = bias.map_or(0.0, |b| b[oc]);
    out_plane.fill(fill);
    for ic in 0..d.ci {
        let x_plane = &x[ic * d.h * d.w..(ic + 1) * d.h * d.w];
        for ky in 0..d.kh {
            let (oylo, oyhi) = out_range(d.h, d.ho, d.stride, ky, d.pad);
            for kx in 0..d.kw {
                let wv = wgt[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx];
                let (oxlo, oxhi) = out_range(d.w, d.wo, d.stride, kx, d.pad);
                if oxlo >= oxhi {
                    continue;
                }
                for oy in oylo..oyhi {
                    let iy = oy * d.stride + ky - d.pad;
                    let orow = &mut out_plane[oy * d.wo..(oy + 1) * d.wo];
                    let xrow = &x_plane[iy * d.w..(iy + 1) * d.w];
                    if d.stride == 1 {
                        let off = oxlo + kx - d.pad;
                        let len = oxhi - oxlo;
                        for (o, xv) in orow[oxlo..oxhi].iter_mut().zip(&xrow[off..off + len]) {
                            *o += wv * *xv;
                        }
                    } else {
                        for ox in oxlo..oxhi {
                            orow[ox] += wv * xrow[ox * d.stride + kx - d.pad];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], wgt: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if d.macs() >= PAR_MIN_MACS && d.co > 1 {
        return conv2d_forward_par(x, wgt, bias, d);
    }
    conv2d_forward_seq(x, wgt, bias, d)
}

pub fn conv2d_forward_seq(x: &[f64], wgt: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.co * d.ho * d.wo];
    for (oc, out_plane) in out.chunks_mut(d.ho * d.wo).enumerate() {
        conv2d_one_out_channel(out_plane, oc, x, wgt, bias, d);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn conv2d_forward_par(x: &[f64], wgt: &[f64], bias: Option<&[f64]>, d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.co * d.ho * d.wo];
    out.par_chunks_mut(d.ho * d.wo)
        .enumerate()
        .for_each(|(oc, out_plane)| conv2d_one_out_channel(out_plane, oc, x, wgt, bias, d));
    out
}

fn conv2d_dx_one_in_channel(dx_plane: &mut [f64], ic: usize, g: &[f64], wgt: &[f64], d: &ConvDims) {
    for oc in 0..d.co {
        let g_plane = &g[oc * d.ho * d.wo..(oc + 1) * d.ho * d.wo];
        for ky in 0..d.kh {
            let (oylo, oyhi) = out_range(d.h, d.ho, d.stride, ky, d.pad);
            for kx in 0..d.kw {
                let wv = wgt[((oc * d.ci + ic) * d.kh + ky) * d.kw + kx];
                let (oxlo, oxhi) = out_range(d.w, d.wo, d.stride, kx, d.pad);
                if oxlo >= oxhi {
                    continue;
                }
                for oy in oylo..oyhi {
                    let iy = oy * d.stride + ky - d.pad;
                    let dxrow = &mut dx_plane[iy * d.w..(iy + 1) * d.w];
                    let grow = &g_plane[oy * d.wo..(oy + 1) * d.wo];
                    if d.stride == 1 {
                        let off = oxlo + kx - d.pad;
                        let len = oxhi - oxlo;
                        for (dv, gv) in dxrow[off..off + len].iter_mut().zip(&grow[oxlo..oxhi]) {
                            *dv += wv * *gv;
                        }
                    } else {
                        for ox in oxlo..oxhi {
                            dxrow[ox * d.stride + kx - d.pad] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient w.r.t. the conv input.
pub fn conv2d_backward_input(g: &[f64], wgt: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut dx = vec![0.0; d.ci * d.h * d.w];
    #[cfg(feature = "parallel")]
    if d.macs() >= PAR_MIN_MACS && d.ci > 1 {
        dx.par_chunks_mut(d.h * d.w)
            .enumerate()
            .for_each(|(ic, dx_plane)| conv2d_dx_one_in_channel(dx_plane, ic, g, wgt, d));
        return dx;
    }
    for (ic, dx_plane) in dx.chunks_mut(d.h * d.w).enumerate() {
        conv2d_dx_one_in_channel(dx_plane, ic, g, wgt, d);
    }
    dx
}

fn conv2d_dw_one_out_channel(dw_slice: &mut [f64], oc: usize, g: &[f64], x: &[f64], d: &ConvDims) {
    let g_plane = &g[oc * d.ho * d.wo..(oc + 1) * d.ho * d.wo];
    for ic in 0..d.ci {
        let x_plane = &x[ic * d.h * d.w..(ic + 1) * d.h * d.w];
        for ky in 0..d.kh {
            let (oylo, oyhi) = out_range(d.h, d.ho, d.stride, ky, d.pad);
            for kx in 0..d.kw {
                let (oxlo, oxhi) = out_range(d.w, d.wo, d.stride, kx, d.pad);
                let mut acc = 0.0;
                if oxlo < oxhi {
                    for oy in oylo..oyhi {
                        let iy = oy * d.stride + ky - d.pad;
                        let grow = &g_plane[oy * d.wo..(oy + 1) * d.wo];
                        let xrow = &x_plane[iy * d.w..(iy + 1) * d.w];
                        if d.stride == 1 {
                            let off = oxlo + kx - d.pad;
                            let len = oxhi - oxlo;
                            for (gv, xv) in grow[oxlo..oxhi].iter().zip(&xrow[off..off + len]) {
                                acc += gv * xv;
                            }
                        } else {
                            for ox in oxlo..oxhi {
                                acc += grow[ox] * xrow[ox * d.stride + kx - d.pad];
                            }
                        }
                    }
                }
                dw_slice[(ic * d.kh + ky) * d.kw + kx] = acc;
            }
        }
    }
}

/// Gradient w.r.t. the conv weights.
pub fn conv2d_backward_weight(g: &[f64], x: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut dw = vec![0.0; d.co * d.ci * d.kh * d.kw];
    let per_oc = d.ci * d.kh * d.kw;
    #[cfg(feature = "parallel")]
    if d.macs() >= PAR_MIN_MACS && d.co > 1 {
        dw.par_chunks_mut(per_oc)
            .enumerate()
            .for_each(|(oc, dw_slice)| conv2d_dw_one_out_channel(dw_slice, oc, g, x, d));
        return dw;
    }
    for (oc, dw_slice) in dw.chunks_mut(per_oc).enumerate() {
        conv2d_dw_one_out_channel(dw_slice, oc, g, x, d);
    }
    dw
}

/// Gradient w.r.t. the conv bias: per-channel sum of the output gradient.
pub fn conv2d_backward_bias(g: &[f64], d: &ConvDims) -> Vec<f64> {
    g.chunks(d.ho * d.wo).map(|p| p.iter().sum()).collect()
}

// ---------------------------------------------------------------------------
// nearest-neighbor upsampling
// ---------------------------------------------------------------------------

pub fn upsample_nearest2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        let xp = &x[ch * h * w..(ch + 1) * h * w];
        let op = &mut out[ch * h2 * w2..(ch + 1) * h2 * w2];
        for y in 0..h2 {
            let xrow = &xp[(y / 2) * w..(y / 2 + 1) * w];
            let orow = &mut op[y * w2..(y + 1) * w2];
            for (x2, ov) in orow.iter_mut().enumerate() {
                *ov = xrow[x2 / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let gp = &g[ch * h2 * w2..(ch + 1) * h2 * w2];
        let dp = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..h2 {
            let grow = &gp[y * w2..(y + 1) * w2];
            let drow = &mut dp[(y / 2) * w..(y / 2 + 1) * w];
            for (x2, gv) in grow.iter().enumerate() {
                drow[x2 / 2] += gv;
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// softmax over trailing dimension
// ---------------------------------------------------------------------------

fn softmax_row(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    #[cfg(feature = "parallel")]
    if x.len() >= PAR_MIN_MACS && x.len() / n > 1 {
        out.par_chunks_mut(n).for_each(softmax_row);
        return out;
    }
    out.chunks_mut(n).for_each(softmax_row);
    out
}

pub fn softmax_rows_seq(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    out.chunks_mut(n).for_each(softmax_row);
    out
}

/// dL/dx for y = softmax(x) by rows: y * (g - <g, y>).
pub fn softmax_backward_rows(y: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dxr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(matmul_nn(&a, &b, 2, 2, 2), vec![19.0, 22.0, 43.0, 50.0]);
        // A * B^T with B stored row-major [n,k]
        assert_eq!(matmul_nt(&a, &b, 2, 2, 2), vec![17.0, 23.0, 39.0, 53.0]);
        // A^T * B
        assert_eq!(matmul_tn(&a, &b, 2, 2, 2), vec![26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn par_matches_seq() {
        let m = 37;
        let k = 53;
        let n = 41;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let seq = matmul_nn_seq(&a, &b, m, k, n);
        let dispatch = matmul_nn(&a, &b, m, k, n);
        assert_eq!(seq, dispatch);
        #[cfg(feature = "parallel")]
        {
            let par = matmul_nn_par(&a, &b, m, k, n);
            for (s, p) in seq.iter().zip(&par) {
                assert_eq!(s.to_bits(), p.to_bits());
            }
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let d = ConvDims { ci: 1, h: 4, w: 4, co: 1, kh: 3, kw: 3, stride: 1, pad: 1, ho: 4, wo: 4 };
        let x: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let mut wgt = vec![0.0; 9];
        wgt[4] = 1.0; // center tap
        let y = conv2d_forward(&x, &wgt, None, &d);
        assert_eq!(x, y);
    }

    #[test]
    fn conv_stride2_shape_and_values() {
        let (ho, wo) = ConvDims::out_hw(4, 4, 3, 3, 2, 1).unwrap();
        assert_eq!((ho, wo), (2, 2));
        let d = ConvDims { ci: 1, h: 4, w: 4, co: 1, kh: 3, kw: 3, stride: 2, pad: 1, ho, wo };
        let x = vec![1.0; 16];
        let wgt = vec![1.0; 9];
        let y = conv2d_forward(&x, &wgt, None, &d);
        // top-left tap center at (0,0): 2x2 of the 3x3 window inside
        assert_eq!(y[0], 4.0);
        // center at (0,2): 2 cols in bounds, 2 rows -> wait 3 cols? window x in {1,2,3}
        assert_eq!(y[1], 6.0);
        assert_eq!(y[2], 6.0);
        assert_eq!(y[3], 9.0);
    }

    #[test]
    fn upsample_roundtrip_shapes() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = upsample_nearest2_forward(&x, 1, 2, 2);
        assert_eq!(y, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]);
        let g = vec![1.0; 16];
        let dx = upsample_nearest2_backward(&g, 1, 2, 2);
        assert_eq!(dx, vec![4.0; 4]);
    }

    #[test]
    fn softmax_uniform_and_sum() {
        let y = softmax_rows(&[0.0, 0.0, 0.0], 3);
        for v in &y {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax_rows(&[1.0, 2.0, 3.0, -5.0, 0.0, 5.0], 3);
        for row in y.chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v >= 0.0));
        }
    }
}
