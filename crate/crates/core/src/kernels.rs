//! Raw numeric kernels for the tape ops.
//!
//! All kernels read f32 storage and accumulate in f64, rounding once on
//! write-out. Loops are arranged so the innermost dimension walks contiguous
//! memory; the stride-1 case (the only one the bundled models use) gets a
//! branch-free inner loop.

/// Output positions `o` in `0..out_len` for which `o*stride + k_off - pad`
/// is a valid input index. Returns `(lo, hi, base)` with `base = k_off - pad`.
#[inline]
fn valid_range(
    out_len: usize,
    k_off: usize,
    pad: usize,
    stride: usize,
    in_len: usize,
) -> (usize, usize, isize) {
    let base = k_off as isize - pad as isize;
    let s = stride as isize;
    let lo = if base < 0 {
        (((-base) + s - 1) / s) as usize
    } else {
        0
    };
    let hi_idx = in_len as isize - 1 - base;
    let hi = if hi_idx < 0 {
        0
    } else {
        ((hi_idx / s) as usize + 1).min(out_len)
    };
    (lo.min(out_len), hi.max(lo.min(out_len)), base)
}

pub fn conv2d_out_dim(in_len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (in_len + 2 * pad - kernel) / stride + 1
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    wt: &[f32],
    (co, kh, kw): (usize, usize, usize),
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    out: &mut [f32],
) {
    let ho = conv2d_out_dim(h, kh, stride, pad);
    let wo = conv2d_out_dim(w, kw, stride, pad);
    debug_assert_eq!(out.len(), n * co * ho * wo);
    let mut acc = vec![0f64; ho * wo];
    for img in 0..n {
        for o in 0..co {
            let b = bias.map_or(0.0, |b| b[o] as f64);
            acc.fill(b);
            for c in 0..ci {
                let xplane = &x[(img * ci + c) * h * w..][..h * w];
                for r in 0..kh {
                    let (oh_lo, oh_hi, hbase) = valid_range(ho, r, pad, stride, h);
                    for q in 0..kw {
                        let wv = wt[((o * ci + c) * kh + r) * kw + q] as f64;
                        let (ow_lo, ow_hi, wbase) = valid_range(wo, q, pad, stride, w);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = (oh * stride) as isize + hbase;
                            let xrow = &xplane[ih as usize * w..][..w];
                            let arow = &mut acc[oh * wo..][..wo];
                            if stride == 1 {
                                let lo = (ow_lo as isize + wbase) as usize;
                                let xs = &xrow[lo..lo + (ow_hi - ow_lo)];
                                for (a, &xv) in arow[ow_lo..ow_hi].iter_mut().zip(xs) {
                                    *a += wv * xv as f64;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * stride) as isize + wbase;
                                    arow[ow] += wv * xrow[iw as usize] as f64;
                                }
                            }
                        }
                    }
                }
            }
            let orow = &mut out[(img * co + o) * ho * wo..][..ho * wo];
            for (dst, &a) in orow.iter_mut().zip(acc.iter()) {
                *dst = a as f32;
            }
        }
    }
}

/// Gradient of the conv output w.r.t. its input, accumulated into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    dout: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    wt: &[f32],
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
    dx: &mut [f64],
) {
    let ho = conv2d_out_dim(h, kh, stride, pad);
    let wo = conv2d_out_dim(w, kw, stride, pad);
    debug_assert_eq!(dx.len(), n * ci * h * w);
    for img in 0..n {
        for c in 0..ci {
            let dxplane = &mut dx[(img * ci + c) * h * w..][..h * w];
            for o in 0..co {
                let dplane = &dout[(img * co + o) * ho * wo..][..ho * wo];
                for r in 0..kh {
                    let (oh_lo, oh_hi, hbase) = valid_range(ho, r, pad, stride, h);
                    for q in 0..kw {
                        let wv = wt[((o * ci + c) * kh + r) * kw + q] as f64;
                        let (ow_lo, ow_hi, wbase) = valid_range(wo, q, pad, stride, w);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = (oh * stride) as isize + hbase;
                            let drow = &dplane[oh * wo..][..wo];
                            let dxrow = &mut dxplane[ih as usize * w..][..w];
                            if stride == 1 {
                                let lo = (ow_lo as isize + wbase) as usize;
                                let dst = &mut dxrow[lo..lo + (ow_hi - ow_lo)];
                                for (d, &g) in dst.iter_mut().zip(&drow[ow_lo..ow_hi]) {
                                    *d += wv * g as f64;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * stride) as isize + wbase;
                                    dxrow[iw as usize] += wv * drow[ow] as f64;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of the conv output w.r.t. weights and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_weights(
    dout: &[f32],
    x: &[f32],
    (n, ci, h, w): (usize, usize, usize, usize),
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) {
    let ho = conv2d_out_dim(h, kh, stride, pad);
    let wo = conv2d_out_dim(w, kw, stride, pad);
    debug_assert_eq!(dw.len(), co * ci * kh * kw);
    for img in 0..n {
        for o in 0..co {
            let dplane = &dout[(img * co + o) * ho * wo..][..ho * wo];
            for c in 0..ci {
                let xplane = &x[(img * ci + c) * h * w..][..h * w];
                for r in 0..kh {
                    let (oh_lo, oh_hi, hbase) = valid_range(ho, r, pad, stride, h);
                    for q in 0..kw {
                        let (ow_lo, ow_hi, wbase) = valid_range(wo, q, pad, stride, w);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut acc = 0f64;
                        for oh in oh_lo..oh_hi {
                            let ih = (oh * stride) as isize + hbase;
                            let xrow = &xplane[ih as usize * w..][..w];
                            let drow = &dplane[oh * wo..][..wo];
                            if stride == 1 {
                                let lo = (ow_lo as isize + wbase) as usize;
                                let xs = &xrow[lo..lo + (ow_hi - ow_lo)];
                                for (&g, &xv) in drow[ow_lo..ow_hi].iter().zip(xs) {
                                    acc += g as f64 * xv as f64;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow * stride) as isize + wbase;
                                    acc += drow[ow] as f64 * xrow[iw as usize] as f64;
                                }
                            }
                        }
                        dw[((o * ci + c) * kh + r) * kw + q] += acc;
                    }
                }
            }
        }
    }
    if let Some(db) = db {
        debug_assert_eq!(db.len(), co);
        for img in 0..n {
            for o in 0..co {
                let dplane = &dout[(img * co + o) * ho * wo..][..ho * wo];
                db[o] += dplane.iter().map(|&g| g as f64).sum::<f64>();
            }
        }
    }
}

/// out[m,p] = a[m,k] @ b[k,p]
pub fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), m * p);
    let mut acc = vec![0f64; p];
    for i in 0..m {
        acc.fill(0.0);
        let arow = &a[i * k..][..k];
        for (t, &av) in arow.iter().enumerate() {
            let av = av as f64;
            let brow = &b[t * p..][..p];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += av * bv as f64;
            }
        }
        for (dst, &s) in out[i * p..][..p].iter_mut().zip(acc.iter()) {
            *dst = s as f32;
        }
    }
}

/// out[m,p] += a[m,k] @ b[p,k]^T, written as f64.
pub fn matmul_nt_acc(a: &[f32], b: &[f32], m: usize, k: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * p);
    for i in 0..m {
        let arow = &a[i * k..][..k];
        for j in 0..p {
            let brow = &b[j * k..][..k];
            let mut acc = 0f64;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av as f64 * bv as f64;
            }
            out[i * p + j] += acc;
        }
    }
}

/// out[m,p] += a[n,m]^T @ b[n,p], written as f64.
pub fn matmul_tn_acc(a: &[f32], b: &[f32], n: usize, m: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), m * p);
    for r in 0..n {
        let arow = &a[r * m..][..m];
        let brow = &b[r * p..][..p];
        for (i, &av) in arow.iter().enumerate() {
            let av = av as f64;
            let orow = &mut out[i * p..][..p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv as f64;
            }
        }
    }
}

/// Non-overlapping max pooling; records the flat in-plane argmax of each
/// window (first maximum in row-major scan, so ties go to the lowest index).
pub fn maxpool2d_forward(
    x: &[f32],
    (n, c, h, w): (usize, usize, usize, usize),
    k: usize,
    out: &mut [f32],
    argmax: &mut [u32],
) {
    let ho = h / k;
    let wo = w / k;
    debug_assert_eq!(out.len(), n * c * ho * wo);
    for plane in 0..n * c {
        let xp = &x[plane * h * w..][..h * w];
        let op = &mut out[plane * ho * wo..][..ho * wo];
        let ap = &mut argmax[plane * ho * wo..][..ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut best_idx = 0u32;
                for dy in 0..k {
                    let iy = oh * k + dy;
                    for dx in 0..k {
                        let ix = ow * k + dx;
                        let v = xp[iy * w + ix];
                        if v > best {
                            best = v;
                            best_idx = (iy * w + ix) as u32;
                        }
                    }
                }
                op[oh * wo + ow] = best;
                ap[oh * wo + ow] = best_idx;
            }
        }
    }
}
