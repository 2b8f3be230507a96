//! Forward and adjoint kernels for the primitive layers. These operate on
//! plain slices; shape checking happens in [`Graph`](super::Graph).

use super::Scalar;

fn clampi(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Replicate-pad every plane of a `[c, h, w]` buffer by `r` pixels.
pub fn pad_replicate<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    if r == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = vec![T::ZERO; c * ph * pw];
    for ch in 0..c {
        for py in 0..ph {
            let sy = clampi(py as isize - r as isize, h);
            let src = &x[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            let dst = &mut out[(ch * ph + py) * pw..(ch * ph + py + 1) * pw];
            for (px, d) in dst.iter_mut().enumerate() {
                *d = src[clampi(px as isize - r as isize, w)];
            }
        }
    }
    out
}

/// Adjoint of [`pad_replicate`]: fold padded gradients back onto the source.
pub fn unpad_replicate<T: Scalar>(gp: &[T], c: usize, h: usize, w: usize, r: usize) -> Vec<T> {
    if r == 0 {
        return gp.to_vec();
    }
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        for py in 0..ph {
            let sy = clampi(py as isize - r as isize, h);
            for px in 0..pw {
                let sx = clampi(px as isize - r as isize, w);
                out[(ch * h + sy) * w + sx] += gp[(ch * ph + py) * pw + px];
            }
        }
    }
    out
}

pub struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

/// Unfold a padded `[cin, h+2r, w+2r]` buffer into `[cin*k*k, h*w]` patches.
fn im2col<T: Scalar>(xp: &[T], d: &ConvDims) -> Vec<T> {
    let r = d.k / 2;
    let (ph, pw) = (d.h + 2 * r, d.w + 2 * r);
    let hw = d.h * d.w;
    let mut cols = vec![T::ZERO; d.cin * d.k * d.k * hw];
    for ci in 0..d.cin {
        let iplane = &xp[ci * ph * pw..(ci + 1) * ph * pw];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = &mut cols[((ci * d.k + ky) * d.k + kx) * hw..][..hw];
                for y in 0..d.h {
                    row[y * d.w..(y + 1) * d.w].copy_from_slice(&iplane[(y + ky) * pw + kx..][..d.w]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<T: Scalar>(cols: &[T], d: &ConvDims) -> Vec<T> {
    let r = d.k / 2;
    let (ph, pw) = (d.h + 2 * r, d.w + 2 * r);
    let hw = d.h * d.w;
    let mut xp = vec![T::ZERO; d.cin * ph * pw];
    for ci in 0..d.cin {
        let iplane = &mut xp[ci * ph * pw..(ci + 1) * ph * pw];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = &cols[((ci * d.k + ky) * d.k + kx) * hw..][..hw];
                for y in 0..d.h {
                    let dst = &mut iplane[(y + ky) * pw + kx..][..d.w];
                    for (o, &v) in dst.iter_mut().zip(&row[y * d.w..(y + 1) * d.w]) {
                        *o += v;
                    }
                }
            }
        }
    }
    xp
}

/// Stride-1 "same" convolution with replicate padding.
/// `x: [cin, h, w]`, `wt: [cout, cin, k, k]`, `b: [cout]`.
pub fn conv2d<T: Scalar>(x: &[T], wt: &[T], b: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let hw = d.h * d.w;
    let mut out = vec![T::ZERO; d.cout * hw];
    if let Some(b) = b {
        for (co, plane) in out.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
    }
    let kk = d.cin * d.k * d.k;
    if d.k == 1 {
        T::gemm(d.cout, kk, hw, wt, false, x, false, T::ONE, &mut out);
    } else {
        let cols = im2col(&pad_replicate(x, d.cin, d.h, d.w, d.k / 2), d);
        T::gemm(d.cout, kk, hw, wt, false, &cols, false, T::ONE, &mut out);
    }
    out
}

/// Gradients of [`conv2d`]: `(d x, d w, d b)`.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    g: &[T],
    d: &ConvDims,
    need_x: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let hw = d.h * d.w;
    let kk = d.cin * d.k * d.k;
    let gb = g.chunks(hw).map(|p| p.iter().copied().sum()).collect();
    let mut gw = vec![T::ZERO; wt.len()];
    let cols = if d.k == 1 {
        x.to_vec()
    } else {
        im2col(&pad_replicate(x, d.cin, d.h, d.w, d.k / 2), d)
    };
    T::gemm(d.cout, hw, kk, g, false, &cols, true, T::ZERO, &mut gw);
    let gx = need_x.then(|| {
        let mut gcols = vec![T::ZERO; kk * hw];
        T::gemm(kk, d.cout, hw, wt, true, g, false, T::ZERO, &mut gcols);
        if d.k == 1 {
            gcols
        } else {
            unpad_replicate(&col2im(&gcols, d), d.cin, d.h, d.w, d.k / 2)
        }
    });
    (gx, gw, gb)
}

/// Kernel-2 stride-2 transposed convolution.
/// `x: [cin, h, w]`, `wt: [cin, cout, 2, 2]`, output `[cout, 2h, 2w]`.
pub fn conv_transpose2x2<T: Scalar>(x: &[T], wt: &[T], b: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let mut out = vec![T::ZERO; d.cout * oh * ow];
    if let Some(b) = b {
        for co in 0..d.cout {
            out[co * oh * ow..(co + 1) * oh * ow]
                .iter_mut()
                .for_each(|v| *v = b[co]);
        }
    }
    for ci in 0..d.cin {
        let iplane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for co in 0..d.cout {
            for dy in 0..2 {
                for dx in 0..2 {
                    let wv = wt[((ci * d.cout + co) * 2 + dy) * 2 + dx];
                    for y in 0..d.h {
                        let orow = (co * oh + 2 * y + dy) * ow;
                        for xx in 0..d.w {
                            out[orow + 2 * xx + dx] += wv * iplane[y * d.w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward<T: Scalar>(
    x: &[T],
    wt: &[T],
    g: &[T],
    d: &ConvDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (oh, ow) = (2 * d.h, 2 * d.w);
    let mut gx = vec![T::ZERO; x.len()];
    let mut gw = vec![T::ZERO; wt.len()];
    let gb: Vec<T> = (0..d.cout)
        .map(|co| g[co * oh * ow..(co + 1) * oh * ow].iter().copied().sum())
        .collect();
    for ci in 0..d.cin {
        for co in 0..d.cout {
            for dy in 0..2 {
                for dx in 0..2 {
                    let widx = ((ci * d.cout + co) * 2 + dy) * 2 + dx;
                    let wv = wt[widx];
                    let mut acc = T::ZERO;
                    for y in 0..d.h {
                        let orow = (co * oh + 2 * y + dy) * ow;
                        for xx in 0..d.w {
                            let gv = g[orow + 2 * xx + dx];
                            let i = (ci * d.h + y) * d.w + xx;
                            acc += gv * x[i];
                            gx[i] += wv * gv;
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `[m, k] x [k, n]`
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T` for an `[m, n]` matrix.
pub fn transpose<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Separable blur of every plane with replicate borders.
pub fn blur<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![T::ZERO; x.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = T::ZERO;
                for (t, &kv) in taps.iter().enumerate() {
                    acc += kv * x[(ch * h + y) * w + clampi(xx as isize + t as isize - r, w)];
                }
                tmp[(ch * h + y) * w + xx] = acc;
            }
        }
    }
    let mut out = vec![T::ZERO; x.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = T::ZERO;
                for (t, &kv) in taps.iter().enumerate() {
                    acc += kv * tmp[(ch * h + clampi(y as isize + t as isize - r, h)) * w + xx];
                }
                out[(ch * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Adjoint of [`blur`].
pub fn blur_backward<T: Scalar>(g: &[T], c: usize, h: usize, w: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![T::ZERO; g.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let gv = g[(ch * h + y) * w + xx];
                for (t, &kv) in taps.iter().enumerate() {
                    tmp[(ch * h + clampi(y as isize + t as isize - r, h)) * w + xx] += kv * gv;
                }
            }
        }
    }
    let mut out = vec![T::ZERO; g.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let gv = tmp[(ch * h + y) * w + xx];
                for (t, &kv) in taps.iter().enumerate() {
                    out[(ch * h + y) * w + clampi(xx as isize + t as isize - r, w)] += kv * gv;
                }
            }
        }
    }
    out
}
