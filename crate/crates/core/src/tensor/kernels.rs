//! Raw forward/backward loops on flat channels-first buffers.
//!
//! Everything here works on `C×H×W` slices and knows nothing about graphs.

use super::Scalar;

#[inline]
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// `out[o] = Σ_c Σ_k w[o,c,k] · x[c, shifted by k]`, zero padding `k/2`.
pub(crate) fn conv2d<T: Scalar>(
    x: &[T],
    (c_in, h, w): (usize, usize, usize),
    weight: &[T],
    c_out: usize,
    k: usize,
) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); c_out * plane];
    let pad = (k / 2) as isize;
    for o in 0..c_out {
        let dst = &mut out[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let src = &x[c * plane..(c + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = weight[((o * c_in + c) * k + ky) * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    accumulate_shifted(dst, src, h, w, dy, dx, wv);
                }
            }
        }
    }
    out
}

/// `dst[y, x] += wv · src[y + dy, x + dx]` over the in-bounds region.
#[inline]
fn accumulate_shifted<T: Scalar>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    dy: isize,
    dx: isize,
    wv: T,
) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
        for (a, &b) in d.iter_mut().zip(s) {
            *a = *a + wv * b;
        }
    }
}

/// Gradients of [`conv2d`] w.r.t. its input and its weight.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    (c_in, h, w): (usize, usize, usize),
    weight: &[T],
    c_out: usize,
    k: usize,
    grad: &[T],
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let pad = (k / 2) as isize;
    let mut gx = vec![T::zero(); c_in * plane];
    let mut gw = vec![T::zero(); weight.len()];
    for o in 0..c_out {
        let g = &grad[o * plane..(o + 1) * plane];
        for c in 0..c_in {
            let src = &x[c * plane..(c + 1) * plane];
            let gsrc = &mut gx[c * plane..(c + 1) * plane];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let widx = ((o * c_in + c) * k + ky) * k + kx;
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x0 >= x1 {
                        continue;
                    }
                    let wv = weight[widx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let sx0 = (x0 as isize + dx) as usize;
                        let gr = &g[y * w + x0..y * w + x1];
                        let sr = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (&gv, &sv) in gr.iter().zip(sr) {
                            acc = acc + gv * sv;
                        }
                        let gs = &mut gsrc[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (a, &gv) in gs.iter_mut().zip(gr) {
                            *a = *a + wv * gv;
                        }
                    }
                    gw[widx] = gw[widx] + acc;
                }
            }
        }
    }
    (gx, gw)
}

/// One output sample of a half-pixel bilinear resampler: two source taps
/// and the weight of the second one.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-center taps mapping `in_len` samples onto `out_len` samples.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

pub(crate) fn resize_bilinear<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, ay) in ty.iter().enumerate() {
            let fy: T = lit(ay.frac);
            let r0 = &src[ay.lo * w..(ay.lo + 1) * w];
            let r1 = &src[ay.hi * w..(ay.hi + 1) * w];
            for (ox, ax) in tx.iter().enumerate() {
                let fx: T = lit(ax.frac);
                let top = r0[ax.lo] + (r0[ax.hi] - r0[ax.lo]) * fx;
                let bot = r1[ax.lo] + (r1[ax.hi] - r1[ax.lo]) * fx;
                dst[oy * ow + ox] = top + (bot - top) * fy;
            }
        }
    }
    out
}

pub(crate) fn resize_bilinear_backward<T: Scalar>(
    grad: &[T],
    (c, h, w): (usize, usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let g = &grad[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, ay) in ty.iter().enumerate() {
            let fy: T = lit(ay.frac);
            for (ox, ax) in tx.iter().enumerate() {
                let fx: T = lit(ax.frac);
                let gv = g[oy * ow + ox];
                let top = gv * (T::one() - fy);
                let bot = gv * fy;
                dst[ay.lo * w + ax.lo] = dst[ay.lo * w + ax.lo] + top * (T::one() - fx);
                dst[ay.lo * w + ax.hi] = dst[ay.lo * w + ax.hi] + top * fx;
                dst[ay.hi * w + ax.lo] = dst[ay.hi * w + ax.lo] + bot * (T::one() - fx);
                dst[ay.hi * w + ax.hi] = dst[ay.hi * w + ax.hi] + bot * fx;
            }
        }
    }
    gx
}

/// Mean over each cell of a `grid_h × grid_w` partition of every plane.
pub(crate) fn block_mean_pool<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (grid_h, grid_w): (usize, usize),
) -> Vec<T> {
    let (bh, bw) = (h / grid_h, w / grid_w);
    let inv: T = lit(1.0 / (bh * bw) as f64);
    let mut out = vec![T::zero(); c * grid_h * grid_w];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for gy in 0..grid_h {
            for gx in 0..grid_w {
                let mut acc = T::zero();
                for y in gy * bh..(gy + 1) * bh {
                    for &v in &src[y * w + gx * bw..y * w + (gx + 1) * bw] {
                        acc = acc + v;
                    }
                }
                out[(ch * grid_h + gy) * grid_w + gx] = acc * inv;
            }
        }
    }
    out
}

pub(crate) fn block_mean_pool_backward<T: Scalar>(
    grad: &[T],
    (c, h, w): (usize, usize, usize),
    (grid_h, grid_w): (usize, usize),
) -> Vec<T> {
    let (bh, bw) = (h / grid_h, w / grid_w);
    let inv: T = lit(1.0 / (bh * bw) as f64);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                gx[(ch * h + y) * w + x] = grad[(ch * grid_h + y / bh) * grid_w + x / bw] * inv;
            }
        }
    }
    gx
}

/// Softmax over the channel axis, independently at each pixel.
pub(crate) fn softmax_channels<T: Scalar>(x: &[T], (c, h, w): (usize, usize, usize)) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    for p in 0..plane {
        let mut m = T::neg_infinity();
        for ch in 0..c {
            m = m.max(x[ch * plane + p]);
        }
        let mut total = T::zero();
        for ch in 0..c {
            let e = (x[ch * plane + p] - m).exp();
            out[ch * plane + p] = e;
            total = total + e;
        }
        for ch in 0..c {
            out[ch * plane + p] = out[ch * plane + p] / total;
        }
    }
    out
}

pub(crate) fn softmax_channels_backward<T: Scalar>(
    y: &[T],
    grad: &[T],
    (c, h, w): (usize, usize, usize),
) -> Vec<T> {
    let plane = h * w;
    let mut gx = vec![T::zero(); y.len()];
    for p in 0..plane {
        let mut dot = T::zero();
        for ch in 0..c {
            dot = dot + grad[ch * plane + p] * y[ch * plane + p];
        }
        for ch in 0..c {
            let i = ch * plane + p;
            gx[i] = y[i] * (grad[i] - dot);
        }
    }
    gx
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
