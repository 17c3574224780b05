//! Raw loops behind the differentiable ops.
//!
//! Summation order is fixed by the loop nests below, so results are
//! bitwise reproducible for a given scalar type.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Output positions `o` whose input index `o * stride + tap - pad` lies in `[0, len)`.
    #[inline]
    fn valid(out_len: usize, in_len: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
        // smallest o with o*stride + tap >= pad
        let lo = if tap >= pad { 0 } else { (pad - tap).div_ceil(stride) };
        // largest o with o*stride + tap - pad <= in_len - 1
        let limit = in_len + pad;
        let hi = if tap >= limit {
            0
        } else {
            ((limit - 1 - tap) / stride + 1).min(out_len)
        };
        (lo.min(hi), hi)
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let (hw, ohw, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    for n in 0..g.n {
        for o in 0..g.o {
            let plane = &mut out[(n * g.o + o) * ohw..][..ohw];
            let b = bias.map_or(T::zero(), |b| b[o]);
            plane.iter_mut().for_each(|v| *v = b);
            for c in 0..g.c {
                let input = &x[(n * g.c + c) * hw..][..hw];
                let wk = &w[(o * g.c + c) * kk..][..kk];
                for kh in 0..g.k {
                    let (oy0, oy1) = ConvGeom::valid(g.ho, g.h, g.stride, kh, g.pad);
                    for kw in 0..g.k {
                        let wv = wk[kh * g.k + kw];
                        let (ox0, ox1) = ConvGeom::valid(g.wo, g.w, g.stride, kw, g.pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + kh - g.pad;
                            let orow = &mut plane[oy * g.wo..][..g.wo];
                            let irow = &input[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kw - g.pad;
                                let span = ox1 - ox0;
                                for (ov, &iv) in orow[ox0..ox1].iter_mut().zip(&irow[ix0..ix0 + span]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    orow[ox] += wv * irow[ox * g.stride + kw - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients for a convolution.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let (hw, ohw, kk) = (g.h * g.w, g.ho * g.wo, g.k * g.k);
    for n in 0..g.n {
        for o in 0..g.o {
            let gplane = &gout[(n * g.o + o) * ohw..][..ohw];
            if let Some(gb) = gb.as_deref_mut() {
                let mut s = T::zero();
                for &v in gplane {
                    s += v;
                }
                gb[o] += s;
            }
            for c in 0..g.c {
                let input = &x[(n * g.c + c) * hw..][..hw];
                let wbase = (o * g.c + c) * kk;
                for kh in 0..g.k {
                    let (oy0, oy1) = ConvGeom::valid(g.ho, g.h, g.stride, kh, g.pad);
                    for kw in 0..g.k {
                        let (ox0, ox1) = ConvGeom::valid(g.wo, g.w, g.stride, kw, g.pad);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let wv = w[wbase + kh * g.k + kw];
                        let mut wacc = T::zero();
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + kh - g.pad;
                            let grow = &gplane[oy * g.wo..][..g.wo];
                            let irow = &input[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = ox0 + kw - g.pad;
                                let span = ox1 - ox0;
                                for (&gv, &iv) in grow[ox0..ox1].iter().zip(&irow[ix0..ix0 + span]) {
                                    wacc += gv * iv;
                                }
                                if let Some(gx) = gx.as_deref_mut() {
                                    let gxrow = &mut gx[(n * g.c + c) * hw + iy * g.w..][..g.w];
                                    for (xv, &gv) in gxrow[ix0..ix0 + span].iter_mut().zip(&grow[ox0..ox1]) {
                                        *xv += wv * gv;
                                    }
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    wacc += grow[ox] * irow[ox * g.stride + kw - g.pad];
                                }
                                if let Some(gx) = gx.as_deref_mut() {
                                    let gxrow = &mut gx[(n * g.c + c) * hw + iy * g.w..][..g.w];
                                    for ox in ox0..ox1 {
                                        gxrow[ox * g.stride + kw - g.pad] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[wbase + kh * g.k + kw] += wacc;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, out: &mut [T]) {
    let (w2, hw, ohw) = (w * 2, h * w, h * w * 4);
    for p in 0..planes {
        let src = &x[p * hw..][..hw];
        let dst = &mut out[p * ohw..][..ohw];
        for y in 0..h {
            let srow = &src[y * w..][..w];
            for dy in 0..2 {
                let drow = &mut dst[(2 * y + dy) * w2..][..w2];
                for (xx, &v) in srow.iter().enumerate() {
                    drow[2 * xx] = v;
                    drow[2 * xx + 1] = v;
                }
            }
        }
    }
}

pub(crate) fn upsample2x_backward<T: Scalar>(gout: &[T], planes: usize, h: usize, w: usize, gx: &mut [T]) {
    let (w2, hw, ohw) = (w * 2, h * w, h * w * 4);
    for p in 0..planes {
        let src = &gout[p * ohw..][..ohw];
        let dst = &mut gx[p * hw..][..hw];
        for y in 0..h {
            for xx in 0..w {
                let a = src[2 * y * w2 + 2 * xx] + src[2 * y * w2 + 2 * xx + 1];
                let b = src[(2 * y + 1) * w2 + 2 * xx] + src[(2 * y + 1) * w2 + 2 * xx + 1];
                dst[y * w + xx] += a + b;
            }
        }
    }
}

/// `out[n, o] = bias[o] + sum_d w[o, d] * x[n, d]`
pub(crate) fn linear_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    n: usize,
    d: usize,
    o: usize,
    out: &mut [T],
) {
    for i in 0..n {
        let xi = &x[i * d..][..d];
        for j in 0..o {
            let wj = &w[j * d..][..d];
            let mut s = bias.map_or(T::zero(), |b| b[j]);
            for (&a, &b) in xi.iter().zip(wj) {
                s += a * b;
            }
            out[i * o + j] = s;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    n: usize,
    d: usize,
    o: usize,
    mut gx: Option<&mut [T]>,
    mut gw: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    for i in 0..n {
        let xi = &x[i * d..][..d];
        for j in 0..o {
            let gv = gout[i * o + j];
            if let Some(gb) = gb.as_deref_mut() {
                gb[j] += gv;
            }
            if let Some(gw) = gw.as_deref_mut() {
                for (wv, &a) in gw[j * d..][..d].iter_mut().zip(xi) {
                    *wv += gv * a;
                }
            }
            if let Some(gx) = gx.as_deref_mut() {
                for (xv, &b) in gx[i * d..][..d].iter_mut().zip(&w[j * d..][..d]) {
                    *xv += gv * b;
                }
            }
        }
    }
}
