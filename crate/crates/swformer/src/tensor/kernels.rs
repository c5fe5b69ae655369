//! Raw loop kernels behind the tape ops. No graph bookkeeping here; the
//! callers validate shapes and wire up backward rules.

use super::{Element, Shape};

/// Valid output positions o along one axis: 0 <= o*s + k - pad < in_len.
/// Returns an inclusive range, or None when the tap never lands in-bounds.
#[inline]
fn tap_range(pad: usize, k: usize, s: usize, in_len: usize, out_len: usize) -> Option<(usize, usize)> {
    let lo_num = pad as isize - k as isize;
    let lo = if lo_num <= 0 { 0 } else { (lo_num as usize).div_ceil(s) };
    let hi_num = in_len as isize - 1 + pad as isize - k as isize;
    if hi_num < 0 {
        return None;
    }
    let hi = ((hi_num as usize) / s).min(out_len - 1);
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

pub(crate) fn conv2d_out_shape(
    xs: Shape,
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Option<Shape> {
    let eh = xs.h + 2 * pad;
    let ew = xs.w + 2 * pad;
    if eh < kh || ew < kw || (eh - kh) % stride != 0 || (ew - kw) % stride != 0 {
        return None;
    }
    Some(Shape::new(xs.n, oc, (eh - kh) / stride + 1, (ew - kw) / stride + 1))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<E: Element>(
    x: &[E],
    xs: Shape,
    w: &[E],
    ws: Shape, // (oc, icg, kh, kw)
    bias: Option<&[E]>,
    stride: usize,
    pad: usize,
    groups: usize,
    os: Shape,
) -> Vec<E> {
    let (ic, h, wdt) = (xs.c, xs.h, xs.w);
    let (oc, icg, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    let (oh, ow) = (os.h, os.w);
    let ocg = oc / groups;
    let mut out = vec![E::zero(); os.numel()];

    // Pointwise fast path: a per-group channel matmul over the plane.
    if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
        let plane = h * wdt;
        for n in 0..xs.n {
            for g in 0..groups {
                for oci in 0..ocg {
                    let ocx = g * ocg + oci;
                    let ob = (n * oc + ocx) * plane;
                    if let Some(b) = bias {
                        out[ob..ob + plane].fill(b[ocx]);
                    }
                    for ici in 0..icg {
                        let icx = g * icg + ici;
                        let wv = w[ocx * icg + ici];
                        let xb = (n * ic + icx) * plane;
                        let (xrow, orow) = (&x[xb..xb + plane], &mut out[ob..ob + plane]);
                        for (o, xv) in orow.iter_mut().zip(xrow) {
                            *o = *o + wv * *xv;
                        }
                    }
                }
            }
        }
        return out;
    }

    for n in 0..xs.n {
        for g in 0..groups {
            for oci in 0..ocg {
                let ocx = g * ocg + oci;
                let ob = (n * oc + ocx) * oh * ow;
                if let Some(b) = bias {
                    out[ob..ob + oh * ow].fill(b[ocx]);
                }
                for ici in 0..icg {
                    let icx = g * icg + ici;
                    let xb = (n * ic + icx) * h * wdt;
                    for khi in 0..kh {
                        let Some((olo, ohi)) = tap_range(pad, khi, stride, h, oh) else { continue };
                        for kwi in 0..kw {
                            let Some((wlo, whi)) = tap_range(pad, kwi, stride, wdt, ow) else {
                                continue;
                            };
                            let wv = w[((ocx * icg + ici) * kh + khi) * kw + kwi];
                            for ohx in olo..=ohi {
                                let ih = ohx * stride + khi - pad;
                                let xr = xb + ih * wdt;
                                let or = ob + ohx * ow;
                                if stride == 1 {
                                    let iw0 = wlo + kwi - pad;
                                    let len = whi - wlo + 1;
                                    let (xrow, orow) =
                                        (&x[xr + iw0..xr + iw0 + len], &mut out[or + wlo..or + wlo + len]);
                                    for (o, xv) in orow.iter_mut().zip(xrow) {
                                        *o = *o + wv * *xv;
                                    }
                                } else {
                                    for owx in wlo..=whi {
                                        let iw = owx * stride + kwi - pad;
                                        out[or + owx] = out[or + owx] + wv * x[xr + iw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<E: Element>(
    x: &[E],
    xs: Shape,
    w: &[E],
    ws: Shape,
    gout: &[E],
    os: Shape,
    stride: usize,
    pad: usize,
    groups: usize,
    mut dx: Option<&mut [E]>,
    mut dw: Option<&mut [E]>,
    mut db: Option<&mut [E]>,
) {
    let (ic, h, wdt) = (xs.c, xs.h, xs.w);
    let (oc, icg, kh, kw) = (ws.n, ws.c, ws.h, ws.w);
    let (oh, ow) = (os.h, os.w);
    let ocg = oc / groups;

    if let Some(db) = db.as_deref_mut() {
        for n in 0..xs.n {
            for ocx in 0..oc {
                let gb = (n * oc + ocx) * oh * ow;
                let s: E = gout[gb..gb + oh * ow].iter().copied().sum();
                db[ocx] = db[ocx] + s;
            }
        }
    }
    if dx.is_none() && dw.is_none() {
        return;
    }

    for n in 0..xs.n {
        for g in 0..groups {
            for oci in 0..ocg {
                let ocx = g * ocg + oci;
                let gb = (n * oc + ocx) * oh * ow;
                for ici in 0..icg {
                    let icx = g * icg + ici;
                    let xb = (n * ic + icx) * h * wdt;
                    for khi in 0..kh {
                        let Some((olo, ohi)) = tap_range(pad, khi, stride, h, oh) else { continue };
                        for kwi in 0..kw {
                            let Some((wlo, whi)) = tap_range(pad, kwi, stride, wdt, ow) else {
                                continue;
                            };
                            let widx = ((ocx * icg + ici) * kh + khi) * kw + kwi;
                            let wv = w[widx];
                            let mut wacc = E::zero();
                            for ohx in olo..=ohi {
                                let ih = ohx * stride + khi - pad;
                                let xr = xb + ih * wdt;
                                let gr = gb + ohx * ow;
                                for owx in wlo..=whi {
                                    let iw = owx * stride + kwi - pad;
                                    let gv = gout[gr + owx];
                                    if dw.is_some() {
                                        wacc = wacc + x[xr + iw] * gv;
                                    }
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[xr + iw] = dx[xr + iw] + wv * gv;
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[widx] = dw[widx] + wacc;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed conv output shape; zero padding, `w` laid out (ic, ocg, kh, kw).
pub(crate) fn convt2d_out_shape(xs: Shape, ws: Shape, stride: usize, groups: usize) -> Shape {
    let oc = ws.c * groups;
    Shape::new(xs.n, oc, (xs.h - 1) * stride + ws.h, (xs.w - 1) * stride + ws.w)
}

pub(crate) fn convt2d_forward<E: Element>(
    x: &[E],
    xs: Shape,
    w: &[E],
    ws: Shape, // (ic, ocg, kh, kw)
    stride: usize,
    groups: usize,
    os: Shape,
) -> Vec<E> {
    let (ic, h, wdt) = (xs.c, xs.h, xs.w);
    let (ocg, kh, kw) = (ws.c, ws.h, ws.w);
    let (oc, oh, ow) = (os.c, os.h, os.w);
    let icg = ic / groups;
    let mut out = vec![E::zero(); os.numel()];
    for n in 0..xs.n {
        for g in 0..groups {
            for ici in 0..icg {
                let icx = g * icg + ici;
                let xb = (n * ic + icx) * h * wdt;
                for oci in 0..ocg {
                    let ocx = g * ocg + oci;
                    let ob = (n * oc + ocx) * oh * ow;
                    for khi in 0..kh {
                        for kwi in 0..kw {
                            let wv = w[((icx * ocg + oci) * kh + khi) * kw + kwi];
                            for ih in 0..h {
                                let or = ob + (ih * stride + khi) * ow + kwi;
                                let xr = xb + ih * wdt;
                                for iw in 0..wdt {
                                    out[or + iw * stride] = out[or + iw * stride] + wv * x[xr + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn convt2d_backward<E: Element>(
    x: &[E],
    xs: Shape,
    w: &[E],
    ws: Shape,
    gout: &[E],
    os: Shape,
    stride: usize,
    groups: usize,
    mut dx: Option<&mut [E]>,
    mut dw: Option<&mut [E]>,
) {
    let (ic, h, wdt) = (xs.c, xs.h, xs.w);
    let (ocg, kh, kw) = (ws.c, ws.h, ws.w);
    let (oc, _oh, ow) = (os.c, os.h, os.w);
    let icg = ic / groups;
    for n in 0..xs.n {
        for g in 0..groups {
            for ici in 0..icg {
                let icx = g * icg + ici;
                let xb = (n * ic + icx) * h * wdt;
                for oci in 0..ocg {
                    let ocx = g * ocg + oci;
                    let ob = (n * oc + ocx) * os.h * ow;
                    for khi in 0..kh {
                        for kwi in 0..kw {
                            let widx = ((icx * ocg + oci) * kh + khi) * kw + kwi;
                            let wv = w[widx];
                            let mut wacc = E::zero();
                            for ih in 0..h {
                                let gr = ob + (ih * stride + khi) * ow + kwi;
                                let xr = xb + ih * wdt;
                                for iw in 0..wdt {
                                    let gv = gout[gr + iw * stride];
                                    if dw.is_some() {
                                        wacc = wacc + x[xr + iw] * gv;
                                    }
                                    if let Some(dx) = dx.as_deref_mut() {
                                        dx[xr + iw] = dx[xr + iw] + wv * gv;
                                    }
                                }
                            }
                            if let Some(dw) = dw.as_deref_mut() {
                                dw[widx] = dw[widx] + wacc;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn avg_pool_forward<E: Element>(x: &[E], xs: Shape, f: usize) -> (Vec<E>, Shape) {
    let os = Shape::new(xs.n, xs.c, xs.h / f, xs.w / f);
    let inv = E::of(1.0 / (f * f) as f64);
    let mut out = vec![E::zero(); os.numel()];
    for nc in 0..xs.n * xs.c {
        let xb = nc * xs.h * xs.w;
        let ob = nc * os.h * os.w;
        for ohx in 0..os.h {
            for owx in 0..os.w {
                let mut acc = E::zero();
                for dy in 0..f {
                    let xr = xb + (ohx * f + dy) * xs.w + owx * f;
                    for dx in 0..f {
                        acc = acc + x[xr + dx];
                    }
                }
                out[ob + ohx * os.w + owx] = acc * inv;
            }
        }
    }
    (out, os)
}

pub(crate) fn avg_pool_backward<E: Element>(gout: &[E], xs: Shape, f: usize) -> Vec<E> {
    let os = Shape::new(xs.n, xs.c, xs.h / f, xs.w / f);
    let inv = E::of(1.0 / (f * f) as f64);
    let mut dx = vec![E::zero(); xs.numel()];
    for nc in 0..xs.n * xs.c {
        let xb = nc * xs.h * xs.w;
        let ob = nc * os.h * os.w;
        for ohx in 0..os.h {
            for owx in 0..os.w {
                let g = gout[ob + ohx * os.w + owx] * inv;
                for dy in 0..f {
                    let xr = xb + (ohx * f + dy) * xs.w + owx * f;
                    for ddx in 0..f {
                        dx[xr + ddx] = dx[xr + ddx] + g;
                    }
                }
            }
        }
    }
    dx
}

/// Per-axis bilinear taps with half-pixel centers and edge clamping.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let i0f = src.floor();
            let t = src - i0f;
            let i0 = (i0f as isize).clamp(0, in_len as isize - 1) as usize;
            let i1 = ((i0f as isize + 1).clamp(0, in_len as isize - 1)) as usize;
            (i0, i1, 1.0 - t, t)
        })
        .collect()
}

pub(crate) fn bilinear_forward<E: Element>(x: &[E], xs: Shape, oh: usize, ow: usize) -> Vec<E> {
    let ys = bilinear_taps(xs.h, oh);
    let xs_taps = bilinear_taps(xs.w, ow);
    let mut out = vec![E::zero(); xs.n * xs.c * oh * ow];
    for nc in 0..xs.n * xs.c {
        let xb = nc * xs.h * xs.w;
        let ob = nc * oh * ow;
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in xs_taps.iter().enumerate() {
                let v = x[xb + y0 * xs.w + x0].as_f64() * (wy0 * wx0)
                    + x[xb + y0 * xs.w + x1].as_f64() * (wy0 * wx1)
                    + x[xb + y1 * xs.w + x0].as_f64() * (wy1 * wx0)
                    + x[xb + y1 * xs.w + x1].as_f64() * (wy1 * wx1);
                out[ob + oy * ow + ox] = E::of(v);
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward<E: Element>(gout: &[E], xs: Shape, oh: usize, ow: usize) -> Vec<E> {
    let ys = bilinear_taps(xs.h, oh);
    let xs_taps = bilinear_taps(xs.w, ow);
    let mut dx = vec![E::zero(); xs.numel()];
    for nc in 0..xs.n * xs.c {
        let xb = nc * xs.h * xs.w;
        let ob = nc * oh * ow;
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in xs_taps.iter().enumerate() {
                let g = gout[ob + oy * ow + ox];
                dx[xb + y0 * xs.w + x0] = dx[xb + y0 * xs.w + x0] + g * E::of(wy0 * wx0);
                dx[xb + y0 * xs.w + x1] = dx[xb + y0 * xs.w + x1] + g * E::of(wy0 * wx1);
                dx[xb + y1 * xs.w + x0] = dx[xb + y1 * xs.w + x0] + g * E::of(wy1 * wx0);
                dx[xb + y1 * xs.w + x1] = dx[xb + y1 * xs.w + x1] + g * E::of(wy1 * wx1);
            }
        }
    }
    dx
}

/// (n,c,h,w) -> (n, c*r*r, h/r, w/r); sub-pixel index dy*r+dx varies fastest.
pub(crate) fn pixel_unshuffle<E: Element>(x: &[E], xs: Shape, r: usize) -> (Vec<E>, Shape) {
    let os = Shape::new(xs.n, xs.c * r * r, xs.h / r, xs.w / r);
    let mut out = vec![E::zero(); os.numel()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            for dy in 0..r {
                for dx in 0..r {
                    let ocx = c * r * r + dy * r + dx;
                    for oy in 0..os.h {
                        let xr = xs.idx(n, c, oy * r + dy, dx);
                        let or = os.idx(n, ocx, oy, 0);
                        for ox in 0..os.w {
                            out[or + ox] = x[xr + ox * r];
                        }
                    }
                }
            }
        }
    }
    (out, os)
}

pub(crate) fn pixel_shuffle<E: Element>(x: &[E], xs: Shape, r: usize) -> (Vec<E>, Shape) {
    let os = Shape::new(xs.n, xs.c / (r * r), xs.h * r, xs.w * r);
    let mut out = vec![E::zero(); os.numel()];
    for n in 0..xs.n {
        for oc in 0..os.c {
            for dy in 0..r {
                for dx in 0..r {
                    let icx = oc * r * r + dy * r + dx;
                    for iy in 0..xs.h {
                        let xr = xs.idx(n, icx, iy, 0);
                        let or = os.idx(n, oc, iy * r + dy, dx);
                        for ix in 0..xs.w {
                            out[or + ix * r] = x[xr + ix];
                        }
                    }
                }
            }
        }
    }
    (out, os)
}
