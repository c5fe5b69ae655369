//! Differentiable ops. Each method validates shapes, runs a kernel, and
//! records a backward rule. Broadcasting is restricted to singleton axes.

use super::kernels;
use super::{Element, Shape, Tensor};
use crate::error::{Error, Result};

/// Reduction / broadcast axis mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Axes {
    pub n: bool,
    pub c: bool,
    pub h: bool,
    pub w: bool,
}

impl Axes {
    pub const HW: Axes = Axes { n: false, c: false, h: true, w: true };
    pub const NHW: Axes = Axes { n: true, c: false, h: true, w: true };
    pub const ALL: Axes = Axes { n: true, c: true, h: true, w: true };
}

#[inline]
fn strides(s: Shape) -> [usize; 4] {
    [s.c * s.h * s.w, s.h * s.w, s.w, 1]
}

/// Strides for reading `s` as if broadcast to `out`; 0 on expanded axes.
#[inline]
fn bcast_strides(s: Shape, out: Shape) -> [usize; 4] {
    let st = strides(s);
    let (d, o) = (s.dims(), out.dims());
    let mut r = [0usize; 4];
    for i in 0..4 {
        r[i] = if d[i] == o[i] { st[i] } else { 0 };
    }
    r
}

fn broadcast_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    let (da, db) = (a.dims(), b.dims());
    let mut o = [0usize; 4];
    for i in 0..4 {
        o[i] = if da[i] == db[i] || db[i] == 1 {
            da[i]
        } else if da[i] == 1 {
            db[i]
        } else {
            return Err(Error::dim(
                op,
                format!("axis {i} incompatible: lhs {a} vs rhs {b} (non-singleton mismatch)"),
            ));
        };
    }
    Ok(Shape::new(o[0], o[1], o[2], o[3]))
}

/// Sums `g` (shape `from`) down to `to`, which must be `from` with some
/// axes collapsed to 1.
fn reduce_to<E: Element>(g: &[E], from: Shape, to: Shape) -> Vec<E> {
    if from == to {
        return g.to_vec();
    }
    let ts = bcast_strides(to, from);
    let mut out = vec![E::zero(); to.numel()];
    let mut i = 0;
    for n in 0..from.n {
        for c in 0..from.c {
            let base = n * ts[0] + c * ts[1];
            for h in 0..from.h {
                let row = base + h * ts[2];
                for w in 0..from.w {
                    let t = row + w * ts[3];
                    out[t] = out[t] + g[i];
                    i += 1;
                }
            }
        }
    }
    out
}

/// Elementwise combine with broadcast reads.
fn bcast_eval<E: Element>(
    a: &[E],
    ash: Shape,
    b: &[E],
    bsh: Shape,
    osh: Shape,
    f: impl Fn(E, E) -> E,
) -> Vec<E> {
    if ash == bsh {
        return a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect();
    }
    let sa = bcast_strides(ash, osh);
    let sb = bcast_strides(bsh, osh);
    let mut out = Vec::with_capacity(osh.numel());
    for n in 0..osh.n {
        for c in 0..osh.c {
            let (ba, bb) = (n * sa[0] + c * sa[1], n * sb[0] + c * sb[1]);
            for h in 0..osh.h {
                let (ra, rb) = (ba + h * sa[2], bb + h * sb[2]);
                for w in 0..osh.w {
                    out.push(f(a[ra + w * sa[3]], b[rb + w * sb[3]]));
                }
            }
        }
    }
    out
}

/// Backward for broadcast binaries: per-element contributions are mapped
/// through the same strides and summed into each operand's shape.
#[allow(clippy::too_many_arguments)]
fn binary_backward<E: Element>(
    g: &[E],
    osh: Shape,
    a: &[E],
    ash: Shape,
    b: &[E],
    bsh: Shape,
    need_a: bool,
    need_b: bool,
    fa: impl Fn(E, E, E) -> E,
    fb: impl Fn(E, E, E) -> E,
) -> (Option<Vec<E>>, Option<Vec<E>>) {
    let mut da = need_a.then(|| vec![E::zero(); ash.numel()]);
    let mut db = need_b.then(|| vec![E::zero(); bsh.numel()]);
    let sa = bcast_strides(ash, osh);
    let sb = bcast_strides(bsh, osh);
    let mut i = 0;
    for n in 0..osh.n {
        for c in 0..osh.c {
            let (ba, bb) = (n * sa[0] + c * sa[1], n * sb[0] + c * sb[1]);
            for h in 0..osh.h {
                let (ra, rb) = (ba + h * sa[2], bb + h * sb[2]);
                for w in 0..osh.w {
                    let (ia, ib) = (ra + w * sa[3], rb + w * sb[3]);
                    let (gv, av, bv) = (g[i], a[ia], b[ib]);
                    if let Some(da) = da.as_mut() {
                        da[ia] = da[ia] + fa(gv, av, bv);
                    }
                    if let Some(db) = db.as_mut() {
                        db[ib] = db[ib] + fb(gv, av, bv);
                    }
                    i += 1;
                }
            }
        }
    }
    (da, db)
}

macro_rules! binary_op {
    ($name:ident, $op:literal, $fwd:expr, $fa:expr, $fb:expr) => {
        pub fn $name(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
            let osh = broadcast_shape($op, self.shape(), other.shape())?;
            let data = bcast_eval(&self.data(), self.shape(), &other.data(), other.shape(), osh, $fwd);
            Ok(Tensor::from_op(
                data,
                osh,
                vec![self.clone(), other.clone()],
                Box::new(move |ps, g| {
                    let (a, b) = (&ps[0], &ps[1]);
                    let (da, db) = binary_backward(
                        g,
                        osh,
                        &a.data(),
                        a.shape(),
                        &b.data(),
                        b.shape(),
                        a.requires_grad(),
                        b.requires_grad(),
                        $fa,
                        $fb,
                    );
                    vec![da, db]
                }),
            ))
        }
    };
}

impl<E: Element> Tensor<E> {
    binary_op!(add, "add", |a, b| a + b, |g, _a, _b| g, |g, _a, _b| g);
    binary_op!(sub, "sub", |a, b| a - b, |g, _a, _b| g, |g: E, _a, _b| -g);
    binary_op!(mul, "mul", |a, b| a * b, |g: E, _a, b: E| g * b, |g: E, a: E, _b| g * a);
    binary_op!(
        div,
        "div",
        |a, b| a / b,
        |g: E, _a, b: E| g / b,
        |g: E, a: E, b: E| -g * a / (b * b)
    );

    pub fn neg(&self) -> Result<Tensor<E>> {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Result<Tensor<E>> {
        let kv = E::of(k);
        let data = self.data().iter().map(|v| *v * kv).collect();
        Ok(Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |_ps, g| vec![Some(g.iter().map(|v| *v * kv).collect())]),
        ))
    }

    pub fn add_scalar(&self, k: f64) -> Result<Tensor<E>> {
        let kv = E::of(k);
        let data = self.data().iter().map(|v| *v + kv).collect();
        Ok(Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |_ps, g| vec![Some(g.to_vec())]),
        ))
    }

    /// Exact GELU: x * Phi(x) with the erf form.
    pub fn gelu(&self) -> Result<Tensor<E>> {
        let half = E::of(0.5);
        let inv_sqrt2 = E::of(std::f64::consts::FRAC_1_SQRT_2);
        let data = self
            .data()
            .iter()
            .map(|&x| x * half * (E::one() + (x * inv_sqrt2).erf()))
            .collect();
        Ok(Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |ps, g| {
                let inv_sqrt_2pi = E::of(0.3989422804014327);
                let dx = ps[0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| {
                        let phi_cdf = half * (E::one() + (x * inv_sqrt2).erf());
                        let pdf = inv_sqrt_2pi * (-(x * x) * half).exp();
                        gv * (phi_cdf + x * pdf)
                    })
                    .collect();
                vec![Some(dx)]
            }),
        ))
    }

    pub fn sigmoid(&self) -> Result<Tensor<E>> {
        fn sig<E: Element>(x: E) -> E {
            if x >= E::zero() {
                E::one() / (E::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (E::one() + e)
            }
        }
        let data: Vec<E> = self.data().iter().map(|&x| sig(x)).collect();
        let saved = data.clone();
        Ok(Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let dx = saved
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (E::one() - s))
                    .collect();
                vec![Some(dx)]
            }),
        ))
    }

    pub fn sqrt(&self) -> Result<Tensor<E>> {
        let data: Vec<E> = self.data().iter().map(|v| v.sqrt()).collect();
        let saved = data.clone();
        Ok(Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let half = E::of(0.5);
                let dx = saved.iter().zip(g).map(|(&y, &gv)| gv * half / y).collect();
                vec![Some(dx)]
            }),
        ))
    }

    /// |x|; subgradient 0 at the kink.
    pub fn abs(&self) -> Result<Tensor<E>> {
        let data = self.data().iter().map(|v| v.abs()).collect();
        Ok(Tensor::from_op(
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |ps, g| {
                let dx = ps[0]
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| {
                        if x > E::zero() {
                            gv
                        } else if x < E::zero() {
                            -gv
                        } else {
                            E::zero()
                        }
                    })
                    .collect();
                vec![Some(dx)]
            }),
        ))
    }

    /// Mean over the masked axes; reduced axes keep size 1.
    pub fn mean(&self, axes: Axes) -> Result<Tensor<E>> {
        let s = self.shape();
        let osh = Shape::new(
            if axes.n { 1 } else { s.n },
            if axes.c { 1 } else { s.c },
            if axes.h { 1 } else { s.h },
            if axes.w { 1 } else { s.w },
        );
        let count = s.numel() / osh.numel();
        let inv = E::of(1.0 / count as f64);
        let mut data = reduce_to(&self.data(), s, osh);
        for v in data.iter_mut() {
            *v = *v * inv;
        }
        Ok(Tensor::from_op(
            data,
            osh,
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let gs = bcast_strides(osh, s);
                let mut dx = Vec::with_capacity(s.numel());
                for n in 0..s.n {
                    for c in 0..s.c {
                        let b = n * gs[0] + c * gs[1];
                        for h in 0..s.h {
                            let r = b + h * gs[2];
                            for w in 0..s.w {
                                dx.push(g[r + w * gs[3]] * inv);
                            }
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn mean_all(&self) -> Result<Tensor<E>> {
        self.mean(Axes::ALL)
    }

    /// Channel-axis concatenation; all other axes must agree.
    pub fn concat_channels(parts: &[Tensor<E>]) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_channels of an empty list".into()));
        }
        let first = parts[0].shape();
        let mut c_total = 0;
        for p in parts {
            let s = p.shape();
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::dim(
                    "concat_channels",
                    format!("non-channel axes differ: {} vs {}", first, s),
                ));
            }
            c_total += s.c;
        }
        let osh = Shape::new(first.n, c_total, first.h, first.w);
        let plane = first.h * first.w;
        let mut data = vec![E::zero(); osh.numel()];
        let mut c0 = 0;
        for p in parts {
            let pc = p.shape().c;
            let pd = p.data();
            for n in 0..first.n {
                let src = &pd[n * pc * plane..(n + 1) * pc * plane];
                let dst = (n * c_total + c0) * plane;
                data[dst..dst + pc * plane].copy_from_slice(src);
            }
            c0 += pc;
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape().c).collect();
        Ok(Tensor::from_op(
            data,
            osh,
            parts.to_vec(),
            Box::new(move |ps, g| {
                let mut out = Vec::with_capacity(ps.len());
                let mut c0 = 0;
                for (p, &pc) in ps.iter().zip(&sizes) {
                    if p.requires_grad() {
                        let mut dp = vec![E::zero(); p.numel()];
                        for n in 0..osh.n {
                            let src = (n * c_total + c0) * plane;
                            dp[n * pc * plane..(n + 1) * pc * plane]
                                .copy_from_slice(&g[src..src + pc * plane]);
                        }
                        out.push(Some(dp));
                    } else {
                        out.push(None);
                    }
                    c0 += pc;
                }
                out
            }),
        ))
    }

    /// Channel slice [c0, c0+len).
    pub fn narrow_channels(&self, c0: usize, len: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if c0 + len > s.c || len == 0 {
            return Err(Error::dim(
                "narrow_channels",
                format!("slice [{c0}, {}) out of {} channels", c0 + len, s.c),
            ));
        }
        let osh = Shape::new(s.n, len, s.h, s.w);
        let plane = s.h * s.w;
        let mut data = vec![E::zero(); osh.numel()];
        {
            let d = self.data();
            for n in 0..s.n {
                let src = (n * s.c + c0) * plane;
                data[n * len * plane..(n + 1) * len * plane]
                    .copy_from_slice(&d[src..src + len * plane]);
            }
        }
        Ok(Tensor::from_op(
            data,
            osh,
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let mut dx = vec![E::zero(); s.numel()];
                for n in 0..s.n {
                    let dst = (n * s.c + c0) * plane;
                    dx[dst..dst + len * plane]
                        .copy_from_slice(&g[n * len * plane..(n + 1) * len * plane]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Splits channels into consecutive chunks of the given sizes.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor<E>>> {
        let total: usize = sizes.iter().sum();
        if total != self.shape().c {
            return Err(Error::dim(
                "split_channels",
                format!("chunk sizes sum to {total}, tensor has {} channels", self.shape().c),
            ));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut c0 = 0;
        for &len in sizes {
            out.push(self.narrow_channels(c0, len)?);
            c0 += len;
        }
        Ok(out)
    }

    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<E>> {
        let xs = self.shape();
        let ws = weight.shape();
        if groups == 0 || stride == 0 {
            return Err(Error::Usage("conv2d needs stride >= 1 and groups >= 1".into()));
        }
        if xs.c != ws.c * groups {
            return Err(Error::dim(
                "conv2d",
                format!("input channels {} != weight in-per-group {} * groups {groups}", xs.c, ws.c),
            ));
        }
        if ws.n % groups != 0 {
            return Err(Error::dim(
                "conv2d",
                format!("out channels {} not divisible by groups {groups}", ws.n),
            ));
        }
        if let Some(b) = bias {
            if b.numel() != ws.n {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias numel {} != out channels {}", b.numel(), ws.n),
                ));
            }
        }
        let Some(os) = kernels::conv2d_out_shape(xs, ws.n, ws.h, ws.w, stride, padding) else {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input {}x{} with kernel {}x{}, stride {stride}, pad {padding} has no integer output size",
                    xs.h, xs.w, ws.h, ws.w
                ),
            ));
        };
        let data = kernels::conv2d_forward(
            &self.data(),
            xs,
            &weight.data(),
            ws,
            bias.map(|b| b.to_vec()).as_deref(),
            stride,
            padding,
            groups,
            os,
        );
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            data,
            os,
            parents,
            Box::new(move |ps, g| {
                let (x, w) = (&ps[0], &ps[1]);
                let mut dx = x.requires_grad().then(|| vec![E::zero(); xs.numel()]);
                let mut dw = w.requires_grad().then(|| vec![E::zero(); ws.numel()]);
                let mut db = ps
                    .get(2)
                    .filter(|b| b.requires_grad())
                    .map(|b| vec![E::zero(); b.numel()]);
                kernels::conv2d_backward(
                    &x.data(),
                    xs,
                    &w.data(),
                    ws,
                    g,
                    os,
                    stride,
                    padding,
                    groups,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                let mut out = vec![dx, dw];
                if ps.len() == 3 {
                    out.push(db);
                }
                out
            }),
        ))
    }

    /// Transposed conv (zero pad). Weight layout (in_c, out_c/groups, kh, kw)
    /// makes it the exact adjoint of `conv2d` with the same weight tensor.
    pub fn conv2d_transpose(
        &self,
        weight: &Tensor<E>,
        stride: usize,
        groups: usize,
    ) -> Result<Tensor<E>> {
        let xs = self.shape();
        let ws = weight.shape();
        if groups == 0 || stride == 0 {
            return Err(Error::Usage("conv2d_transpose needs stride >= 1 and groups >= 1".into()));
        }
        if xs.c != ws.n || xs.c % groups != 0 {
            return Err(Error::dim(
                "conv2d_transpose",
                format!("input channels {} must equal weight rows {} and divide groups {groups}", xs.c, ws.n),
            ));
        }
        let os = kernels::convt2d_out_shape(xs, ws, stride, groups);
        let data =
            kernels::convt2d_forward(&self.data(), xs, &weight.data(), ws, stride, groups, os);
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone(), weight.clone()],
            Box::new(move |ps, g| {
                let (x, w) = (&ps[0], &ps[1]);
                let mut dx = x.requires_grad().then(|| vec![E::zero(); xs.numel()]);
                let mut dw = w.requires_grad().then(|| vec![E::zero(); ws.numel()]);
                kernels::convt2d_backward(
                    &x.data(),
                    xs,
                    &w.data(),
                    ws,
                    g,
                    os,
                    stride,
                    groups,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                vec![dx, dw]
            }),
        ))
    }

    pub fn avg_pool(&self, factor: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if factor == 0 || s.h % factor != 0 || s.w % factor != 0 {
            return Err(Error::dim(
                "avg_pool",
                format!("spatial {}x{} not divisible by factor {factor}", s.h, s.w),
            ));
        }
        let (data, os) = kernels::avg_pool_forward(&self.data(), s, factor);
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| vec![Some(kernels::avg_pool_backward(g, s, factor))]),
        ))
    }

    pub fn bilinear_resize(&self, oh: usize, ow: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if oh == 0 || ow == 0 {
            return Err(Error::Usage("bilinear_resize to an empty size".into()));
        }
        let data = kernels::bilinear_forward(&self.data(), s, oh, ow);
        let os = Shape::new(s.n, s.c, oh, ow);
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| vec![Some(kernels::bilinear_backward(g, s, oh, ow))]),
        ))
    }

    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if r == 0 || s.h % r != 0 || s.w % r != 0 {
            return Err(Error::dim(
                "pixel_unshuffle",
                format!("spatial {}x{} not divisible by r={r}", s.h, s.w),
            ));
        }
        let (data, os) = kernels::pixel_unshuffle(&self.data(), s, r);
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| vec![Some(kernels::pixel_shuffle(g, os, r).0)]),
        ))
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if r == 0 || s.c % (r * r) != 0 {
            return Err(Error::dim(
                "pixel_shuffle",
                format!("channels {} not divisible by r*r={}", s.c, r * r),
            ));
        }
        let (data, os) = kernels::pixel_shuffle(&self.data(), s, r);
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| vec![Some(kernels::pixel_unshuffle(g, os, r).0)]),
        ))
    }

    /// Reflect-pads spatial edges (mirror without repeating the edge
    /// sample). Indices fold with period 2(len-1), so pads wider than
    /// the axis keep bouncing; a length-1 axis replicates its sample.
    pub fn pad_reflect4(
        &self,
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    ) -> Result<Tensor<E>> {
        let s = self.shape();
        let os = Shape::new(s.n, s.c, s.h + top + bottom, s.w + left + right);
        let reflect = move |i: usize, pad: usize, len: usize| {
            if len == 1 {
                return 0;
            }
            let period = 2 * (len as isize - 1);
            let mut v = (i as isize - pad as isize).rem_euclid(period);
            if v >= len as isize {
                v = period - v;
            }
            v as usize
        };
        let mut data = Vec::with_capacity(os.numel());
        {
            let d = self.data();
            for nc in 0..s.n * s.c {
                let b = nc * s.h * s.w;
                for y in 0..os.h {
                    let ry = reflect(y, top, s.h);
                    for x in 0..os.w {
                        data.push(d[b + ry * s.w + reflect(x, left, s.w)]);
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let mut dx = vec![E::zero(); s.numel()];
                let mut i = 0;
                for nc in 0..s.n * s.c {
                    let b = nc * s.h * s.w;
                    for y in 0..os.h {
                        let ry = reflect(y, top, s.h);
                        for x in 0..os.w {
                            let t = b + ry * s.w + reflect(x, left, s.w);
                            dx[t] = dx[t] + g[i];
                            i += 1;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Bottom/right reflect pad, used to round odd dims up to even.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Result<Tensor<E>> {
        self.pad_reflect4(0, bottom, 0, right)
    }

    /// Top-left anchored spatial crop.
    pub fn crop(&self, nh: usize, nw: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if nh > s.h || nw > s.w || nh == 0 || nw == 0 {
            return Err(Error::dim(
                "crop",
                format!("crop to {nh}x{nw} from {}x{}", s.h, s.w),
            ));
        }
        let os = Shape::new(s.n, s.c, nh, nw);
        let mut data = Vec::with_capacity(os.numel());
        {
            let d = self.data();
            for nc in 0..s.n * s.c {
                let b = nc * s.h * s.w;
                for y in 0..nh {
                    data.extend_from_slice(&d[b + y * s.w..b + y * s.w + nw]);
                }
            }
        }
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let mut dx = vec![E::zero(); s.numel()];
                for nc in 0..s.n * s.c {
                    let b = nc * s.h * s.w;
                    let gb = nc * nh * nw;
                    for y in 0..nh {
                        dx[b + y * s.w..b + y * s.w + nw]
                            .copy_from_slice(&g[gb + y * nw..gb + (y + 1) * nw]);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Tiles a (1,1,kh,kw) filter to (c,1,kh,kw): one learnable kernel
    /// shared depthwise across channels.
    pub fn repeat_rows(&self, c: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.n != 1 {
            return Err(Error::dim("repeat_rows", format!("expected leading axis 1, got {s}")));
        }
        let os = Shape::new(c, s.c, s.h, s.w);
        let block = s.numel();
        let d = self.to_vec();
        let mut data = Vec::with_capacity(block * c);
        for _ in 0..c {
            data.extend_from_slice(&d);
        }
        Ok(Tensor::from_op(
            data,
            os,
            vec![self.clone()],
            Box::new(move |_ps, g| {
                let mut dx = vec![E::zero(); block];
                for rep in 0..c {
                    for i in 0..block {
                        dx[i] = dx[i] + g[rep * block + i];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }
}

/// Batch norm over (n,h,w) per channel. `gamma`, `beta`, `running_mean`,
/// `running_var` are (1,c,1,1). In training mode the batch statistics are
/// differentiated through and the running stats are updated in place
/// (unbiased variance, PyTorch-style momentum); in eval mode the running
/// stats act as constants.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d<E: Element>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &Tensor<E>,
    running_var: &Tensor<E>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<E>> {
    let c = x.shape().c;
    for (name, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running_mean", running_mean),
        ("running_var", running_var),
    ] {
        let s = t.shape();
        if s.dims() != [1, c, 1, 1] {
            return Err(Error::dim(
                "batchnorm2d",
                format!("{name} must be 1x{c}x1x1, got {s}"),
            ));
        }
    }
    if training {
        let mu = x.mean(Axes::NHW)?;
        let xc = x.sub(&mu)?;
        let var = xc.mul(&xc)?.mean(Axes::NHW)?;
        let y = xc.div(&var.add_scalar(eps)?.sqrt()?)?.mul(gamma)?.add(beta)?;

        let m = (x.numel() / c) as f64;
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        let (muv, varv) = (mu.to_vec(), var.to_vec());
        let km = E::of(momentum);
        let kk = E::of(1.0 - momentum);
        {
            let mut rm = running_mean.data().clone();
            for (r, b) in rm.iter_mut().zip(&muv) {
                *r = kk * *r + km * *b;
            }
            running_mean.set_data(&rm);
            let mut rv = running_var.data().clone();
            for (r, b) in rv.iter_mut().zip(&varv) {
                *r = kk * *r + km * (*b * E::of(unbias));
            }
            running_var.set_data(&rv);
        }
        Ok(y)
    } else {
        x.sub(running_mean)?
            .div(&running_var.add_scalar(eps)?.sqrt()?)?
            .mul(gamma)?
            .add(beta)
    }
}
