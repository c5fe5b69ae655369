//! Frequency- and wavelet-domain transforms, all differentiable.
//!
//! The 2D DFT is orthonormal (1/sqrt(HW) both directions), so Parseval
//! holds and each transform's adjoint is its inverse. Complex spectra
//! travel through the tape as channel-concatenated real tensors:
//! channels [0, c) hold the real parts, [c, 2c) the imaginary parts.
//! `ComplexTensor` is a thin view over that convention.
//!
//! The wavelet side is a stride-2 depthwise 2x2 filter bank initialized
//! to orthonormal Haar. Analysis and synthesis filters are separate
//! parameters; at init synthesis is the adjoint bank, so reconstruction
//! is exact. Nothing re-ties them after training starts.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

// ── FFT kernels ──────────────────────────────────────────────────────────

/// In-place 2D FFT over consecutive h*w planes, unnormalized.
fn fft2_planes<E: Element>(planes: &mut [Complex<E>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<E>::new();
    let row = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let col = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut row_scratch = vec![Complex::new(E::zero(), E::zero()); row.get_inplace_scratch_len()];
    let mut col_scratch = vec![Complex::new(E::zero(), E::zero()); col.get_inplace_scratch_len()];
    let mut colbuf = vec![Complex::new(E::zero(), E::zero()); h];
    let hw = h * w;
    for plane in planes.chunks_exact_mut(hw) {
        for y in 0..h {
            row.process_with_scratch(&mut plane[y * w..(y + 1) * w], &mut row_scratch);
        }
        for x in 0..w {
            for y in 0..h {
                colbuf[y] = plane[y * w + x];
            }
            col.process_with_scratch(&mut colbuf, &mut col_scratch);
            for y in 0..h {
                plane[y * w + x] = colbuf[y];
            }
        }
    }
}

fn ortho_scale<E: Element>(h: usize, w: usize) -> E {
    E::of(1.0 / ((h * w) as f64).sqrt())
}

/// Real (n,c,h,w) -> orthonormal spectrum as (n,2c,h,w) cat layout.
fn k_fft_real_to_cat<E: Element>(x: &[E], s: Shape) -> Vec<E> {
    let hw = s.h * s.w;
    let mut buf: Vec<Complex<E>> =
        x.iter().map(|&v| Complex::new(v, E::zero())).collect();
    fft2_planes(&mut buf, s.h, s.w, false);
    let k = ortho_scale::<E>(s.h, s.w);
    let mut out = vec![E::zero(); 2 * buf.len()];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = (n * s.c + c) * hw;
            let re = ((n * 2 * s.c) + c) * hw;
            let im = ((n * 2 * s.c) + s.c + c) * hw;
            for i in 0..hw {
                out[re + i] = buf[src + i].re * k;
                out[im + i] = buf[src + i].im * k;
            }
        }
    }
    out
}

/// Cat layout (n,2c,h,w) -> complex plane buffer ordered (n, c).
fn cat_to_complex<E: Element>(x: &[E], s: Shape) -> Vec<Complex<E>> {
    let c = s.c / 2;
    let hw = s.h * s.w;
    let mut buf = vec![Complex::new(E::zero(), E::zero()); s.n * c * hw];
    for n in 0..s.n {
        for ch in 0..c {
            let re = ((n * s.c) + ch) * hw;
            let im = ((n * s.c) + c + ch) * hw;
            let dst = (n * c + ch) * hw;
            for i in 0..hw {
                buf[dst + i] = Complex::new(x[re + i], x[im + i]);
            }
        }
    }
    buf
}

/// Transform cat-layout complex channels; returns cat layout again.
fn k_fft_cat_to_cat<E: Element>(x: &[E], s: Shape, inverse: bool) -> Vec<E> {
    let c = s.c / 2;
    let hw = s.h * s.w;
    let mut buf = cat_to_complex(x, s);
    fft2_planes(&mut buf, s.h, s.w, inverse);
    let k = ortho_scale::<E>(s.h, s.w);
    let mut out = vec![E::zero(); x.len()];
    for n in 0..s.n {
        for ch in 0..c {
            let src = (n * c + ch) * hw;
            let re = ((n * s.c) + ch) * hw;
            let im = ((n * s.c) + c + ch) * hw;
            for i in 0..hw {
                out[re + i] = buf[src + i].re * k;
                out[im + i] = buf[src + i].im * k;
            }
        }
    }
    out
}

/// Inverse-transform cat-layout spectrum, keep only the real part (n,c,h,w).
fn k_ifft_cat_to_real<E: Element>(x: &[E], s: Shape) -> Vec<E> {
    let c = s.c / 2;
    let hw = s.h * s.w;
    let mut buf = cat_to_complex(x, s);
    fft2_planes(&mut buf, s.h, s.w, true);
    let k = ortho_scale::<E>(s.h, s.w);
    let mut out = vec![E::zero(); s.n * c * hw];
    for (o, b) in out.iter_mut().zip(&buf) {
        *o = b.re * k;
    }
    out
}

fn even_channels(op: &'static str, s: Shape) -> Result<()> {
    if s.c % 2 != 0 {
        return Err(Error::dim(op, format!("cat spectrum needs even channels, got {s}")));
    }
    Ok(())
}

// ── FFT tape ops ─────────────────────────────────────────────────────────

/// Orthonormal 2D FFT of a real tensor, spectrum in cat layout (c -> 2c).
/// Adjoint: real part of the orthonormal inverse.
pub fn fft2_cat<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    let data = k_fft_real_to_cat(&x.data(), s);
    let os = Shape::new(s.n, 2 * s.c, s.h, s.w);
    Ok(Tensor::from_op(
        data,
        os,
        vec![x.clone()],
        Box::new(move |_ps, g| vec![Some(k_ifft_cat_to_real(g, os))]),
    ))
}

/// Orthonormal inverse FFT keeping both parts (2c -> 2c cat layout).
pub fn ifft2_cat_full<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    even_channels("ifft2_cat_full", s)?;
    let data = k_fft_cat_to_cat(&x.data(), s, true);
    Ok(Tensor::from_op(
        data,
        s,
        vec![x.clone()],
        Box::new(move |_ps, g| vec![Some(k_fft_cat_to_cat(g, s, false))]),
    ))
}

/// Orthonormal forward FFT of a cat-layout complex tensor (2c -> 2c).
pub fn fft2_cat_full<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape();
    even_channels("fft2_cat_full", s)?;
    let data = k_fft_cat_to_cat(&x.data(), s, false);
    Ok(Tensor::from_op(
        data,
        s,
        vec![x.clone()],
        Box::new(move |_ps, g| vec![Some(k_fft_cat_to_cat(g, s, true))]),
    ))
}

// ── Complex view ─────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct ComplexTensor<E: Element> {
    pub real: Tensor<E>,
    pub imag: Tensor<E>,
}

impl<E: Element> ComplexTensor<E> {
    pub fn new(real: Tensor<E>, imag: Tensor<E>) -> Result<ComplexTensor<E>> {
        if real.shape() != imag.shape() {
            return Err(Error::dim(
                "ComplexTensor",
                format!("real {} vs imag {}", real.shape(), imag.shape()),
            ));
        }
        Ok(ComplexTensor { real, imag })
    }

    pub fn shape(&self) -> Shape {
        self.real.shape()
    }

    /// Channel-concatenated (n,2c,h,w) view.
    pub fn to_cat(&self) -> Result<Tensor<E>> {
        Tensor::concat_channels(&[self.real.clone(), self.imag.clone()])
    }

    pub fn from_cat(cat: &Tensor<E>) -> Result<ComplexTensor<E>> {
        let s = cat.shape();
        even_channels("ComplexTensor::from_cat", s)?;
        let c = s.c / 2;
        ComplexTensor::new(cat.narrow_channels(0, c)?, cat.narrow_channels(c, c)?)
    }

    pub fn max_imag_abs(&self) -> f64 {
        self.imag.max_abs().as_f64()
    }
}

/// Orthonormal 2D FFT (full complex spectrum, no Hermitian packing).
pub fn fft2<E: Element>(x: &Tensor<E>) -> Result<ComplexTensor<E>> {
    ComplexTensor::from_cat(&fft2_cat(x)?)
}

/// Orthonormal inverse FFT; returns the real part.
pub fn ifft2<E: Element>(x: &ComplexTensor<E>) -> Result<Tensor<E>> {
    let full = ifft2_cat_full(&x.to_cat()?)?;
    full.narrow_channels(0, x.shape().c)
}

/// Inverse FFT for spectra the caller declares conjugate-symmetric:
/// errors when the imaginary residue exceeds `max_residue`.
pub fn ifft2_checked<E: Element>(x: &ComplexTensor<E>, max_residue: f64) -> Result<Tensor<E>> {
    let full = ifft2_cat_full(&x.to_cat()?)?;
    let c = x.shape().c;
    let residue = full.narrow_channels(c, c)?.max_abs().as_f64();
    if residue > max_residue {
        return Err(Error::NonFinite {
            what: "imaginary residue",
            context: format!("ifft2 of a declared-symmetric spectrum left max|imag| = {residue:.3e}"),
        });
    }
    full.narrow_channels(0, c)
}

// ── Wavelet filter bank ──────────────────────────────────────────────────

pub const BAND_NAMES: [&str; 4] = ["ll", "lh", "hl", "hh"];

/// The four orthonormal Haar kernels, band order [LL, LH, HL, HH].
pub fn haar_kernels() -> [[f64; 4]; 4] {
    [
        [0.5, 0.5, 0.5, 0.5],
        [-0.5, -0.5, 0.5, 0.5],
        [-0.5, 0.5, -0.5, 0.5],
        [0.5, -0.5, -0.5, 0.5],
    ]
}

/// Learnable 2x2 analysis/synthesis filters, one kernel per band shared
/// depthwise across channels. `haar()` yields the fixed (non-trainable)
/// bank used for input pyramids and the loss.
#[derive(Clone, Debug)]
pub struct WaveletFilterBank<E: Element> {
    pub analysis: [Tensor<E>; 4],
    pub synthesis: [Tensor<E>; 4],
}

impl<E: Element> WaveletFilterBank<E> {
    fn build(trainable: bool) -> WaveletFilterBank<E> {
        let shape = Shape::new(1, 1, 2, 2);
        let mk = |k: [f64; 4]| {
            let data: Vec<E> = k.iter().map(|&v| E::of(v)).collect();
            if trainable {
                Tensor::param(data, shape)
            } else {
                Tensor::from_vec(data, shape)
            }
        };
        let kernels = haar_kernels();
        WaveletFilterBank {
            analysis: [mk(kernels[0]), mk(kernels[1]), mk(kernels[2]), mk(kernels[3])],
            synthesis: [mk(kernels[0]), mk(kernels[1]), mk(kernels[2]), mk(kernels[3])],
        }
    }

    /// Fixed orthonormal Haar bank.
    pub fn haar() -> WaveletFilterBank<E> {
        WaveletFilterBank::build(false)
    }

    /// Haar-initialized trainable bank (unconstrained afterwards).
    pub fn haar_learnable() -> WaveletFilterBank<E> {
        WaveletFilterBank::build(true)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for (i, name) in BAND_NAMES.iter().enumerate() {
            out.push((format!("{prefix}.analysis.{name}"), self.analysis[i].clone()));
            out.push((format!("{prefix}.synthesis.{name}"), self.synthesis[i].clone()));
        }
    }
}

/// One decomposition level, each band (n,c,h/2,w/2).
#[derive(Clone, Debug)]
pub struct SubBands<E: Element> {
    pub ll: Tensor<E>,
    pub lh: Tensor<E>,
    pub hl: Tensor<E>,
    pub hh: Tensor<E>,
}

impl<E: Element> SubBands<E> {
    pub fn bands(&self) -> [&Tensor<E>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    /// (n,4c,h/2,w/2) with band-major channel order [LL|LH|HL|HH].
    pub fn to_cat(&self) -> Result<Tensor<E>> {
        Tensor::concat_channels(&[
            self.ll.clone(),
            self.lh.clone(),
            self.hl.clone(),
            self.hh.clone(),
        ])
    }

    pub fn from_cat(cat: &Tensor<E>) -> Result<SubBands<E>> {
        let s = cat.shape();
        if s.c % 4 != 0 {
            return Err(Error::dim(
                "SubBands::from_cat",
                format!("channel count {} not divisible by 4", s.c),
            ));
        }
        let c = s.c / 4;
        let parts = cat.split_channels(&[c, c, c, c])?;
        Ok(SubBands { ll: parts[0].clone(), lh: parts[1].clone(), hl: parts[2].clone(), hh: parts[3].clone() })
    }
}

/// Single-level 2D DWT: four depthwise stride-2 2x2 convolutions.
/// Requires even spatial dims; callers own any pad-to-even policy.
pub fn dwt2<E: Element>(x: &Tensor<E>, bank: &WaveletFilterBank<E>) -> Result<SubBands<E>> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 || s.h == 0 || s.w == 0 {
        return Err(Error::dim(
            "dwt2",
            format!("spatial dims must be even and nonzero, got {}x{}", s.h, s.w),
        ));
    }
    let mut bands = Vec::with_capacity(4);
    for filt in &bank.analysis {
        let w = filt.repeat_rows(s.c)?;
        bands.push(x.conv2d(&w, None, 2, 0, s.c)?);
    }
    Ok(SubBands {
        ll: bands[0].clone(),
        lh: bands[1].clone(),
        hl: bands[2].clone(),
        hh: bands[3].clone(),
    })
}

/// Inverse DWT: sum of depthwise stride-2 transposed convolutions. At
/// Haar init this reconstructs `dwt2` input exactly (orthonormal bank).
pub fn idwt2<E: Element>(bands: &SubBands<E>, bank: &WaveletFilterBank<E>) -> Result<Tensor<E>> {
    let s = bands.ll.shape();
    for (b, name) in bands.bands().iter().zip(BAND_NAMES) {
        if b.shape() != s {
            return Err(Error::dim(
                "idwt2",
                format!("band {name} shape {} differs from ll {}", b.shape(), s),
            ));
        }
    }
    let mut acc: Option<Tensor<E>> = None;
    for (band, filt) in bands.bands().iter().zip(&bank.synthesis) {
        let w = filt.repeat_rows(s.c)?;
        let up = band.conv2d_transpose(&w, 2, s.c)?;
        acc = Some(match acc {
            Some(a) => a.add(&up)?,
            None => up,
        });
    }
    Ok(acc.expect("four bands always produce a sum"))
}

/// Full-band recursive decomposition: level k applies `dwt2` to every
/// channel of level k-1, so channels grow 4x per level losslessly.
pub fn wavelet_pyramid<E: Element>(
    x: &Tensor<E>,
    levels: usize,
    bank: &WaveletFilterBank<E>,
) -> Result<Vec<Tensor<E>>> {
    let mut out = vec![x.clone()];
    for _ in 0..levels {
        let bands = dwt2(out.last().unwrap(), bank)?;
        out.push(bands.to_cat()?);
    }
    Ok(out)
}

/// Inverts `wavelet_pyramid` from level k back to level 0.
pub fn wavelet_reconstruct<E: Element>(
    level_k: &Tensor<E>,
    k: usize,
    bank: &WaveletFilterBank<E>,
) -> Result<Tensor<E>> {
    let mut cur = level_k.clone();
    for _ in 0..k {
        let bands = SubBands::from_cat(&cur)?;
        cur = idwt2(&bands, bank)?;
    }
    Ok(cur)
}
