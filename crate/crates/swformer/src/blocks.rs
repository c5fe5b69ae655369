//! Block-level modules: the spatial-wavelet-Fourier token mixer, the
//! multi-scale feed-forward network, and the residual block stacking
//! them behind per-channel layer norms.
//!
//! Channel budget inside a mixer is allocated in units of the block
//! width C: expansion produces 4 units, split [1 spatial | 1 wavelet |
//! 2 fourier] by default. Disabling a branch (ablations) hands its
//! units to the remaining branches round-robin in the order
//! [spatial, wavelet, fourier]; the fourier branch only ever takes an
//! even number of units because it halves them into a complex pair.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{batchnorm2d, Axes};
use crate::tensor::{Element, Shape, Tensor};
use crate::transforms::{dwt2, fft2_cat, idwt2, ifft2_cat_full, SubBands, WaveletFilterBank};

// ── Conv wrapper ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror padding; keeps constant inputs constant through 3x3 taps.
    Reflect,
}

#[derive(Clone, Debug)]
pub struct Conv2d<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub pad_mode: PadMode,
}

impl<E: Element> Conv2d<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        groups: usize,
        pad_mode: PadMode,
        bias: bool,
    ) -> Conv2d<E> {
        assert!(in_c % groups == 0 && out_c % groups == 0, "conv channels must divide groups");
        let icg = in_c / groups;
        let bound = 1.0 / ((icg * k * k) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<E> {
            (0..n).map(|_| E::of(rng.random_range(-bound..bound))).collect()
        };
        let weight = Tensor::param(draw(out_c * icg * k * k), Shape::new(out_c, icg, k, k));
        let bias = bias.then(|| Tensor::param(draw(out_c), Shape::new(1, out_c, 1, 1)));
        Conv2d { weight, bias, stride, pad, groups, pad_mode }
    }

    /// 1x1 projection.
    pub fn pw(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize) -> Conv2d<E> {
        Conv2d::new(rng, in_c, out_c, 1, 1, 0, 1, PadMode::Zero, true)
    }

    /// Depthwise 3x3 with reflect padding.
    pub fn dw3(rng: &mut ChaCha8Rng, c: usize) -> Conv2d<E> {
        Conv2d::new(rng, c, c, 3, 1, 1, c, PadMode::Reflect, true)
    }

    /// Dense 3x3 with reflect padding (encoder/decoder layers).
    pub fn k3(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize) -> Conv2d<E> {
        Conv2d::new(rng, in_c, out_c, 3, 1, 1, 1, PadMode::Reflect, true)
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        match (self.pad_mode, self.pad) {
            (PadMode::Reflect, p) if p > 0 => x
                .pad_reflect4(p, p, p, p)?
                .conv2d(&self.weight, self.bias.as_ref(), self.stride, 0, self.groups),
            _ => x.conv2d(&self.weight, self.bias.as_ref(), self.stride, self.pad, self.groups),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    /// Zeroes weight and bias; used for residual heads and identity tests.
    pub fn zero_init(&self) {
        self.weight.set_data(&vec![E::zero(); self.weight.numel()]);
        if let Some(b) = &self.bias {
            b.set_data(&vec![E::zero(); b.numel()]);
        }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

// ── Norms ────────────────────────────────────────────────────────────────

/// Per-channel layer norm: each (sample, channel) plane is normalized
/// over its own (h, w) statistics, then scaled/shifted per channel.
#[derive(Clone, Debug)]
pub struct ChannelNorm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub eps: f64,
}

impl<E: Element> ChannelNorm<E> {
    pub fn new(c: usize, eps: f64) -> ChannelNorm<E> {
        ChannelNorm {
            gamma: Tensor::param(vec![E::one(); c], Shape::new(1, c, 1, 1)),
            beta: Tensor::param(vec![E::zero(); c], Shape::new(1, c, 1, 1)),
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let mu = x.mean(Axes::HW)?;
        let xc = x.sub(&mu)?;
        let var = xc.mul(&xc)?.mean(Axes::HW)?;
        xc.div(&var.add_scalar(self.eps)?.sqrt()?)?.mul(&self.gamma)?.add(&self.beta)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub momentum: f64,
    pub eps: f64,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(c: usize, momentum: f64, eps: f64) -> BatchNorm2d<E> {
        BatchNorm2d {
            gamma: Tensor::param(vec![E::one(); c], Shape::new(1, c, 1, 1)),
            beta: Tensor::param(vec![E::zero(); c], Shape::new(1, c, 1, 1)),
            running_mean: Tensor::from_vec(vec![E::zero(); c], Shape::new(1, c, 1, 1)),
            running_var: Tensor::from_vec(vec![E::one(); c], Shape::new(1, c, 1, 1)),
            momentum,
            eps,
        }
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        batchnorm2d(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            training,
            self.momentum,
            self.eps,
        )
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    pub fn named_stats(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }
}

// ── Branch allocation ────────────────────────────────────────────────────

/// Channel units (multiples of C) granted to each mixer branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchAlloc {
    pub spatial: usize,
    pub wavelet: usize,
    pub fourier: usize,
}

impl BranchAlloc {
    pub const TOTAL_UNITS: usize = 4;

    /// Output units after each branch's internal width change (the
    /// fourier branch folds its complex pair back to half width).
    pub fn out_units(&self) -> usize {
        self.spatial + self.wavelet + self.fourier / 2
    }
}

pub fn branch_alloc(spatial: bool, wavelet: bool, fourier: bool) -> Result<BranchAlloc> {
    if !(spatial || wavelet || fourier) {
        return Err(Error::Config("all mixer branches disabled".into()));
    }
    let mut a = BranchAlloc {
        spatial: spatial as usize,
        wavelet: wavelet as usize,
        fourier: if fourier { 2 } else { 0 },
    };
    let mut free = BranchAlloc::TOTAL_UNITS - (a.spatial + a.wavelet + a.fourier);
    while free > 0 {
        let before = free;
        if spatial && free > 0 {
            a.spatial += 1;
            free -= 1;
        }
        if wavelet && free > 0 {
            a.wavelet += 1;
            free -= 1;
        }
        if fourier && free >= 2 {
            a.fourier += 2;
            free -= 2;
        }
        assert!(free < before, "allocation must make progress");
    }
    Ok(a)
}

// ── Branches ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct SpatialBranch<E: Element> {
    pub dw: Conv2d<E>,
}

impl<E: Element> SpatialBranch<E> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> SpatialBranch<E> {
        SpatialBranch { dw: Conv2d::dw3(rng, c) }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.dw.forward(x)?.gelu()
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.dw.named_params(&format!("{prefix}.dw"), out);
    }
}

/// Decompose -> filter all four sub-bands jointly -> reconstruct.
/// Odd spatial dims are reflect-padded to even and cropped back.
#[derive(Clone, Debug)]
pub struct WaveletBranch<E: Element> {
    pub bank: WaveletFilterBank<E>,
    pub dw: Conv2d<E>,
    /// Test-only escape hatch: skips the GELU so the branch is linear.
    pub linear_test_mode: bool,
}

impl<E: Element> WaveletBranch<E> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> WaveletBranch<E> {
        WaveletBranch {
            bank: WaveletFilterBank::haar_learnable(),
            dw: Conv2d::dw3(rng, 4 * c),
            linear_test_mode: false,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let s = x.shape();
        let (pb, pr) = (s.h % 2, s.w % 2);
        let xp = if pb + pr > 0 { x.pad_reflect(pb, pr)? } else { x.clone() };
        let cat = dwt2(&xp, &self.bank)?.to_cat()?;
        let y = self.dw.forward(&cat)?;
        let y = if self.linear_test_mode { y } else { y.gelu()? };
        let rec = idwt2(&SubBands::from_cat(&y)?, &self.bank)?;
        if pb + pr > 0 {
            rec.crop(s.h, s.w)
        } else {
            Ok(rec)
        }
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.bank.named_params(&format!("{prefix}.bank"), out);
        self.dw.named_params(&format!("{prefix}.dw"), out);
    }
}

/// Spectral filter (BN->pw->GELU) gated by a spectral sigmoid gate
/// (BN->pw->sigmoid), both acting on channel-concatenated real/imag
/// spectra. `literal_product` drops both processing paths and multiplies
/// the two raw spectra instead.
#[derive(Clone, Debug)]
pub struct FourierBranch<E: Element> {
    pub pre: Conv2d<E>,
    paths: Option<FourierPaths<E>>,
    pub reduce: Conv2d<E>,
    /// Test-only: gate saturated to 1 (as if the gate bias went to +inf).
    pub gate_open_test: bool,
    /// Test-only: filter path passes the raw spectrum through.
    pub fd_identity_test: bool,
}

#[derive(Clone, Debug)]
struct FourierPaths<E: Element> {
    bn_fd: BatchNorm2d<E>,
    pw_fd: Conv2d<E>,
    bn_ga: BatchNorm2d<E>,
    pw_ga: Conv2d<E>,
}

impl<E: Element> FourierBranch<E> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        c2: usize,
        literal_product: bool,
        bn_momentum: f64,
        bn_eps: f64,
    ) -> FourierBranch<E> {
        assert!(c2 % 2 == 0, "fourier branch width must be even");
        let paths = (!literal_product).then(|| FourierPaths {
            bn_fd: BatchNorm2d::new(c2, bn_momentum, bn_eps),
            pw_fd: Conv2d::pw(rng, c2, c2),
            bn_ga: BatchNorm2d::new(c2, bn_momentum, bn_eps),
            pw_ga: Conv2d::pw(rng, c2, c2),
        });
        FourierBranch {
            pre: Conv2d::pw(rng, c2, c2),
            paths,
            reduce: Conv2d::pw(rng, c2, c2 / 2),
            gate_open_test: false,
            fd_identity_test: false,
        }
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let half = x.shape().c / 2;
        let e = self.pre.forward(x)?;
        let parts = e.split_channels(&[half, half])?;
        let s1 = fft2_cat(&parts[0])?;
        let s2 = fft2_cat(&parts[1])?;
        let fd = match (&self.paths, self.fd_identity_test) {
            (Some(p), false) => p.pw_fd.forward(&p.bn_fd.forward(&s1, training)?)?.gelu()?,
            _ => s1,
        };
        let gated = if self.gate_open_test {
            fd
        } else {
            let ga = match &self.paths {
                Some(p) => p.pw_ga.forward(&p.bn_ga.forward(&s2, training)?)?.sigmoid()?,
                None => s2,
            };
            fd.mul(&ga)?
        };
        self.reduce.forward(&ifft2_cat_full(&gated)?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.pre.named_params(&format!("{prefix}.pre"), out);
        if let Some(p) = &self.paths {
            p.bn_fd.named_params(&format!("{prefix}.bn_fd"), out);
            p.pw_fd.named_params(&format!("{prefix}.pw_fd"), out);
            p.bn_ga.named_params(&format!("{prefix}.bn_ga"), out);
            p.pw_ga.named_params(&format!("{prefix}.pw_ga"), out);
        }
        self.reduce.named_params(&format!("{prefix}.reduce"), out);
    }

    pub fn named_stats(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        if let Some(p) = &self.paths {
            p.bn_fd.named_stats(&format!("{prefix}.bn_fd"), out);
            p.bn_ga.named_stats(&format!("{prefix}.bn_ga"), out);
        }
    }
}

/// Squeeze-excite style gate over channels.
#[derive(Clone, Debug)]
pub struct ChannelAttention<E: Element> {
    pub reduce: Conv2d<E>,
    pub expand: Conv2d<E>,
}

impl<E: Element> ChannelAttention<E> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize, reduction: usize) -> ChannelAttention<E> {
        let mid = (c / reduction).max(1);
        ChannelAttention { reduce: Conv2d::pw(rng, c, mid), expand: Conv2d::pw(rng, mid, c) }
    }

    /// Per-channel gate in (0,1); depends on x only through its
    /// per-channel spatial means.
    pub fn weights(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let pooled = x.mean(Axes::HW)?;
        self.expand.forward(&self.reduce.forward(&pooled)?.gelu()?)?.sigmoid()
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.mul(&self.weights(x)?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.reduce.named_params(&format!("{prefix}.reduce"), out);
        self.expand.named_params(&format!("{prefix}.expand"), out);
    }
}

// ── Mixer ────────────────────────────────────────────────────────────────

/// Shared knobs for block construction.
#[derive(Clone, Copy, Debug)]
pub struct BlockConfig {
    pub width: usize,
    pub spatial: bool,
    pub wavelet: bool,
    pub fourier: bool,
    pub ca_reduction: usize,
    pub fourier_gate_literal: bool,
    pub norm_eps: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl BlockConfig {
    pub fn with_width(width: usize) -> BlockConfig {
        BlockConfig {
            width,
            spatial: true,
            wavelet: true,
            fourier: true,
            ca_reduction: 4,
            fourier_gate_literal: false,
            norm_eps: 1e-6,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SwfMixer<E: Element> {
    pub expand: Conv2d<E>,
    pub alloc: BranchAlloc,
    pub spatial: Option<SpatialBranch<E>>,
    pub wavelet: Option<WaveletBranch<E>>,
    pub fourier: Option<FourierBranch<E>>,
    pub attention: ChannelAttention<E>,
    pub reduce: Conv2d<E>,
}

impl<E: Element> SwfMixer<E> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &BlockConfig) -> Result<SwfMixer<E>> {
        let c = cfg.width;
        let alloc = branch_alloc(cfg.spatial, cfg.wavelet, cfg.fourier)?;
        let expand = Conv2d::pw(rng, c, BranchAlloc::TOTAL_UNITS * c);
        let spatial = (alloc.spatial > 0).then(|| SpatialBranch::new(rng, alloc.spatial * c));
        let wavelet = (alloc.wavelet > 0).then(|| WaveletBranch::new(rng, alloc.wavelet * c));
        let fourier = (alloc.fourier > 0).then(|| {
            FourierBranch::new(
                rng,
                alloc.fourier * c,
                cfg.fourier_gate_literal,
                cfg.bn_momentum,
                cfg.bn_eps,
            )
        });
        let out_c = alloc.out_units() * c;
        let attention = ChannelAttention::new(rng, out_c, cfg.ca_reduction);
        let reduce = Conv2d::pw(rng, out_c, c);
        Ok(SwfMixer { expand, alloc, spatial, wavelet, fourier, attention, reduce })
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let c = x.shape().c;
        let e = self.expand.forward(x)?;
        let mut sizes = Vec::new();
        for units in [self.alloc.spatial, self.alloc.wavelet, self.alloc.fourier] {
            if units > 0 {
                sizes.push(units * c);
            }
        }
        let parts = e.split_channels(&sizes)?;
        let mut outs = Vec::new();
        let mut it = parts.iter();
        if let Some(b) = &self.spatial {
            outs.push(b.forward(it.next().expect("split aligned with alloc"))?);
        }
        if let Some(b) = &self.wavelet {
            outs.push(b.forward(it.next().expect("split aligned with alloc"))?);
        }
        if let Some(b) = &self.fourier {
            outs.push(b.forward(it.next().expect("split aligned with alloc"), training)?);
        }
        let cat = Tensor::concat_channels(&outs)?;
        self.reduce.forward(&self.attention.forward(&cat)?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.expand.named_params(&format!("{prefix}.expand"), out);
        if let Some(b) = &self.spatial {
            b.named_params(&format!("{prefix}.spatial"), out);
        }
        if let Some(b) = &self.wavelet {
            b.named_params(&format!("{prefix}.wavelet"), out);
        }
        if let Some(b) = &self.fourier {
            b.named_params(&format!("{prefix}.fourier"), out);
        }
        self.attention.named_params(&format!("{prefix}.attention"), out);
        self.reduce.named_params(&format!("{prefix}.reduce"), out);
    }

    pub fn named_stats(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        if let Some(b) = &self.fourier {
            b.named_stats(&format!("{prefix}.fourier"), out);
        }
    }
}

// ── MSFN ─────────────────────────────────────────────────────────────────

/// Split sizes for the three MSFN scale paths; the remainder of an
/// uneven three-way split goes to the full-resolution path.
pub fn msfn_split(c2: usize) -> [usize; 3] {
    let base = c2 / 3;
    [c2 - 2 * base, base, base]
}

#[derive(Clone, Debug)]
pub struct Msfn<E: Element> {
    pub expand: Conv2d<E>,
    pub dw_full: Conv2d<E>,
    pub dw_half: Conv2d<E>,
    pub dw_quarter: Conv2d<E>,
    pub reduce: Conv2d<E>,
    split: [usize; 3],
}

impl<E: Element> Msfn<E> {
    pub fn new(rng: &mut ChaCha8Rng, c: usize) -> Msfn<E> {
        let c2 = 2 * c;
        let split = msfn_split(c2);
        Msfn {
            expand: Conv2d::pw(rng, c, c2),
            dw_full: Conv2d::dw3(rng, split[0]),
            dw_half: Conv2d::dw3(rng, split[1]),
            dw_quarter: Conv2d::dw3(rng, split[2]),
            reduce: Conv2d::pw(rng, c2, c),
            split,
        }
    }

    /// Reflect-pad odd dims to even, then 2x mean-pool.
    fn down2(x: &Tensor<E>) -> Result<Tensor<E>> {
        let s = x.shape();
        let (pb, pr) = (s.h % 2, s.w % 2);
        let xp = if pb + pr > 0 { x.pad_reflect(pb, pr)? } else { x.clone() };
        xp.avg_pool(2)
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (h, w) = (x.shape().h, x.shape().w);
        let e = self.expand.forward(x)?;
        let parts = e.split_channels(&self.split)?;
        let q0 = self.dw_full.forward(&parts[0])?;
        let q1 = self.dw_half.forward(&Self::down2(&parts[1])?)?.bilinear_resize(h, w)?;
        let q2 = self
            .dw_quarter
            .forward(&Self::down2(&Self::down2(&parts[2])?)?)?
            .bilinear_resize(h, w)?;
        self.reduce.forward(&Tensor::concat_channels(&[q0, q1, q2])?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.expand.named_params(&format!("{prefix}.expand"), out);
        self.dw_full.named_params(&format!("{prefix}.dw_full"), out);
        self.dw_half.named_params(&format!("{prefix}.dw_half"), out);
        self.dw_quarter.named_params(&format!("{prefix}.dw_quarter"), out);
        self.reduce.named_params(&format!("{prefix}.reduce"), out);
    }
}

// ── Block ────────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct SwformerBlock<E: Element> {
    pub norm1: ChannelNorm<E>,
    pub mixer: SwfMixer<E>,
    pub norm2: ChannelNorm<E>,
    pub msfn: Msfn<E>,
}

impl<E: Element> SwformerBlock<E> {
    pub fn new(rng: &mut ChaCha8Rng, cfg: &BlockConfig) -> Result<SwformerBlock<E>> {
        Ok(SwformerBlock {
            norm1: ChannelNorm::new(cfg.width, cfg.norm_eps),
            mixer: SwfMixer::new(rng, cfg)?,
            norm2: ChannelNorm::new(cfg.width, cfg.norm_eps),
            msfn: Msfn::new(rng, cfg.width),
        })
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let y = x.add(&self.mixer.forward(&self.norm1.forward(x)?, training)?)?;
        y.add(&self.msfn.forward(&self.norm2.forward(&y)?)?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.norm1.named_params(&format!("{prefix}.norm1"), out);
        self.mixer.named_params(&format!("{prefix}.mixer"), out);
        self.norm2.named_params(&format!("{prefix}.norm2"), out);
        self.msfn.named_params(&format!("{prefix}.msfn"), out);
    }

    pub fn named_stats(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.mixer.named_stats(&format!("{prefix}.mixer"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_input(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut r = rng(seed);
        Tensor::from_vec(
            (0..n * c * h * w).map(|_| r.random_range(-1.0..1.0)).collect(),
            Shape::new(n, c, h, w),
        )
    }

    fn zero_biases(params: &[(String, Tensor<f64>)]) {
        for (name, p) in params {
            if name.ends_with(".bias") || name.ends_with(".beta") {
                p.set_data(&vec![0.0; p.numel()]);
            }
        }
    }

    fn collect<F: Fn(&mut Vec<(String, Tensor<f64>)>)>(f: F) -> Vec<(String, Tensor<f64>)> {
        let mut v = Vec::new();
        f(&mut v);
        v
    }

    #[test]
    fn branch_alloc_all_combinations() {
        let case = |s, w, f| branch_alloc(s, w, f).unwrap();
        assert_eq!(case(true, true, true), BranchAlloc { spatial: 1, wavelet: 1, fourier: 2 });
        assert_eq!(case(true, true, false), BranchAlloc { spatial: 2, wavelet: 2, fourier: 0 });
        assert_eq!(case(true, false, true), BranchAlloc { spatial: 2, wavelet: 0, fourier: 2 });
        assert_eq!(case(false, true, true), BranchAlloc { spatial: 0, wavelet: 2, fourier: 2 });
        assert_eq!(case(true, false, false), BranchAlloc { spatial: 4, wavelet: 0, fourier: 0 });
        assert_eq!(case(false, true, false), BranchAlloc { spatial: 0, wavelet: 4, fourier: 0 });
        assert_eq!(case(false, false, true), BranchAlloc { spatial: 0, wavelet: 0, fourier: 4 });
        assert!(branch_alloc(false, false, false).is_err());
    }

    #[test]
    fn spatial_branch_zero_and_identity_kernel() {
        let b: SpatialBranch<f64> = SpatialBranch::new(&mut rng(1), 3);
        let params = collect(|v| b.named_params("b", v));
        zero_biases(&params);

        let zero = Tensor::zeros(Shape::new(1, 3, 4, 4));
        assert!(b.forward(&zero).unwrap().max_abs() == 0.0);

        // center-one depthwise kernels turn the branch into plain GELU
        let mut ident = vec![0.0; 27];
        for c in 0..3 {
            ident[c * 9 + 4] = 1.0;
        }
        b.dw.weight.set_data(&ident);
        let x = rand_input(2, 1, 3, 5, 6);
        let got = b.forward(&x).unwrap();
        let want = x.gelu().unwrap();
        for (a, w) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_branch_matches_composition_oracle() {
        let b: SpatialBranch<f64> = SpatialBranch::new(&mut rng(3), 2);
        let x = rand_input(4, 1, 2, 6, 6);
        let got = b.forward(&x).unwrap();
        let want = x
            .pad_reflect4(1, 1, 1, 1)
            .unwrap()
            .conv2d(&b.dw.weight, b.dw.bias.as_ref(), 1, 0, 2)
            .unwrap()
            .gelu()
            .unwrap();
        for (a, w) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((a - w).abs() < 1e-13);
        }
    }

    #[test]
    fn wavelet_branch_linear_mode_is_identity_at_haar_init() {
        let mut b: WaveletBranch<f64> = WaveletBranch::new(&mut rng(5), 2);
        b.linear_test_mode = true;
        let params = collect(|v| b.named_params("b", v));
        zero_biases(&params);
        let mut ident = vec![0.0; 8 * 9];
        for c in 0..8 {
            ident[c * 9 + 4] = 1.0;
        }
        b.dw.weight.set_data(&ident);
        let x = rand_input(6, 1, 2, 6, 6);
        let y = b.forward(&x).unwrap();
        for (a, w) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - w).abs() < 1e-10);
        }
        // odd dims go through the pad-and-crop path and still reconstruct
        let xo = rand_input(7, 1, 2, 5, 7);
        let yo = b.forward(&xo).unwrap();
        assert_eq!(yo.shape().dims(), [1, 2, 5, 7]);
        for (a, w) in yo.to_vec().iter().zip(xo.to_vec()) {
            assert!((a - w).abs() < 1e-10);
        }
    }

    #[test]
    fn wavelet_branch_zero_input_zero_output() {
        let b: WaveletBranch<f64> = WaveletBranch::new(&mut rng(8), 1);
        zero_biases(&collect(|v| b.named_params("b", v)));
        let y = b.forward(&Tensor::zeros(Shape::new(1, 1, 4, 4))).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn fourier_branch_gate_open_identity_composition() {
        let mut b: FourierBranch<f64> = FourierBranch::new(&mut rng(10), 4, false, 0.1, 1e-5);
        b.gate_open_test = true;
        b.fd_identity_test = true;
        let x = rand_input(11, 1, 4, 6, 6);
        let got = b.forward(&x, false).unwrap();
        // oracle: pre -> first half -> [x1 | 0] -> reduce
        let e = b.pre.forward(&x).unwrap();
        let x1 = e.narrow_channels(0, 2).unwrap();
        let z = Tensor::concat_channels(&[x1, Tensor::zeros(Shape::new(1, 2, 6, 6))]).unwrap();
        let want = b.reduce.forward(&z).unwrap();
        for (a, w) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((a - w).abs() < 1e-4, "{a} vs {w}");
        }
    }

    #[test]
    fn fourier_branch_zero_biases_zero_input() {
        let b: FourierBranch<f64> = FourierBranch::new(&mut rng(12), 4, false, 0.1, 1e-5);
        zero_biases(&collect(|v| b.named_params("b", v)));
        let y = b.forward(&Tensor::zeros(Shape::new(1, 4, 4, 4)), true).unwrap();
        assert!(y.max_abs() < 1e-12);
    }

    #[test]
    fn fourier_branch_literal_product_mode() {
        let b: FourierBranch<f64> = FourierBranch::new(&mut rng(13), 4, true, 0.1, 1e-5);
        let x = rand_input(14, 1, 4, 5, 5);
        let got = b.forward(&x, true).unwrap();
        // oracle: raw spectra product, no processing paths
        let e = b.pre.forward(&x).unwrap();
        let parts = e.split_channels(&[2, 2]).unwrap();
        let s1 = crate::transforms::fft2_cat(&parts[0]).unwrap();
        let s2 = crate::transforms::fft2_cat(&parts[1]).unwrap();
        let want = b
            .reduce
            .forward(&crate::transforms::ifft2_cat_full(&s1.mul(&s2).unwrap()).unwrap())
            .unwrap();
        for (a, w) in got.to_vec().iter().zip(want.to_vec()) {
            assert!((a - w).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_attention_forced_half_and_pool_invariance() {
        let ca: ChannelAttention<f64> = ChannelAttention::new(&mut rng(20), 8, 4);
        ca.expand.zero_init();
        let x = rand_input(21, 2, 8, 4, 4);
        let y = ca.forward(&x).unwrap();
        for (a, b) in y.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b * 0.5).abs() < 1e-12);
        }

        // attention weights depend on x only through channel means
        let ca2: ChannelAttention<f64> = ChannelAttention::new(&mut rng(22), 4, 4);
        let x1 = rand_input(23, 1, 4, 4, 4);
        let mut shuffled = x1.to_vec();
        for c in 0..4 {
            shuffled[c * 16..(c + 1) * 16].reverse();
        }
        let x2 = Tensor::from_vec(shuffled, x1.shape());
        let w1 = ca2.weights(&x1).unwrap().to_vec();
        let w2 = ca2.weights(&x2).unwrap().to_vec();
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn msfn_constant_input_stays_constant() {
        for (h, w) in [(8, 8), (6, 6), (5, 7)] {
            let m: Msfn<f64> = Msfn::new(&mut rng(30), 4);
            let mut data = Vec::new();
            for c in 0..4 {
                data.extend(std::iter::repeat_n(0.3 * (c as f64 + 1.0), h * w));
            }
            let x = Tensor::from_vec(data, Shape::new(1, 4, h, w));
            let y = m.forward(&x).unwrap();
            let yd = y.to_vec();
            for c in 0..4 {
                let plane = &yd[c * h * w..(c + 1) * h * w];
                let (mn, mx) = plane
                    .iter()
                    .fold((f64::MAX, f64::MIN), |(mn, mx), &v| (mn.min(v), mx.max(v)));
                assert!(mx - mn < 1e-10, "{h}x{w} channel {c}: spread {}", mx - mn);
            }
        }
    }

    #[test]
    fn msfn_split_remainder_to_full_scale() {
        assert_eq!(msfn_split(32), [12, 10, 10]);
        assert_eq!(msfn_split(16), [6, 5, 5]);
        assert_eq!(msfn_split(12), [4, 4, 4]);
    }

    #[test]
    fn block_is_identity_with_zeroed_reducers() {
        let cfg = BlockConfig::with_width(8);
        let block: SwformerBlock<f64> = SwformerBlock::new(&mut rng(40), &cfg).unwrap();
        block.mixer.reduce.zero_init();
        block.msfn.reduce.zero_init();
        let x = rand_input(41, 2, 8, 8, 8);
        let y = block.forward(&x, true).unwrap();
        assert_eq!(x.to_vec(), y.to_vec(), "residual with zero mixers must be exact identity");
    }

    #[test]
    fn block_shapes_for_every_branch_combo() {
        for (s, w, f) in [
            (true, true, true),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, false, false),
            (false, true, false),
            (false, false, true),
        ] {
            let mut cfg = BlockConfig::with_width(8);
            cfg.spatial = s;
            cfg.wavelet = w;
            cfg.fourier = f;
            let block: SwformerBlock<f64> = SwformerBlock::new(&mut rng(50), &cfg).unwrap();
            let x = rand_input(51, 1, 8, 8, 8);
            let y = block.forward(&x, true).unwrap();
            assert_eq!(y.shape(), x.shape(), "combo ({s},{w},{f})");
        }
    }

    #[test]
    fn block_gradients_match_differences() {
        let cfg = BlockConfig::with_width(8);
        let block: SwformerBlock<f64> = SwformerBlock::new(&mut rng(60), &cfg).unwrap();
        let x = Tensor::<f64>::param(rand_input(61, 1, 8, 8, 8).to_vec(), Shape::new(1, 8, 8, 8));
        let r = rand_input(62, 1, 8, 8, 8);
        let (bc, xc, rc) = (block.clone(), x.clone(), r.clone());
        let f = move || bc.forward(&xc, true)?.mul(&rc)?.mean_all();
        let mut params = collect(|v| block.named_params("block", v));
        params.push(("input".into(), x));
        let report = crate::tensor::grad_check(&f, &params, 1e-4, 1e-3, 6, 1234).unwrap();
        assert!(report.passed(), "{report}");
    }
}
