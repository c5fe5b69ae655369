//! Full restoration network: five-stage encoder-bottleneck-decoder at
//! scales 1, 1/2, 1/4, 1/2, 1 with widths C, 2C, 3C, 2C, C, residual
//! multi-scale outputs, and early exits after stages 3/4/5.
//!
//! Input/output plumbing comes in three modes:
//!   - Lmimo (default): auxiliary inputs are full-band Haar pyramid
//!     levels (12 and 48 channels), exits predict residuals in the same
//!     lossless representation, reconstruction is exact inverse DWT.
//!   - Mimo: auxiliary inputs/targets are bilinear-downsampled RGB,
//!     exits predict 3-channel residuals, reconstruction is bilinear.
//!   - Siso: no auxiliary inputs, single full-resolution exit (the
//!     large variant only).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockConfig, Conv2d, SwformerBlock};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::transforms::{wavelet_pyramid, wavelet_reconstruct, WaveletFilterBank};

pub const PYRAMID_LEVELS: usize = 2;
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    Small,
    Medium,
    Large,
}

impl Variant {
    pub fn stages(self) -> usize {
        match self {
            Variant::Small => 3,
            Variant::Medium => 4,
            Variant::Large => 5,
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "s" | "small" => Ok(Variant::Small),
            "m" | "medium" => Ok(Variant::Medium),
            "l" | "large" => Ok(Variant::Large),
            other => Err(Error::Config(format!("unknown variant {other:?} (use s|m|l)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Small => "s",
            Variant::Medium => "m",
            Variant::Large => "l",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IoMode {
    Siso,
    Mimo,
    Lmimo,
}

impl IoMode {
    pub fn parse(s: &str) -> Result<IoMode> {
        match s {
            "siso" => Ok(IoMode::Siso),
            "mimo" => Ok(IoMode::Mimo),
            "lmimo" => Ok(IoMode::Lmimo),
            other => Err(Error::Config(format!("unknown io mode {other:?} (use siso|mimo|lmimo)"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IoMode::Siso => "siso",
            IoMode::Mimo => "mimo",
            IoMode::Lmimo => "lmimo",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub base_width: usize,
    pub blocks_per_stage: [usize; 5],
    pub variant: Variant,
    pub io_mode: IoMode,
    pub in_channels: usize,
    pub spatial: bool,
    pub wavelet: bool,
    pub fourier: bool,
    pub fourier_gate_literal: bool,
}

impl ModelConfig {
    /// Desk-scale default: C=16, two blocks per stage, all branches on.
    pub fn tiny() -> ModelConfig {
        ModelConfig {
            base_width: 16,
            blocks_per_stage: [2, 2, 2, 2, 2],
            variant: Variant::Large,
            io_mode: IoMode::Lmimo,
            in_channels: 3,
            spatial: true,
            wavelet: true,
            fourier: true,
            fourier_gate_literal: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width % 4 != 0 || self.base_width == 0 {
            return Err(Error::Config(format!(
                "base_width must be a positive multiple of 4, got {}",
                self.base_width
            )));
        }
        if self.blocks_per_stage.iter().any(|&n| n == 0) {
            return Err(Error::Config("blocks_per_stage entries must be >= 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.io_mode == IoMode::Siso && self.variant != Variant::Large {
            return Err(Error::Config(
                "siso has a single full-resolution exit; use variant l".into(),
            ));
        }
        Ok(())
    }

    /// Width multiplier per stage (times base_width).
    fn stage_mult(stage: usize) -> usize {
        [1, 2, 3, 2, 1][stage]
    }

    fn stage_width(&self, stage: usize) -> usize {
        Self::stage_mult(stage) * self.base_width
    }

    /// Downsampling level (log2) of each stage's feature grid.
    fn stage_level(stage: usize) -> usize {
        [0, 1, 2, 1, 0][stage]
    }

    fn block_cfg(&self, stage: usize) -> BlockConfig {
        let mut b = BlockConfig::with_width(self.stage_width(stage));
        b.spatial = self.spatial;
        b.wavelet = self.wavelet;
        b.fourier = self.fourier;
        b.fourier_gate_literal = self.fourier_gate_literal;
        b
    }

    /// Channels of the mode's representation at pyramid level k.
    fn rep_channels(&self, level: usize) -> usize {
        match self.io_mode {
            IoMode::Lmimo => self.in_channels << (2 * level),
            _ => self.in_channels,
        }
    }
}

/// Lossless input pyramid: level k has in_c*4^k channels at 1/2^k scale.
#[derive(Clone, Debug)]
pub struct MultiScaleImage<E: Element> {
    pub levels: Vec<Tensor<E>>,
}

fn check_input_dims<E: Element>(x: &Tensor<E>) -> Result<()> {
    let s = x.shape();
    if s.h < MIN_SIDE || s.w < MIN_SIDE {
        return Err(Error::dim("decompose_input", format!("image {}x{} below {MIN_SIDE}x{MIN_SIDE}", s.h, s.w)));
    }
    if s.h % 4 != 0 || s.w % 4 != 0 {
        return Err(Error::dim(
            "decompose_input",
            format!("dims {}x{} not multiples of 4; pad first", s.h, s.w),
        ));
    }
    Ok(())
}

/// Fixed-Haar full-band pyramid of the network input.
pub fn decompose_input<E: Element>(x: &Tensor<E>) -> Result<MultiScaleImage<E>> {
    check_input_dims(x)?;
    let bank = WaveletFilterBank::haar();
    Ok(MultiScaleImage { levels: wavelet_pyramid(x, PYRAMID_LEVELS, &bank)? })
}

/// Inverts level k of `decompose_input` back to full resolution.
pub fn reconstruct_output<E: Element>(o: &Tensor<E>, level: usize) -> Result<Tensor<E>> {
    let c = o.shape().c;
    if c % (1 << (2 * level)) != 0 {
        return Err(Error::dim(
            "reconstruct_output",
            format!("{c} channels not divisible by 4^{level}"),
        ));
    }
    wavelet_reconstruct(o, level, &WaveletFilterBank::haar())
}

/// Two 3x3 reflect-padded convs with a GELU between; the in/out
/// projection unit at every scale.
#[derive(Clone, Debug)]
pub struct ConvPair<E: Element> {
    pub conv1: Conv2d<E>,
    pub conv2: Conv2d<E>,
}

impl<E: Element> ConvPair<E> {
    pub fn new(rng: &mut ChaCha8Rng, in_c: usize, mid: usize, out_c: usize) -> ConvPair<E> {
        ConvPair { conv1: Conv2d::k3(rng, in_c, mid), conv2: Conv2d::k3(rng, mid, out_c) }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.conv2.forward(&self.conv1.forward(x)?.gelu()?)
    }

    pub fn named_params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv1.named_params(&format!("{prefix}.conv1"), out);
        self.conv2.named_params(&format!("{prefix}.conv2"), out);
    }
}

pub struct SwformerNet<E: Element> {
    pub cfg: ModelConfig,
    enc1: ConvPair<E>,
    enc_aux: [Option<ConvPair<E>>; 2],
    fuse: [Option<Conv2d<E>>; 2],
    downs: Vec<Conv2d<E>>,
    ups: Vec<Conv2d<E>>,
    skips: Vec<Conv2d<E>>,
    stages: Vec<Vec<SwformerBlock<E>>>,
    heads: Vec<Option<ConvPair<E>>>,
}

/// Exit outputs ordered deepest-first: (pyramid level, O) pairs.
pub struct ForwardOutputs<E: Element> {
    pub exits: Vec<(usize, Tensor<E>)>,
}

impl<E: Element> ForwardOutputs<E> {
    /// The highest-resolution exit (the last one emitted).
    pub fn finest(&self) -> &(usize, Tensor<E>) {
        self.exits.last().expect("forward always emits at least one exit")
    }
}

fn stage_err(stage: usize, e: Error) -> Error {
    match e {
        Error::Dimension { op, detail } => {
            Error::Dimension { op, detail: format!("stage {}: {detail}", stage + 1) }
        }
        other => other,
    }
}

impl<E: Element> SwformerNet<E> {
    /// Builds the network with seeded init. Parameter draw order is a
    /// strict prefix across variants: a small net seeded with s shares
    /// its stage 1-3 weights with the medium and large nets seeded s.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<SwformerNet<E>> {
        cfg.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let n_stages = cfg.variant.stages();
        let aux_active = cfg.io_mode != IoMode::Siso;

        let mut enc_aux: [Option<ConvPair<E>>; 2] = [None, None];
        let mut fuse: [Option<Conv2d<E>>; 2] = [None, None];
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        let mut skips = Vec::new();
        let mut stages = Vec::new();
        let mut heads = vec![None, None, None];

        let enc1 = ConvPair::new(rng, cfg.in_channels, cfg.base_width, cfg.base_width);
        for stage in 0..n_stages {
            let w = cfg.stage_width(stage);
            if (1..=2).contains(&stage) {
                // encoder side: shuffle-down from the previous stage,
                // optionally fused with an encoded auxiliary input
                let prev = cfg.stage_width(stage - 1);
                downs.push(Conv2d::pw(rng, 4 * prev, w));
                if aux_active {
                    let in_c = cfg.rep_channels(ModelConfig::stage_level(stage));
                    enc_aux[stage - 1] = Some(ConvPair::new(rng, in_c, w, w));
                    fuse[stage - 1] = Some(Conv2d::pw(rng, 2 * w, w));
                }
            } else if stage >= 3 {
                // decoder side: shuffle-up, then fuse the skip feature
                let prev = cfg.stage_width(stage - 1);
                ups.push(Conv2d::pw(rng, prev, 4 * w));
                skips.push(Conv2d::pw(rng, 2 * w, w));
            }
            let bc = cfg.block_cfg(stage);
            let blocks: Result<Vec<_>> =
                (0..cfg.blocks_per_stage[stage]).map(|_| SwformerBlock::new(rng, &bc)).collect();
            stages.push(blocks?);
            let is_exit = stage + 1 == n_stages || (aux_active && stage >= 2);
            if is_exit {
                let out_c = cfg.rep_channels(ModelConfig::stage_level(stage));
                heads[stage - 2] = Some(ConvPair::new(rng, w, w, out_c));
            }
        }
        Ok(SwformerNet { cfg: cfg.clone(), enc1, enc_aux, fuse, downs, ups, skips, stages, heads })
    }

    /// Zeroes the final conv of every head so each exit returns its
    /// input representation untouched.
    pub fn zero_init_heads(&self) {
        for h in self.heads.iter().flatten() {
            h.conv2.zero_init();
        }
    }

    /// Per-exit input representations I^k, index = pyramid level.
    fn input_reps(&self, x: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        let (h, w) = (x.shape().h, x.shape().w);
        match self.cfg.io_mode {
            IoMode::Lmimo => Ok(decompose_input(x)?.levels),
            IoMode::Mimo => {
                check_input_dims(x)?;
                Ok(vec![
                    x.clone(),
                    x.bilinear_resize(h / 2, w / 2)?,
                    x.bilinear_resize(h / 4, w / 4)?,
                ])
            }
            IoMode::Siso => {
                check_input_dims(x)?;
                Ok(vec![x.clone()])
            }
        }
    }

    /// Mode-aware target pyramid for supervision; level k matches the
    /// exit emitted at that level.
    pub fn target_reps(&self, g: &Tensor<E>) -> Result<Vec<Tensor<E>>> {
        self.input_reps(g)
    }

    /// Inverts an exit back to full resolution (h, w).
    pub fn reconstruct_exit(&self, o: &Tensor<E>, level: usize, h: usize, w: usize) -> Result<Tensor<E>> {
        match self.cfg.io_mode {
            IoMode::Lmimo => reconstruct_output(o, level),
            IoMode::Mimo | IoMode::Siso => {
                if level == 0 {
                    Ok(o.clone())
                } else {
                    o.bilinear_resize(h, w)
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<E>, run: Variant, training: bool) -> Result<ForwardOutputs<E>> {
        if run > self.cfg.variant {
            return Err(Error::Usage(format!(
                "variant {} exceeds constructed capacity {}",
                run.as_str(),
                self.cfg.variant.as_str()
            )));
        }
        let s = x.shape();
        if s.c != self.cfg.in_channels {
            return Err(Error::dim(
                "forward",
                format!("expected {} input channels, got {}", self.cfg.in_channels, s.c),
            ));
        }
        let reps = self.input_reps(x)?;
        let n_stages = run.stages();
        let aux_active = self.cfg.io_mode != IoMode::Siso;

        let mut exits = Vec::new();
        let mut feats: Vec<Tensor<E>> = Vec::new();
        let mut cur = self.enc1.forward(&reps[0]).map_err(|e| stage_err(0, e))?;
        for stage in 0..n_stages {
            if (1..=2).contains(&stage) {
                let down = &self.downs[stage - 1];
                cur = down
                    .forward(&cur.pixel_unshuffle(2)?)
                    .map_err(|e| stage_err(stage, e))?;
                if let (Some(enc), Some(fu)) = (&self.enc_aux[stage - 1], &self.fuse[stage - 1]) {
                    let aux = enc.forward(&reps[ModelConfig::stage_level(stage)])?;
                    cur = fu
                        .forward(&Tensor::concat_channels(&[cur, aux])?)
                        .map_err(|e| stage_err(stage, e))?;
                }
            } else if stage >= 3 {
                let up = self.ups[stage - 3].forward(&cur)?.pixel_shuffle(2)?;
                let skip = &feats[4 - stage]; // stage4 <- stage2, stage5 <- stage1
                cur = self.skips[stage - 3]
                    .forward(&Tensor::concat_channels(&[up, skip.clone()])?)
                    .map_err(|e| stage_err(stage, e))?;
            }
            for blk in &self.stages[stage] {
                cur = blk.forward(&cur, training).map_err(|e| stage_err(stage, e))?;
            }
            if stage < 2 {
                feats.push(cur.clone());
            }
            let emit = stage + 1 == n_stages || (aux_active && stage >= 2);
            if emit {
                let level = ModelConfig::stage_level(stage);
                let head = self.heads[stage - 2]
                    .as_ref()
                    .ok_or_else(|| Error::Usage(format!("no exit head at stage {}", stage + 1)))?;
                let residual = head.forward(&cur).map_err(|e| stage_err(stage, e))?;
                exits.push((level, reps[level].add(&residual)?));
            }
        }
        Ok(ForwardOutputs { exits })
    }

    /// Full-resolution restoration: reflect-pads to a multiple of 4,
    /// runs the requested variant, reconstructs the finest exit, and
    /// crops back to the original size.
    pub fn restore(&self, x: &Tensor<E>, run: Variant) -> Result<Tensor<E>> {
        let s = x.shape();
        let (ph, pw) = (s.h.next_multiple_of(4).max(MIN_SIDE), s.w.next_multiple_of(4).max(MIN_SIDE));
        let padded = if (ph, pw) == (s.h, s.w) {
            x.clone()
        } else {
            x.pad_reflect(ph - s.h, pw - s.w)?
        };
        let out = self.forward(&padded, run, false)?;
        let (level, o) = out.finest();
        let full = self.reconstruct_exit(o, *level, ph, pw)?;
        if (ph, pw) == (s.h, s.w) {
            Ok(full)
        } else {
            full.crop(s.h, s.w)
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.enc1.named_params("enc1", &mut out);
        for (i, e) in self.enc_aux.iter().enumerate() {
            if let Some(e) = e {
                e.named_params(&format!("enc{}", i + 2), &mut out);
            }
        }
        for (i, f) in self.fuse.iter().enumerate() {
            if let Some(f) = f {
                f.named_params(&format!("fuse{}", i + 2), &mut out);
            }
        }
        for (i, d) in self.downs.iter().enumerate() {
            d.named_params(&format!("down{}", i + 1), &mut out);
        }
        for (i, u) in self.ups.iter().enumerate() {
            u.named_params(&format!("up{}", i + 3), &mut out);
        }
        for (i, s) in self.skips.iter().enumerate() {
            s.named_params(&format!("skip{}", i + 4), &mut out);
        }
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, b) in blocks.iter().enumerate() {
                b.named_params(&format!("stage{}.block{bi}", si + 1), &mut out);
            }
        }
        for (i, h) in self.heads.iter().enumerate() {
            if let Some(h) = h {
                h.named_params(&format!("head{}", i + 3), &mut out);
            }
        }
        out
    }

    /// BN running stats: saved with checkpoints, not trained.
    pub fn named_stats(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        for (si, blocks) in self.stages.iter().enumerate() {
            for (bi, b) in blocks.iter().enumerate() {
                b.named_stats(&format!("stage{}.block{bi}", si + 1), &mut out);
            }
        }
        out
    }

    pub fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.numel()).sum()
    }
}

pub fn count_params_for(cfg: &ModelConfig) -> Result<usize> {
    Ok(SwformerNet::<f32>::new(cfg, 0)?.count_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::prelude::*;

    fn rand_image(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            (0..n * c * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
            Shape::new(n, c, h, w),
        )
    }

    fn desk_cfg(variant: Variant, io_mode: IoMode) -> ModelConfig {
        let mut cfg = ModelConfig::tiny();
        cfg.base_width = 8;
        cfg.blocks_per_stage = [1, 1, 1, 1, 1];
        cfg.variant = variant;
        cfg.io_mode = io_mode;
        cfg
    }

    #[test]
    fn decompose_constant_image() {
        let x = Tensor::<f64>::full(Shape::new(1, 3, 8, 8), 0.3);
        let ms = decompose_input(&x).unwrap();
        assert_eq!(ms.levels[1].shape().dims(), [1, 12, 4, 4]);
        assert_eq!(ms.levels[2].shape().dims(), [1, 48, 2, 2]);
        let l1 = ms.levels[1].to_vec();
        // first 3 channels are LL = 2c, the 9 detail channels vanish
        for (i, v) in l1.iter().enumerate() {
            let want = if i < 3 * 16 { 0.6 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "chan {} val {v}", i / 16);
        }
    }

    #[test]
    fn decompose_reconstruct_roundtrip() {
        let x = rand_image(1, 2, 3, 16, 12);
        let ms = decompose_input(&x).unwrap();
        for level in 0..=PYRAMID_LEVELS {
            let back = reconstruct_output(&ms.levels[level], level).unwrap();
            let err = back.sub(&x).unwrap().max_abs();
            assert!(err < 1e-10, "level {level}: {err}");
        }
        // and the pyramid is a bijection on the coefficient side
        let o = rand_image(2, 1, 48, 3, 3);
        let img = reconstruct_output(&o, 2).unwrap();
        let again = decompose_input(&img).unwrap();
        assert!(again.levels[2].sub(&o).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn decompose_rejects_bad_dims() {
        assert!(decompose_input(&Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4))).is_err());
        assert!(decompose_input(&Tensor::<f64>::zeros(Shape::new(1, 3, 10, 12))).is_err());
        assert!(reconstruct_output(&Tensor::<f64>::zeros(Shape::new(1, 6, 4, 4)), 1).is_err());
    }

    #[test]
    fn zero_heads_make_every_exit_the_input_representation() {
        for io in [IoMode::Lmimo, IoMode::Mimo] {
            for variant in [Variant::Small, Variant::Medium, Variant::Large] {
                let net: SwformerNet<f64> = SwformerNet::new(&desk_cfg(variant, io), 7).unwrap();
                net.zero_init_heads();
                let x = rand_image(8, 1, 3, 16, 16);
                let reps = net.input_reps(&x).unwrap();
                let out = net.forward(&x, variant, false).unwrap();
                assert_eq!(out.exits.len(), variant.stages() - 2);
                for (level, o) in &out.exits {
                    assert_eq!(o.to_vec(), reps[*level].to_vec(), "{io:?} {variant:?} level {level}");
                }
            }
        }
        // siso: one exit, exact identity at full resolution
        let net: SwformerNet<f64> = SwformerNet::new(&desk_cfg(Variant::Large, IoMode::Siso), 7).unwrap();
        net.zero_init_heads();
        let x = rand_image(9, 1, 3, 16, 16);
        let out = net.forward(&x, Variant::Large, false).unwrap();
        assert_eq!(out.exits.len(), 1);
        assert_eq!(out.exits[0].1.to_vec(), x.to_vec());
    }

    #[test]
    fn restore_handles_odd_sizes_via_padding() {
        let net: SwformerNet<f64> = SwformerNet::new(&desk_cfg(Variant::Large, IoMode::Lmimo), 3).unwrap();
        net.zero_init_heads();
        let x = rand_image(4, 1, 3, 17, 19);
        let y = net.restore(&x, Variant::Large).unwrap();
        assert_eq!(y.shape().dims(), [1, 3, 17, 19]);
        assert_eq!(y.to_vec(), x.to_vec(), "full-scale exit of a zero-head net is exact");
    }

    #[test]
    fn early_exits_share_the_prefix_bitwise() {
        let net: SwformerNet<f64> = SwformerNet::new(&desk_cfg(Variant::Large, IoMode::Lmimo), 11).unwrap();
        let x = rand_image(12, 1, 3, 16, 16);
        let full = net.forward(&x, Variant::Large, false).unwrap();
        let small = net.forward(&x, Variant::Small, false).unwrap();
        let medium = net.forward(&x, Variant::Medium, false).unwrap();
        assert_eq!(full.exits[0].1.to_vec(), small.exits[0].1.to_vec());
        assert_eq!(full.exits[1].1.to_vec(), medium.exits[1].1.to_vec());
        // seeded construction also gives prefix-identical weights
        let small_net: SwformerNet<f64> =
            SwformerNet::new(&desk_cfg(Variant::Small, IoMode::Lmimo), 11).unwrap();
        let alone = small_net.forward(&x, Variant::Small, false).unwrap();
        assert_eq!(alone.exits[0].1.to_vec(), small.exits[0].1.to_vec());
    }

    #[test]
    fn requested_variant_cannot_exceed_capacity() {
        let net: SwformerNet<f64> = SwformerNet::new(&desk_cfg(Variant::Small, IoMode::Lmimo), 1).unwrap();
        let x = rand_image(1, 1, 3, 16, 16);
        assert!(net.forward(&x, Variant::Large, false).is_err());
    }

    #[test]
    fn param_counts_are_strictly_ordered() {
        let count = |v, io| count_params_for(&desk_cfg(v, io)).unwrap();
        let s = count(Variant::Small, IoMode::Lmimo);
        let m = count(Variant::Medium, IoMode::Lmimo);
        let l = count(Variant::Large, IoMode::Lmimo);
        assert!(s < m && m < l, "{s} {m} {l}");

        let siso = count(Variant::Large, IoMode::Siso);
        let mimo = count(Variant::Large, IoMode::Mimo);
        let lmimo = count(Variant::Large, IoMode::Lmimo);
        assert!(siso < mimo && mimo < lmimo, "{siso} {mimo} {lmimo}");
    }

    #[test]
    fn count_matches_named_arrays_and_conv_formula() {
        let cfg = desk_cfg(Variant::Medium, IoMode::Lmimo);
        let net: SwformerNet<f64> = SwformerNet::new(&cfg, 0).unwrap();
        let named = net.named_params();
        let total: usize = named.iter().map(|(_, p)| p.numel()).sum();
        assert_eq!(total, net.count_params());
        let mut names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), named.len(), "parameter names must be unique");

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pw: Conv2d<f64> = Conv2d::pw(&mut rng, 8, 8);
        let mut v = Vec::new();
        pw.named_params("pw", &mut v);
        assert_eq!(v.iter().map(|(_, p)| p.numel()).sum::<usize>(), 8 * 8 + 8);
    }

    #[test]
    fn fuse_passes_features_through_when_aux_half_is_zeroed() {
        // fuse convs see [stage | aux]; an identity-on-stage weight
        // must reproduce the stage features regardless of aux
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fuse: Conv2d<f64> = Conv2d::pw(&mut rng, 8, 4);
        let mut w = vec![0.0; 4 * 8];
        for o in 0..4 {
            w[o * 8 + o] = 1.0;
        }
        fuse.weight.set_data(&w);
        fuse.bias.as_ref().unwrap().set_data(&vec![0.0; 4]);
        let a = rand_image(6, 1, 4, 4, 4);
        let b = rand_image(7, 1, 4, 4, 4);
        let y = fuse.forward(&Tensor::concat_channels(&[a.clone(), b]).unwrap()).unwrap();
        assert_eq!(y.to_vec(), a.to_vec());
    }

    #[test]
    fn forward_rejects_wrong_channel_count() {
        let net: SwformerNet<f64> = SwformerNet::new(&desk_cfg(Variant::Small, IoMode::Lmimo), 1).unwrap();
        let x = rand_image(1, 1, 4, 16, 16);
        match net.forward(&x, Variant::Small, false) {
            Err(Error::Dimension { .. }) => {}
            other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
        }
    }
}
