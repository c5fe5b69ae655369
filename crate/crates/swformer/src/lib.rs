//! Multi-domain image restoration in pure Rust: a lossless wavelet
//! encoder-decoder whose blocks mix tokens in the spatial, wavelet, and
//! Fourier domains, trained end to end on a small built-in autodiff tape.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: NCHW tensors over f32/f64 with reverse-mode gradients
//! * [`transforms`]: learnable wavelet filter banks and orthonormal FFTs
//! * [`blocks`]: token mixer, gated Fourier branch, multi-scale FFN
//! * [`network`]: the three model variants with early exits at every scale
//! * [`loss`], [`metrics`]: multi-domain training loss, PSNR/SSIM reports
//! * [`data`]: procedural degradations, PNG corpus i/o, patch sampling
//! * [`optim`], [`checkpoint`]: AdamW with cosine schedule, atomic resume
//! * [`analysis`]: residual spectra, band energies, sub-band swaps
//! * [`cli`]: the `swformer` binary (train / eval / infer / analyze /
//!   gradcheck / make-corpus)
//!
//! Start with the examples, one per capability:
//!
//! * `transforms_tour`: round trips and energy conservation
//! * `gradcheck_block`: finite-difference audit of a full block
//! * `make_corpus`: synthesize a paired degradation corpus
//! * `train_tiny`: overfit eight rain pairs past 35 dB on one core
//! * `restore_image`: run a checkpoint (or the identity net) on an image
//! * `eval_metrics`: PSNR/SSIM reports, RGB and luma-only
//! * `analyze_pair`: where in frequency a degradation lives
//! * `subband_swap`: exchange wavelet bands between two images

pub mod analysis;
pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod error;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};
pub use tensor::{backward, no_grad, Element, Shape, Tensor};
