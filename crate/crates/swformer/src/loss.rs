//! Multi-domain training objective: per exit, an L1 term in the pixel
//! domain, one on fixed-Haar wavelet coefficients, and a weighted one
//! on orthonormal FFT components (real and imaginary jointly), summed
//! over the available exits. Every term uses mean reduction so the
//! fourier weight is resolution-independent.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use crate::transforms::{dwt2, fft2_cat, WaveletFilterBank};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_fourier: f64,
    /// Weight per pyramid level (index = level).
    pub scale_weights: [f64; 3],
}

impl Default for LossConfig {
    fn default() -> LossConfig {
        LossConfig { lambda_fourier: 0.1, scale_weights: [1.0, 1.0, 1.0] }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_fourier >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_fourier must be >= 0, got {}",
                self.lambda_fourier
            )));
        }
        if self.scale_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("scale_weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-exit breakdown, recorded as plain floats next to the live graph.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub level: usize,
    pub spatial: f64,
    pub wavelet: f64,
    pub fourier: f64,
}

#[derive(Debug)]
pub struct LossValue<E: Element> {
    /// Scalar tensor carrying the autodiff graph.
    pub loss: Tensor<E>,
    pub terms: Vec<LossTerms>,
}

impl<E: Element> LossValue<E> {
    pub fn total(&self) -> f64 {
        self.loss.item().as_f64()
    }
}

fn l1_mean<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.sub(b)?.abs()?.mean_all()
}

/// Wavelet-domain L1: one fixed-Haar level on both tensors. Odd dims
/// are reflect-padded identically first, which keeps the term zero at
/// identity and linear in the residual.
fn wavelet_l1<E: Element>(o: &Tensor<E>, g: &Tensor<E>, bank: &WaveletFilterBank<E>) -> Result<Tensor<E>> {
    let s = o.shape();
    let (pb, pr) = (s.h % 2, s.w % 2);
    let (oe, ge) = if pb + pr > 0 {
        (o.pad_reflect(pb, pr)?, g.pad_reflect(pb, pr)?)
    } else {
        (o.clone(), g.clone())
    };
    l1_mean(&dwt2(&oe, bank)?.to_cat()?, &dwt2(&ge, bank)?.to_cat()?)
}

/// `outputs` are (pyramid level, O) exit pairs; `targets[level]` holds
/// the matching representation of the ground truth.
pub fn multi_domain_loss<E: Element>(
    outputs: &[(usize, Tensor<E>)],
    targets: &[Tensor<E>],
    cfg: &LossConfig,
) -> Result<LossValue<E>> {
    cfg.validate()?;
    if outputs.is_empty() {
        return Err(Error::Usage("multi_domain_loss needs at least one exit".into()));
    }
    let bank = WaveletFilterBank::haar();
    let mut total: Option<Tensor<E>> = None;
    let mut terms = Vec::with_capacity(outputs.len());
    for (level, o) in outputs {
        let g = targets.get(*level).ok_or_else(|| {
            Error::Usage(format!("no target for exit level {level} (have {})", targets.len()))
        })?;
        if o.shape() != g.shape() {
            return Err(Error::dim(
                "multi_domain_loss",
                format!("exit level {level}: output {:?} vs target {:?}", o.shape().dims(), g.shape().dims()),
            ));
        }
        let sp = l1_mean(o, g)?;
        let wa = wavelet_l1(o, g, &bank)?;
        let fr = l1_mean(&fft2_cat(o)?, &fft2_cat(g)?)?;
        terms.push(LossTerms {
            level: *level,
            spatial: sp.item().as_f64(),
            wavelet: wa.item().as_f64(),
            fourier: fr.item().as_f64(),
        });
        let w = cfg.scale_weights[(*level).min(2)];
        let exit_loss = sp.add(&wa)?.add(&fr.scale(cfg.lambda_fourier)?)?.scale(w)?;
        total = Some(match total {
            None => exit_loss,
            Some(t) => t.add(&exit_loss)?,
        });
    }
    Ok(LossValue { loss: total.expect("nonempty outputs"), terms })
}
