//! AdamW with decoupled weight decay, a cosine learning-rate schedule,
//! and the training loop driving network, sampler, and loss together.

use std::ops::Range;

use crate::data::PatchSampler;
use crate::error::{Error, Result};
use crate::loss::{multi_domain_loss, LossConfig};
use crate::network::SwformerNet;
use crate::tensor::{backward, Element, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub struct AdamW<E: Element> {
    pub params: Vec<(String, Tensor<E>)>,
    // moments live in E so checkpoint narrowing is lossless
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
    pub t: u64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
}

impl<E: Element> AdamW<E> {
    pub fn new(params: Vec<(String, Tensor<E>)>, weight_decay: f64) -> AdamW<E> {
        let m = params.iter().map(|(_, p)| vec![E::zero(); p.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![E::zero(); p.numel()]).collect();
        AdamW { params, m, v, t: 0, weight_decay, grad_clip: None }
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Global-norm gradient clip; returns the pre-clip norm.
    fn clip(&self, grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for g in grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= k;
                }
            }
        }
        norm
    }

    /// One bias-corrected update. Parameters without a gradient this
    /// step are treated as zero-gradient (moments still decay).
    pub fn step(&mut self, lr: f64) -> Result<()> {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.params.len());
        for (name, p) in &self.params {
            let g = match p.grad() {
                Some(g) => g.iter().map(|v| v.as_f64()).collect(),
                None => vec![0.0; p.numel()],
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { what: "gradient", context: name.clone() });
            }
            grads.push(g);
        }
        if let Some(mx) = self.grad_clip {
            self.clip(&mut grads, mx);
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let wd = self.weight_decay;
        for (i, (_, p)) in self.params.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = &grads[i];
            let mut j = 0;
            p.update_data(|theta| {
                let mj = BETA1 * m[j].as_f64() + (1.0 - BETA1) * g[j];
                let vj = BETA2 * v[j].as_f64() + (1.0 - BETA2) * g[j] * g[j];
                m[j] = E::of(mj);
                v[j] = E::of(vj);
                let mhat = m[j].as_f64() / bc1;
                let vhat = v[j].as_f64() / bc2;
                let th = theta.as_f64();
                *theta = E::of(th - lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * th));
                j += 1;
            });
        }
        Ok(())
    }

    /// Moment buffers for checkpointing: `<param>.adam_m` / `.adam_v`.
    pub fn snapshot_arrays(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::with_capacity(2 * self.params.len());
        for (i, (name, _)) in self.params.iter().enumerate() {
            let narrow = |b: &Vec<E>| b.iter().map(|v| v.as_f64() as f32).collect::<Vec<f32>>();
            out.push((format!("{name}.adam_m"), narrow(&self.m[i])));
            out.push((format!("{name}.adam_v"), narrow(&self.v[i])));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn restore(&mut self, t: u64, arrays: &[(String, Vec<f32>)]) -> Result<()> {
        use std::collections::HashMap;
        let lookup: HashMap<&str, &Vec<f32>> =
            arrays.iter().map(|(n, a)| (n.as_str(), a)).collect();
        for (i, (name, p)) in self.params.iter().enumerate() {
            for (suffix, buf) in [("adam_m", &mut self.m[i]), ("adam_v", &mut self.v[i])] {
                let key = format!("{name}.{suffix}");
                let src = lookup.get(key.as_str()).ok_or_else(|| {
                    Error::Checkpoint(format!("optimizer state missing {key}"))
                })?;
                if src.len() != p.numel() {
                    return Err(Error::Checkpoint(format!(
                        "{key}: {} values for a {}-element parameter",
                        src.len(),
                        p.numel()
                    )));
                }
                *buf = src.iter().map(|v| E::of(*v as f64)).collect();
            }
        }
        self.t = t;
        Ok(())
    }
}

// ── Schedule ─────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    pub lr_init: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl Default for Schedule {
    fn default() -> Schedule {
        Schedule { lr_init: 1e-3, lr_min: 1e-6, total_steps: 2000 }
    }
}

/// Cosine annealing from lr_init to lr_min; t past the horizon clamps.
pub fn cosine_lr(t: u64, s: &Schedule) -> f64 {
    if t == 0 {
        return s.lr_init;
    }
    if t >= s.total_steps {
        return s.lr_min;
    }
    let x = std::f64::consts::PI * t as f64 / s.total_steps as f64;
    s.lr_min + 0.5 * (s.lr_init - s.lr_min) * (1.0 + x.cos())
}

// ── Training loop ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct TrainLogEntry {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub spatial: f64,
    pub wavelet: f64,
    pub fourier: f64,
}

impl TrainLogEntry {
    pub fn to_line(&self) -> String {
        format!(
            "step={} lr={:.9} loss={:.9} spatial={:.9} wavelet={:.9} fourier={:.9}",
            self.step, self.lr, self.loss, self.spatial, self.wavelet, self.fourier
        )
    }
}

/// Runs steps [range.start, range.end). Each step derives its batch
/// and learning rate purely from the step index, so a run interrupted
/// and resumed with restored optimizer state replays bit-identically.
pub fn train_range<E: Element>(
    net: &SwformerNet<E>,
    sampler: &PatchSampler<E>,
    opt: &mut AdamW<E>,
    lcfg: &LossConfig,
    sched: &Schedule,
    range: Range<u64>,
) -> Result<Vec<TrainLogEntry>> {
    let mut log = Vec::with_capacity((range.end - range.start) as usize);
    for step in range {
        let lr = cosine_lr(step, sched);
        let (degraded, clean) = sampler.batch_at(step)?;
        let out = net.forward(&degraded, net.cfg.variant, true)?;
        let targets = net.target_reps(&clean)?;
        let lv = multi_domain_loss(&out.exits, &targets, lcfg)?;
        let total = lv.total();
        if !total.is_finite() {
            return Err(Error::NonFinite { what: "loss", context: format!("step {step}") });
        }
        opt.zero_grads();
        backward(&lv.loss)?;
        opt.step(lr)?;
        let sum = |f: fn(&crate::loss::LossTerms) -> f64| lv.terms.iter().map(f).sum::<f64>();
        log.push(TrainLogEntry {
            step,
            lr,
            loss: total,
            spatial: sum(|t| t.spatial),
            wavelet: sum(|t| t.wavelet),
            fourier: sum(|t| t.fourier),
        });
    }
    Ok(log)
}

pub fn log_to_lines(log: &[TrainLogEntry]) -> String {
    log.iter().map(|e| e.to_line() + "\n").collect()
}
