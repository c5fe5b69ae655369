//! Checkpoint persistence. Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SWFCKPT1"
//! 8       4     format version (u32, currently 1)
//! 12      4     config text length L (u32)
//! 16      L     config text, canonical sorted key=value lines, utf-8
//! 16+L    8     rng seed (u64)
//! ...     4     array count (u32), arrays sorted by name, each:
//!                 u32 name length, name bytes, u32 numel, numel f32s
//! ...     1     optimizer flag (0 absent, 1 present); when present:
//!                 u64 step count, u32 array count, arrays as above
//!                 (names are <param>.adam_m / <param>.adam_v)
//! ```
//!
//! Weights persist as f32 regardless of the in-memory element type.
//! Save -> load -> save is byte-identical because array order, name
//! encoding, and float widths are all pinned.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::SwformerNet;
use crate::optim::AdamW;
use crate::tensor::Element;

pub const MAGIC: &[u8; 8] = b"SWFCKPT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimSnapshot {
    pub step: u64,
    pub arrays: Vec<(String, Vec<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub seed: u64,
    pub arrays: Vec<(String, Vec<f32>)>,
    pub optim: Option<OptimSnapshot>,
}

fn check_sorted_unique(arrays: &[(String, Vec<f32>)], what: &str) -> Result<()> {
    for pair in arrays.windows(2) {
        if pair[0].0 >= pair[1].0 {
            return Err(Error::Checkpoint(format!(
                "{what} arrays not sorted/unique around {:?}",
                pair[1].0
            )));
        }
    }
    Ok(())
}

fn write_arrays(buf: &mut Vec<u8>, arrays: &[(String, Vec<f32>)]) {
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, values) in arrays {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.at,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn arrays(&mut self) -> Result<Vec<(String, Vec<f32>)>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = self.u32()? as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("array name not utf-8: {e}")))?;
            let numel = self.u32()? as usize;
            let raw = self.take(4 * numel)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push((name, values));
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        check_sorted_unique(&self.arrays, "weight")?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        buf.extend_from_slice(self.config_text.as_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        write_arrays(&mut buf, &self.arrays);
        match &self.optim {
            None => buf.push(0),
            Some(o) => {
                check_sorted_unique(&o.arrays, "optimizer")?;
                buf.push(1);
                buf.extend_from_slice(&o.step.to_le_bytes());
                write_arrays(&mut buf, &o.arrays);
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let cfg_len = r.u32()? as usize;
        let config_text = String::from_utf8(r.take(cfg_len)?.to_vec())
            .map_err(|e| Error::Checkpoint(format!("config text not utf-8: {e}")))?;
        let seed = r.u64()?;
        let arrays = r.arrays()?;
        check_sorted_unique(&arrays, "weight")?;
        let optim = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let arrays = r.arrays()?;
                check_sorted_unique(&arrays, "optimizer")?;
                Some(OptimSnapshot { step, arrays })
            }
            other => return Err(Error::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.at != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint payload",
                buf.len() - r.at
            )));
        }
        Ok(Checkpoint { config_text, seed, arrays, optim })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf)
    }
}

/// Snapshot of a network (weights + BN running stats) and optionally
/// its optimizer.
pub fn snapshot<E: Element>(
    net: &SwformerNet<E>,
    opt: Option<&AdamW<E>>,
    config_text: impl Into<String>,
    seed: u64,
) -> Checkpoint {
    let mut arrays: Vec<(String, Vec<f32>)> = net
        .named_params()
        .into_iter()
        .chain(net.named_stats())
        .map(|(n, p)| (n, p.to_vec().iter().map(|v| v.as_f64() as f32).collect()))
        .collect();
    arrays.sort_by(|a, b| a.0.cmp(&b.0));
    Checkpoint {
        config_text: config_text.into(),
        seed,
        arrays,
        optim: opt.map(|o| OptimSnapshot { step: o.t, arrays: o.snapshot_arrays() }),
    }
}

/// Writes checkpoint arrays into an existing network; every array must
/// match a parameter or stat of the same name and size, and vice versa.
pub fn restore_into<E: Element>(ckpt: &Checkpoint, net: &SwformerNet<E>) -> Result<()> {
    let mut targets: std::collections::BTreeMap<String, crate::tensor::Tensor<E>> =
        net.named_params().into_iter().chain(net.named_stats()).collect();
    if targets.len() != ckpt.arrays.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} arrays, network expects {}",
            ckpt.arrays.len(),
            targets.len()
        )));
    }
    for (name, values) in &ckpt.arrays {
        let t = targets
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected array {name:?}")))?;
        if t.numel() != values.len() {
            return Err(Error::Checkpoint(format!(
                "{name}: {} values for a {}-element tensor",
                values.len(),
                t.numel()
            )));
        }
        t.set_data(&values.iter().map(|v| E::of(*v as f64)).collect::<Vec<_>>());
    }
    Ok(())
}

/// Restores optimizer moment buffers and step counter.
pub fn restore_optim<E: Element>(ckpt: &Checkpoint, opt: &mut AdamW<E>) -> Result<()> {
    let o = ckpt
        .optim
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
    opt.restore(o.step, &o.arrays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_corpus, Degradation, PatchSampler};
    use crate::loss::LossConfig;
    use crate::network::{ModelConfig, Variant};
    use crate::optim::{train_range, Schedule};
    use crate::tensor::Tensor;

    fn small_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::tiny();
        cfg.base_width = 8;
        cfg.blocks_per_stage = [1, 1, 1, 1, 1];
        cfg.variant = Variant::Small;
        cfg
    }

    #[test]
    fn byte_round_trip_is_identical() {
        let net: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 3).unwrap();
        let opt = AdamW::new(net.named_params(), 0.0);
        let ck = snapshot(&net, Some(&opt), "a=1\nb=2\n", 42);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn save_load_preserves_forward_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 5).unwrap();
        let x = Tensor::<f32>::from_vec(
            (0..3 * 16 * 16).map(|i| (i as f32 * 0.37).sin() * 0.5 + 0.5).collect(),
            crate::tensor::Shape::new(1, 3, 16, 16),
        );
        let before = net.forward(&x, Variant::Small, false).unwrap().exits[0].1.to_vec();
        snapshot(&net, None, "", 0).save(&path).unwrap();

        let net2: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 999).unwrap();
        restore_into(&Checkpoint::load(&path).unwrap(), &net2).unwrap();
        let after = net2.forward(&x, Variant::Small, false).unwrap().exits[0].1.to_vec();
        assert_eq!(before, after);
    }

    #[test]
    fn resumed_training_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        let pairs = make_corpus::<f32>(2, 16, 16, &[Degradation::default_rain()], 7).unwrap();
        let lcfg = LossConfig::default();
        let sched = Schedule { lr_init: 1e-3, lr_min: 1e-6, total_steps: 20 };

        // uninterrupted: 20 steps
        let net_a: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 11).unwrap();
        let sampler_a = PatchSampler::new(pairs.clone(), 16, 1, 13).unwrap();
        let mut opt_a = AdamW::new(net_a.named_params(), 0.0);
        train_range(&net_a, &sampler_a, &mut opt_a, &lcfg, &sched, 0..20).unwrap();

        // interrupted at 10, checkpointed, resumed in fresh objects
        let net_b: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 11).unwrap();
        let sampler_b = PatchSampler::new(pairs, 16, 1, 13).unwrap();
        let mut opt_b = AdamW::new(net_b.named_params(), 0.0);
        train_range(&net_b, &sampler_b, &mut opt_b, &lcfg, &sched, 0..10).unwrap();
        snapshot(&net_b, Some(&opt_b), "", 11).save(&path).unwrap();

        let net_c: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 0).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        restore_into(&ck, &net_c).unwrap();
        let mut opt_c = AdamW::new(net_c.named_params(), 0.0);
        restore_optim(&ck, &mut opt_c).unwrap();
        assert_eq!(opt_c.t, 10);
        let sampler_c = sampler_b;
        train_range(&net_c, &sampler_c, &mut opt_c, &lcfg, &sched, 10..20).unwrap();

        for ((na, pa), (_, pc)) in net_a.named_params().iter().zip(net_c.named_params()) {
            assert_eq!(pa.to_vec(), pc.to_vec(), "trajectory split at {na}");
        }
    }

    #[test]
    fn corrupt_inputs_are_checkpoint_errors() {
        assert!(matches!(
            Checkpoint::from_bytes(b"NOTACKPT"),
            Err(Error::Checkpoint(_))
        ));
        let net: SwformerNet<f32> = SwformerNet::new(&small_cfg(), 1).unwrap();
        let ck = snapshot(&net, None, "", 0);
        let bytes = ck.to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));

        // unsorted arrays refuse to serialize
        let bad = Checkpoint {
            config_text: "".into(),
            seed: 0,
            arrays: vec![("b".into(), vec![1.0]), ("a".into(), vec![2.0])],
            optim: None,
        };
        assert!(matches!(bad.to_bytes(), Err(Error::Checkpoint(_))));

        // mismatched architecture refuses to restore
        let mut other_cfg = small_cfg();
        other_cfg.base_width = 12;
        let other: SwformerNet<f32> = SwformerNet::new(&other_cfg, 1).unwrap();
        assert!(matches!(restore_into(&ck, &other), Err(Error::Checkpoint(_))));
    }
}
