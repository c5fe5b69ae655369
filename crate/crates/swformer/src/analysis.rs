//! Degradation analysis: residual spectra in grayscale, per sub-band
//! spectral panels with energy fractions, and cross-image sub-band
//! swapping.

use std::path::Path;

use crate::data::save_png;
use crate::error::{Error, Result};
use crate::metrics::to_y_channel;
use crate::tensor::{Element, Tensor};
use crate::transforms::{dwt2, fft2, idwt2, SubBands, WaveletFilterBank, BAND_NAMES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    Ll,
    Lh,
    Hl,
    Hh,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::Ll, Band::Lh, Band::Hl, Band::Hh];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        BAND_NAMES[self.index()]
    }

    pub fn parse(s: &str) -> Result<Band> {
        match s.to_ascii_lowercase().as_str() {
            "ll" => Ok(Band::Ll),
            "lh" => Ok(Band::Lh),
            "hl" => Ok(Band::Hl),
            "hh" => Ok(Band::Hh),
            other => Err(Error::Config(format!("unknown sub-band {other:?} (use ll|lh|hl|hh)"))),
        }
    }

    /// Comma-separated list, e.g. "ll,hh"; "all" selects every band.
    pub fn parse_set(s: &str) -> Result<Vec<Band>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Band::ALL.to_vec());
        }
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let b = Band::parse(part)?;
            if !out.contains(&b) {
                out.push(b);
            }
        }
        Ok(out)
    }
}

pub struct SpectralReport<E: Element> {
    /// Grayscale residual, degraded minus clean.
    pub residual: Tensor<E>,
    /// log(1+|F|) of the residual, DC bin centered.
    pub residual_spectrum: Tensor<E>,
    /// Same display per sub-band of one Haar level, order LL,LH,HL,HH.
    pub band_spectra: [Tensor<E>; 4],
    /// Share of residual energy per band; sums to 1 (uniform 1/4 when
    /// the residual is exactly zero).
    pub energy_fractions: [f64; 4],
}

fn to_gray<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    match x.shape().c {
        1 => Ok(x.clone()),
        3 => to_y_channel(x),
        c => Err(Error::dim("analyze_pair", format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// DC-centered log magnitude of the orthonormal FFT.
fn log_spectrum<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let f = fft2(x)?;
    let (re, im) = (f.real.to_vec(), f.imag.to_vec());
    let s = x.shape();
    let mut out = vec![E::zero(); s.numel()];
    let plane = s.h * s.w;
    for p in 0..s.n * s.c {
        for y in 0..s.h {
            for xx in 0..s.w {
                let i = p * plane + y * s.w + xx;
                let mag = (re[i].as_f64().powi(2) + im[i].as_f64().powi(2)).sqrt();
                let sy = (y + s.h / 2) % s.h;
                let sx = (xx + s.w / 2) % s.w;
                out[p * plane + sy * s.w + sx] = E::of(mag.ln_1p());
            }
        }
    }
    Ok(Tensor::from_vec(out, s))
}

fn energy<E: Element>(t: &Tensor<E>) -> f64 {
    t.to_vec().iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

pub fn analyze_pair<E: Element>(clean: &Tensor<E>, degraded: &Tensor<E>) -> Result<SpectralReport<E>> {
    if clean.shape() != degraded.shape() {
        return Err(Error::dim(
            "analyze_pair",
            format!("{:?} vs {:?}", clean.shape().dims(), degraded.shape().dims()),
        ));
    }
    let residual = to_gray(degraded)?.sub(&to_gray(clean)?)?;
    let residual_spectrum = log_spectrum(&residual)?;

    let s = residual.shape();
    let (pb, pr) = (s.h % 2, s.w % 2);
    let even = if pb + pr > 0 { residual.pad_reflect(pb, pr)? } else { residual.clone() };
    let bands = dwt2(&even, &WaveletFilterBank::haar())?;
    let parts = bands.bands();
    let band_spectra = [
        log_spectrum(parts[0])?,
        log_spectrum(parts[1])?,
        log_spectrum(parts[2])?,
        log_spectrum(parts[3])?,
    ];
    let energies: [f64; 4] = std::array::from_fn(|i| energy(parts[i]));
    let total: f64 = energies.iter().sum();
    let energy_fractions = if total == 0.0 {
        [0.25; 4]
    } else {
        std::array::from_fn(|i| energies[i] / total)
    };
    Ok(SpectralReport { residual, residual_spectrum, band_spectra, energy_fractions })
}

impl<E: Element> SpectralReport<E> {
    /// key=value energy table, one line per band plus the total.
    pub fn energy_table(&self) -> String {
        let mut out = String::new();
        for (i, name) in BAND_NAMES.iter().enumerate() {
            out.push_str(&format!("band_{name}={:.9}\n", self.energy_fractions[i]));
        }
        out.push_str(&format!("residual_energy={:.9}\n", energy(&self.residual)));
        out
    }

    /// Writes `<stem>_residual.png`, `<stem>_spectrum.png`, four
    /// `<stem>_band_*.png` panels, and `<stem>_energy.txt`.
    pub fn write_panels(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let norm = |t: &Tensor<E>| -> Tensor<E> {
            let v = t.to_vec();
            let lo = v.iter().map(|x| x.as_f64()).fold(f64::INFINITY, f64::min);
            let hi = v.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            Tensor::from_vec(
                v.iter().map(|x| E::of((x.as_f64() - lo) / span)).collect(),
                t.shape(),
            )
        };
        save_png(&dir.join(format!("{stem}_residual.png")), &norm(&self.residual), false)?;
        save_png(&dir.join(format!("{stem}_spectrum.png")), &norm(&self.residual_spectrum), false)?;
        for (i, name) in BAND_NAMES.iter().enumerate() {
            save_png(&dir.join(format!("{stem}_band_{name}.png")), &norm(&self.band_spectra[i]), false)?;
        }
        let tpath = dir.join(format!("{stem}_energy.txt"));
        std::fs::write(&tpath, self.energy_table()).map_err(|e| Error::io(tpath, e))
    }
}

/// Exchanges the chosen sub-bands between two images. Empty band set
/// is the identity. Swapping the same set twice restores the originals
/// up to transform round-trip error. Needs even H and W so the
/// transform is invertible without padding.
pub fn swap_subbands<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    bands: &[Band],
) -> Result<(Tensor<E>, Tensor<E>)> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "swap_subbands",
            format!("{:?} vs {:?}", a.shape().dims(), b.shape().dims()),
        ));
    }
    let s = a.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::dim("swap_subbands", format!("dims {}x{} must be even", s.h, s.w)));
    }
    if bands.is_empty() {
        return Ok((a.clone(), b.clone()));
    }
    let bank = WaveletFilterBank::haar();
    let da = dwt2(a, &bank)?;
    let db = dwt2(b, &bank)?;
    let mut na: Vec<Tensor<E>> = da.bands().into_iter().cloned().collect();
    let mut nb: Vec<Tensor<E>> = db.bands().into_iter().cloned().collect();
    for band in bands {
        std::mem::swap(&mut na[band.index()], &mut nb[band.index()]);
    }
    let rebuild = |v: Vec<Tensor<E>>| SubBands {
        ll: v[0].clone(),
        lh: v[1].clone(),
        hl: v[2].clone(),
        hh: v[3].clone(),
    };
    Ok((idwt2(&rebuild(na), &bank)?, idwt2(&rebuild(nb), &bank)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
            Shape::new(1, 3, h, w),
        )
    }

    #[test]
    fn identical_pair_reports_uniform_quarters() {
        let x = rand_img(1, 8, 8);
        let rep = analyze_pair(&x, &x).unwrap();
        assert_eq!(rep.residual.max_abs(), 0.0);
        assert_eq!(rep.residual_spectrum.max_abs(), 0.0);
        assert_eq!(rep.energy_fractions, [0.25; 4]);
        let table = rep.energy_table();
        assert!(table.contains("band_ll=0.25"), "{table}");
    }

    #[test]
    fn horizontal_sinusoid_concentrates_in_one_bin_pair() {
        let (h, w) = (16, 16);
        let clean = Tensor::<f64>::zeros(Shape::new(1, 1, h, w));
        let freq = 3.0;
        let data: Vec<f64> = (0..h * w)
            .map(|i| (2.0 * std::f64::consts::PI * freq * (i % w) as f64 / w as f64).sin())
            .collect();
        let degraded = Tensor::from_vec(data, Shape::new(1, 1, h, w));
        let rep = analyze_pair(&clean, &degraded).unwrap();
        // undo the display shift and log to rank raw magnitudes
        let spec = rep.residual_spectrum.to_vec();
        let mut mags: Vec<(f64, usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let sy = (y + h / 2) % h;
                let sx = (x + w / 2) % w;
                mags.push((spec[sy * w + sx].exp_m1(), y, x));
            }
        }
        let total: f64 = mags.iter().map(|(m, _, _)| m * m).sum();
        mags.sort_by(|a, b| b.0.total_cmp(&a.0));
        let top2: f64 = mags[..2].iter().map(|(m, _, _)| m * m).sum();
        assert!(top2 / total > 0.99, "top2 {top2} of {total}");
        let bins: Vec<(usize, usize)> = mags[..2].iter().map(|(_, y, x)| (*y, *x)).collect();
        assert!(bins.contains(&(0, 3)) && bins.contains(&(0, 13)), "{bins:?}");
    }

    #[test]
    fn constant_offset_lives_in_ll() {
        let clean = rand_img(2, 8, 8);
        let degraded = clean.add_scalar(0.2).unwrap();
        let rep = analyze_pair(&clean, &degraded).unwrap();
        assert!(rep.energy_fractions[0] > 0.99, "{:?}", rep.energy_fractions);
        let sum: f64 = rep.energy_fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn band_energies_account_for_residual_energy() {
        let clean = rand_img(3, 12, 10);
        let degraded = rand_img(4, 12, 10);
        let rep = analyze_pair(&clean, &degraded).unwrap();
        let resid_energy: f64 = rep
            .residual
            .to_vec()
            .iter()
            .map(|v| v * v)
            .sum();
        let fractions_sum: f64 = rep.energy_fractions.iter().sum();
        assert!((fractions_sum - 1.0).abs() < 1e-9);
        // orthonormality: band energies reproduce the residual energy
        let band_total: f64 = rep
            .energy_fractions
            .iter()
            .map(|f| f * resid_energy)
            .sum();
        assert!((band_total - resid_energy).abs() / resid_energy.max(1e-12) < 1e-4);
    }

    #[test]
    fn swap_is_involutive_and_total_exchange_swaps() {
        for (h, w) in [(8, 8), (10, 6)] {
            let a = rand_img(5, h, w);
            let b = rand_img(6, h, w);
            for bands in [vec![Band::Ll], vec![Band::Lh, Band::Hh], Band::ALL.to_vec()] {
                let (a1, b1) = swap_subbands(&a, &b, &bands).unwrap();
                let (a2, b2) = swap_subbands(&a1, &b1, &bands).unwrap();
                assert!(a2.sub(&a).unwrap().max_abs() < 1e-10, "{h}x{w} {bands:?}");
                assert!(b2.sub(&b).unwrap().max_abs() < 1e-10, "{h}x{w} {bands:?}");
            }
        }
        let odd = rand_img(12, 9, 7);
        assert!(swap_subbands(&odd, &odd, &[Band::Ll]).is_err());
        let a = rand_img(7, 8, 8);
        let b = rand_img(8, 8, 8);
        let (a1, b1) = swap_subbands(&a, &b, &Band::ALL).unwrap();
        assert!(a1.sub(&b).unwrap().max_abs() < 1e-10);
        assert!(b1.sub(&a).unwrap().max_abs() < 1e-10);

        let (a0, b0) = swap_subbands(&a, &b, &[]).unwrap();
        assert_eq!(a0.to_vec(), a.to_vec());
        assert_eq!(b0.to_vec(), b.to_vec());
    }

    #[test]
    fn ll_swap_transfers_brightness() {
        let b = rand_img(9, 16, 16).scale(0.8).unwrap().add_scalar(0.2).unwrap();
        let a = b.scale(0.5).unwrap();
        let (a1, b1) = swap_subbands(&a, &b, &[Band::Ll]).unwrap();
        let mean = |t: &Tensor<f64>| t.to_vec().iter().sum::<f64>() / t.numel() as f64;
        assert!((mean(&a1) - mean(&b)).abs() / mean(&b) < 0.02);
        assert!((mean(&b1) - mean(&a)).abs() / mean(&a) < 0.02);
    }

    #[test]
    fn panels_render_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let clean = rand_img(10, 16, 16);
        let degraded = clean.add_scalar(0.1).unwrap();
        let rep = analyze_pair(&clean, &degraded).unwrap();
        rep.write_panels(dir.path(), "pair0").unwrap();
        for f in ["pair0_residual.png", "pair0_spectrum.png", "pair0_band_ll.png", "pair0_energy.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(swap_subbands(&clean, &rand_img(11, 8, 8), &Band::ALL).is_err());
    }
}
