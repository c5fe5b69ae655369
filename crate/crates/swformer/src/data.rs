//! Synthetic paired-degradation corpus: procedural clean images,
//! seeded degradation generators, PNG persistence, paired-folder
//! ingestion, and a deterministic patch sampler.
//!
//! Everything here is a pure function of its seed; corpora regenerate
//! bit-identically on any machine.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Mixes a stream label into a base seed; used everywhere two seeded
/// stages must not share an RNG stream (splitmix64 finalizer).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ── Degradations ─────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Degradation {
    RainStreaks { count: usize, angle_deg: f64, length: usize, intensity: f64 },
    /// Scattering model I = J*t + A*(1-t) with a smooth transmission
    /// field drawn from [t_min, t_max].
    Haze { t_min: f64, t_max: f64, airlight: f64 },
    GaussianBlur { sigma: f64 },
    LowLight { gamma: f64, noise_sigma: f64 },
}

impl Degradation {
    pub fn kind(&self) -> &'static str {
        match self {
            Degradation::RainStreaks { .. } => "rain_streaks",
            Degradation::Haze { .. } => "haze",
            Degradation::GaussianBlur { .. } => "gaussian_blur",
            Degradation::LowLight { .. } => "low_light",
        }
    }

    pub fn default_rain() -> Degradation {
        Degradation::RainStreaks { count: 60, angle_deg: 80.0, length: 12, intensity: 0.35 }
    }

    pub fn default_haze() -> Degradation {
        Degradation::Haze { t_min: 0.35, t_max: 0.7, airlight: 0.85 }
    }

    pub fn default_blur() -> Degradation {
        Degradation::GaussianBlur { sigma: 1.6 }
    }

    pub fn default_low_light() -> Degradation {
        Degradation::LowLight { gamma: 2.4, noise_sigma: 0.02 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            Degradation::RainStreaks { intensity, length, .. } => {
                if intensity < 0.0 {
                    return bad(format!("rain intensity must be >= 0, got {intensity}"));
                }
                if length == 0 {
                    return bad("rain streak length must be >= 1".into());
                }
            }
            Degradation::Haze { t_min, t_max, airlight } => {
                if !(t_min > 0.0 && t_min <= t_max && t_max <= 1.0) {
                    return bad(format!("transmission range ({t_min}, {t_max}) must lie in (0, 1]"));
                }
                if !(0.0..=1.0).contains(&airlight) {
                    return bad(format!("airlight {airlight} must lie in [0, 1]"));
                }
            }
            Degradation::GaussianBlur { sigma } => {
                if sigma < 0.0 {
                    return bad(format!("blur sigma must be >= 0, got {sigma}"));
                }
            }
            Degradation::LowLight { gamma, noise_sigma } => {
                if gamma <= 0.0 {
                    return bad(format!("gamma must be > 0, got {gamma}"));
                }
                if noise_sigma < 0.0 {
                    return bad(format!("noise sigma must be >= 0, got {noise_sigma}"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DegradationSpec {
    pub kind: Degradation,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PairedSample<E: Element> {
    pub degraded: Tensor<E>,
    pub clean: Tensor<E>,
    pub id: String,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// RGB planes of a (1,3,h,w) tensor as f64, plus dims.
fn planes<E: Element>(t: &Tensor<E>) -> (Vec<f64>, usize, usize) {
    let s = t.shape();
    (t.to_vec().iter().map(|v| v.as_f64()).collect(), s.h, s.w)
}

fn from_planes<E: Element>(data: Vec<f64>, c: usize, h: usize, w: usize) -> Tensor<E> {
    Tensor::from_vec(data.into_iter().map(E::of).collect(), Shape::new(1, c, h, w))
}

/// Smooth per-pixel field in [lo, hi]: a seeded coarse grid upsampled
/// bilinearly to the target size.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Vec<f64> {
    if lo == hi {
        return vec![lo; h * w];
    }
    let g = 4usize;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.random_range(lo..=hi)).collect();
    Tensor::<f64>::from_vec(grid, Shape::new(1, 1, g, g))
        .bilinear_resize(h, w)
        .expect("grid upsample")
        .to_vec()
}

fn apply_rain(
    img: &mut [f64],
    h: usize,
    w: usize,
    rng: &mut ChaCha8Rng,
    count: usize,
    angle_deg: f64,
    length: usize,
    intensity: f64,
) {
    for _ in 0..count {
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let jitter = rng.random_range(-8.0..8.0);
        let ang = (angle_deg + jitter).to_radians();
        let (dx, dy) = (ang.cos(), ang.sin());
        let gain = intensity * rng.random_range(0.6..1.0);
        for j in 0..length {
            let x = (x0 + dx * j as f64).round();
            let y = (y0 + dy * j as f64).round();
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let falloff = 1.0 - 0.5 * j as f64 / length as f64;
            let at = y as usize * w + x as usize;
            for c in 0..3 {
                let i = c * h * w + at;
                img[i] = clamp01(img[i] + gain * falloff);
            }
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable blur with reflect edge handling, per channel.
fn apply_blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let reflect = |i: isize, n: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let mut v = i.rem_euclid(period);
        if v >= n {
            v = period - v;
        }
        v as usize
    };
    let mut out = vec![0.0; img.len()];
    let mut tmp = vec![0.0; h * w];
    for c in 0..3 {
        let plane = &img[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + i as isize - r as isize, w as isize);
                    s += kv * plane[y * w + sx];
                }
                tmp[y * w + x] = s;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + i as isize - r as isize, h as isize);
                    s += kv * tmp[sy * w + x];
                }
                out[c * h * w + y * w + x] = clamp01(s);
            }
        }
    }
    out
}

/// Applies `spec` to a clean image in [0,1]. Same spec and seed give a
/// bit-identical result.
pub fn synth_pair<E: Element>(clean: &Tensor<E>, spec: &DegradationSpec, id: impl Into<String>) -> Result<PairedSample<E>> {
    spec.kind.validate()?;
    let s = clean.shape();
    if s.c != 3 || s.n != 1 {
        return Err(Error::dim("synth_pair", format!("expected (1,3,h,w), got {:?}", s.dims())));
    }
    let (mut img, h, w) = planes(clean);
    let rng = &mut ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        Degradation::RainStreaks { count, angle_deg, length, intensity } => {
            apply_rain(&mut img, h, w, rng, count, angle_deg, length, intensity);
        }
        Degradation::Haze { t_min, t_max, airlight } => {
            let t = smooth_field(rng, h, w, t_min, t_max);
            for c in 0..3 {
                for i in 0..h * w {
                    let j = c * h * w + i;
                    img[j] = clamp01(img[j] * t[i] + airlight * (1.0 - t[i]));
                }
            }
        }
        Degradation::GaussianBlur { sigma } => {
            img = apply_blur(&img, h, w, sigma);
        }
        Degradation::LowLight { gamma, noise_sigma } => {
            for v in &mut img {
                let mut nv = v.powf(gamma);
                if noise_sigma > 0.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    nv += noise_sigma * n;
                }
                *v = clamp01(nv);
            }
        }
    }
    Ok(PairedSample { degraded: from_planes(img, 3, h, w), clean: clean.clone(), id: id.into() })
}

// ── Procedural clean images ──────────────────────────────────────────────

/// Seeded clean image: gradients, checkerboards, smooth color fields,
/// or stroke glyphs, rotating by seed.
pub fn make_clean<E: Element>(seed: u64, h: usize, w: usize) -> Tensor<E> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.0; 3 * h * w];
    match rng.random_range(0..4u32) {
        0 => {
            // directional gradient between two colors
            let ca: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let cb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (dx, dy) = (ang.cos(), ang.sin());
            let span = (h as f64 * dy.abs() + w as f64 * dx.abs()).max(1.0);
            for y in 0..h {
                for x in 0..w {
                    let t = ((x as f64 * dx + y as f64 * dy) / span).rem_euclid(1.0);
                    for c in 0..3 {
                        img[c * h * w + y * w + x] = ca[c] + (cb[c] - ca[c]) * t;
                    }
                }
            }
        }
        1 => {
            let cell = rng.random_range(4..=12usize);
            let ca: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let cb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            for y in 0..h {
                for x in 0..w {
                    let col = if (y / cell + x / cell) % 2 == 0 { &ca } else { &cb };
                    for c in 0..3 {
                        img[c * h * w + y * w + x] = col[c];
                    }
                }
            }
        }
        2 => {
            for c in 0..3 {
                let f = smooth_field(rng, h, w, 0.05, 0.95);
                img[c * h * w..(c + 1) * h * w].copy_from_slice(&f);
            }
        }
        _ => {
            // stroke glyphs: thick random segments on a flat background
            let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..0.9));
            for c in 0..3 {
                for v in &mut img[c * h * w..(c + 1) * h * w] {
                    *v = bg[c];
                }
            }
            for _ in 0..rng.random_range(6..14u32) {
                let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.45));
                let (x0, y0) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let len = rng.random_range(0.2..0.6) * h.min(w) as f64;
                let (x1, y1) = (x0 + ang.cos() * len, y0 + ang.sin() * len);
                let thick = rng.random_range(1.0..2.5f64);
                for y in 0..h {
                    for x in 0..w {
                        // distance from pixel center to the segment
                        let (px, py) = (x as f64, y as f64);
                        let (vx, vy) = (x1 - x0, y1 - y0);
                        let t = (((px - x0) * vx + (py - y0) * vy) / (vx * vx + vy * vy))
                            .clamp(0.0, 1.0);
                        let (cx, cy) = (x0 + t * vx, y0 + t * vy);
                        if ((px - cx).powi(2) + (py - cy).powi(2)).sqrt() <= thick {
                            for c in 0..3 {
                                img[c * h * w + y * w + x] = fg[c];
                            }
                        }
                    }
                }
            }
        }
    }
    for v in &mut img {
        *v = clamp01(*v);
    }
    from_planes(img, 3, h, w)
}

/// n paired samples of size `h` x `w`; image i uses specs[i % len] with
/// a per-image seed derived from (seed, i).
pub fn make_corpus<E: Element>(
    n_images: usize,
    h: usize,
    w: usize,
    kinds: &[Degradation],
    seed: u64,
) -> Result<Vec<PairedSample<E>>> {
    if kinds.is_empty() {
        return Err(Error::Config("make_corpus needs at least one degradation".into()));
    }
    let mut out = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let clean = make_clean::<E>(mix_seed(seed, 2 * i as u64), h, w);
        let spec = DegradationSpec {
            kind: kinds[i % kinds.len()],
            seed: mix_seed(seed, 2 * i as u64 + 1),
        };
        out.push(synth_pair(&clean, &spec, format!("img_{i:04}"))?);
    }
    Ok(out)
}

// ── PNG I/O ──────────────────────────────────────────────────────────────

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), detail: e.to_string() }
}

/// Writes a (1,c,h,w) tensor in [0,1] as PNG; c must be 1 or 3.
pub fn save_png<E: Element>(path: &Path, t: &Tensor<E>, sixteen_bit: bool) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::dim("save_png", format!("expected (1,1|3,h,w), got {:?}", s.dims())));
    }
    let v = t.to_vec();
    let plane = s.h * s.w;
    let px = |c: usize, i: usize| v[c * plane + i].as_f64().clamp(0.0, 1.0);
    if sixteen_bit {
        let mut buf: Vec<u16> = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                buf.push((px(c.min(s.c - 1), i) * 65535.0).round() as u16);
            }
        }
        let im: image::ImageBuffer<image::Rgb<u16>, _> =
            image::ImageBuffer::from_raw(s.w as u32, s.h as u32, buf)
                .expect("sized buffer");
        im.save(path).map_err(|e| image_err(path, e))
    } else {
        let mut buf: Vec<u8> = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                buf.push((px(c.min(s.c - 1), i) * 255.0).round() as u8);
            }
        }
        let im: image::RgbImage =
            image::ImageBuffer::from_raw(s.w as u32, s.h as u32, buf).expect("sized buffer");
        im.save(path).map_err(|e| image_err(path, e))
    }
}

/// Loads a PNG as (1,3,h,w) in [0,1]; 16-bit files keep their depth.
pub fn load_png<E: Element>(path: &Path) -> Result<Tensor<E>> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let mut data = vec![0.0f64; 3 * h * w];
    match dynimg {
        image::DynamicImage::ImageRgb16(im) => {
            for (i, p) in im.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = p.0[c] as f64 / 65535.0;
                }
            }
        }
        image::DynamicImage::ImageLuma16(im) => {
            for (i, p) in im.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = p.0[0] as f64 / 65535.0;
                }
            }
        }
        other => {
            let im = other.to_rgb8();
            for (i, p) in im.pixels().enumerate() {
                for c in 0..3 {
                    data[c * h * w + i] = p.0[c] as f64 / 255.0;
                }
            }
        }
    }
    Ok(from_planes(data, 3, h, w))
}

/// Writes `<dir>/degraded/<id>.png`, `<dir>/clean/<id>.png` pairs and a
/// small manifest.
pub fn save_corpus<E: Element>(dir: &Path, pairs: &[PairedSample<E>], sixteen_bit: bool) -> Result<()> {
    let (deg, cln) = (dir.join("degraded"), dir.join("clean"));
    for d in [&deg, &cln] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut manifest = String::new();
    for p in pairs {
        save_png(&deg.join(format!("{}.png", p.id)), &p.degraded, sixteen_bit)?;
        save_png(&cln.join(format!("{}.png", p.id)), &p.clean, sixteen_bit)?;
        let s = p.clean.shape();
        manifest.push_str(&format!("pair id={} h={} w={}\n", p.id, s.h, s.w));
    }
    let mpath = dir.join("corpus.txt");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(mpath, e))
}

/// Ingests `<root>/degraded` + `<root>/clean` with matching stems,
/// sorted by stem. Orphans on either side fail the load.
/// Validated (stem, degraded path, clean path) triples under
/// `<root>/degraded` and `<root>/clean`, sorted by stem.
pub fn paired_stems(root: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let stems = |sub: &str| -> Result<BTreeMap<String, PathBuf>> {
        let dir = root.join(sub);
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("png") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    out.insert(stem.to_string(), path.clone());
                }
            }
        }
        Ok(out)
    };
    let deg = stems("degraded")?;
    let mut cln = stems("clean")?;
    let orphans: Vec<String> = deg
        .keys()
        .filter(|k| !cln.contains_key(*k))
        .chain(cln.keys().filter(|k| !deg.contains_key(*k)))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Unpaired { root: root.to_path_buf(), stems: orphans });
    }
    if deg.is_empty() {
        return Err(Error::Usage(format!("no png pairs under {}", root.display())));
    }
    Ok(deg
        .into_iter()
        .map(|(stem, dpath)| {
            let cpath = cln.remove(&stem).unwrap();
            (stem, dpath, cpath)
        })
        .collect())
}

pub fn load_paired_folder<E: Element>(root: &Path) -> Result<Vec<PairedSample<E>>> {
    let triples = paired_stems(root)?;
    let mut pairs = Vec::with_capacity(triples.len());
    for (stem, dpath, cpath) in &triples {
        let degraded = load_png::<E>(dpath)?;
        let clean = load_png::<E>(cpath)?;
        if degraded.shape() != clean.shape() {
            return Err(Error::dim(
                "load_paired_folder",
                format!("{stem}: degraded {:?} vs clean {:?}", degraded.shape().dims(), clean.shape().dims()),
            ));
        }
        pairs.push(PairedSample { degraded, clean, id: stem.clone() });
    }
    Ok(pairs)
}

// ── Patch sampling ───────────────────────────────────────────────────────

/// Planned crop: (pair index, top, left).
pub type PatchPlan = Vec<(usize, usize, usize)>;

pub struct PatchSampler<E: Element> {
    pub pairs: Vec<PairedSample<E>>,
    pub patch: usize,
    pub batch: usize,
    pub seed: u64,
}

impl<E: Element> PatchSampler<E> {
    pub fn new(pairs: Vec<PairedSample<E>>, patch: usize, batch: usize, seed: u64) -> Result<PatchSampler<E>> {
        if pairs.is_empty() {
            return Err(Error::Usage("patch sampler needs at least one pair".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        for p in &pairs {
            let s = p.clean.shape();
            if patch > s.h || patch > s.w || patch == 0 {
                return Err(Error::dim(
                    "patch_sampler",
                    format!("patch {patch} does not fit pair {} of {}x{}", p.id, s.h, s.w),
                ));
            }
        }
        Ok(PatchSampler { pairs, patch, batch, seed })
    }

    /// The crops step t will take; a pure function of (seed, t).
    pub fn plan_at(&self, step: u64) -> PatchPlan {
        let rng = &mut ChaCha8Rng::seed_from_u64(mix_seed(self.seed, step));
        (0..self.batch)
            .map(|_| {
                let pi = rng.random_range(0..self.pairs.len());
                let s = self.pairs[pi].clean.shape();
                let y = rng.random_range(0..=s.h - self.patch);
                let x = rng.random_range(0..=s.w - self.patch);
                (pi, y, x)
            })
            .collect()
    }

    fn crop(t: &Tensor<E>, y0: usize, x0: usize, p: usize) -> Tensor<E> {
        let s = t.shape();
        let v = t.to_vec();
        let mut out = Vec::with_capacity(s.c * p * p);
        for c in 0..s.c {
            for y in 0..p {
                let row = c * s.h * s.w + (y0 + y) * s.w + x0;
                out.extend_from_slice(&v[row..row + p]);
            }
        }
        Tensor::from_vec(out, Shape::new(1, s.c, p, p))
    }

    /// (degraded, clean) batch tensors for step t, aligned crops.
    pub fn batch_at(&self, step: u64) -> Result<(Tensor<E>, Tensor<E>)> {
        let plan = self.plan_at(step);
        let mut deg = Vec::with_capacity(self.batch);
        let mut cln = Vec::with_capacity(self.batch);
        for (pi, y, x) in plan {
            deg.push(Self::crop(&self.pairs[pi].degraded, y, x, self.patch));
            cln.push(Self::crop(&self.pairs[pi].clean, y, x, self.patch));
        }
        Ok((Tensor::stack_batch(&deg)?, Tensor::stack_batch(&cln)?))
    }
}
