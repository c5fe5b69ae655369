//! Evaluation metrics. All statistics run in f64 regardless of the
//! model element type; none of this touches the autodiff tape.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Full-swing BT.601 luma weights; white maps to exactly 1.0.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub fn psnr<E: Element>(x: &Tensor<E>, y: &Tensor<E>, max_val: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::dim(
            "psnr",
            format!("{:?} vs {:?}", x.shape().dims(), y.shape().dims()),
        ));
    }
    let (xv, yv) = (x.to_vec(), y.to_vec());
    let mse = xv
        .iter()
        .zip(&yv)
        .map(|(a, b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / xv.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut g {
        *v /= sum;
    }
    g
}

/// Separable weighted blur, valid mode: output is (h-10) x (w-10).
fn blur_valid(plane: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * plane[y * w + x + k];
            }
            rows[y * ow + x] = s;
        }
    }
    let oh = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (k, wk) in win.iter().enumerate() {
                s += wk * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), valid
/// padding, dynamic range 1.0; channels and batch entries are averaged.
pub fn ssim<E: Element>(x: &Tensor<E>, y: &Tensor<E>) -> Result<f64> {
    let s = x.shape();
    if s != y.shape() {
        return Err(Error::dim(
            "ssim",
            format!("{:?} vs {:?}", s.dims(), y.shape().dims()),
        ));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h, s.w
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (xv, yv) = (x.to_vec(), y.to_vec());
    let plane = s.h * s.w;
    let mut total = 0.0;
    let mut count = 0usize;
    for p in 0..s.n * s.c {
        let xs: Vec<f64> = xv[p * plane..(p + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let ys: Vec<f64> = yv[p * plane..(p + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let mx = blur_valid(&xs, s.h, s.w, &win);
        let my = blur_valid(&ys, s.h, s.w, &win);
        let mxx = blur_valid(&xx, s.h, s.w, &win);
        let myy = blur_valid(&yy, s.h, s.w, &win);
        let mxy = blur_valid(&xy, s.h, s.w, &win);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// BT.601 luma of an RGB tensor in [0,1]; output keeps n, h, w.
pub fn to_y_channel<E: Element>(rgb: &Tensor<E>) -> Result<Tensor<E>> {
    if rgb.shape().c != 3 {
        return Err(Error::dim(
            "to_y_channel",
            format!("expected 3 channels, got {}", rgb.shape().c),
        ));
    }
    let r = rgb.narrow_channels(0, 1)?.scale(LUMA[0])?;
    let g = rgb.narrow_channels(1, 1)?.scale(LUMA[1])?;
    let b = rgb.narrow_channels(2, 1)?.scale(LUMA[2])?;
    r.add(&g)?.add(&b)
}

#[derive(Clone, Debug)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub y_channel: bool,
}

/// Renders a float so the line format survives +inf round trips.
pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    pub fn push(&mut self, id: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.per_image.push(ImageMetrics { id: id.into(), psnr_db, ssim });
    }

    /// Mean PSNR; +inf entries dominate, matching the sentinel rule.
    pub fn mean_psnr(&self) -> f64 {
        self.per_image.iter().map(|m| m.psnr_db).sum::<f64>() / self.per_image.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.per_image.iter().map(|m| m.ssim).sum::<f64>() / self.per_image.len().max(1) as f64
    }

    /// Line-oriented form: one record per image plus an aggregate line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.per_image {
            out.push_str(&format!(
                "image={} psnr={} ssim={}\n",
                m.id,
                fmt_metric(m.psnr_db),
                fmt_metric(m.ssim)
            ));
        }
        out.push_str(&format!(
            "aggregate n={} mean_psnr={} mean_ssim={} y_channel={}\n",
            self.per_image.len(),
            fmt_metric(self.mean_psnr()),
            fmt_metric(self.mean_ssim()),
            self.y_channel
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            (0..n * c * h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
            Shape::new(n, c, h, w),
        )
    }

    #[test]
    fn psnr_uniform_offset_is_twenty_db() {
        let x = rand_t(1, 1, 3, 8, 8);
        let y = x.add_scalar(0.1).unwrap();
        let v = psnr(&x, &y, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-4, "{v}");
    }

    #[test]
    fn psnr_identical_is_infinite_and_symmetric() {
        let x = rand_t(2, 1, 3, 8, 8);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let y = rand_t(3, 1, 3, 8, 8);
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let x = rand_t(4, 2, 3, 7, 9);
        let y = rand_t(5, 2, 3, 7, 9);
        let mse: f64 = x
            .to_vec()
            .iter()
            .zip(y.to_vec())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (2.0 * 3.0 * 7.0 * 9.0);
        let want = 20.0 * (1.0 / mse.sqrt()).log10();
        assert!((psnr(&x, &y, 1.0).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn ssim_self_is_one() {
        let x = rand_t(6, 1, 3, 16, 16);
        let v = ssim(&x, &x).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn ssim_is_symmetric_and_anticorrelated_on_inversion() {
        let x = rand_t(7, 1, 1, 16, 16);
        let y = rand_t(8, 1, 1, 16, 16);
        let a = ssim(&x, &y).unwrap();
        let b = ssim(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-9);

        // binary checkerboard against its inversion
        let data: Vec<f64> = (0..256).map(|i| ((i / 16 + i % 16) % 2) as f64).collect();
        let cb = Tensor::from_vec(data.clone(), Shape::new(1, 1, 16, 16));
        let inv = Tensor::from_vec(data.iter().map(|v| 1.0 - v).collect(), Shape::new(1, 1, 16, 16));
        assert!(ssim(&cb, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let x = rand_t(9, 1, 2, 14, 13);
        let y = rand_t(10, 1, 2, 14, 13);
        let got = ssim(&x, &y).unwrap();

        // direct per-window statistics with centered moments
        let win1 = gaussian_window();
        let mut w2 = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
        for (i, row) in w2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = win1[i] * win1[j];
            }
        }
        let (h, w) = (14, 13);
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let (xv, yv) = (x.to_vec(), y.to_vec());
        let mut total = 0.0;
        let mut count = 0;
        for p in 0..2 {
            let xs = &xv[p * h * w..(p + 1) * h * w];
            let ys = &yv[p * h * w..(p + 1) * h * w];
            for oy in 0..h - 10 {
                for ox in 0..w - 10 {
                    let (mut ux, mut uy) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            ux += w2[i][j] * xs[(oy + i) * w + ox + j];
                            uy += w2[i][j] * ys[(oy + i) * w + ox + j];
                        }
                    }
                    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let dx = xs[(oy + i) * w + ox + j] - ux;
                            let dy = ys[(oy + i) * w + ox + j] - uy;
                            vx += w2[i][j] * dx * dx;
                            vy += w2[i][j] * dy * dy;
                            cov += w2[i][j] * dx * dy;
                        }
                    }
                    total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                        / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
        let want = total / count as f64;
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = rand_t(11, 1, 1, 8, 8);
        assert!(matches!(ssim(&x, &x), Err(Error::Usage(_))));
    }

    #[test]
    fn y_channel_endpoints_and_affinity() {
        let white = Tensor::<f64>::full(Shape::new(1, 3, 4, 4), 1.0);
        let y = to_y_channel(&white).unwrap();
        for v in y.to_vec() {
            assert!((0.99..=1.0).contains(&v), "{v}");
        }
        let black = Tensor::<f64>::zeros(Shape::new(1, 3, 4, 4));
        assert_eq!(to_y_channel(&black).unwrap().max_abs(), 0.0);

        for gray in [0.2, 0.5, 0.8] {
            let g = Tensor::<f64>::full(Shape::new(1, 3, 2, 2), gray);
            for v in to_y_channel(&g).unwrap().to_vec() {
                assert!((v - gray).abs() < 1e-12);
            }
        }
        assert!(to_y_channel(&rand_t(12, 1, 4, 4, 4)).is_err());
    }

    #[test]
    fn report_lines_cover_inf() {
        let mut rep = MetricReport { y_channel: true, ..Default::default() };
        rep.push("a.png", f64::INFINITY, 1.0);
        rep.push("b.png", 31.25, 0.5);
        let text = rep.to_lines();
        assert!(text.contains("image=a.png psnr=inf ssim=1.000000"));
        assert!(text.contains("mean_psnr=inf"));
        assert!(text.contains("y_channel=true"));
    }
}
