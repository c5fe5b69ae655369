//! PSNR and SSIM on a synthetic pair, in RGB and on the luma channel.
//!
//!     cargo run --example eval_metrics

use swformer::data::{make_corpus, Degradation};
use swformer::metrics::{psnr, ssim, to_y_channel, MetricReport};

fn main() -> swformer::Result<()> {
    let kinds = [
        Degradation::default_rain(),
        Degradation::default_haze(),
        Degradation::default_blur(),
        Degradation::default_low_light(),
    ];
    let pairs = make_corpus::<f32>(4, 64, 64, &kinds, 11)?;

    let mut rgb = MetricReport::default();
    let mut luma = MetricReport { y_channel: true, ..Default::default() };
    for p in &pairs {
        rgb.push(&p.id, psnr(&p.degraded, &p.clean, 1.0)?, ssim(&p.degraded, &p.clean)?);
        let (dy, cy) = (to_y_channel(&p.degraded)?, to_y_channel(&p.clean)?);
        luma.push(&p.id, psnr(&dy, &cy, 1.0)?, ssim(&dy, &cy)?);
    }
    print!("{}", rgb.to_lines());
    print!("{}", luma.to_lines());
    Ok(())
}
