//! Overfits a width-16 model on eight synthetic rain pairs and reports
//! training PSNR. The full 2000 steps pass 35 dB around step 600 and take
//! roughly ten minutes on one core; pass a step count to shorten the run.
//!
//!     cargo run --example train_tiny [steps]

use swformer::cli::RunConfig;
use swformer::data::{make_corpus, Degradation, PatchSampler};
use swformer::metrics::psnr;
use swformer::network::SwformerNet;
use swformer::optim::{train_range, AdamW, Schedule};

fn main() -> swformer::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.model.base_width = 16;
    cfg.model.blocks_per_stage = [1, 1, 1, 1, 1];
    cfg.train.steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    cfg.train.batch = 2;
    cfg.train.patch = 32;

    let rain = Degradation::RainStreaks { count: 40, angle_deg: 80.0, length: 10, intensity: 0.28 };
    let pairs = make_corpus::<f32>(8, 64, 64, &[rain], cfg.seed)?;
    let baseline: f64 = pairs
        .iter()
        .map(|p| psnr(&p.degraded, &p.clean, 1.0).unwrap())
        .sum::<f64>()
        / pairs.len() as f64;
    println!("degraded-vs-clean baseline: {baseline:.2} dB");

    let net = SwformerNet::<f32>::new(&cfg.model, cfg.seed)?;
    println!("parameters: {}", net.count_params());
    let mut opt = AdamW::new(net.named_params(), cfg.train.weight_decay);
    let sched = Schedule {
        lr_init: cfg.train.lr_init,
        lr_min: cfg.train.lr_min,
        total_steps: cfg.train.steps,
    };
    let sampler = PatchSampler::new(pairs.clone(), cfg.train.patch, cfg.train.batch, cfg.seed)?;

    let t0 = std::time::Instant::now();
    let mut step = 0u64;
    while step < cfg.train.steps {
        let end = (step + 100).min(cfg.train.steps);
        let log = train_range(&net, &sampler, &mut opt, &cfg.loss, &sched, step..end)?;
        step = end;

        let mut train_psnr = 0.0;
        for p in &pairs {
            let restored = net.restore(&p.degraded, cfg.model.variant)?;
            train_psnr += psnr(&restored, &p.clean, 1.0)?;
        }
        train_psnr /= pairs.len() as f64;
        println!(
            "{}  train_psnr={train_psnr:.2} dB  ({:.0} s)",
            log.last().unwrap().to_line(),
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
