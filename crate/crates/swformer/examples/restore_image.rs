//! Runs a model over one degraded image. With no arguments it builds a
//! fresh zero-head network, which adds an exactly-zero residual, so the
//! output reproduces the input; pass a checkpoint to see real work.
//!
//!     cargo run --example restore_image [checkpoint.swf]

use swformer::checkpoint::{restore_into, Checkpoint};
use swformer::cli::RunConfig;
use swformer::data::{make_corpus, save_png, Degradation};
use swformer::metrics::psnr;
use swformer::network::SwformerNet;

fn main() -> swformer::Result<()> {
    let pair = &make_corpus::<f32>(1, 64, 64, &[Degradation::default_rain()], 3)?[0];

    let (cfg, net) = match std::env::args().nth(1) {
        Some(path) => {
            let ck = Checkpoint::load(std::path::Path::new(&path))?;
            let cfg = RunConfig::from_toml(&ck.config_text)?;
            let net = SwformerNet::<f32>::new(&cfg.model, ck.seed)?;
            restore_into(&ck, &net)?;
            println!("loaded {path}");
            (cfg, net)
        }
        None => {
            let cfg = RunConfig::default();
            let net = SwformerNet::<f32>::new(&cfg.model, cfg.seed)?;
            net.zero_init_heads();
            println!("no checkpoint given, using an identity (zero-residual) net");
            (cfg, net)
        }
    };

    let restored = net.restore(&pair.degraded, cfg.model.variant)?;
    println!("degraded: {:.2} dB", psnr(&pair.degraded, &pair.clean, 1.0)?);
    println!("restored: {:.2} dB", psnr(&restored, &pair.clean, 1.0)?);

    let dir = std::env::temp_dir().join("swformer_restore");
    std::fs::create_dir_all(&dir).map_err(|e| swformer::Error::io(&dir, e))?;
    save_png(&dir.join("degraded.png"), &pair.degraded, false)?;
    save_png(&dir.join("restored.png"), &restored, false)?;
    save_png(&dir.join("clean.png"), &pair.clean, false)?;
    println!("pngs under {}", dir.display());
    Ok(())
}
