//! Generates a small paired corpus (degraded + clean PNGs) covering
//! all four degradation families and prints per-pair PSNR.
//!
//!     cargo run --example make_corpus [out_dir]

use swformer::data::{make_corpus, save_corpus, Degradation};
use swformer::metrics::psnr;

fn main() -> swformer::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| std::env::temp_dir().join("swformer_corpus").display().to_string());
    let kinds = [
        Degradation::default_rain(),
        Degradation::default_haze(),
        Degradation::default_blur(),
        Degradation::default_low_light(),
    ];
    let pairs = make_corpus::<f32>(8, 64, 64, &kinds, 42)?;
    save_corpus(std::path::Path::new(&out), &pairs, false)?;
    for (pair, kind) in pairs.iter().zip(kinds.iter().cycle()) {
        println!(
            "{}  {:14}  degraded-vs-clean {:.2} dB",
            pair.id,
            kind.kind(),
            psnr(&pair.degraded, &pair.clean, 1.0)?
        );
    }
    println!("wrote {}/degraded and {}/clean", out, out);
    Ok(())
}
