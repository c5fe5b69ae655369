//! Spectral degradation analysis on one synthetic pair: residual, its DFT
//! magnitude, per-band wavelet energies, and rendered panels.
//!
//!     cargo run --example analyze_pair [out_dir]

use std::path::PathBuf;
use swformer::analysis::analyze_pair;
use swformer::data::{make_corpus, Degradation};

fn main() -> swformer::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("swformer_analysis"));
    std::fs::create_dir_all(&out).map_err(|e| swformer::Error::io(&out, e))?;

    let kinds = [Degradation::default_rain(), Degradation::default_haze()];
    let pairs = make_corpus::<f32>(2, 64, 64, &kinds, 21)?;

    for p in &pairs {
        let rep = analyze_pair(&p.clean, &p.degraded)?;
        println!("pair={}", p.id);
        print!("{}", rep.energy_table());
        rep.write_panels(&out, &p.id)?;
    }
    println!("panels written under {}", out.display());
    Ok(())
}
