//! Walks the two invertible transforms the network is built on: the
//! Haar filter bank (with its multi-level pyramid) and the orthonormal
//! FFT, checking round trips and energy conservation along the way.
//!
//!     cargo run --example transforms_tour

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use swformer::tensor::{Shape, Tensor};
use swformer::transforms::{
    dwt2, fft2_cat, idwt2, ifft2_cat_full, wavelet_pyramid, wavelet_reconstruct,
    WaveletFilterBank, BAND_NAMES,
};

fn energy(t: &Tensor<f64>) -> f64 {
    t.to_vec().iter().map(|v| v * v).sum()
}

fn main() -> swformer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let shape = Shape::new(1, 3, 32, 32);
    let x = Tensor::from_vec(
        (0..shape.numel()).map(|_| rng.random_range(0.0..1.0)).collect(),
        shape,
    );

    let bank = WaveletFilterBank::haar();
    let bands = dwt2(&x, &bank)?;
    println!("one analysis level: {} -> 4 bands of {:?}", shape, bands.ll.shape().dims());
    for (b, name) in bands.bands().iter().zip(BAND_NAMES) {
        println!("  {name}: energy {:.4}", energy(b));
    }
    let back = idwt2(&bands, &bank)?;
    println!("synthesis error: {:.2e}", back.sub(&x)?.max_abs());
    println!(
        "energy in == energy out: {:.6} vs {:.6}",
        energy(&x),
        bands.bands().iter().map(|b| energy(b)).sum::<f64>()
    );

    let levels = wavelet_pyramid(&x, 2, &bank)?;
    println!("\npyramid channel growth:");
    for (k, level) in levels.iter().enumerate() {
        println!("  level {k}: {:?}", level.shape().dims());
    }
    let rec = wavelet_reconstruct(&levels[2], 2, &bank)?;
    println!("two-level reconstruction error: {:.2e}", rec.sub(&x)?.max_abs());

    let spec = fft2_cat(&x)?;
    println!("\nfft as channel-stacked re/im: {:?}", spec.shape().dims());
    println!("parseval: {:.6} vs {:.6}", energy(&x), energy(&spec));
    let rt = ifft2_cat_full(&spec)?.narrow_channels(0, 3)?;
    println!("inverse fft error: {:.2e}", rt.sub(&x)?.max_abs());
    Ok(())
}
