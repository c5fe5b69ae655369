//! Audits the analytic gradients of one full block against central
//! finite differences. Prints a per-parameter report.
//!
//!     cargo run --example gradcheck_block

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use swformer::blocks::{BlockConfig, SwformerBlock};
use swformer::tensor::{grad_check, Shape, Tensor};

fn main() -> swformer::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let block = SwformerBlock::<f64>::new(&mut rng, &BlockConfig::with_width(8))?;
    let shape = Shape::new(1, 8, 8, 8);
    let x = Tensor::from_vec(
        (0..shape.numel()).map(|_| rng.random_range(-0.8..0.8)).collect(),
        shape,
    );

    let mut params = Vec::new();
    block.named_params("block", &mut params);
    println!("{} parameter tensors", params.len());

    let f = || block.forward(&x, false)?.mean_all();
    let report = grad_check(&f, &params, 1e-4, 1e-3, 4, 7)?;
    println!("{report}");
    std::process::exit(if report.passed() { 0 } else { 1 });
}
