//! Forward-backward consistency on a field pair that disagrees: the residual
//! `fwd + bwd∘fwd` shrinks with each round.

use cyclereg::grid::DisplacementField;
use cyclereg::refine::{forward_backward_consistency, inverse_consistency_residual};

fn main() -> cyclereg::Result<()> {
    let shape = [8, 8, 8];
    let fwd = DisplacementField::from_fn(shape, [2.0; 3], 8, |[i, j, _]| {
        [0.3 * (j as f64 / 3.0).sin(), 0.2, -0.1 * i as f64 / 8.0]
    })?;
    let bwd = DisplacementField::from_fn(shape, [2.0; 3], 8, |[_, j, k]| {
        [-0.1, -0.4 * (k as f64 / 4.0).cos(), 0.05 * j as f64 / 8.0]
    })?;
    println!(
        "rounds 0: residual {:.5}",
        inverse_consistency_residual(&fwd, &bwd)?
    );
    for rounds in [1, 2, 5, 10] {
        let (f, b) = forward_backward_consistency(&fwd, &bwd, rounds)?;
        println!(
            "rounds {rounds}: residual {:.5}",
            inverse_consistency_residual(&f, &b)?
        );
    }
    Ok(())
}
