//! Warping, composition, resampling, and the field transform used to carry a
//! label into an augmented frame.

use cyclereg::grid::{
    apply_affine, compose_fields, downsample_field, transform_field_for_affine_pair,
    upsample_field, warp_volume, AffineTransform, DisplacementField, Volume,
};

fn main() -> cyclereg::Result<()> {
    let shape = [24, 24, 24];
    let vol = Volume::from_fn(shape, [2.0; 3], |i, j, k| {
        ((i as f32 * 0.3).sin() + (j as f32 * 0.2).cos()) * (k as f32 / 24.0)
    })?;
    let zero = DisplacementField::zeros(shape, [2.0; 3], 1)?;
    println!("zero warp exact: {}", warp_volume(&vol, &zero)? == vol);

    let a = DisplacementField::constant(shape, [2.0; 3], 1, [1.0, 0.0, 2.0])?;
    let b = DisplacementField::constant(shape, [2.0; 3], 1, [0.5, -1.0, 0.0])?;
    println!("constant composition: {:?}", compose_fields(&a, &b)?.at(0));

    let coarse = DisplacementField::constant([3, 3, 3], [2.0; 3], 8, [0.25, 0.0, -0.5])?;
    let fine = upsample_field(&coarse, shape)?;
    println!(
        "upsampled value {:?}, back down {:?}",
        fine.at(100),
        downsample_field(&fine, 8)?.at(0)
    );

    let rot = 5f64.to_radians();
    let linear = [
        [rot.cos(), -rot.sin(), 0.0],
        [rot.sin(), rot.cos(), 0.0],
        [0.0, 0.0, 1.0],
    ];
    let af = AffineTransform::about_center(linear, [1.0, 0.0, 0.0], shape)?;
    let am = AffineTransform::translation([0.0, 2.0, 0.0]);
    let phi = DisplacementField::from_fn(shape, [2.0; 3], 1, |[i, _, _]| {
        [0.0, 0.5 * (i as f64 / 6.0).sin(), 0.0]
    })?;
    let carried = transform_field_for_affine_pair(&phi, &af, &am)?;
    let lhs = warp_volume(&apply_affine(&vol, &am), &carried)?;
    let rhs = apply_affine(&warp_volume(&vol, &phi)?, &af);
    let interior: Vec<f32> = lhs
        .data()
        .iter()
        .zip(rhs.data())
        .map(|(x, y)| (x - y).abs())
        .collect();
    println!(
        "augmented-frame mismatch (mean abs) {:.4}",
        interior.iter().sum::<f32>() / interior.len() as f32
    );
    Ok(())
}
