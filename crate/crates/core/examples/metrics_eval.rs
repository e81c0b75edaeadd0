//! The evaluation metrics on small hand-built inputs.

use cyclereg::grid::{DisplacementField, LabelVolume};
use cyclereg::metrics::{
    cumulative_dice_curve, dice, folding_fraction, sd_log_jacobian, target_registration_error,
    LandmarkSet,
};

fn main() -> cyclereg::Result<()> {
    let shape = [16, 16, 16];
    let cube = |lo: usize| {
        LabelVolume::from_fn(shape, [1.0; 3], move |i, j, k| {
            ((lo..lo + 6).contains(&i) && (4..10).contains(&j) && (4..10).contains(&k)) as u16
        })
    };
    let d = dice(&cube(4)?, &cube(6)?, true)?;
    println!("dice of cubes shifted by 2: {:.4}", d.mean);

    let smooth = DisplacementField::from_fn(shape, [1.0; 3], 1, |[i, j, k]| {
        let t = |v: usize| (v as f64 * 0.4).sin();
        [0.5 * t(j), 0.5 * t(k), 0.5 * t(i)]
    })?;
    println!(
        "sdlogj {:.4}, folding {:.4}",
        sd_log_jacobian(&smooth),
        folding_fraction(&smooth)
    );

    let fixed = LandmarkSet::new(vec![[4.0, 4.0, 4.0], [8.0, 8.0, 8.0]], [2.0; 3])?;
    let moving = LandmarkSet::new(vec![[5.0, 4.0, 4.0], [9.0, 8.0, 8.0]], [2.0; 3])?;
    let shift = DisplacementField::constant(shape, [2.0; 3], 1, [1.0, 0.0, 0.0])?;
    let zero = DisplacementField::zeros(shape, [2.0; 3], 1)?;
    println!(
        "tre identity {:.2} mm, tre with true shift {:.2} mm",
        target_registration_error(&fixed, &moving, &zero)?.mean,
        target_registration_error(&fixed, &moving, &shift)?.mean
    );

    let curve = cumulative_dice_curve(&[0.2, 0.5, 0.5, 0.9])?;
    for (t, frac) in curve.iter().step_by(25) {
        println!("fraction of structures with dice >= {t:.2}: {frac:.2}");
    }
    Ok(())
}
