//! Cumulative Dice curves for two made-up stages, written as text and SVG.

use cyclereg::io::plot::{LinePlot, Series};
use cyclereg::io::report::write_curve;
use cyclereg::metrics::cumulative_dice_curve;

fn main() -> cyclereg::Result<()> {
    let stages = [
        ("stage 0", vec![0.31, 0.55, 0.62, 0.70, 0.81]),
        ("stage 3", vec![0.45, 0.63, 0.71, 0.78, 0.86]),
    ];
    let dir = std::env::temp_dir();
    let mut series = Vec::new();
    for (label, dice) in &stages {
        let curve = cumulative_dice_curve(dice)?;
        write_curve(
            &dir.join(format!("{}.txt", label.replace(' ', "_"))),
            &curve,
        )?;
        series.push(Series {
            label: label.to_string(),
            points: curve,
        });
    }
    let out = dir.join("cumulative_dice.svg");
    LinePlot {
        title: "Cumulative Dice".into(),
        x_label: "threshold".into(),
        y_label: "fraction ≥ threshold".into(),
        series,
    }
    .save(&out)?;
    println!("wrote {}", out.display());
    Ok(())
}
