//! A miniature cyclical self-training run on small phantoms. Far too short to
//! learn much; it shows the loop, the warm-restarted learning rate, and the
//! per-stage report.

use cyclereg::data::{EvalCase, TrainingSet};
use cyclereg::features::Architecture;
use cyclereg::phantom::{make_dataset, PhantomSpec};
use cyclereg::selftrain::{run_self_training, NoStorage, SelfTrainingConfig};

fn main() -> cyclereg::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        blob_radius: (4.0, 8.0),
        field_magnitude: 4.0,
        ..Default::default()
    };
    let pairs = make_dataset(&spec, 6)?;
    let train = TrainingSet::from_phantoms(&pairs[..4], "train")?;
    let test: Vec<EvalCase> = pairs[4..]
        .iter()
        .enumerate()
        .map(|(i, p)| EvalCase::from_phantom(format!("test{i}"), p))
        .collect();

    let mut cfg = SelfTrainingConfig::default();
    cfg.architecture = Architecture {
        widths: [8, 16, 32],
    };
    cfg.schedule.stages = 2;
    cfg.schedule.iterations_per_stage = 8;
    let (_, report) = run_self_training(&train, &test, &cfg, 0, &mut NoStorage)?;
    let dice = report.stage_means("dice");
    for (s, d) in report.stages.iter().zip(dice) {
        println!(
            "stage {}: lr {:?} -> {:?}, loss {:?} -> {:?}, label difficulty {:.3} mm, test dice {:.4}",
            s.stage,
            s.first_lr,
            s.last_lr,
            s.first_loss,
            s.last_loss,
            s.mean_difficulty,
            d.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
