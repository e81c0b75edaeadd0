//! One round of pseudo-label generation with a random network, persisted to a
//! hashed label store and reloaded.

use cyclereg::convex::CoupledConvexConfig;
use cyclereg::data::TrainingSet;
use cyclereg::features::{Architecture, FeatureExtractorState};
use cyclereg::io::store::{load_labels, save_labels};
use cyclereg::phantom::{make_dataset, PhantomSpec};
use cyclereg::refine::RefinementConfig;
use cyclereg::selftrain::generate_pseudo_labels;

fn main() -> cyclereg::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        blob_radius: (4.0, 8.0),
        field_magnitude: 4.0,
        ..Default::default()
    };
    let data = TrainingSet::from_phantoms(&make_dataset(&spec, 3)?, "pair")?;
    let net = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
    let labels = generate_pseudo_labels(
        &net,
        &data,
        &CoupledConvexConfig::default(),
        &RefinementConfig::default(),
        0,
    )?;
    let weights = labels.weights()?;
    for (e, w) in labels.entries.iter().zip(&weights) {
        println!(
            "{}: difficulty {:.3} mm, sampling weight {w:.4}",
            e.pair_id, e.difficulty
        );
    }
    let dir = std::env::temp_dir().join("cyclereg_store_example");
    save_labels(&dir, &labels)?;
    println!(
        "store reloads identically: {}",
        load_labels(&dir)? == labels
    );
    Ok(())
}
