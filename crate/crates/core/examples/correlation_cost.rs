//! Builds a cost volume from random-network features and reads off the
//! per-node winning displacement.

use cyclereg::correlation::{correlate, displacement, NUM_DISPLACEMENTS};
use cyclereg::features::{Architecture, FeatureExtractorState};
use cyclereg::phantom::{make_pair, PhantomSpec};

fn main() -> cyclereg::Result<()> {
    let pair = make_pair(&PhantomSpec {
        dims: [32, 32, 32],
        blob_radius: (4.0, 8.0),
        field_magnitude: 4.0,
        ..Default::default()
    })?;
    let net = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
    let feats = net.extract(&pair.fixed, &pair.moving)?;
    let cost = correlate(&feats.fixed, &feats.moving)?;
    println!(
        "grid {:?} at stride {}, {} candidates",
        cost.shape, cost.stride, NUM_DISPLACEMENTS
    );

    let mut histogram = [0usize; NUM_DISPLACEMENTS];
    for x in 0..cost.numel() {
        let c = cost.costs(x);
        let best = (0..NUM_DISPLACEMENTS)
            .min_by(|&a, &b| c[a].total_cmp(&c[b]))
            .unwrap();
        histogram[best] += 1;
    }
    let (top, count) = histogram
        .iter()
        .enumerate()
        .max_by_key(|(_, &n)| n)
        .unwrap();
    println!(
        "most frequent winner {:?} on {count} nodes",
        displacement(top)
    );
    Ok(())
}
