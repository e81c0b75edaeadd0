//! Registers a phantom pair with an untrained network: the discrete optimizer
//! alone, then with each refinement step switched on.

use cyclereg::convex::CoupledConvexConfig;
use cyclereg::features::{Architecture, FeatureExtractorState};
use cyclereg::grid::{upsample_field, DisplacementField};
use cyclereg::metrics::mean_endpoint_error;
use cyclereg::phantom::{make_pair, PhantomSpec};
use cyclereg::refine::{register, RefinementConfig};

fn main() -> cyclereg::Result<()> {
    let pair = make_pair(&PhantomSpec {
        seed: 1,
        ..Default::default()
    })?;
    let shape = pair.fixed.shape();
    let zero = DisplacementField::zeros(shape, pair.fixed.spacing(), 1)?;
    println!(
        "identity            epe {:.3} mm",
        mean_endpoint_error(&zero, &pair.field)?
    );

    let net = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
    let convex = CoupledConvexConfig::default();
    let steps = [
        (
            "consistency",
            RefinementConfig {
                enable_second_warp: false,
                enable_instance_opt: false,
                ..Default::default()
            },
        ),
        (
            "+ second warp",
            RefinementConfig {
                enable_instance_opt: false,
                ..Default::default()
            },
        ),
        ("+ instance opt", RefinementConfig::default()),
    ];
    let reg = register(
        &pair.fixed,
        &pair.moving,
        &net,
        &convex,
        &RefinementConfig::disabled(),
    )?;
    let raw = upsample_field(&reg.raw, shape)?;
    println!(
        "optimizer only      epe {:.3} mm",
        mean_endpoint_error(&raw, &pair.field)?
    );
    for (name, cfg) in steps {
        let reg = register(&pair.fixed, &pair.moving, &net, &convex, &cfg)?;
        println!(
            "{name:19} epe {:.3} mm",
            mean_endpoint_error(&reg.refined.field, &pair.field)?
        );
    }
    Ok(())
}
