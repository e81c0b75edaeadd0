//! Writes a small phantom dataset to disk, reloads it through its manifest,
//! and shows how automatic pairing rules expand case lists.

use cyclereg::eval::{evaluate_identity, mean_metric};
use cyclereg::io::dataset::{expand_pairs, load_dataset, write_phantom_dataset, Pairing};
use cyclereg::phantom::{make_dataset, PhantomSpec};

fn main() -> cyclereg::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 32],
        blob_radius: (4.0, 8.0),
        field_magnitude: 4.0,
        ..Default::default()
    };
    let pairs = make_dataset(&spec, 3)?;
    let dir = std::env::temp_dir().join("cyclereg_dataset_example");
    let manifest = write_phantom_dataset(&dir, &spec, &pairs[..2], &pairs[2..])?;
    let ds = load_dataset(&manifest)?;
    println!(
        "{} training pairs, {} test pairs",
        ds.training.as_ref().map_or(0, |t| t.len()),
        ds.eval.len()
    );
    for case in &ds.eval {
        let rows = evaluate_identity(case)?;
        println!(
            "{}: identity dice {:.4}",
            case.id,
            mean_metric(&rows, "dice").unwrap()
        );
    }

    let ids: Vec<String> = (0..20).map(|i| format!("scan{i:02}")).collect();
    println!(
        "20 scans: {} unordered pairs, {} ordered",
        expand_pairs(&ids, Pairing::Unordered).len(),
        expand_pairs(&ids, Pairing::Ordered).len()
    );
    println!(
        "10 scans: {} unordered pairs",
        expand_pairs(&ids[..10], Pairing::Unordered).len()
    );
    Ok(())
}
