//! Saves a network to a checkpoint, reloads it, and shows that a flipped byte
//! is refused.

use cyclereg::features::{Architecture, FeatureExtractorState};
use cyclereg::io::checkpoint::Checkpoint;

fn main() -> cyclereg::Result<()> {
    let state = FeatureExtractorState::<f32>::init(Architecture::default(), 42);
    let ck = Checkpoint::from_state(&state, 3);
    let path = std::env::temp_dir().join("cyclereg_example.ckpt");
    ck.save(&path)?;

    let back = Checkpoint::load(&path)?;
    println!(
        "{} tensors, stage {}, seed {}",
        back.tensors.len(),
        back.stage,
        back.seed
    );
    println!("parameters identical: {}", back.to_state()? == state);

    let mut bytes = std::fs::read(&path).expect("just written");
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).expect("writable");
    match Checkpoint::load(&path) {
        Err(e) => println!("corrupted file refused: {e}"),
        Ok(_) => println!("corruption went unnoticed"),
    }
    Ok(())
}
