//! Difficulty-ranked sampling: easier pairs are drawn more often.

use cyclereg::selftrain::sampling_weights;

fn main() -> cyclereg::Result<()> {
    for difficulties in [vec![5.0, 1.0, 9.0], vec![2.0, 2.5, 3.0, 0.5, 8.0]] {
        let w = sampling_weights(&difficulties)?;
        let shown: Vec<String> = w.iter().map(|v| format!("{v:.5}")).collect();
        println!("{difficulties:?} -> [{}]", shown.join(", "));
    }
    Ok(())
}
