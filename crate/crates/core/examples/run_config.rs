//! Layers a TOML file and command-line style overrides over the defaults and
//! prints the resolved configuration.

use cyclereg::io::config::RunConfig;

fn main() -> cyclereg::Result<()> {
    let file = r#"
seed = 11

[training.schedule]
stages = 3
iterations_per_stage = 100

[training.label_refinement]
instance_iterations = 30
"#;
    let overrides = vec![
        ("iters".to_string(), "60".to_string()),
        (
            "training.optimizer.softmax_temperature".to_string(),
            "10".to_string(),
        ),
    ];
    let cfg = RunConfig::resolve(Some(file), &overrides)?;
    print!("{}", cfg.to_toml());

    if let Err(e) = RunConfig::resolve(Some("[training]\nstagez = 3\n"), &[]) {
        println!("# rejected: {e}");
    }
    Ok(())
}
