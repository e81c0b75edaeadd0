//! Command-line front end. Every subcommand resolves a [`RunConfig`] from an
//! optional TOML file plus `--key value` overrides and snapshots it into its
//! output directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::EvalCase;
use crate::error::{Error, Result};
use crate::eval::{evaluate_identity, score_field};
use crate::features::FeatureExtractorState;
use crate::io::checkpoint::Checkpoint;
use crate::io::config::{RunConfig, ALIASES};
use crate::io::dataset::{load_dataset, write_phantom_dataset, Dataset};
use crate::io::plot::{LinePlot, Series};
use crate::io::store::{save_labels, RunDirectory, RunLock};
use crate::io::{nifti, report};
use crate::metrics::{cumulative_dice_curve, MetricRow};
use crate::phantom::make_dataset;
use crate::refine::register;
use crate::selftrain::{generate_pseudo_labels, run_self_training};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "cyclereg",
    about = "Deformable 3D registration by cyclical self-training",
    after_help = "Any config key can be overridden with --section.key value (e.g. --training.schedule.lr_max 5e-4). \
                  Shortcuts: --stages, --iters, --output, --manifest, --seed."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NetworkArgs {
    /// Network checkpoint; without it the randomly initialized network of the run seed is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic phantom dataset with ground-truth fields.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Run cyclical self-training, resuming completed stages in the output directory.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Generate one version of refined pseudo labels for the training pairs.
    PseudoLabels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        network: NetworkArgs,
        /// Store version to write.
        #[arg(long, default_value_t = 0)]
        stage: usize,
    },
    /// Register the test pairs and write dense fields.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        network: NetworkArgs,
    },
    /// Score the test pairs and write metric rows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        network: NetworkArgs,
        /// Score the identity transform instead of a registration.
        #[arg(long, conflicts_with_all = ["checkpoint", "fields"])]
        identity: bool,
        /// Score precomputed fields named `<pair id>.nii.gz` in this directory.
        #[arg(long, conflicts_with = "checkpoint")]
        fields: Option<PathBuf>,
    },
    /// Draw cumulative Dice curves and per-stage means from metric files.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Metric CSV files, one curve each; defaults to the stage reports of the output directory.
        #[arg(long = "metrics")]
        metrics: Vec<PathBuf>,
    },
}

/// Splits config overrides out of the arguments; the rest go to clap.
fn split_overrides(
    args: Vec<OsString>,
) -> std::result::Result<(Vec<OsString>, Vec<(String, String)>), String> {
    let is_key = |k: &str| k.contains('.') || k == "seed" || ALIASES.iter().any(|(a, _)| *a == k);
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(text) = a.to_str().and_then(|s| s.strip_prefix("--")) else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match text.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (text.to_string(), None),
        };
        if !is_key(&key) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| format!("--{key} needs a value"))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Divergence(_) => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let (rest, overrides) = match split_overrides(args.into_iter().map(Into::into).collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, &overrides) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(common: &Common, overrides: &[(String, String)]) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), overrides)
}

fn network(cfg: &RunConfig, args: &NetworkArgs) -> Result<FeatureExtractorState<f32>> {
    match &args.checkpoint {
        Some(p) => Checkpoint::load(p)?.to_state(),
        None => Ok(FeatureExtractorState::init(
            cfg.training.architecture,
            cfg.seed,
        )),
    }
}

fn dataset(cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(Path::new(&cfg.paths.manifest))
}

fn test_cases(ds: &Dataset) -> Result<&[EvalCase]> {
    if ds.eval.is_empty() {
        return Err(Error::InvalidInput(
            "the manifest defines no test pairs".into(),
        ));
    }
    Ok(&ds.eval)
}

fn write_rows(out: &Path, rows: &[MetricRow]) -> Result<()> {
    report::write_metrics(&out.join("metrics.csv"), rows)?;
    report::write_summary(&out.join("summary.csv"), rows)?;
    let per_structure: Vec<f64> = rows
        .iter()
        .filter(|r| r.metric.starts_with("dice_") && r.value.is_finite())
        .map(|r| r.value)
        .collect();
    if !per_structure.is_empty() {
        report::write_curve(
            &out.join("cumulative_dice.txt"),
            &cumulative_dice_curve(&per_structure)?,
        )?;
    }
    Ok(())
}

fn dispatch(command: Command, overrides: &[(String, String)]) -> Result<()> {
    match command {
        Command::Synth { common } => {
            let cfg = resolve(&common, overrides)?;
            let out = PathBuf::from(&cfg.paths.output);
            let _lock = RunLock::acquire(&out)?;
            cfg.write_snapshot(&out)?;
            let spec = cfg.phantom.with_seed(cfg.seed);
            let n = cfg.synth.train_pairs + cfg.synth.test_pairs;
            let pairs = make_dataset(&spec, n)?;
            let (train, test) = pairs.split_at(cfg.synth.train_pairs);
            let manifest = write_phantom_dataset(&out, &spec, train, test)?;
            println!("{}", manifest.display());
        }
        Command::Train { common } => {
            let cfg = resolve(&common, overrides)?;
            let ds = dataset(&cfg)?;
            let training = ds.training.as_ref().ok_or_else(|| {
                Error::InvalidInput("the manifest defines no training pairs".into())
            })?;
            let mut run = RunDirectory::open(&cfg.paths.output)?;
            cfg.write_snapshot(run.root())?;
            let (state, rep) =
                run_self_training(training, &ds.eval, &cfg.training, cfg.seed, &mut run)?;
            let root = run.root().to_path_buf();
            Checkpoint::from_state(&state, cfg.training.schedule.stages)
                .save(&root.join("final.ckpt"))?;
            let rows: Vec<MetricRow> = rep
                .stages
                .last()
                .map(|s| s.eval.clone())
                .unwrap_or_default();
            write_rows(&root, &rows)?;
            for (t, dice) in rep.stage_means("dice").iter().enumerate() {
                if let Some(d) = dice {
                    println!("stage {t}: mean test dice {d:.4}");
                }
            }
        }
        Command::PseudoLabels {
            common,
            network: net,
            stage,
        } => {
            let cfg = resolve(&common, overrides)?;
            let ds = dataset(&cfg)?;
            let training = ds.training.as_ref().ok_or_else(|| {
                Error::InvalidInput("the manifest defines no training pairs".into())
            })?;
            let out = PathBuf::from(&cfg.paths.output);
            let _lock = RunLock::acquire(&out)?;
            cfg.write_snapshot(&out)?;
            let state = network(&cfg, &net)?;
            let labels = generate_pseudo_labels(
                &state,
                training,
                &cfg.training.optimizer,
                &cfg.training.label_refinement,
                stage,
            )?;
            save_labels(&out.join(format!("stage_{stage:02}")), &labels)?;
            println!("mean difficulty {:.4} mm", labels.mean_difficulty());
        }
        Command::Infer {
            common,
            network: net,
        } => {
            let cfg = resolve(&common, overrides)?;
            let ds = dataset(&cfg)?;
            let out = PathBuf::from(&cfg.paths.output);
            let _lock = RunLock::acquire(&out)?;
            cfg.write_snapshot(&out)?;
            let state = network(&cfg, &net)?;
            let dir = out.join("fields");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for case in test_cases(&ds)? {
                let reg = register(
                    case.fixed.get()?,
                    case.moving.get()?,
                    &state,
                    &cfg.training.optimizer,
                    &cfg.training.eval_refinement,
                )?;
                nifti::write_field(&dir.join(format!("{}.nii.gz", case.id)), &reg.refined.field)?;
            }
        }
        Command::Evaluate {
            common,
            network: net,
            identity,
            fields,
        } => {
            let cfg = resolve(&common, overrides)?;
            let ds = dataset(&cfg)?;
            let out = PathBuf::from(&cfg.paths.output);
            let _lock = RunLock::acquire(&out)?;
            cfg.write_snapshot(&out)?;
            let mut rows = Vec::new();
            let state = if identity || fields.is_some() {
                None
            } else {
                Some(network(&cfg, &net)?)
            };
            for case in test_cases(&ds)? {
                rows.extend(if identity {
                    evaluate_identity(case)?
                } else if let Some(dir) = &fields {
                    score_field(
                        case,
                        &nifti::read_field(&dir.join(format!("{}.nii.gz", case.id)))?,
                    )?
                } else {
                    let state = state.as_ref().expect("network loaded above");
                    crate::eval::evaluate_case(
                        case,
                        state,
                        &cfg.training.optimizer,
                        &cfg.training.eval_refinement,
                    )?
                    .1
                });
            }
            write_rows(&out, &rows)?;
            if let Some(d) = crate::eval::mean_metric(&rows, "dice") {
                println!("mean dice {d:.4}");
            }
        }
        Command::Plot { common, metrics } => {
            let cfg = resolve(&common, overrides)?;
            let out = PathBuf::from(&cfg.paths.output);
            let files = if metrics.is_empty() {
                stage_metric_files(&out)?
            } else {
                metrics
            };
            if files.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "no metric files found under {}",
                    out.display()
                )));
            }
            let dir = out.join("plots");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            cfg.write_snapshot(&dir)?;
            plot_metrics(&files, &dir)?;
        }
    }
    Ok(())
}

fn stage_metric_files(out: &Path) -> Result<Vec<PathBuf>> {
    let dir = out.join("reports");
    let Ok(entries) = std::fs::read_dir(&dir) else {
        return Ok(Vec::new());
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("_metrics.csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn series_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("metrics");
    stem.strip_suffix("_metrics").unwrap_or(stem).to_string()
}

/// One cumulative per-structure Dice curve per file, plus mean Dice per file.
pub fn plot_metrics(files: &[PathBuf], dir: &Path) -> Result<()> {
    let mut curves = Vec::new();
    let mut means = Vec::new();
    for (i, f) in files.iter().enumerate() {
        let rows = report::read_metrics(f)?;
        let label = series_label(f);
        let per_structure: Vec<f64> = rows
            .iter()
            .filter(|r| r.metric.starts_with("dice_") && r.value.is_finite())
            .map(|r| r.value)
            .collect();
        if per_structure.is_empty() {
            return Err(Error::format(f, "no per-structure dice rows"));
        }
        let curve = cumulative_dice_curve(&per_structure)?;
        report::write_curve(&dir.join(format!("{label}_cumulative_dice.txt")), &curve)?;
        curves.push(Series {
            label: label.clone(),
            points: curve,
        });
        if let Some(m) = crate::eval::mean_metric(&rows, "dice") {
            means.push((i as f64, m));
        }
    }
    LinePlot {
        title: "Cumulative per-structure Dice".into(),
        x_label: "Dice threshold".into(),
        y_label: "fraction of structures ≥ threshold".into(),
        series: curves,
    }
    .save(&dir.join("cumulative_dice.svg"))?;
    if !means.is_empty() {
        report::write_curve(&dir.join("mean_dice.txt"), &means)?;
        LinePlot {
            title: "Mean Dice per stage".into(),
            x_label: "stage".into(),
            y_label: "mean Dice".into(),
            series: vec![Series {
                label: "mean dice".into(),
                points: means,
            }],
        }
        .save(&dir.join("mean_dice.svg"))?;
    }
    Ok(())
}
