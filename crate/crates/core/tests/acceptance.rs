//! Acceptance checks. Each prints one `[PASS]`/`[FAIL]` line with the measured
//! value and the pinned tolerance. Runs without the libtest harness so the lines
//! always reach the output; arguments filter criteria by name substring.

use std::time::Instant;

use cyclereg::convex::{coupled_convex, CoupledConvexConfig};
use cyclereg::correlation::{displacement, CostVolume, NUM_DISPLACEMENTS};
use cyclereg::data::{EvalCase, TrainingSet};
use cyclereg::features::{Architecture, FeatureExtractorState};
use cyclereg::grid::{
    apply_affine, compose_fields, downsample_field, transform_field_for_affine_pair, warp_labels,
    warp_volume, AffineTransform, DisplacementField, LabelVolume,
};
use cyclereg::io::store::RunDirectory;
use cyclereg::metrics::{
    cumulative_dice_curve, dice, mean_endpoint_error, sd_log_jacobian, target_registration_error,
    LandmarkSet,
};
use cyclereg::phantom::{gaussian_smooth, make_dataset, make_pair, PhantomSpec};
use cyclereg::refine::RefinementConfig;
use cyclereg::selftrain::{
    batch_loss_and_grad, generate_pseudo_labels, run_self_training, sampling_weights, NoStorage,
    SelfTrainingConfig, SelfTrainingReport, TrainingSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: &str, title: &str, pass: bool, detail: &str) -> bool {
    println!(
        "[{}] {id} {title}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

// ---------------------------------------------------------------------------
// Random-feature registration

fn c1_random_feature_pseudo_labels_beat_identity() -> bool {
    const PAIRS: usize = 20;
    const MIN_IMPROVED_FRACTION: f64 = 0.75;
    const MIN_AGGREGATE_REDUCTION: f64 = 0.20;
    const MAX_SECONDS: f64 = 600.0;

    let start = Instant::now();
    let pairs = make_dataset(&PhantomSpec::default(), PAIRS).unwrap();
    let data = TrainingSet::from_phantoms(&pairs, "pair").unwrap();
    let g0 = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
    let labels = generate_pseudo_labels(
        &g0,
        &data,
        &CoupledConvexConfig::default(),
        &RefinementConfig::default(),
        0,
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut improved = 0;
    let (mut sum_identity, mut sum_label) = (0.0, 0.0);
    for (p, e) in pairs.iter().zip(&labels.entries) {
        let truth = downsample_field(&p.field, 8).unwrap();
        let identity = truth.mean_norm_mm();
        let label = mean_endpoint_error(&e.refined, &truth).unwrap();
        improved += (label < identity) as usize;
        sum_identity += identity;
        sum_label += label;
    }
    let fraction = improved as f64 / PAIRS as f64;
    let reduction = 1.0 - sum_label / sum_identity;
    let pass = fraction >= MIN_IMPROVED_FRACTION
        && reduction >= MIN_AGGREGATE_REDUCTION
        && elapsed < MAX_SECONDS;
    verdict(
        "C1",
        "random-feature pseudo labels",
        pass,
        &format!(
            "improved on {improved}/{PAIRS} pairs (need >= {MIN_IMPROVED_FRACTION}), mean EPE {:.3} -> {:.3} mm, \
             reduction {:.1}% (need >= {:.0}%), {elapsed:.0} s (limit {MAX_SECONDS:.0} s)",
            sum_identity / PAIRS as f64,
            sum_label / PAIRS as f64,
            100.0 * reduction,
            100.0 * MIN_AGGREGATE_REDUCTION
        )
    )
}

// ---------------------------------------------------------------------------
// Optimizer oracle

fn brute_force_argmin(cost: &CostVolume<f64>) -> Vec<[f64; 3]> {
    (0..cost.numel())
        .map(|x| {
            let c = cost.costs(x);
            let mut best = 0;
            for d in 1..NUM_DISPLACEMENTS {
                if c[d] < c[best] {
                    best = d;
                }
            }
            displacement(best).map(f64::from)
        })
        .collect()
}

fn c4_zero_coupling_equals_exhaustive_argmin() -> bool {
    const VOLUMES: usize = 100;
    let cfg = CoupledConvexConfig {
        coupling_schedule: vec![],
        hard_mode: true,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut matches = 0;
    for v in 0..VOLUMES {
        let shape = [
            rng.random_range(1..6),
            rng.random_range(1..6),
            rng.random_range(1..6),
        ];
        let n: usize = shape.iter().product();
        // Every fourth volume draws from a few integer levels so ties occur.
        let data: Vec<f64> = (0..n * NUM_DISPLACEMENTS)
            .map(|_| {
                if v % 4 == 0 {
                    rng.random_range(0..3) as f64
                } else {
                    rng.random_range(-10.0..10.0)
                }
            })
            .collect();
        let cost = CostVolume::new(shape, 8, [2.0; 3], data).unwrap();
        let field = coupled_convex(&cost, &cfg).unwrap();
        let oracle = brute_force_argmin(&cost);
        matches += (0..n).all(|x| field.at(x) == oracle[x]) as usize;
    }
    verdict(
        "C4",
        "hard coupled optimizer with N = 0 vs exhaustive argmin",
        matches == VOLUMES,
        &format!("{matches}/{VOLUMES} cost volumes identical (need exact match on all)"),
    )
}

// ---------------------------------------------------------------------------
// End-to-end differentiability

fn c5_end_to_end_gradient_matches_central_differences() -> bool {
    const SEEDS: u64 = 5;
    const MAX_REL_ERR: f64 = 1e-3;
    const STEP: f64 = 1e-6;
    let shape = [16, 16, 16];
    let convex = CoupledConvexConfig::default();
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut state =
            FeatureExtractorState::<f64>::init(Architecture { widths: [2, 4, 4] }, seed);
        let spec = PhantomSpec {
            dims: shape,
            blob_radius: (2.0, 4.0),
            field_sigma: 3.0,
            field_magnitude: 2.0,
            seed: 200 + seed,
            ..Default::default()
        };
        let batch: Vec<TrainingSample> = (0..2)
            .map(|i| {
                let p = make_pair(&PhantomSpec {
                    seed: spec.seed + 10 * i,
                    ..spec.clone()
                })
                .unwrap();
                TrainingSample {
                    fixed: p.fixed,
                    moving: p.moving,
                    target: downsample_field(&p.field, 8).unwrap(),
                }
            })
            .collect();
        let (_, grad) = batch_loss_and_grad(&mut state, &batch, &convex).unwrap();
        let dir: Vec<f64> = (0..grad.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let at = |h: f64| {
            let mut s = state.clone();
            for (p, d) in s.params_mut().iter_mut().zip(&dir) {
                *p += h * d;
            }
            batch_loss_and_grad(&mut s, &batch, &convex).unwrap().0
        };
        let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
        details.push(format!("{rel:.1e}"));
    }
    verdict(
        "C5",
        "end-to-end gradient (network, correlation, soft read-out, TRE loss) in f64",
        worst < MAX_REL_ERR,
        &format!(
            "relative errors per seed [{}], worst {worst:.2e} (need < {MAX_REL_ERR:.0e})",
            details.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// Geometry identities

fn c6_geometry_identities() -> bool {
    const COMMUTATION_TOL: f64 = 1e-2;
    let spec = PhantomSpec {
        dims: [48, 48, 48],
        noise_std: 0.0,
        ..Default::default()
    };
    let pair = make_pair(&spec).unwrap();
    let shape = pair.fixed.shape();

    let zero = DisplacementField::zeros(shape, pair.fixed.spacing(), 1).unwrap();
    let zero_exact = warp_volume(&pair.moving, &zero).unwrap() == pair.moving
        && warp_labels(&pair.moving_labels, &zero).unwrap() == pair.moving_labels;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let mut small_affine = || {
            let a = rng.random_range(-0.08..0.08f64);
            let s = rng.random_range(0.95..1.05);
            let linear = [
                [s * a.cos(), -a.sin(), 0.0],
                [a.sin(), s * a.cos(), 0.0],
                [0.0, 0.0, 1.0],
            ];
            let t = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
            AffineTransform::about_center(linear, t, shape).unwrap()
        };
        let (a_f, a_m) = (small_affine(), small_affine());
        let carried = transform_field_for_affine_pair(&pair.field, &a_f, &a_m).unwrap();
        let lhs = warp_volume(&apply_affine(&pair.moving, &a_m), &carried).unwrap();
        let rhs = apply_affine(&warp_volume(&pair.moving, &pair.field).unwrap(), &a_f);
        // Interior voxels only: near the border the two sides clamp at different points.
        let margin = 8;
        let (mut sum, mut count) = (0.0, 0usize);
        for i in margin..shape[0] - margin {
            for j in margin..shape[1] - margin {
                for k in margin..shape[2] - margin {
                    sum += (lhs.get(i, j, k) - rhs.get(i, j, k)).abs() as f64;
                    count += 1;
                }
            }
        }
        worst = worst.max(sum / count as f64);
    }

    let u = [0.37, -1.25, 2.5];
    let v = [-0.6, 0.125, 1.0 / 3.0];
    let a = DisplacementField::constant(shape, [2.0; 3], 1, u).unwrap();
    let b = DisplacementField::constant(shape, [2.0; 3], 1, v).unwrap();
    let c = compose_fields(&a, &b).unwrap();
    let expect = [u[0] + v[0], u[1] + v[1], u[2] + v[2]];
    let compose_exact = (0..c.numel()).all(|x| c.at(x) == expect);

    let pass = zero_exact && worst < COMMUTATION_TOL && compose_exact;
    verdict(
        "C6",
        "geometry identities",
        pass,
        &format!(
            "zero warp exact: {zero_exact}; affine-pair commutation mean |diff| {worst:.2e} (need < {COMMUTATION_TOL:.0e}); \
             constant composition exact: {compose_exact}"
        )
    )
}

// ---------------------------------------------------------------------------
// Metrics

/// Straight-line scalar log-Jacobian spread: explicit loops, explicit cofactor
/// expansion, two-pass variance.
fn reference_sd_log_jacobian(f: &DisplacementField) -> f64 {
    let [d, h, w] = f.shape();
    let n = [d, h, w];
    let mut logs = Vec::new();
    for i in 0..d {
        for j in 0..h {
            for k in 0..w {
                let p = [i, j, k];
                let mut m = [[0.0f64; 3]; 3];
                for axis in 0..3 {
                    let (lo, hi) = if n[axis] == 1 {
                        (p[axis], p[axis])
                    } else if p[axis] == 0 {
                        (0, 1)
                    } else if p[axis] == n[axis] - 1 {
                        (n[axis] - 2, n[axis] - 1)
                    } else {
                        (p[axis] - 1, p[axis] + 1)
                    };
                    let mut a = p;
                    let mut b = p;
                    a[axis] = lo;
                    b[axis] = hi;
                    let (va, vb) = (f.get(a[0], a[1], a[2]), f.get(b[0], b[1], b[2]));
                    for comp in 0..3 {
                        let deriv = if hi == lo {
                            0.0
                        } else {
                            (vb[comp] - va[comp]) / (hi - lo) as f64
                        };
                        m[comp][axis] = deriv + if comp == axis { 1.0 } else { 0.0 };
                    }
                }
                let det = m[0][0] * m[1][1] * m[2][2]
                    + m[0][1] * m[1][2] * m[2][0]
                    + m[0][2] * m[1][0] * m[2][1]
                    - m[0][2] * m[1][1] * m[2][0]
                    - m[0][0] * m[1][2] * m[2][1]
                    - m[0][1] * m[1][0] * m[2][2];
                logs.push(if det > 1e-6 { det.ln() } else { 1e-6f64.ln() });
            }
        }
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / logs.len() as f64).sqrt()
}

fn c7_metric_examples_and_scalar_reference() -> bool {
    const SDLOGJ_TOL: f64 = 1e-6;
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let shape = [12, 12, 12];
    let labels = |f: &dyn Fn(usize, usize, usize) -> bool| {
        LabelVolume::from_fn(shape, [1.0; 3], |i, j, k| f(i, j, k) as u16).unwrap()
    };
    let cube = |off: usize| {
        labels(&move |i, j, k| {
            (off..off + 4).contains(&i) && (2..6).contains(&j) && (2..6).contains(&k)
        })
    };
    let multi =
        LabelVolume::from_fn(shape, [1.0; 3], |i, j, _| ((i / 4) + (j / 6)) as u16).unwrap();
    let d = dice(&multi, &multi, true).unwrap();
    checks.push((
        "identical volumes give 1.0",
        d.per_class.iter().all(|&(_, v)| v == 1.0) && d.mean == 1.0,
    ));
    checks.push((
        "disjoint masks give 0.0",
        dice(&cube(0), &cube(6), true).unwrap().mean == 0.0,
    ));
    checks.push((
        "4-cube shifted by 2 gives 0.5",
        dice(&cube(2), &cube(4), true).unwrap().mean == 0.5,
    ));
    checks.push((
        "shape mismatch rejected",
        dice(
            &cube(0),
            &LabelVolume::from_fn([2, 2, 2], [1.0; 3], |_, _, _| 0).unwrap(),
            true,
        )
        .is_err(),
    ));

    let zero = DisplacementField::zeros(shape, [1.0; 3], 1).unwrap();
    checks.push(("zero field sdlogj 0", sd_log_jacobian(&zero) == 0.0));
    let linear =
        DisplacementField::from_fn(shape, [1.0; 3], 1, |[i, _, _]| [0.1 * i as f64, 0.0, 0.0])
            .unwrap();
    checks.push((
        "linear field sdlogj 0",
        sd_log_jacobian(&linear).abs() < 1e-12,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let s = [20, 18, 16];
        let n = s.iter().product::<usize>();
        let mut comps: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for c in &mut comps {
            gaussian_smooth(c, s, 2.0);
            c.iter_mut().for_each(|v| *v *= 6.0);
        }
        let field = DisplacementField::new(s, [2.0; 3], 1, comps.concat()).unwrap();
        let shifted = DisplacementField::from_fn(s, [2.0; 3], 1, |[i, j, k]| {
            let v = field.get(i, j, k);
            [v[0] + 0.7, v[1] - 1.3, v[2]]
        })
        .unwrap();
        let ours = sd_log_jacobian(&field);
        worst = worst.max((ours - reference_sd_log_jacobian(&field)).abs());
        worst = worst.max((sd_log_jacobian(&shifted) - ours).abs());
    }
    checks.push((
        "sdlogj matches scalar reference and ignores translation",
        worst < SDLOGJ_TOL,
    ));

    let pts = vec![[3.0, 3.0, 3.0], [5.0, 6.0, 7.0]];
    let same = LandmarkSet::new(pts.clone(), [1.0; 3]).unwrap();
    checks.push((
        "tre identical landmarks 0 mm",
        target_registration_error(&same, &same, &zero).unwrap().mean == 0.0,
    ));
    let moved = LandmarkSet::new(vec![[3.0, 6.0, 7.0]], [1.0; 3]).unwrap();
    let single = LandmarkSet::new(vec![[3.0, 3.0, 3.0]], [1.0; 3]).unwrap();
    checks.push((
        "tre 3-4-5 offset gives 5 mm",
        target_registration_error(&single, &moved, &zero)
            .unwrap()
            .mean
            == 5.0,
    ));
    let pair = make_pair(&PhantomSpec {
        dims: [32, 32, 32],
        blob_radius: (4.0, 8.0),
        field_magnitude: 4.0,
        ..Default::default()
    })
    .unwrap();
    let fixed_pts: Vec<[f64; 3]> = (0..50)
        .map(|_| std::array::from_fn(|_| rng.random_range(4.0..28.0)))
        .collect();
    let moving_pts: Vec<[f64; 3]> = fixed_pts
        .iter()
        .map(|p| {
            let u = pair.field.sample(*p);
            [p[0] + u[0], p[1] + u[1], p[2] + u[2]]
        })
        .collect();
    let lf = LandmarkSet::new(fixed_pts, [2.0; 3]).unwrap();
    let lm = LandmarkSet::new(moving_pts, [2.0; 3]).unwrap();
    let tre = target_registration_error(&lf, &lm, &pair.field).unwrap();
    checks.push((
        "tre of ground truth below half a voxel",
        tre.mean < 0.5 * 2.0,
    ));

    let c = cumulative_dice_curve(&[0.2, 0.5, 0.8]).unwrap();
    let at = |t: f64| c.iter().find(|p| (p.0 - t).abs() < 1e-9).unwrap().1;
    checks.push((
        "curve counts at 0, 0.5, 1",
        at(0.0) == 1.0 && (at(0.5) - 2.0 / 3.0).abs() < 1e-12 && at(1.0) == 0.0,
    ));
    let flat = cumulative_dice_curve(&[0.4; 5]).unwrap();
    checks.push((
        "equal inputs give a step",
        flat.iter()
            .all(|&(t, f)| f == if t <= 0.4 { 1.0 } else { 0.0 }),
    ));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        "C7",
        "metric examples",
        failed.is_empty(),
        &format!(
            "{}/{} checks pass, sdlogj reference max |diff| {worst:.1e} (need < {SDLOGJ_TOL:.0e}){}",
            checks.len() - failed.len(),
            checks.len(),
            if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
        )
    )
}

// ---------------------------------------------------------------------------
// Sampling contract

fn c8_sampling_weights_for_five_one_nine() -> bool {
    const TOL: f64 = 1e-4;
    let expected = [0.33330, 0.66224, 0.00446];
    let w = sampling_weights(&[5.0, 1.0, 9.0]).unwrap();
    let err = w
        .iter()
        .zip(expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdict(
        "C8",
        "sampling weights for difficulties (5, 1, 9)",
        err < TOL,
        &format!(
            "got ({:.5}, {:.5}, {:.5}), max |diff| {err:.1e} (need < {TOL:.0e})",
            w[0], w[1], w[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// Self-training: stage gains, refinement ablation, determinism

const TRAIN_PAIRS: usize = 12;
const TEST_PAIRS: usize = 4;

/// Desk-scale schedule: three stages of 60 iterations with a narrow network
/// and augmentation at 0.4 of the default range.
fn desk_config(refine_labels: bool) -> SelfTrainingConfig {
    let mut cfg = SelfTrainingConfig {
        architecture: Architecture {
            widths: [8, 16, 32],
        },
        ..Default::default()
    };
    cfg.schedule.stages = 3;
    cfg.schedule.iterations_per_stage = 60;
    cfg.augmentation.max_rotation_deg *= 0.4;
    cfg.augmentation.max_scale *= 0.4;
    cfg.augmentation.max_translation *= 0.4;
    if !refine_labels {
        cfg.label_refinement = RefinementConfig::disabled();
    }
    cfg
}

fn split(seed: u64) -> (TrainingSet, Vec<EvalCase>) {
    let pairs = make_dataset(
        &PhantomSpec {
            seed,
            ..Default::default()
        },
        TRAIN_PAIRS + TEST_PAIRS,
    )
    .unwrap();
    let train = TrainingSet::from_phantoms(&pairs[..TRAIN_PAIRS], "train").unwrap();
    let test = pairs[TRAIN_PAIRS..]
        .iter()
        .enumerate()
        .map(|(i, p)| EvalCase::from_phantom(format!("test{i}"), p))
        .collect();
    (train, test)
}

fn stage_dice(report: &SelfTrainingReport) -> Vec<f64> {
    report
        .stage_means("dice")
        .into_iter()
        .map(|d| d.unwrap())
        .collect()
}

fn train_into(dir: &std::path::Path, seed: u64, refine_labels: bool) -> SelfTrainingReport {
    let (train, test) = split(seed);
    let mut run = RunDirectory::open(dir).unwrap();
    run_self_training(&train, &test, &desk_config(refine_labels), seed, &mut run)
        .unwrap()
        .1
}

fn train_plain(seed: u64, refine_labels: bool) -> SelfTrainingReport {
    let (train, test) = split(seed);
    run_self_training(
        &train,
        &test,
        &desk_config(refine_labels),
        seed,
        &mut NoStorage,
    )
    .unwrap()
    .1
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

/// One entry so the expensive runs are shared: the seed-0 refined run feeds the
/// stage-gain check, the ablation, and the determinism comparison.
fn c2_c3_c9_self_training() -> bool {
    const MIN_GAIN: f64 = 0.02;
    const MAX_STAGE_DROP: f64 = 0.05;
    const METRIC_TOL: f64 = 1e-6;
    let tmp = tempfile::tempdir().unwrap();
    let (run_a, run_b) = (tmp.path().join("a"), tmp.path().join("b"));

    let start = Instant::now();
    let refined0 = train_into(&run_a, 0, true);
    let dice = stage_dice(&refined0);
    let gain = dice[3] - dice[0];
    let worst_drop = dice
        .windows(2)
        .map(|w| (w[0] - w[1]) / w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let c2 = verdict(
        "C2",
        "self-training stage gains (T = 3, 12 train / 4 test pairs)",
        gain >= MIN_GAIN && worst_drop <= MAX_STAGE_DROP,
        &format!(
            "test Dice per stage {:?}, stage 3 - stage 0 = {gain:+.4} (need >= {MIN_GAIN}), worst relative drop {:.2}% \
             (limit {:.0}%), {:.0} s",
            dice.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            100.0 * worst_drop.max(0.0),
            100.0 * MAX_STAGE_DROP,
            start.elapsed().as_secs_f64()
        ),
    );

    let repeat = train_into(&run_b, 0, true);
    let stores_equal =
        dir_bytes(&run_a.join("labels/stage_00")) == dir_bytes(&run_b.join("labels/stage_00"));
    let last = |r: &SelfTrainingReport| r.stages.last().unwrap().eval.clone();
    let (ea, eb) = (last(&refined0), last(&repeat));
    let metric_diff = ea
        .iter()
        .zip(&eb)
        .map(|(a, b)| (a.value - b.value).abs())
        .fold(0.0, f64::max);
    let rows_match = ea.len() == eb.len()
        && ea
            .iter()
            .zip(&eb)
            .all(|(a, b)| a.case_id == b.case_id && a.metric == b.metric);
    let c9 = verdict(
        "C9",
        "identical-seed runs",
        stores_equal && rows_match && metric_diff <= METRIC_TOL,
        &format!("stage-0 stores bitwise equal: {stores_equal}; final metrics max |diff| {metric_diff:.1e} (need <= {METRIC_TOL:.0e})"),
    );

    let mut with = vec![dice[3]];
    let mut without = vec![*stage_dice(&train_plain(0, false)).last().unwrap()];
    for seed in 1..3 {
        with.push(*stage_dice(&train_plain(seed, true)).last().unwrap());
        without.push(*stage_dice(&train_plain(seed, false)).last().unwrap());
    }
    let (sum_with, sum_without) = (with.iter().sum::<f64>(), without.iter().sum::<f64>());
    let c3 = verdict(
        "C3",
        "label refinement ablation over 3 seeds",
        sum_without < sum_with,
        &format!(
            "final Dice with refinement {:?} (mean {:.4}), without {:?} (mean {:.4}); need strictly lower without",
            with.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            sum_with / 3.0,
            without.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>(),
            sum_without / 3.0
        ),
    );
    c2 && c3 && c9
}

fn main() {
    let criteria: [(&str, fn() -> bool); 7] = [
        (
            "c1_random_feature_pseudo_labels_beat_identity",
            c1_random_feature_pseudo_labels_beat_identity,
        ),
        (
            "c4_zero_coupling_equals_exhaustive_argmin",
            c4_zero_coupling_equals_exhaustive_argmin,
        ),
        (
            "c5_end_to_end_gradient_matches_central_differences",
            c5_end_to_end_gradient_matches_central_differences,
        ),
        ("c6_geometry_identities", c6_geometry_identities),
        (
            "c7_metric_examples_and_scalar_reference",
            c7_metric_examples_and_scalar_reference,
        ),
        (
            "c8_sampling_weights_for_five_one_nine",
            c8_sampling_weights_for_five_one_nine,
        ),
        ("c2_c3_c9_self_training", c2_c3_c9_self_training),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        match std::panic::catch_unwind(check) {
            Ok(true) => {}
            Ok(false) => failed.push(name),
            Err(_) => {
                println!("[FAIL] {name}: panicked");
                failed.push(name);
            }
        }
    }
    println!("acceptance: {} of {ran} checks passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
