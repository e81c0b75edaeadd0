//! Cyclical self-training: pseudo-label generation with refinement, TRE-supervised
//! feature learning on augmented pairs, difficulty-weighted sampling, and the
//! stage loop with warm restarts.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::convex::{
    coupled_convex, coupled_convex_soft, coupled_convex_soft_backward, CoupledConvexConfig,
};
use crate::correlation::{correlate, correlate_backward, CostVolume};
use crate::data::{EvalCase, TrainingSet};
use crate::error::{Error, Result};
use crate::eval::evaluate_case;
use crate::features::{volume_input, Architecture, FeatureExtractorState, FeatureMap, FEATURE_DIM};
use crate::grid::{
    apply_affine, downsample_field, numel, transform_field_for_affine_pair, AffineTransform,
    DisplacementField, Shape, Volume,
};
use crate::metrics::{mean_endpoint_error, MetricRow};
use crate::nn::Adam;
use crate::real::Real;
use crate::refine::{refine_with_features, RefinementConfig};
use crate::rng::{substream, Rng};

/// Mean Euclidean distance in mm between a `(3, n)` prediction and a target
/// field, with its gradient with respect to the prediction.
pub fn tre_loss_with_grad<T: Real>(pred: &[T], target: &DisplacementField) -> Result<(T, Vec<T>)> {
    let n = target.numel();
    if pred.len() != 3 * n {
        return Err(Error::Shape(format!(
            "prediction has {} values, target grid needs {}",
            pred.len(),
            3 * n
        )));
    }
    let s = target.grid_scale() as f64;
    let mm = target.spacing().map(|v| T::cst(v * s));
    let inv_n = T::cst(1.0 / n as f64);
    let t = target.data();
    let mut grad = vec![T::zero(); 3 * n];
    let mut loss = T::zero();
    for x in 0..n {
        let d: [T; 3] = std::array::from_fn(|a| (pred[a * n + x] - T::cst(t[a * n + x])) * mm[a]);
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        loss += norm;
        if norm > T::zero() {
            for a in 0..3 {
                grad[a * n + x] = d[a] * mm[a] / norm * inv_n;
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Field-to-field TRE in mm.
pub fn tre_loss(pred: &DisplacementField, pseudo: &DisplacementField) -> Result<f64> {
    mean_endpoint_error(pred, pseudo)
}

/// Disagreement in mm between raw optimizer output and its refinement.
pub fn difficulty_score(raw: &DisplacementField, refined: &DisplacementField) -> Result<f64> {
    mean_endpoint_error(raw, refined)
}

/// Sampling distribution over pairs: the easiest pair gets `σ(5)`, the hardest
/// `σ(−5)`, linear in rank between; ties keep index order.
pub fn sampling_weights(difficulties: &[f64]) -> Result<Vec<f64>> {
    let n = difficulties.len();
    if n == 0 {
        return Err(Error::InvalidInput(
            "sampling weights need at least one pair".into(),
        ));
    }
    if difficulties.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("difficulties must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| difficulties[a].total_cmp(&difficulties[b]));
    let mut w = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        let s = if n == 1 {
            0.0
        } else {
            5.0 - 10.0 * rank as f64 / (n - 1) as f64
        };
        w[i] = 1.0 / (1.0 + (-s).exp());
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSchedule {
    pub stages: usize,
    pub iterations_per_stage: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            stages: 8,
            iterations_per_stage: 1000,
            batch_size: 2,
            lr_max: 1e-3,
            lr_min: 1e-5,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.iterations_per_stage == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "stages, iterations and batch size must be positive".into(),
            ));
        }
        if !(self.lr_max > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::Config(
                "learning rates must satisfy lr_max > lr_min > 0".into(),
            ));
        }
        Ok(())
    }

    /// Cosine decay from `lr_max` at the first iteration to `lr_min` at the last.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        if self.iterations_per_stage <= 1 {
            return self.lr_max;
        }
        let p = iteration as f64 / (self.iterations_per_stage - 1) as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Ranges of the random affine applied independently to each input image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub enabled: bool,
    pub max_rotation_deg: f64,
    /// Per-axis scale drawn from `1 ± max_scale`.
    pub max_scale: f64,
    /// Per-axis translation in voxels.
    pub max_translation: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_rotation_deg: 10.0,
            max_scale: 0.1,
            max_translation: 5.0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rotation_deg < 0.0
            || self.max_translation < 0.0
            || !(0.0..1.0).contains(&self.max_scale)
        {
            return Err(Error::Config(
                "augmentation ranges must be non-negative and scale < 1".into(),
            ));
        }
        Ok(())
    }

    /// A random affine about the grid centre; identity when disabled.
    pub fn sample(&self, rng: &mut Rng, shape: Shape) -> Result<AffineTransform> {
        if !self.enabled {
            return Ok(AffineTransform::identity());
        }
        let r = self.max_rotation_deg.to_radians();
        let mut angle = || {
            if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            }
        };
        let (a, b, c) = (angle(), angle(), angle());
        let rot = rotation_xyz(a, b, c);
        let s = self.max_scale;
        let t = self.max_translation;
        let scale: [f64; 3] = std::array::from_fn(|_| {
            if s > 0.0 {
                rng.random_range(1.0 - s..=1.0 + s)
            } else {
                1.0
            }
        });
        let shift: [f64; 3] = std::array::from_fn(|_| {
            if t > 0.0 {
                rng.random_range(-t..=t)
            } else {
                0.0
            }
        });
        let mut linear = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                linear[i][j] = rot[i][j] * scale[j];
            }
        }
        AffineTransform::about_center(linear, shift, shape)
    }
}

fn rotation_xyz(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    [
        [cb * cc, sa * sb * cc - ca * sc, ca * sb * cc + sa * sc],
        [cb * sc, sa * sb * sc + ca * cc, ca * sb * sc - sa * cc],
        [-sb, sa * cb, ca * cb],
    ]
}

/// One pair's pseudo label at a stage.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEntry {
    pub pair_id: String,
    /// Refined field, subsampled to the stride-8 grid.
    pub refined: DisplacementField,
    /// Hard optimizer output on the stride-8 grid.
    pub raw: DisplacementField,
    pub difficulty: f64,
}

/// All pseudo labels of one stage, in training-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelStore {
    pub stage: usize,
    pub entries: Vec<LabelEntry>,
}

impl PseudoLabelStore {
    pub fn difficulties(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.difficulty).collect()
    }

    pub fn mean_difficulty(&self) -> f64 {
        self.difficulties().iter().sum::<f64>() / self.entries.len().max(1) as f64
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        sampling_weights(&self.difficulties())
    }

    /// Checks that the store covers exactly the pairs of `data`, in order.
    pub fn check_against(&self, data: &TrainingSet) -> Result<()> {
        if self.entries.len() != data.len()
            || self
                .entries
                .iter()
                .zip(data.pairs())
                .any(|(e, p)| e.pair_id != p.id)
        {
            return Err(Error::InvalidInput(format!(
                "label store of stage {} does not match the training set",
                self.stage
            )));
        }
        Ok(())
    }
}

/// Hard optimizer output, refinement, and difficulty for every training pair.
pub fn generate_pseudo_labels<T: Real>(
    state: &FeatureExtractorState<T>,
    data: &TrainingSet,
    convex: &CoupledConvexConfig,
    refinement: &RefinementConfig,
    stage: usize,
) -> Result<PseudoLabelStore> {
    let hard = convex.hard();
    let mut entries = Vec::with_capacity(data.len());
    for (i, pair) in data.pairs().iter().enumerate() {
        let with_id = |e: Error| Error::InvalidInput(format!("pair {}: {e}", pair.id));
        let (fixed, moving) = data.load(i).map_err(with_id)?;
        let feats = state.extract(fixed, moving)?;
        let raw = coupled_convex(&correlate(&feats.fixed, &feats.moving)?, &hard)?;
        let refined = refine_with_features(fixed, moving, &feats, &raw, state, convex, refinement)?;
        let refined8 = downsample_field(&refined.field, raw.grid_scale())?;
        let difficulty = difficulty_score(&raw, &refined8)?;
        entries.push(LabelEntry {
            pair_id: pair.id.clone(),
            refined: refined8,
            raw,
            difficulty,
        });
    }
    Ok(PseudoLabelStore { stage, entries })
}

/// One augmented training example: inputs and the label carried into their frame.
pub struct TrainingSample {
    pub fixed: Volume,
    pub moving: Volume,
    pub target: DisplacementField,
}

/// Mean TRE loss of soft-mode predictions over a batch, and its gradient with
/// respect to the network parameters (training-mode normalization).
pub fn batch_loss_and_grad<T: Real>(
    state: &mut FeatureExtractorState<T>,
    batch: &[TrainingSample],
    convex: &CoupledConvexConfig,
) -> Result<(f64, Vec<T>)> {
    let shape = batch
        .first()
        .ok_or_else(|| Error::InvalidInput("empty batch".into()))?
        .fixed
        .shape();
    let spacing = batch[0].fixed.spacing();
    let inputs: Vec<Vec<T>> = batch
        .iter()
        .flat_map(|s| [volume_input(&s.fixed), volume_input(&s.moving)])
        .collect();
    let (feats, shape8, cache) = state.forward_train(&inputs, shape)?;
    let n8 = numel(shape8);
    let per = FEATURE_DIM * n8;
    let soft = convex.soft();
    let inv_b = T::cst(1.0 / batch.len() as f64);
    let mut dfeat = vec![T::zero(); feats.len()];
    let mut total = 0.0;
    for (b, sample) in batch.iter().enumerate() {
        let map = |k: usize| FeatureMap {
            shape: shape8,
            stride: 8,
            spacing,
            data: feats[k * per..(k + 1) * per].to_vec(),
        };
        let (fm, mm) = (map(2 * b), map(2 * b + 1));
        let cost: CostVolume<T> = correlate(&fm, &mm)?;
        let readout = coupled_convex_soft(&cost, &soft)?;
        let (loss, dpred) = tre_loss_with_grad(&readout.pred, &sample.target)?;
        total += loss.f64();
        let dpred: Vec<T> = dpred.into_iter().map(|g| g * inv_b).collect();
        let dcost = coupled_convex_soft_backward(&readout, &dpred);
        let (df, dm) = correlate_backward(&fm, &mm, &dcost)?;
        for (o, g) in dfeat[2 * b * per..(2 * b + 1) * per].iter_mut().zip(df) {
            *o += g;
        }
        for (o, g) in dfeat[(2 * b + 1) * per..(2 * b + 2) * per]
            .iter_mut()
            .zip(dm)
        {
            *o += g;
        }
    }
    Ok((total / batch.len() as f64, state.backward(&cache, &dfeat)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainingConfig {
    pub architecture: Architecture,
    pub schedule: TrainingSchedule,
    pub augmentation: AugmentationConfig,
    pub optimizer: CoupledConvexConfig,
    /// Refinement used when generating pseudo labels.
    pub label_refinement: RefinementConfig,
    /// Refinement used when scoring held-out pairs.
    pub eval_refinement: RefinementConfig,
}

impl Default for SelfTrainingConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            schedule: TrainingSchedule::default(),
            augmentation: AugmentationConfig::default(),
            optimizer: CoupledConvexConfig::default(),
            label_refinement: RefinementConfig::default(),
            eval_refinement: RefinementConfig::default(),
        }
    }
}

impl SelfTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.augmentation.validate()?;
        self.optimizer.validate()?;
        self.label_refinement.validate()?;
        self.eval_refinement.validate()
    }
}

/// Per-iteration record of one training stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

/// Trains `state` for one stage against `labels`, starting a fresh Adam at `lr_max`.
pub fn train_stage(
    stage: usize,
    state: &mut FeatureExtractorState<f32>,
    labels: &PseudoLabelStore,
    data: &TrainingSet,
    cfg: &SelfTrainingConfig,
    seed: u64,
) -> Result<StageLog> {
    cfg.validate()?;
    labels.check_against(data)?;
    let weights = labels.weights()?;
    let picker = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidInput(format!("sampling weights: {e}")))?;
    let mut sample_rng = substream(seed, &format!("sampling/stage{stage}"));
    let mut aug_rng = substream(seed, &format!("augmentation/stage{stage}"));
    let mut adam = Adam::<f32>::new(state.num_params());
    let schedule = &cfg.schedule;
    let mut log = StageLog::default();
    for it in 0..schedule.iterations_per_stage {
        let mut batch = Vec::with_capacity(schedule.batch_size);
        for _ in 0..schedule.batch_size {
            let i = picker.sample(&mut sample_rng);
            let (fixed, moving) = data.load(i)?;
            let a_f = cfg.augmentation.sample(&mut aug_rng, fixed.shape())?;
            let a_m = cfg.augmentation.sample(&mut aug_rng, fixed.shape())?;
            batch.push(TrainingSample {
                fixed: apply_affine(fixed, &a_f),
                moving: apply_affine(moving, &a_m),
                target: transform_field_for_affine_pair(&labels.entries[i].refined, &a_f, &a_m)?,
            });
        }
        let (loss, grad) = batch_loss_and_grad(state, &batch, &cfg.optimizer)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "stage {stage}, iteration {it}: loss {loss}, gradient finite: {}",
                grad.iter().all(|g| g.is_finite())
            )));
        }
        let lr = schedule.learning_rate(it);
        adam.step(state.params_mut(), &grad, lr);
        if !state.is_finite() {
            return Err(Error::Divergence(format!(
                "stage {stage}, iteration {it}: parameters became non-finite"
            )));
        }
        log::debug!("stage {stage} iteration {it}: loss {loss:.4} lr {lr:.2e}");
        log.losses.push(loss);
        log.learning_rates.push(lr);
    }
    Ok(log)
}

/// Summary of one stage of the cyclical loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub mean_difficulty: f64,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub first_lr: Option<f64>,
    pub last_lr: Option<f64>,
    /// Label stream runs refinement stages.
    pub label_refinement: bool,
    /// Learning stream never refines; recorded for auditability.
    pub learning_refinement: bool,
    pub eval: Vec<MetricRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainingReport {
    pub stages: Vec<StageReport>,
}

impl SelfTrainingReport {
    /// Mean of `metric` over the held-out rows of every stage.
    pub fn stage_means(&self, metric: &str) -> Vec<Option<f64>> {
        self.stages
            .iter()
            .map(|s| crate::eval::mean_metric(&s.eval, metric))
            .collect()
    }
}

fn refinement_active(r: &RefinementConfig) -> bool {
    r.fb_iterations > 0 || r.enable_second_warp || r.enable_instance_opt
}

/// Hooks for persisting and resuming a run; the default does nothing.
pub trait RunStorage {
    fn load_checkpoint(&mut self, _stage: usize) -> Result<Option<FeatureExtractorState<f32>>> {
        Ok(None)
    }
    fn save_checkpoint(
        &mut self,
        _stage: usize,
        _state: &FeatureExtractorState<f32>,
    ) -> Result<()> {
        Ok(())
    }
    fn load_labels(&mut self, _stage: usize) -> Result<Option<PseudoLabelStore>> {
        Ok(None)
    }
    fn save_labels(&mut self, _labels: &PseudoLabelStore) -> Result<()> {
        Ok(())
    }
    fn load_report(&mut self, _stage: usize) -> Result<Option<StageReport>> {
        Ok(None)
    }
    fn save_report(&mut self, _report: &StageReport, _log: Option<&StageLog>) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
pub struct NoStorage;

impl RunStorage for NoStorage {}

fn eval_rows(
    state: &FeatureExtractorState<f32>,
    eval: &[EvalCase],
    cfg: &SelfTrainingConfig,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for case in eval {
        rows.extend(evaluate_case(case, state, &cfg.optimizer, &cfg.eval_refinement)?.1);
    }
    Ok(rows)
}

/// Stage 0 labels come from `init(seed)`; learning starts from `init(seed + 1)`;
/// every stage trains, regenerates labels with the new network, and scores `eval`.
/// Completed stages found in `storage` are reused.
pub fn run_self_training(
    data: &TrainingSet,
    eval: &[EvalCase],
    cfg: &SelfTrainingConfig,
    seed: u64,
    storage: &mut dyn RunStorage,
) -> Result<(FeatureExtractorState<f32>, SelfTrainingReport)> {
    cfg.validate()?;
    let mut report = SelfTrainingReport::default();
    let label_refinement = refinement_active(&cfg.label_refinement);

    let g0 = FeatureExtractorState::<f32>::init(cfg.architecture, seed);
    let mut labels = match storage.load_labels(0)? {
        Some(l) => l,
        None => {
            let l = generate_pseudo_labels(&g0, data, &cfg.optimizer, &cfg.label_refinement, 0)?;
            storage.save_labels(&l)?;
            l
        }
    };
    labels.check_against(data)?;
    let stage0 = match storage.load_report(0)? {
        Some(r) => r,
        None => {
            let r = StageReport {
                stage: 0,
                mean_difficulty: labels.mean_difficulty(),
                first_loss: None,
                last_loss: None,
                first_lr: None,
                last_lr: None,
                label_refinement,
                learning_refinement: false,
                eval: eval_rows(&g0, eval, cfg)?,
            };
            storage.save_report(&r, None)?;
            r
        }
    };
    log::info!("stage 0: mean difficulty {:.3} mm", stage0.mean_difficulty);
    report.stages.push(stage0);

    let mut state = FeatureExtractorState::<f32>::init(cfg.architecture, seed.wrapping_add(1));
    for t in 1..=cfg.schedule.stages {
        if let (Some(s), Some(l), Some(r)) = (
            storage.load_checkpoint(t)?,
            storage.load_labels(t)?,
            storage.load_report(t)?,
        ) {
            if s.arch() != cfg.architecture {
                return Err(Error::InvalidInput(format!(
                    "checkpoint of stage {t} has a different architecture"
                )));
            }
            log::info!("stage {t}: resumed from storage");
            state = s;
            labels = l;
            labels.check_against(data)?;
            report.stages.push(r);
            continue;
        }
        let stage_log = train_stage(t, &mut state, &labels, data, cfg, seed)?;
        storage.save_checkpoint(t, &state)?;
        labels = generate_pseudo_labels(&state, data, &cfg.optimizer, &cfg.label_refinement, t)?;
        storage.save_labels(&labels)?;
        let r = StageReport {
            stage: t,
            mean_difficulty: labels.mean_difficulty(),
            first_loss: stage_log.losses.first().copied(),
            last_loss: stage_log.losses.last().copied(),
            first_lr: stage_log.learning_rates.first().copied(),
            last_lr: stage_log.learning_rates.last().copied(),
            label_refinement,
            learning_refinement: false,
            eval: eval_rows(&state, eval, cfg)?,
        };
        log::info!(
            "stage {t}: loss {:.3} -> {:.3}, mean difficulty {:.3} mm",
            r.first_loss.unwrap_or(f64::NAN),
            r.last_loss.unwrap_or(f64::NAN),
            r.mean_difficulty
        );
        storage.save_report(&r, Some(&stage_log))?;
        report.stages.push(r);
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tre_loss_examples() {
        let a = DisplacementField::constant([2, 2, 2], [2.0; 3], 8, [1.0, 0.0, 0.0]).unwrap();
        let z = DisplacementField::zeros([2, 2, 2], [2.0; 3], 8).unwrap();
        assert_eq!(tre_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(tre_loss(&a, &z).unwrap(), 16.0);
        let half = DisplacementField::from_fn([2, 2, 2], [1.0; 3], 1, |[i, _, _]| {
            if i == 0 {
                [0.0, 3.0, 4.0]
            } else {
                [0.0; 3]
            }
        })
        .unwrap();
        let z1 = DisplacementField::zeros([2, 2, 2], [1.0; 3], 1).unwrap();
        assert_eq!(tre_loss(&half, &z1).unwrap(), 2.5);
        let two = DisplacementField::constant([2, 2, 2], [2.0; 3], 8, [2.0, 0.0, 0.0]).unwrap();
        assert_eq!(difficulty_score(&two, &z).unwrap(), 32.0);
        assert_eq!(
            difficulty_score(&two, &a).unwrap(),
            tre_loss(&two, &a).unwrap()
        );
        assert!(tre_loss(&a, &z1).is_err());
    }

    #[test]
    fn tre_gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let target = DisplacementField::from_fn([2, 3, 2], [1.5, 2.0, 2.5], 4, |_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .unwrap();
        let pred: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = tre_loss_with_grad(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..36 {
            let mut p = pred.clone();
            let mut m = pred.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (tre_loss_with_grad(&p, &target).unwrap().0
                - tre_loss_with_grad(&m, &target).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn sampling_weight_examples() {
        assert_eq!(sampling_weights(&[3.0]).unwrap(), vec![1.0]);
        let w = sampling_weights(&[5.0, 1.0, 9.0]).unwrap();
        for (a, b) in w.iter().zip([0.33330, 0.66224, 0.00446]) {
            assert!((a - b).abs() < 1e-4, "{w:?}");
        }
        let eq = sampling_weights(&[2.0; 4]).unwrap();
        assert!(eq.windows(2).all(|p| p[0] > p[1]));
        assert!(sampling_weights(&[]).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = TrainingSchedule {
            iterations_per_stage: 11,
            ..Default::default()
        };
        assert_eq!(s.learning_rate(0), 1e-3);
        assert!((s.learning_rate(10) - 1e-5).abs() < 1e-18);
        assert!((s.learning_rate(5) - (1e-5 + 0.5 * (1e-3 - 1e-5))).abs() < 1e-15);
        assert!((1..11).all(|i| s.learning_rate(i) < s.learning_rate(i - 1)));
    }

    #[test]
    fn augmentation_respects_its_ranges() {
        let cfg = AugmentationConfig::default();
        let mut rng = substream(0, "test");
        for _ in 0..20 {
            let a = cfg.sample(&mut rng, [32, 32, 32]).unwrap();
            let d = a.determinant();
            assert!(d > 0.9f64.powi(3) - 1e-9 && d < 1.1f64.powi(3) + 1e-9);
            let c = a.apply([15.5, 15.5, 15.5]);
            for v in c {
                assert!((v - 15.5).abs() <= 5.0 + 1e-9);
            }
        }
        let off = AugmentationConfig {
            enabled: false,
            ..cfg
        };
        assert_eq!(
            off.sample(&mut rng, [8, 8, 8]).unwrap(),
            AffineTransform::identity()
        );
    }
}
