//! Non-differentiable refinement of optimizer output: forward-backward
//! consistency, a second warp pass, and per-pair instance optimization.

use serde::{Deserialize, Serialize};

use crate::convex::{coupled_convex, CoupledConvexConfig};
use crate::correlation::correlate;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractorState, FeatureMap, PairFeatures};
use crate::grid::{
    compose_fields, lin, numel, trilinear_grad, unlin, upsample_field, warp_volume,
    DisplacementField, Volume,
};
use crate::nn::Adam;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    pub fb_iterations: usize,
    pub instance_iterations: usize,
    /// Adam step size, in stride-4 grid units.
    pub instance_step: f64,
    /// Weight of the diffusion regularizer.
    pub reg_weight: f64,
    pub enable_second_warp: bool,
    pub enable_instance_opt: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            fb_iterations: 5,
            instance_iterations: 50,
            instance_step: 1.0,
            reg_weight: 1.5,
            enable_second_warp: true,
            enable_instance_opt: true,
        }
    }
}

impl RefinementConfig {
    /// Every stage off: `refine` reduces to upsampling.
    pub fn disabled() -> Self {
        Self {
            fb_iterations: 0,
            enable_second_warp: false,
            enable_instance_opt: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reg_weight.is_finite() && self.reg_weight >= 0.0) {
            return Err(Error::Config("reg_weight must be non-negative".into()));
        }
        if !(self.instance_step.is_finite() && self.instance_step > 0.0) {
            return Err(Error::Config("instance_step must be positive".into()));
        }
        Ok(())
    }
}

/// Symmetric consistency updates `fwd ← ½(fwd − bwd∘fwd)`, `bwd ← ½(bwd − fwd∘bwd)`,
/// where `(b∘a)(x) = b(x + a(x))`. The second update sees the new `fwd`.
pub fn forward_backward_consistency(
    fwd: &DisplacementField,
    bwd: &DisplacementField,
    iters: usize,
) -> Result<(DisplacementField, DisplacementField)> {
    if !fwd.same_grid(bwd) {
        return Err(Error::Shape(format!(
            "consistency needs matching grids: {:?}@{} vs {:?}@{}",
            fwd.shape(),
            fwd.grid_scale(),
            bwd.shape(),
            bwd.grid_scale()
        )));
    }
    let mut f = fwd.clone();
    let mut b = bwd.clone();
    for _ in 0..iters {
        f = half_difference(&f, &b);
        b = half_difference(&b, &f);
    }
    Ok((f, b))
}

/// `½(a(x) − other(x + a(x)))`.
fn half_difference(a: &DisplacementField, other: &DisplacementField) -> DisplacementField {
    let shape = a.shape();
    let mut out = a.clone();
    for node in 0..a.numel() {
        let [i, j, k] = unlin(shape, node);
        let u = a.at(node);
        let w = other.sample([i as f64 + u[0], j as f64 + u[1], k as f64 + u[2]]);
        out.set(
            node,
            [
                0.5 * (u[0] - w[0]),
                0.5 * (u[1] - w[1]),
                0.5 * (u[2] - w[2]),
            ],
        );
    }
    out
}

/// Mean norm of `fwd(x) + bwd(x + fwd(x))`, in grid units.
pub fn inverse_consistency_residual(
    fwd: &DisplacementField,
    bwd: &DisplacementField,
) -> Result<f64> {
    let c = compose_fields(bwd, fwd)?;
    let n = c.numel();
    Ok((0..n)
        .map(|x| {
            let v = c.at(x);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
        .sum::<f64>()
        / n as f64)
}

/// Hard optimizer output for `fixed → moving` features, optionally made
/// consistent with the reverse direction.
fn optimize_pair<T: Real>(
    fixed: &FeatureMap<T>,
    moving: &FeatureMap<T>,
    convex: &CoupledConvexConfig,
    fb_iterations: usize,
) -> Result<DisplacementField> {
    let hard = convex.hard();
    let fwd = coupled_convex(&correlate(fixed, moving)?, &hard)?;
    consistent(fwd, fixed, moving, &hard, fb_iterations)
}

fn consistent<T: Real>(
    fwd: DisplacementField,
    fixed: &FeatureMap<T>,
    moving: &FeatureMap<T>,
    hard: &CoupledConvexConfig,
    fb_iterations: usize,
) -> Result<DisplacementField> {
    if fb_iterations == 0 {
        return Ok(fwd);
    }
    let bwd = coupled_convex(&correlate(moving, fixed)?, hard)?;
    Ok(forward_backward_consistency(&fwd, &bwd, fb_iterations)?.0)
}

/// Warps `moving` by `first`, registers `fixed` to the result, and composes:
/// `φ(x) = φ2(x) + φ1(x + φ2(x))`.
pub fn second_warp_pass<T: Real>(
    fixed: &Volume,
    moving: &Volume,
    first: &DisplacementField,
    state: &FeatureExtractorState<T>,
    convex: &CoupledConvexConfig,
    cfg: &RefinementConfig,
) -> Result<DisplacementField> {
    let (fixed8, _) = state.extract_one(fixed)?;
    second_warp_with(&fixed8, moving, first, state, convex, cfg)
}

fn second_warp_with<T: Real>(
    fixed8: &FeatureMap<T>,
    moving: &Volume,
    first: &DisplacementField,
    state: &FeatureExtractorState<T>,
    convex: &CoupledConvexConfig,
    cfg: &RefinementConfig,
) -> Result<DisplacementField> {
    let warped = warp_volume(moving, first)?;
    let (warped8, _) = state.extract_one(&warped)?;
    let residual = optimize_pair(fixed8, &warped8, convex, cfg.fb_iterations)?;
    let first_on_grid = if first.same_grid(&residual) {
        first.clone()
    } else {
        crate::grid::downsample_field(first, residual.grid_scale() / first.grid_scale())?
    };
    compose_fields(&first_on_grid, &residual)
}

/// Loss value and gradient of the instance objective at `phi`, a `(3, n)`
/// field on the grid of the deep features:
/// `mean ||F(x) − M(x + φ(x))||² + λ · mean ||∇φ(x)||²` (forward differences).
pub fn instance_objective(
    phi: &[f64],
    fixed: &FeatureMap<f64>,
    moving: &FeatureMap<f64>,
    reg_weight: f64,
) -> (f64, Vec<f64>) {
    let shape = fixed.shape;
    let n = numel(shape);
    let ch = fixed.channels();
    let mut grad = vec![0.0; 3 * n];
    let mut data = 0.0;
    let inv_n = 1.0 / n as f64;
    for node in 0..n {
        let [i, j, k] = unlin(shape, node);
        let p = [
            i as f64 + phi[node],
            j as f64 + phi[n + node],
            k as f64 + phi[2 * n + node],
        ];
        let mut g = [0.0; 3];
        for c in 0..ch {
            let m = &moving.data[c * n..(c + 1) * n];
            let (v, dv) = trilinear_grad(shape, p, |q| m[q]);
            let r = fixed.data[c * n + node] - v;
            data += r * r;
            for a in 0..3 {
                g[a] -= 2.0 * r * dv[a];
            }
        }
        for a in 0..3 {
            grad[a * n + node] += g[a] * inv_n;
        }
    }
    let mut reg = 0.0;
    for a in 0..3 {
        let comp = &phi[a * n..(a + 1) * n];
        for node in 0..n {
            let x = unlin(shape, node);
            for axis in 0..3 {
                if x[axis] + 1 >= shape[axis] {
                    continue;
                }
                let mut y = x;
                y[axis] += 1;
                let nb = lin(shape, y[0], y[1], y[2]);
                let d = comp[nb] - comp[node];
                reg += d * d;
                let gd = 2.0 * reg_weight * d * inv_n;
                grad[a * n + nb] += gd;
                grad[a * n + node] -= gd;
            }
        }
    }
    ((data + reg_weight * reg) * inv_n, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

/// Adam on the displacement values at the deep-feature grid; `init` must be on
/// that grid (or upsamplable to it).
pub fn instance_optimize<T: Real>(
    init: &DisplacementField,
    deep_fixed: &FeatureMap<T>,
    deep_moving: &FeatureMap<T>,
    cfg: &RefinementConfig,
) -> Result<(DisplacementField, InstanceReport)> {
    cfg.validate()?;
    if deep_fixed.shape != deep_moving.shape || deep_fixed.data.len() != deep_moving.data.len() {
        return Err(Error::Shape("deep feature maps differ in shape".into()));
    }
    let start = if init.shape() == deep_fixed.shape {
        init.clone()
    } else {
        upsample_field(init, deep_fixed.shape)?
    };
    if start.shape() != deep_fixed.shape || start.grid_scale() != deep_fixed.stride {
        return Err(Error::Shape(format!(
            "initial field {:?}@{} does not sit on the feature grid {:?}@{}",
            start.shape(),
            start.grid_scale(),
            deep_fixed.shape,
            deep_fixed.stride
        )));
    }
    let f = deep_fixed.cast::<f64>();
    let m = deep_moving.cast::<f64>();
    let mut phi = start.data().to_vec();
    let mut adam = Adam::<f64>::new(phi.len());
    let (initial_loss, mut grad) = instance_objective(&phi, &f, &m, cfg.reg_weight);
    let mut loss = initial_loss;
    for _ in 0..cfg.instance_iterations {
        adam.step(&mut phi, &grad, cfg.instance_step);
        (loss, grad) = instance_objective(&phi, &f, &m, cfg.reg_weight);
    }
    let report = InstanceReport {
        initial_loss,
        final_loss: loss,
        iterations: cfg.instance_iterations,
    };
    let mut out = start;
    out.data_mut().copy_from_slice(&phi);
    Ok((out, report))
}

/// Refined full-resolution field plus bookkeeping from the stages that ran.
#[derive(Clone, Debug)]
pub struct Refined {
    pub field: DisplacementField,
    pub instance: Option<InstanceReport>,
}

/// Refines `raw` (optimizer output on the stride-8 grid) into a dense field on
/// the fixed image's grid.
pub fn refine<T: Real>(
    fixed: &Volume,
    moving: &Volume,
    raw: &DisplacementField,
    state: &FeatureExtractorState<T>,
    convex: &CoupledConvexConfig,
    cfg: &RefinementConfig,
) -> Result<Refined> {
    let feats = state.extract(fixed, moving)?;
    refine_with_features(fixed, moving, &feats, raw, state, convex, cfg)
}

pub fn refine_with_features<T: Real>(
    fixed: &Volume,
    moving: &Volume,
    feats: &PairFeatures<T>,
    raw: &DisplacementField,
    state: &FeatureExtractorState<T>,
    convex: &CoupledConvexConfig,
    cfg: &RefinementConfig,
) -> Result<Refined> {
    cfg.validate()?;
    if fixed.shape() != moving.shape() {
        return Err(Error::Shape(
            "fixed and moving volumes differ in shape".into(),
        ));
    }
    let hard = convex.hard();
    let mut phi = consistent(
        raw.clone(),
        &feats.fixed,
        &feats.moving,
        &hard,
        cfg.fb_iterations,
    )?;
    if cfg.enable_second_warp {
        phi = second_warp_with(&feats.fixed, moving, &phi, state, convex, cfg)?;
    }
    let mut instance = None;
    if cfg.enable_instance_opt {
        let (opt, report) = instance_optimize(&phi, &feats.deep_fixed, &feats.deep_moving, cfg)?;
        phi = opt;
        instance = Some(report);
    }
    let field = upsample_field(&phi, fixed.shape())?;
    Ok(Refined { field, instance })
}

/// One evaluation-mode registration: raw optimizer output and its refinement.
#[derive(Clone, Debug)]
pub struct Registration {
    /// Hard optimizer output on the stride-8 grid.
    pub raw: DisplacementField,
    pub refined: Refined,
}

pub fn register<T: Real>(
    fixed: &Volume,
    moving: &Volume,
    state: &FeatureExtractorState<T>,
    convex: &CoupledConvexConfig,
    cfg: &RefinementConfig,
) -> Result<Registration> {
    let feats = state.extract(fixed, moving)?;
    let raw = coupled_convex(&correlate(&feats.fixed, &feats.moving)?, &convex.hard())?;
    let refined = refine_with_features(fixed, moving, &feats, &raw, state, convex, cfg)?;
    Ok(Registration { raw, refined })
}
