//! Coupled convex optimization over a discrete cost volume.
//!
//! Alternates a per-node search `argmin_d cost(x, d) + θ_i ||d − z(x)||²` with
//! smoothing of the selected displacements into the next coupling target `z`,
//! for an increasing coupling schedule `θ_1 < … < θ_N`. The hard read-out is
//! the last search result; the differentiable read-out is the softmin
//! expectation of the last coupled cost.

use serde::{Deserialize, Serialize};

use crate::correlation::{displacement, CostVolume, NUM_DISPLACEMENTS};
use crate::error::{Error, Result};
use crate::grid::{lin, DisplacementField, Shape};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledConvexConfig {
    pub coupling_schedule: Vec<f64>,
    /// Half-width of the box filter applied to each displacement component.
    pub smoother_radius: usize,
    /// Inverse temperature β of the soft read-out.
    pub softmax_temperature: f64,
    pub hard_mode: bool,
}

impl Default for CoupledConvexConfig {
    fn default() -> Self {
        Self {
            coupling_schedule: vec![1.0, 3.0, 10.0],
            smoother_radius: 1,
            softmax_temperature: 15.0,
            hard_mode: true,
        }
    }
}

impl CoupledConvexConfig {
    pub fn validate(&self) -> Result<()> {
        if self
            .coupling_schedule
            .iter()
            .any(|t| !(t.is_finite() && *t > 0.0))
        {
            return Err(Error::Config("coupling weights must be positive".into()));
        }
        if self.coupling_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "coupling schedule must be strictly increasing".into(),
            ));
        }
        if !(self.softmax_temperature.is_finite() && self.softmax_temperature > 0.0) {
            return Err(Error::Config("softmax temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn hard(&self) -> Self {
        Self {
            hard_mode: true,
            ..self.clone()
        }
    }

    pub fn soft(&self) -> Self {
        Self {
            hard_mode: false,
            ..self.clone()
        }
    }
}

/// Result of the coupling iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTrace {
    /// Candidate index selected at every node by the last search.
    pub argmin: Vec<usize>,
    /// Coupling target used by the last search (zero when no coupling ran).
    pub target: Vec<[f64; 3]>,
    /// Coupling weight of the last search (zero when no coupling ran).
    pub theta: f64,
}

/// Index of the smallest entry; ties go to the lowest index.
#[inline]
fn argmin<T: Real>(values: impl Iterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v = T::infinity();
    for (i, v) in values.enumerate() {
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[inline]
fn coupling_penalty(d: [i32; 3], z: [f64; 3]) -> f64 {
    let a = d[0] as f64 - z[0];
    let b = d[1] as f64 - z[1];
    let c = d[2] as f64 - z[2];
    a * a + b * b + c * c
}

/// Separable box filter with clamp-to-edge borders, applied per component.
pub fn box_smooth(field: &[[f64; 3]], shape: Shape, radius: usize) -> Vec<[f64; 3]> {
    if radius == 0 {
        return field.to_vec();
    }
    let mut cur = field.to_vec();
    let r = radius as i64;
    let norm = 1.0 / (2 * radius + 1) as f64;
    for axis in 0..3 {
        let mut next = vec![[0.0; 3]; cur.len()];
        let n = shape[axis] as i64;
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let idx = [i, j, k];
                    let mut acc = [0.0; 3];
                    for o in -r..=r {
                        let mut q = idx;
                        q[axis] = (idx[axis] as i64 + o).clamp(0, n - 1) as usize;
                        let v = cur[lin(shape, q[0], q[1], q[2])];
                        for c in 0..3 {
                            acc[c] += v[c];
                        }
                    }
                    next[lin(shape, i, j, k)] = [acc[0] * norm, acc[1] * norm, acc[2] * norm];
                }
            }
        }
        cur = next;
    }
    cur
}

fn to_vec3(idx: usize) -> [f64; 3] {
    let d = displacement(idx);
    [d[0] as f64, d[1] as f64, d[2] as f64]
}

/// Runs the coupling schedule and reports the final search and its target.
pub fn run_coupling<T: Real>(
    cost: &CostVolume<T>,
    cfg: &CoupledConvexConfig,
) -> Result<CouplingTrace> {
    cfg.validate()?;
    let n = cost.numel();
    let mut sel: Vec<usize> = (0..n)
        .map(|x| argmin(cost.costs(x).iter().copied()))
        .collect();
    let mut target = vec![[0.0; 3]; n];
    let mut theta = 0.0;
    let mut z: Vec<[f64; 3]> = sel.iter().map(|&i| to_vec3(i)).collect();
    for &t in &cfg.coupling_schedule {
        let tt = T::cst(t);
        sel = (0..n)
            .map(|x| {
                let zx = z[x];
                argmin(
                    cost.costs(x)
                        .iter()
                        .enumerate()
                        .map(|(di, &c)| c + tt * T::cst(coupling_penalty(displacement(di), zx))),
                )
            })
            .collect();
        target = z;
        theta = t;
        let d: Vec<[f64; 3]> = sel.iter().map(|&i| to_vec3(i)).collect();
        z = box_smooth(&d, cost.shape, cfg.smoother_radius);
    }
    Ok(CouplingTrace {
        argmin: sel,
        target,
        theta,
    })
}

/// Expected displacement under `softmax(−β · costs)` for one node's 125 costs.
pub fn soft_argmin<T: Real>(costs: &[T], beta: f64) -> [T; 3] {
    let (p, _) = softmin_weights(costs, beta);
    let mut out = [T::zero(); 3];
    for (di, w) in p.iter().enumerate() {
        let d = displacement(di);
        for a in 0..3 {
            out[a] += *w * T::cst(d[a] as f64);
        }
    }
    out
}

fn softmin_weights<T: Real>(costs: &[T], beta: f64) -> (Vec<T>, T) {
    let b = T::cst(beta);
    let cmin = costs.iter().copied().fold(T::infinity(), T::min);
    let mut w: Vec<T> = costs.iter().map(|&c| (-(c - cmin) * b).exp()).collect();
    let total: T = w.iter().copied().sum();
    for v in &mut w {
        *v /= total;
    }
    (w, cmin)
}

/// Accumulates `d loss / d costs` for [`soft_argmin`], given `d loss / d output`.
pub fn soft_argmin_backward<T: Real>(costs: &[T], beta: f64, dout: [T; 3], dcost: &mut [T]) {
    let (p, _) = softmin_weights(costs, beta);
    let mut mean = [T::zero(); 3];
    for (di, w) in p.iter().enumerate() {
        let d = displacement(di);
        for a in 0..3 {
            mean[a] += *w * T::cst(d[a] as f64);
        }
    }
    let b = T::cst(beta);
    for (di, w) in p.iter().enumerate() {
        let d = displacement(di);
        let mut s = T::zero();
        for a in 0..3 {
            s += dout[a] * (T::cst(d[a] as f64) - mean[a]);
        }
        dcost[di] -= b * *w * s;
    }
}

/// Differentiable read-out: the coupled costs and the predicted `(3, n)` field.
#[derive(Clone, Debug)]
pub struct SoftReadout<T> {
    pub coupled: Vec<T>,
    pub pred: Vec<T>,
    pub beta: f64,
    pub trace: CouplingTrace,
}

pub fn coupled_convex_soft<T: Real>(
    cost: &CostVolume<T>,
    cfg: &CoupledConvexConfig,
) -> Result<SoftReadout<T>> {
    let trace = run_coupling(cost, cfg)?;
    let n = cost.numel();
    let theta = T::cst(trace.theta);
    let mut coupled = cost.data.clone();
    for x in 0..n {
        let z = trace.target[x];
        for di in 0..NUM_DISPLACEMENTS {
            coupled[x * NUM_DISPLACEMENTS + di] +=
                theta * T::cst(coupling_penalty(displacement(di), z));
        }
    }
    let mut pred = vec![T::zero(); 3 * n];
    for x in 0..n {
        let v = soft_argmin(
            &coupled[x * NUM_DISPLACEMENTS..(x + 1) * NUM_DISPLACEMENTS],
            cfg.softmax_temperature,
        );
        for a in 0..3 {
            pred[a * n + x] = v[a];
        }
    }
    Ok(SoftReadout {
        coupled,
        pred,
        beta: cfg.softmax_temperature,
        trace,
    })
}

/// `d loss / d cost` given `d loss / d pred` (the coupling target is held fixed).
pub fn coupled_convex_soft_backward<T: Real>(readout: &SoftReadout<T>, dpred: &[T]) -> Vec<T> {
    let n = readout.pred.len() / 3;
    let mut dcost = vec![T::zero(); n * NUM_DISPLACEMENTS];
    for x in 0..n {
        let r = x * NUM_DISPLACEMENTS..(x + 1) * NUM_DISPLACEMENTS;
        soft_argmin_backward(
            &readout.coupled[r.clone()],
            readout.beta,
            [dpred[x], dpred[n + x], dpred[2 * n + x]],
            &mut dcost[r],
        );
    }
    dcost
}

/// Smooth coarse displacement field from a cost volume, in the cost grid's units.
pub fn coupled_convex<T: Real>(
    cost: &CostVolume<T>,
    cfg: &CoupledConvexConfig,
) -> Result<DisplacementField> {
    let n = cost.numel();
    let data = if cfg.hard_mode {
        let trace = run_coupling(cost, cfg)?;
        let mut data = vec![0.0; 3 * n];
        for (x, &i) in trace.argmin.iter().enumerate() {
            let d = to_vec3(i);
            for a in 0..3 {
                data[a * n + x] = d[a];
            }
        }
        data
    } else {
        coupled_convex_soft(cost, cfg)?
            .pred
            .iter()
            .map(|v| v.f64())
            .collect()
    };
    DisplacementField::new(cost.shape, cost.spacing, cost.stride, data)
}

/// Total variation (sum of absolute forward differences) of a `(3, n)` field.
pub fn total_variation(field: &DisplacementField) -> f64 {
    let shape = field.shape();
    let mut tv = 0.0;
    for c in 0..3 {
        let comp = field.component(c);
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    let v = comp[lin(shape, i, j, k)];
                    if i + 1 < shape[0] {
                        tv += (comp[lin(shape, i + 1, j, k)] - v).abs();
                    }
                    if j + 1 < shape[1] {
                        tv += (comp[lin(shape, i, j + 1, k)] - v).abs();
                    }
                    if k + 1 < shape[2] {
                        tv += (comp[lin(shape, i, j, k + 1)] - v).abs();
                    }
                }
            }
        }
    }
    tv
}
