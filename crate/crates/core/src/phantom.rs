//! Labelled blob phantoms deformed by known smooth fields.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    lin, numel, warp_labels, warp_volume, DisplacementField, LabelVolume, Shape, Volume,
};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Shape,
    pub spacing: [f64; 3],
    pub num_structures: usize,
    /// Ellipsoid semi-axis range, in voxels.
    pub blob_radius: (f64, f64),
    /// Gaussian σ of the deformation noise, in voxels.
    pub field_sigma: f64,
    /// Largest displacement norm, in voxels.
    pub field_magnitude: f64,
    /// Amplitude of the smooth background texture.
    pub texture: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [2.0; 3],
            num_structures: 6,
            blob_radius: (5.0, 12.0),
            field_sigma: 8.0,
            field_magnitude: 6.0,
            texture: 0.15,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let min_dim = *self.dims.iter().min().unwrap_or(&0);
        if min_dim == 0 {
            return Err(Error::Config("phantom dims must be positive".into()));
        }
        if !(self.field_sigma > 0.0) {
            return Err(Error::Config("field_sigma must be positive".into()));
        }
        if !(self.field_magnitude >= 0.0 && self.field_magnitude < min_dim as f64 / 4.0) {
            return Err(Error::Config(format!(
                "field_magnitude must lie in [0, {})",
                min_dim as f64 / 4.0
            )));
        }
        let (lo, hi) = self.blob_radius;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(
                "blob_radius must be an ordered positive range".into(),
            ));
        }
        if self.num_structures > u16::MAX as usize {
            return Err(Error::Config("too many structures".into()));
        }
        if self.noise_std < 0.0 || self.texture < 0.0 || self.spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(
                "noise, texture and spacing must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// A synthetic pair with its exact fixed→moving correspondence.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomPair {
    pub fixed: Volume,
    pub moving: Volume,
    pub fixed_labels: LabelVolume,
    pub moving_labels: LabelVolume,
    /// `moving(x + field(x)) ≈ fixed(x)`.
    pub field: DisplacementField,
}

/// In-place separable Gaussian filter with periodic borders, truncated at 3σ.
/// Periodic borders keep the statistics of smoothed noise stationary.
pub fn gaussian_smooth(data: &mut [f64], shape: Shape, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|o| (-(o * o) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = shape[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for u in 0..shape[others[0]] {
            for v in 0..shape[others[1]] {
                let at = |t: usize| {
                    let mut idx = [0; 3];
                    idx[axis] = t;
                    idx[others[0]] = u;
                    idx[others[1]] = v;
                    lin(shape, idx[0], idx[1], idx[2])
                };
                line.clear();
                line.extend((0..n).map(|t| data[at(t)]));
                for t in 0..n {
                    let mut acc = 0.0;
                    for (ki, o) in (-r..=r).enumerate() {
                        let q = (t as i64 + o).rem_euclid(n as i64) as usize;
                        acc += kernel[ki] * line[q];
                    }
                    data[at(t)] = acc;
                }
            }
        }
    }
}

struct Blob {
    center: [f64; 3],
    radii: [f64; 3],
    rotation: [[f64; 3]; 3],
    intensity: f64,
}

fn rotation(a: f64, b: f64, c: f64) -> [[f64; 3]; 3] {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
    let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
    let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
    let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
        let mut o = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                o[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
            }
        }
        o
    };
    mul(rz, mul(ry, rx))
}

/// Fixed image and labels: smoothed ellipsoids over a smooth texture, plus noise.
fn anatomy(spec: &PhantomSpec) -> Result<(Volume, LabelVolume)> {
    let shape = spec.dims;
    let n = numel(shape);
    let mut rng = substream(spec.seed, "phantom/anatomy");
    let (rlo, rhi) = spec.blob_radius;
    let blobs: Vec<Blob> = (0..spec.num_structures)
        .map(|_| {
            let radii = [
                rng.random_range(rlo..=rhi),
                rng.random_range(rlo..=rhi),
                rng.random_range(rlo..=rhi),
            ];
            let center = std::array::from_fn(|a| {
                let margin = (rhi * 0.5).min(shape[a] as f64 / 2.0 - 1.0).max(0.0);
                rng.random_range(margin..=(shape[a] as f64 - 1.0 - margin).max(margin))
            });
            let tau = std::f64::consts::TAU;
            Blob {
                center,
                radii,
                rotation: rotation(
                    rng.random_range(0.0..tau),
                    rng.random_range(0.0..tau),
                    rng.random_range(0.0..tau),
                ),
                intensity: rng.random_range(0.3..1.0),
            }
        })
        .collect();
    let mut labels = vec![0u16; n];
    let mut intensity = vec![0.0f64; n];
    for node in 0..n {
        let x = crate::grid::unlin(shape, node);
        for (b, blob) in blobs.iter().enumerate() {
            let d = [
                x[0] as f64 - blob.center[0],
                x[1] as f64 - blob.center[1],
                x[2] as f64 - blob.center[2],
            ];
            let mut r2 = 0.0;
            for i in 0..3 {
                let local: f64 = (0..3).map(|k| blob.rotation[k][i] * d[k]).sum();
                r2 += (local / blob.radii[i]).powi(2);
            }
            if r2 <= 1.0 {
                labels[node] = b as u16 + 1;
                intensity[node] = blob.intensity;
            }
        }
    }
    gaussian_smooth(&mut intensity, shape, 1.0);
    let mut texture: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    gaussian_smooth(&mut texture, shape, 2.0);
    let t_std = (texture.iter().map(|v| v * v).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    let mut noise_rng = substream(spec.seed, "phantom/noise");
    let data: Vec<f32> = (0..n)
        .map(|i| {
            let noise: f64 = StandardNormal.sample(&mut noise_rng);
            (intensity[i] + spec.texture * texture[i] / t_std + spec.noise_std * noise) as f32
        })
        .collect();
    Ok((
        Volume::new(shape, spec.spacing, data)?,
        LabelVolume::new(shape, spec.spacing, labels)?,
    ))
}

/// Smoothed vector noise scaled so the largest displacement norm equals the spec magnitude.
fn smooth_field(spec: &PhantomSpec) -> Result<DisplacementField> {
    let shape = spec.dims;
    let n = numel(shape);
    let mut rng = substream(spec.seed, "phantom/field");
    let mut data: Vec<f64> = (0..3 * n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for c in 0..3 {
        gaussian_smooth(&mut data[c * n..(c + 1) * n], shape, spec.field_sigma);
    }
    let max_norm = (0..n)
        .map(|x| (data[x].powi(2) + data[n + x].powi(2) + data[2 * n + x].powi(2)).sqrt())
        .fold(0.0, f64::max);
    let scale = if max_norm > 0.0 {
        spec.field_magnitude / max_norm
    } else {
        0.0
    };
    data.iter_mut().for_each(|v| *v *= scale);
    DisplacementField::new(shape, spec.spacing, 1, data)
}

pub const INVERSION_ITERATIONS: usize = 50;

/// Fixed-point inverse `ψ(y) = −φ(y + ψ(y))`, so that `y ↦ y + ψ(y)` undoes `x ↦ x + φ(x)`.
pub fn invert_field(field: &DisplacementField, iterations: usize) -> DisplacementField {
    let shape = field.shape();
    let mut inv = field.clone();
    inv.data_mut().iter_mut().for_each(|v| *v = -*v);
    for _ in 0..iterations {
        let mut next = inv.clone();
        for node in 0..inv.numel() {
            let [i, j, k] = crate::grid::unlin(shape, node);
            let u = inv.at(node);
            let w = field.sample([i as f64 + u[0], j as f64 + u[1], k as f64 + u[2]]);
            next.set(node, [-w[0], -w[1], -w[2]]);
        }
        inv = next;
    }
    inv
}

pub fn make_pair(spec: &PhantomSpec) -> Result<PhantomPair> {
    spec.validate()?;
    let (fixed, fixed_labels) = anatomy(spec)?;
    let field = smooth_field(spec)?;
    let inverse = invert_field(&field, INVERSION_ITERATIONS);
    let moving = warp_volume(&fixed, &inverse)?;
    let moving_labels = warp_labels(&fixed_labels, &inverse)?;
    Ok(PhantomPair {
        fixed,
        moving,
        fixed_labels,
        moving_labels,
        field,
    })
}

/// Per-pair seed of pair `index` in a dataset generated from `seed`.
pub fn pair_seed(seed: u64, index: usize) -> u64 {
    substream(seed, &format!("phantom/pair{index}")).random()
}

/// `n_pairs` independent phantoms; pair `i` uses [`pair_seed`]`(spec.seed, i)`.
pub fn make_dataset(spec: &PhantomSpec, n_pairs: usize) -> Result<Vec<PhantomPair>> {
    if n_pairs == 0 {
        return Err(Error::InvalidInput(
            "a dataset needs at least one pair".into(),
        ));
    }
    (0..n_pairs)
        .map(|i| make_pair(&spec.with_seed(pair_seed(spec.seed, i))))
        .collect()
}
