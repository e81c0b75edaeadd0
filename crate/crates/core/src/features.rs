//! The trainable feature network: six 3×3×3 convolutions (BatchNorm + ReLU,
//! stride 2 on every second layer) followed by a 1×1×1 projection to 16
//! channels at stride 8, plus a second 16-channel projection of the conv4
//! output at stride 4 used by instance optimization.
//!
//! Parameters live in one flat buffer with a named-tensor layout so that the
//! optimizer and checkpoint code can treat them uniformly.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{numel, Shape, Volume};
use crate::nn::{self, BnReluCache, ConvGeom};
use crate::real::Real;
use crate::rng;

pub const FEATURE_DIM: usize = 16;
pub const NUM_CONV: usize = 6;
pub const STRIDES: [usize; NUM_CONV] = [1, 2, 1, 2, 1, 2];
/// Index of the convolution whose output feeds the stride-4 head.
pub const DEEP_LAYER: usize = 3;

/// Channel plan for the three blocks of two convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub widths: [usize; 3],
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            widths: [32, 64, 128],
        }
    }
}

impl Architecture {
    pub fn conv_channels(&self, layer: usize) -> (usize, usize) {
        let w = self.widths;
        let outs = [w[0], w[0], w[1], w[1], w[2], w[2]];
        let cin = if layer == 0 { 1 } else { outs[layer - 1] };
        (cin, outs[layer])
    }

    /// `(name, shape)` of every learnable tensor, in buffer order.
    pub fn parameter_table(&self) -> Vec<(String, Vec<usize>)> {
        let mut t = Vec::new();
        for l in 0..NUM_CONV {
            let (cin, cout) = self.conv_channels(l);
            t.push((format!("conv{}.weight", l + 1), vec![cout, cin, 3, 3, 3]));
            t.push((format!("bn{}.weight", l + 1), vec![cout]));
            t.push((format!("bn{}.bias", l + 1), vec![cout]));
        }
        t.push(("head.weight".into(), vec![FEATURE_DIM, self.widths[2]]));
        t.push(("head.bias".into(), vec![FEATURE_DIM]));
        t.push(("deep_head.weight".into(), vec![FEATURE_DIM, self.widths[1]]));
        t.push(("deep_head.bias".into(), vec![FEATURE_DIM]));
        t
    }

    /// `(name, shape)` of the normalization running statistics.
    pub fn buffer_table(&self) -> Vec<(String, Vec<usize>)> {
        let mut t = Vec::new();
        for l in 0..NUM_CONV {
            let (_, cout) = self.conv_channels(l);
            t.push((format!("bn{}.running_mean", l + 1), vec![cout]));
            t.push((format!("bn{}.running_var", l + 1), vec![cout]));
        }
        t
    }
}

/// A named slice of a flat buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

fn layout(table: Vec<(String, Vec<usize>)>) -> (Vec<TensorSpec>, usize) {
    let mut offset = 0;
    let specs = table
        .into_iter()
        .map(|(name, shape)| {
            let s = TensorSpec {
                name,
                shape,
                offset,
            };
            offset += s.len();
            s
        })
        .collect();
    (specs, offset)
}

/// Learnable parameters and normalization statistics of the feature network.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractorState<T> {
    arch: Architecture,
    seed: u64,
    param_layout: Vec<TensorSpec>,
    buffer_layout: Vec<TensorSpec>,
    params: Vec<T>,
    buffers: Vec<T>,
}

/// Indices into the parameter layout for one conv block.
#[derive(Clone, Copy)]
struct ConvIdx {
    weight: usize,
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

fn conv_idx(l: usize) -> ConvIdx {
    ConvIdx {
        weight: 3 * l,
        gamma: 3 * l + 1,
        beta: 3 * l + 2,
        mean: 2 * l,
        var: 2 * l + 1,
    }
}

const HEAD_W: usize = 3 * NUM_CONV;
const HEAD_B: usize = HEAD_W + 1;
const DEEP_W: usize = HEAD_W + 2;
const DEEP_B: usize = HEAD_W + 3;

/// Stride-8 optimizer features and stride-4 instance-optimization features of a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures<T> {
    pub fixed: FeatureMap<T>,
    pub moving: FeatureMap<T>,
    pub deep_fixed: FeatureMap<T>,
    pub deep_moving: FeatureMap<T>,
}

/// A `(16, d, h, w)` descriptor grid at a given stride.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub shape: Shape,
    pub stride: usize,
    /// Voxel size of the full-resolution input, in mm.
    pub spacing: [f64; 3],
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn channels(&self) -> usize {
        self.data.len() / numel(self.shape)
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            shape: self.shape,
            stride: self.stride,
            spacing: self.spacing,
            data: self.data.iter().map(|v| U::cst(v.f64())).collect(),
        }
    }
}

/// Rejects shapes the three stride-2 layers cannot divide evenly.
pub fn check_input_shape(shape: Shape) -> Result<()> {
    if shape.iter().any(|n| n % 8 != 0) {
        let pad: Vec<usize> = shape.iter().map(|n| (8 - n % 8) % 8).collect();
        return Err(Error::Shape(format!(
            "input shape {shape:?} must be divisible by 8; pad by {pad:?} voxels"
        )));
    }
    Ok(())
}

/// Everything the backward pass needs from a training-mode forward pass.
pub struct TrainCache<T> {
    batch: usize,
    geoms: Vec<ConvGeom>,
    /// `acts[l]` is the input of conv `l`; `acts[6]` feeds the head.
    acts: Vec<Vec<T>>,
    bn: Vec<BnReluCache<T>>,
}

impl<T: Real> FeatureExtractorState<T> {
    /// Fan-in scaled Gaussian weights, zero biases, unit/zero normalization.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let (param_layout, n_params) = layout(arch.parameter_table());
        let (buffer_layout, n_buffers) = layout(arch.buffer_table());
        let mut params = vec![T::zero(); n_params];
        let mut rng = rng::substream(seed, "init");
        for spec in &param_layout {
            let r = spec.range();
            if spec.name.ends_with(".weight") && spec.shape.len() > 1 {
                let fan_in: usize = spec.shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                for p in &mut params[r] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *p = T::cst(z * std);
                }
            } else if spec.name.starts_with("bn") && spec.name.ends_with(".weight") {
                params[r].fill(T::one());
            }
        }
        let mut buffers = vec![T::zero(); n_buffers];
        for spec in &buffer_layout {
            if spec.name.ends_with("running_var") {
                buffers[spec.range()].fill(T::one());
            }
        }
        Self {
            arch,
            seed,
            param_layout,
            buffer_layout,
            params,
            buffers,
        }
    }

    /// Rebuilds a state from raw buffers (checkpoint loading).
    pub fn from_parts(
        arch: Architecture,
        seed: u64,
        params: Vec<T>,
        buffers: Vec<T>,
    ) -> Result<Self> {
        let (param_layout, n_params) = layout(arch.parameter_table());
        let (buffer_layout, n_buffers) = layout(arch.buffer_table());
        if params.len() != n_params || buffers.len() != n_buffers {
            return Err(Error::Shape(format!(
                "state buffers ({}, {}) do not match architecture ({n_params}, {n_buffers})",
                params.len(),
                buffers.len()
            )));
        }
        if params.iter().chain(buffers.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "state contains non-finite values".into(),
            ));
        }
        Ok(Self {
            arch,
            seed,
            param_layout,
            buffer_layout,
            params,
            buffers,
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_layout(&self) -> &[TensorSpec] {
        &self.param_layout
    }

    pub fn buffer_layout(&self) -> &[TensorSpec] {
        &self.buffer_layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[T] {
        &self.buffers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, idx: usize) -> &[T] {
        &self.params[self.param_layout[idx].range()]
    }

    fn buffer(&self, idx: usize) -> &[T] {
        &self.buffers[self.buffer_layout[idx].range()]
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(self.buffers.iter())
            .all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> FeatureExtractorState<U> {
        FeatureExtractorState {
            arch: self.arch,
            seed: self.seed,
            param_layout: self.param_layout.clone(),
            buffer_layout: self.buffer_layout.clone(),
            params: self.params.iter().map(|v| U::cst(v.f64())).collect(),
            buffers: self.buffers.iter().map(|v| U::cst(v.f64())).collect(),
        }
    }

    /// Evaluation-mode forward pass of the shared (Siamese) network on a pair.
    pub fn extract(&self, fixed: &Volume, moving: &Volume) -> Result<PairFeatures<T>> {
        if fixed.shape() != moving.shape() {
            return Err(Error::Shape(format!(
                "fixed {:?} and moving {:?} differ in shape",
                fixed.shape(),
                moving.shape()
            )));
        }
        let (f8, f4) = self.extract_one(fixed)?;
        let (m8, m4) = self.extract_one(moving)?;
        Ok(PairFeatures {
            fixed: f8,
            moving: m8,
            deep_fixed: f4,
            deep_moving: m4,
        })
    }

    /// Evaluation-mode features of one volume: `(stride 8, stride 4)`.
    pub fn extract_one(&self, vol: &Volume) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        check_input_shape(vol.shape())?;
        let mut x: Vec<T> = vol.data().iter().map(|&v| T::cst(v as f64)).collect();
        let mut shape = vol.shape();
        let mut scratch = Vec::new();
        let mut deep = None;
        for l in 0..NUM_CONV {
            let (cin, cout) = self.arch.conv_channels(l);
            let g = ConvGeom::new(shape, STRIDES[l]);
            let ix = conv_idx(l);
            let mut y =
                nn::conv3d_forward(&x, 1, cin, cout, &g, self.param(ix.weight), &mut scratch);
            nn::bn_relu_eval(
                &mut y,
                1,
                cout,
                g.n_out(),
                self.param(ix.gamma),
                self.param(ix.beta),
                self.buffer(ix.mean),
                self.buffer(ix.var),
            );
            x = y;
            shape = g.out_shape;
            if l == DEEP_LAYER {
                let n = numel(shape);
                let d = nn::pointwise_forward(
                    &x,
                    1,
                    cout,
                    FEATURE_DIM,
                    n,
                    self.param(DEEP_W),
                    self.param(DEEP_B),
                );
                deep = Some(FeatureMap {
                    shape,
                    stride: 4,
                    spacing: vol.spacing(),
                    data: d,
                });
            }
        }
        let n = numel(shape);
        let head = nn::pointwise_forward(
            &x,
            1,
            self.arch.widths[2],
            FEATURE_DIM,
            n,
            self.param(HEAD_W),
            self.param(HEAD_B),
        );
        Ok((
            FeatureMap {
                shape,
                stride: 8,
                spacing: vol.spacing(),
                data: head,
            },
            deep.expect("deep head layer is inside the network"),
        ))
    }

    /// Training-mode forward pass over a batch of equally shaped volumes
    /// (batch statistics; running statistics are updated). Returns the
    /// stride-8 features `(B, 16, n8)` and the cache for [`Self::backward`].
    pub fn forward_train(
        &mut self,
        inputs: &[Vec<T>],
        shape: Shape,
    ) -> Result<(Vec<T>, Shape, TrainCache<T>)> {
        check_input_shape(shape)?;
        let batch = inputs.len();
        let n0 = numel(shape);
        let mut x = Vec::with_capacity(batch * n0);
        for v in inputs {
            if v.len() != n0 {
                return Err(Error::Shape(format!(
                    "batch volume has {} voxels, expected {n0}",
                    v.len()
                )));
            }
            x.extend_from_slice(v);
        }
        let mut acts = Vec::with_capacity(NUM_CONV + 1);
        let mut geoms = Vec::with_capacity(NUM_CONV);
        let mut bn = Vec::with_capacity(NUM_CONV);
        let mut scratch = Vec::new();
        let mut cur_shape = shape;
        for l in 0..NUM_CONV {
            let (cin, cout) = self.arch.conv_channels(l);
            let g = ConvGeom::new(cur_shape, STRIDES[l]);
            let ix = conv_idx(l);
            let mut y = nn::conv3d_forward(
                &x,
                batch,
                cin,
                cout,
                &g,
                self.param(ix.weight),
                &mut scratch,
            );
            let (mr, vr) = (
                self.buffer_layout[ix.mean].range(),
                self.buffer_layout[ix.var].range(),
            );
            let (gr, br) = (
                self.param_layout[ix.gamma].range(),
                self.param_layout[ix.beta].range(),
            );
            let (mean_buf, var_buf) = {
                let (a, b) = self.buffers.split_at_mut(vr.start);
                (&mut a[mr], &mut b[..vr.len()])
            };
            let cache = nn::bn_relu_train(
                &mut y,
                batch,
                cout,
                g.n_out(),
                &self.params[gr],
                &self.params[br],
                mean_buf,
                var_buf,
            );
            acts.push(std::mem::replace(&mut x, y));
            geoms.push(g);
            bn.push(cache);
            cur_shape = g.out_shape;
        }
        let n = numel(cur_shape);
        let feats = nn::pointwise_forward(
            &x,
            batch,
            self.arch.widths[2],
            FEATURE_DIM,
            n,
            self.param(HEAD_W),
            self.param(HEAD_B),
        );
        acts.push(x);
        Ok((
            feats,
            cur_shape,
            TrainCache {
                batch,
                geoms,
                acts,
                bn,
            },
        ))
    }

    /// Gradient of a loss with respect to all parameters, given `d loss / d features`.
    pub fn backward(&self, cache: &TrainCache<T>, dfeat: &[T]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        let batch = cache.batch;
        let n8 = cache.geoms[NUM_CONV - 1].n_out();
        let w2 = self.arch.widths[2];
        let (hw, hb) = (
            self.param_layout[HEAD_W].range(),
            self.param_layout[HEAD_B].range(),
        );
        let mut dx = {
            let (gw, gb) = grad.split_at_mut(hb.start);
            nn::pointwise_backward(
                &cache.acts[NUM_CONV],
                batch,
                w2,
                FEATURE_DIM,
                n8,
                self.param(HEAD_W),
                dfeat,
                &mut gw[hw],
                &mut gb[..FEATURE_DIM],
            )
        };
        let mut scratch = Vec::new();
        for l in (0..NUM_CONV).rev() {
            let (cin, cout) = self.arch.conv_channels(l);
            let g = &cache.geoms[l];
            let ix = conv_idx(l);
            let (gr, br) = (
                self.param_layout[ix.gamma].range(),
                self.param_layout[ix.beta].range(),
            );
            {
                let (a, b) = grad.split_at_mut(br.start);
                nn::bn_relu_backward(
                    &cache.acts[l + 1],
                    &mut dx,
                    &cache.bn[l],
                    batch,
                    cout,
                    g.n_out(),
                    self.param(ix.gamma),
                    &mut a[gr],
                    &mut b[..cout],
                );
            }
            let wr = self.param_layout[ix.weight].range();
            let next = nn::conv3d_backward(
                &cache.acts[l],
                batch,
                cin,
                cout,
                g,
                self.param(ix.weight),
                &dx,
                &mut grad[wr],
                l > 0,
                &mut scratch,
            );
            if let Some(d) = next {
                dx = d;
            }
        }
        grad
    }

    /// Gradient of `<dfeat, deep_features>` on a training-mode batch; used to
    /// check that the stride-4 branch is wired to its parameters.
    pub fn deep_head_backward(&self, cache: &TrainCache<T>, ddeep: &[T]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.params.len()];
        let batch = cache.batch;
        let n4 = cache.geoms[DEEP_LAYER].n_out();
        let (dw, db) = (
            self.param_layout[DEEP_W].range(),
            self.param_layout[DEEP_B].range(),
        );
        let (gw, gb) = grad.split_at_mut(db.start);
        nn::pointwise_backward(
            &cache.acts[DEEP_LAYER + 1],
            batch,
            self.arch.widths[1],
            FEATURE_DIM,
            n4,
            self.param(DEEP_W),
            ddeep,
            &mut gw[dw],
            &mut gb[..FEATURE_DIM],
        );
        grad
    }

    /// Stride-4 features from a training-mode cache.
    pub fn deep_features_from_cache(&self, cache: &TrainCache<T>) -> Vec<T> {
        let n4 = cache.geoms[DEEP_LAYER].n_out();
        nn::pointwise_forward(
            &cache.acts[DEEP_LAYER + 1],
            cache.batch,
            self.arch.widths[1],
            FEATURE_DIM,
            n4,
            self.param(DEEP_W),
            self.param(DEEP_B),
        )
    }
}

/// Converts a volume into the network's input buffer.
pub fn volume_input<T: Real>(vol: &Volume) -> Vec<T> {
    vol.data().iter().map(|&v| T::cst(v as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn phantom(shape: Shape, phase: f32) -> Volume {
        Volume::from_fn(shape, [1.0; 3], |i, j, k| {
            ((i as f32 * 0.4 + phase).sin() * (j as f32 * 0.3).cos()
                + (k as f32 * 0.5 - phase).sin())
                * 0.5
                + 0.5
        })
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let a = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
        let b = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
        let c = FeatureExtractorState::<f32>::init(Architecture::default(), 1);
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn parameter_table_matches_architecture() {
        let s = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
        let names: Vec<(&str, &[usize])> = s
            .param_layout()
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect();
        assert_eq!(names[0], ("conv1.weight", &[32, 1, 3, 3, 3][..]));
        assert_eq!(names[3], ("conv2.weight", &[32, 32, 3, 3, 3][..]));
        assert_eq!(names[6], ("conv3.weight", &[64, 32, 3, 3, 3][..]));
        assert_eq!(names[9], ("conv4.weight", &[64, 64, 3, 3, 3][..]));
        assert_eq!(names[12], ("conv5.weight", &[128, 64, 3, 3, 3][..]));
        assert_eq!(names[15], ("conv6.weight", &[128, 128, 3, 3, 3][..]));
        assert_eq!(names[18], ("head.weight", &[16, 128][..]));
        assert_eq!(names[20], ("deep_head.weight", &[16, 64][..]));
        let conv: usize = (0..6)
            .map(|l| {
                let (i, o) = Architecture::default().conv_channels(l);
                o * i * 27 + 2 * o
            })
            .sum();
        assert_eq!(s.num_params(), conv + 16 * 128 + 16 + 16 * 64 + 16);
        // BatchNorm scale 1, shift 0; projection biases 0.
        assert!(s.param(1).iter().all(|&v| v == 1.0));
        assert!(s.param(2).iter().all(|&v| v == 0.0));
        assert!(s.param(HEAD_B).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extract_shapes_and_siamese_symmetry() {
        let arch = Architecture { widths: [4, 8, 8] };
        let s = FeatureExtractorState::<f32>::init(arch, 3);
        let v = phantom([16, 24, 8], 0.0);
        let feats = s.extract(&v, &v).unwrap();
        assert_eq!(feats.fixed.shape, [2, 3, 1]);
        assert_eq!(feats.deep_fixed.shape, [4, 6, 2]);
        assert_eq!(feats.fixed.channels(), 16);
        assert_eq!(feats.fixed, feats.moving);
        assert_eq!(feats.deep_fixed, feats.deep_moving);
        let w = phantom([12, 16, 16], 0.0);
        let err = s.extract(&w, &w).unwrap_err().to_string();
        assert!(err.contains("pad by [4, 0, 0]"), "{err}");
        assert!(s.extract(&v, &phantom([16, 16, 16], 0.0)).is_err());
    }

    #[test]
    fn default_architecture_output_shapes() {
        let s = FeatureExtractorState::<f32>::init(Architecture::default(), 0);
        let v = phantom([64, 64, 64], 0.3);
        let (f8, f4) = s.extract_one(&v).unwrap();
        assert_eq!(f8.shape, [8, 8, 8]);
        assert_eq!(f4.shape, [16, 16, 16]);
        assert_eq!(f8.data.len(), 16 * 512);
    }

    /// Directional derivative of `mean(features)` versus autodiff, f64.
    #[test]
    fn backward_matches_directional_finite_difference() {
        use rand::SeedableRng;
        let arch = Architecture { widths: [3, 4, 5] };
        let state = FeatureExtractorState::<f64>::init(arch, 11);
        let shape = [8, 8, 16];
        let inputs: Vec<Vec<f64>> = vec![
            volume_input(&phantom(shape, 0.0)),
            volume_input(&phantom(shape, 0.7)),
        ];
        let mut s = state.clone();
        let (feats, _, cache) = s.forward_train(&inputs, shape).unwrap();
        let nf = feats.len() as f64;
        let dfeat = vec![1.0 / nf; feats.len()];
        let grad = s.backward(&cache, &dfeat);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dir: Vec<f64> = (0..state.num_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let eval = |eps: f64| -> f64 {
            let mut t = state.clone();
            for (p, d) in t.params_mut().iter_mut().zip(dir.iter()) {
                *p += eps * d;
            }
            let (f, _, _) = t.forward_train(&inputs, shape).unwrap();
            f.iter().sum::<f64>() / nf
        };
        let h = 1e-5;
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let ad: f64 = grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum();
        assert!(
            ((fd - ad) / ad.abs().max(1e-12)).abs() < 1e-3,
            "fd {fd} vs ad {ad}"
        );
    }

    #[test]
    fn every_parameter_group_receives_gradient() {
        use rand::SeedableRng;
        let arch = Architecture { widths: [4, 6, 8] };
        let mut s = FeatureExtractorState::<f64>::init(arch, 2);
        let shape = [16, 16, 16];
        let inputs = vec![
            volume_input::<f64>(&phantom(shape, 0.1)),
            volume_input(&phantom(shape, 1.3)),
        ];
        let (feats, _, cache) = s.forward_train(&inputs, shape).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dfeat: Vec<f64> = (0..feats.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let grad = s.backward(&cache, &dfeat);
        for (i, spec) in s.param_layout().iter().enumerate() {
            let norm: f64 = grad[spec.range()].iter().map(|g| g * g).sum();
            if i == DEEP_W || i == DEEP_B {
                assert_eq!(norm, 0.0, "{} is not on the stride-8 path", spec.name);
            } else {
                assert!(norm > 0.0, "no gradient reaches {}", spec.name);
            }
        }
        let deep = s.deep_features_from_cache(&cache);
        let ddeep: Vec<f64> = (0..deep.len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let g = s.deep_head_backward(&cache, &ddeep);
        for idx in [DEEP_W, DEEP_B] {
            let norm: f64 = g[s.param_layout()[idx].range()].iter().map(|g| g * g).sum();
            assert!(norm > 0.0);
        }
    }
}
