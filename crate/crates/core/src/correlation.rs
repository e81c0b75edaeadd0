//! Matching costs between fixed and moving descriptors over a 5×5×5 window.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::grid::{lin, numel, unlin, Shape};
use crate::real::Real;

pub const RADIUS: i32 = 2;
pub const WINDOW: usize = 5;
pub const NUM_DISPLACEMENTS: usize = WINDOW * WINDOW * WINDOW;

/// Offset of candidate `idx`; candidates are ordered with axis 0 slowest.
#[inline]
pub fn displacement(idx: usize) -> [i32; 3] {
    [
        (idx / 25) as i32 - RADIUS,
        ((idx / 5) % 5) as i32 - RADIUS,
        (idx % 5) as i32 - RADIUS,
    ]
}

#[inline]
pub fn displacement_index(d: [i32; 3]) -> usize {
    ((d[0] + RADIUS) * 25 + (d[1] + RADIUS) * 5 + (d[2] + RADIUS)) as usize
}

/// Per-node dissimilarity for every candidate displacement, `(n, 125)` node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume<T> {
    pub shape: Shape,
    pub stride: usize,
    pub spacing: [f64; 3],
    pub data: Vec<T>,
    /// Free-form note on the features that produced the costs.
    pub provenance: Option<String>,
}

impl<T: Real> CostVolume<T> {
    pub fn new(shape: Shape, stride: usize, spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        if data.len() != numel(shape) * NUM_DISPLACEMENTS {
            return Err(Error::Shape(format!(
                "cost volume has {} entries, shape {shape:?} needs {}",
                data.len(),
                numel(shape) * NUM_DISPLACEMENTS
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "cost volume contains non-finite values".into(),
            ));
        }
        Ok(Self {
            shape,
            stride,
            spacing,
            data,
            provenance: None,
        })
    }

    pub fn numel(&self) -> usize {
        numel(self.shape)
    }

    #[inline]
    pub fn costs(&self, node: usize) -> &[T] {
        &self.data[node * NUM_DISPLACEMENTS..(node + 1) * NUM_DISPLACEMENTS]
    }
}

/// Linear index of `x + d`, clamped to the grid.
#[inline]
fn shifted(shape: Shape, x: [usize; 3], d: [i32; 3]) -> usize {
    let c = |a: usize| (x[a] as i64 + d[a] as i64).clamp(0, shape[a] as i64 - 1) as usize;
    lin(shape, c(0), c(1), c(2))
}

/// Channel-interleaved copy `(n, C)` of a `(C, n)` map.
fn interleave<T: Real>(f: &FeatureMap<T>) -> (Vec<T>, usize) {
    let n = numel(f.shape);
    let c = f.channels();
    let mut out = vec![T::zero(); n * c];
    for ch in 0..c {
        for node in 0..n {
            out[node * c + ch] = f.data[ch * n + node];
        }
    }
    (out, c)
}

fn check_pair<T: Real>(fixed: &FeatureMap<T>, moving: &FeatureMap<T>) -> Result<()> {
    if fixed.shape != moving.shape
        || fixed.stride != moving.stride
        || fixed.data.len() != moving.data.len()
    {
        return Err(Error::Shape(format!(
            "feature maps differ: {:?}@{} vs {:?}@{}",
            fixed.shape, fixed.stride, moving.shape, moving.stride
        )));
    }
    Ok(())
}

/// `cost(x, d) = Σ_c (fixed_c(x) − moving_c(x + d))²`, clamp-to-edge.
pub fn correlate<T: Real>(fixed: &FeatureMap<T>, moving: &FeatureMap<T>) -> Result<CostVolume<T>> {
    check_pair(fixed, moving)?;
    let shape = fixed.shape;
    let n = numel(shape);
    let (fi, c) = interleave(fixed);
    let (mi, _) = interleave(moving);
    let mut data = vec![T::zero(); n * NUM_DISPLACEMENTS];
    for node in 0..n {
        let x = unlin(shape, node);
        let fv = &fi[node * c..(node + 1) * c];
        for (di, out) in data[node * NUM_DISPLACEMENTS..(node + 1) * NUM_DISPLACEMENTS]
            .iter_mut()
            .enumerate()
        {
            let m = shifted(shape, x, displacement(di));
            let mv = &mi[m * c..(m + 1) * c];
            let mut acc = T::zero();
            for (a, b) in fv.iter().zip(mv.iter()) {
                let diff = *a - *b;
                acc += diff * diff;
            }
            *out = acc;
        }
    }
    Ok(CostVolume {
        shape,
        stride: fixed.stride,
        spacing: fixed.spacing,
        data,
        provenance: None,
    })
}

/// Gradients of a loss with respect to both feature maps, given `d loss / d cost`.
/// Returned in the maps' own `(C, n)` layout.
pub fn correlate_backward<T: Real>(
    fixed: &FeatureMap<T>,
    moving: &FeatureMap<T>,
    dcost: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    check_pair(fixed, moving)?;
    let shape = fixed.shape;
    let n = numel(shape);
    if dcost.len() != n * NUM_DISPLACEMENTS {
        return Err(Error::Shape("cost gradient has the wrong length".into()));
    }
    let (fi, c) = interleave(fixed);
    let (mi, _) = interleave(moving);
    let mut dfi = vec![T::zero(); n * c];
    let mut dmi = vec![T::zero(); n * c];
    let two = T::cst(2.0);
    for node in 0..n {
        let x = unlin(shape, node);
        for di in 0..NUM_DISPLACEMENTS {
            let g = dcost[node * NUM_DISPLACEMENTS + di];
            if g == T::zero() {
                continue;
            }
            let m = shifted(shape, x, displacement(di));
            for ch in 0..c {
                let t = two * g * (fi[node * c + ch] - mi[m * c + ch]);
                dfi[node * c + ch] += t;
                dmi[m * c + ch] -= t;
            }
        }
    }
    let deinterleave = |v: Vec<T>| {
        let mut out = vec![T::zero(); n * c];
        for node in 0..n {
            for ch in 0..c {
                out[ch * n + node] = v[node * c + ch];
            }
        }
        out
    };
    Ok((deinterleave(dfi), deinterleave(dmi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn map(shape: Shape, data: Vec<f64>) -> FeatureMap<f64> {
        FeatureMap {
            shape,
            stride: 8,
            spacing: [2.0; 3],
            data,
        }
    }

    fn random_map(rng: &mut impl Rng, shape: Shape) -> FeatureMap<f64> {
        map(
            shape,
            (0..16 * numel(shape))
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    #[test]
    fn displacement_indexing_round_trips() {
        for idx in 0..NUM_DISPLACEMENTS {
            assert_eq!(displacement_index(displacement(idx)), idx);
        }
        assert_eq!(displacement(0), [-2, -2, -2]);
        assert_eq!(displacement(62), [0, 0, 0]);
    }

    #[test]
    fn constant_equal_features_cost_nothing() {
        let f = map([3, 4, 2], vec![0.7; 16 * 24]);
        let cost = correlate(&f, &f).unwrap();
        assert!(cost.data.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn shifted_features_have_their_argmin_at_the_shift() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let shape = [8, 8, 8];
        let f = random_map(&mut rng, shape);
        let d0 = [1, 0, -1];
        // moving(x + d0) = fixed(x), circularly.
        let n = numel(shape);
        let mut m = vec![0.0; 16 * n];
        for node in 0..n {
            let x = unlin(shape, node);
            let y = [(x[0] + 1) % 8, x[1], (x[2] + 7) % 8];
            for ch in 0..16 {
                m[ch * n + lin(shape, y[0], y[1], y[2])] = f.data[ch * n + node];
            }
        }
        let cost = correlate(&f, &map(shape, m)).unwrap();
        for i in 2..6 {
            for j in 2..6 {
                for k in 2..6 {
                    let c = cost.costs(lin(shape, i, j, k));
                    let best = (0..NUM_DISPLACEMENTS)
                        .min_by(|&a, &b| c[a].partial_cmp(&c[b]).unwrap())
                        .unwrap();
                    assert_eq!(displacement(best), d0);
                }
            }
        }
    }

    #[test]
    fn cost_volume_shape_for_abdomen_grid() {
        let shape = [24, 20, 32];
        let f = map(shape, vec![0.0; 16 * numel(shape)]);
        let cost = correlate(&f, &f).unwrap();
        assert_eq!(cost.data.len(), 24 * 20 * 32 * 125);
    }

    #[test]
    fn rejects_mismatched_maps() {
        let a = map([2, 2, 2], vec![0.0; 128]);
        let b = map([2, 2, 1], vec![0.0; 64]);
        assert!(correlate(&a, &b).is_err());
    }

    #[test]
    fn invariants_on_random_maps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let shape = [3, 4, 5];
        let f = random_map(&mut rng, shape);
        let m = random_map(&mut rng, shape);
        let cost = correlate(&f, &m).unwrap();
        assert!(cost.data.iter().all(|&c| c >= 0.0));
        let self_cost = correlate(&f, &f).unwrap();
        for node in 0..numel(shape) {
            assert_eq!(self_cost.costs(node)[62], 0.0);
        }
        let c = 2.5;
        let scale = |x: &FeatureMap<f64>| map(shape, x.data.iter().map(|v| v * c).collect());
        let scaled = correlate(&scale(&f), &scale(&m)).unwrap();
        for (a, b) in scaled.data.iter().zip(cost.data.iter()) {
            assert!((a - c * c * b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let shape = [3, 3, 2];
        let f = random_map(&mut rng, shape);
        let m = random_map(&mut rng, shape);
        let w: Vec<f64> = (0..numel(shape) * NUM_DISPLACEMENTS)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss = |f: &FeatureMap<f64>, m: &FeatureMap<f64>| -> f64 {
            correlate(f, m)
                .unwrap()
                .data
                .iter()
                .zip(w.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (df, dm) = correlate_backward(&f, &m, &w).unwrap();
        let h = 1e-6;
        for idx in [0, 5, 100, 16 * 18 - 1] {
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp.data[idx] += h;
            fm.data[idx] -= h;
            assert!(((loss(&fp, &m) - loss(&fm, &m)) / (2.0 * h) - df[idx]).abs() < 1e-5);
            let mut mp = m.clone();
            let mut mm = m.clone();
            mp.data[idx] += h;
            mm.data[idx] -= h;
            assert!(((loss(&f, &mp) - loss(&f, &mm)) / (2.0 * h) - dm[idx]).abs() < 1e-5);
        }
    }
}
