//! Evaluation metrics: label overlap, Jacobian regularity, landmark error, and
//! cumulative overlap curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{jacobian_determinant, DisplacementField, LabelVolume, Shape};

pub const JACOBIAN_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    /// `(class, dice)` for every scored class, ascending.
    pub per_class: Vec<(u16, f64)>,
    /// Mean over scored classes; NaN when nothing was scored.
    pub mean: f64,
}

/// Per-class Dice between two label maps. Classes absent from both volumes are
/// skipped when `exclude_absent` is set and scored 1.0 otherwise.
pub fn dice(warped: &LabelVolume, fixed: &LabelVolume, exclude_absent: bool) -> Result<DiceReport> {
    if warped.shape() != fixed.shape() {
        return Err(Error::Shape(format!(
            "dice: shapes {:?} and {:?} differ",
            warped.shape(),
            fixed.shape()
        )));
    }
    let classes = warped.num_classes().max(fixed.num_classes()) as usize;
    let mut inter = vec![0u64; classes + 1];
    let mut size_a = vec![0u64; classes + 1];
    let mut size_b = vec![0u64; classes + 1];
    for (&a, &b) in warped.data().iter().zip(fixed.data()) {
        size_a[a as usize] += 1;
        size_b[b as usize] += 1;
        if a == b {
            inter[a as usize] += 1;
        }
    }
    let mut per_class = Vec::new();
    for c in 1..=classes {
        let total = size_a[c] + size_b[c];
        if total == 0 {
            if !exclude_absent {
                per_class.push((c as u16, 1.0));
            }
            continue;
        }
        per_class.push((c as u16, 2.0 * inter[c] as f64 / total as f64));
    }
    let mean = if per_class.is_empty() {
        f64::NAN
    } else {
        per_class.iter().map(|(_, d)| d).sum::<f64>() / per_class.len() as f64
    };
    Ok(DiceReport { per_class, mean })
}

/// Population standard deviation of `log(max(J, 1e-6))` over every node.
pub fn sd_log_jacobian(field: &DisplacementField) -> f64 {
    let logs: Vec<f64> = jacobian_determinant(field)
        .into_iter()
        .map(|j| j.max(JACOBIAN_FLOOR).ln())
        .collect();
    population_std(&logs)
}

/// Fraction of voxels whose Jacobian determinant is not positive.
pub fn folding_fraction(field: &DisplacementField) -> f64 {
    let j = jacobian_determinant(field);
    j.iter().filter(|&&v| v <= 0.0).count() as f64 / j.len() as f64
}

fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Landmarks in full-resolution voxel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 3]>,
    pub spacing: [f64; 3],
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 3]>, spacing: [f64; 3]) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("landmarks must be finite".into()));
        }
        if spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput(
                "landmark spacing must be positive".into(),
            ));
        }
        Ok(Self { points, spacing })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreReport {
    /// Per-landmark error in mm, for the landmarks that were scored.
    pub errors_mm: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub p50: f64,
    pub p90: f64,
    /// Indices of landmark pairs excluded for lying outside the grid.
    pub excluded: Vec<usize>,
}

fn in_bounds(p: [f64; 3], shape: Shape) -> bool {
    (0..3).all(|a| p[a] >= 0.0 && p[a] <= (shape[a] - 1) as f64)
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Error of `p + φ(p)` against the paired moving landmark `q`, in mm.
pub fn target_registration_error(
    fixed: &LandmarkSet,
    moving: &LandmarkSet,
    field: &DisplacementField,
) -> Result<TreReport> {
    if fixed.len() != moving.len() {
        return Err(Error::InvalidInput(format!(
            "landmark lists differ in length: {} vs {}",
            fixed.len(),
            moving.len()
        )));
    }
    let s = field.grid_scale();
    let full = [
        field.shape()[0] * s,
        field.shape()[1] * s,
        field.shape()[2] * s,
    ];
    let sf = s as f64;
    let spacing = fixed.spacing;
    let mut errors_mm = Vec::with_capacity(fixed.len());
    let mut excluded = Vec::new();
    for (i, (p, q)) in fixed.points.iter().zip(&moving.points).enumerate() {
        if !in_bounds(*p, full) || !in_bounds(*q, full) {
            excluded.push(i);
            continue;
        }
        let u = field.sample([p[0] / sf, p[1] / sf, p[2] / sf]);
        let mut sq = 0.0;
        for a in 0..3 {
            let d = (p[a] + u[a] * sf - q[a]) * spacing[a];
            sq += d * d;
        }
        errors_mm.push(sq.sqrt());
    }
    let mut sorted = errors_mm.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = if errors_mm.is_empty() {
        f64::NAN
    } else {
        errors_mm.iter().sum::<f64>() / errors_mm.len() as f64
    };
    Ok(TreReport {
        mean,
        std: population_std(&errors_mm),
        p50: percentile(&sorted, 50.0),
        p90: percentile(&sorted, 90.0),
        errors_mm,
        excluded,
    })
}

/// Mean Euclidean distance between two fields on the same grid, in mm.
pub fn mean_endpoint_error(a: &DisplacementField, b: &DisplacementField) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::Shape(format!(
            "endpoint error: grids {:?}@{} and {:?}@{} differ",
            a.shape(),
            a.grid_scale(),
            b.shape(),
            b.grid_scale()
        )));
    }
    let n = a.numel();
    let mut total = 0.0;
    for x in 0..n {
        let (u, v) = (a.physical(x), b.physical(x));
        total += ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2) + (u[2] - v[2]).powi(2)).sqrt();
    }
    Ok(total / n as f64)
}

pub const CURVE_STEPS: usize = 100;

/// Points `(t, fraction of values ≥ t)` for `t = 0, 0.01, …, 1`.
pub fn cumulative_dice_curve(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    if values.is_empty() {
        return Err(Error::InvalidInput(
            "cumulative curve needs at least one value".into(),
        ));
    }
    let n = values.len() as f64;
    Ok((0..=CURVE_STEPS)
        .map(|k| {
            let t = k as f64 / CURVE_STEPS as f64;
            (t, values.iter().filter(|&&v| v >= t).count() as f64 / n)
        })
        .collect())
}

/// One machine-readable metric value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub case_id: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(case_id: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            case_id: case_id.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// Per-metric mean, std, and count over cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn summarize(rows: &[MetricRow]) -> Vec<MetricSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.metric.as_str()) {
            names.push(&r.metric);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.metric == name)
                .map(|r| r.value)
                .collect();
            MetricSummary {
                metric: name.to_string(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                std: population_std(&v),
                count: v.len(),
            }
        })
        .collect()
}
