//! Scoring registrations of annotated pairs.

use crate::convex::CoupledConvexConfig;
use crate::data::EvalCase;
use crate::error::Result;
use crate::features::FeatureExtractorState;
use crate::grid::{warp_labels, DisplacementField};
use crate::metrics::{
    dice, folding_fraction, mean_endpoint_error, sd_log_jacobian, target_registration_error,
    MetricRow,
};
use crate::real::Real;
use crate::refine::{register, RefinementConfig};

/// Metric rows for `field` (dense, fixed grid) on one case.
pub fn score_field(case: &EvalCase, field: &DisplacementField) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    let id = case.id.as_str();
    if let (Some(fl), Some(ml)) = (&case.fixed_labels, &case.moving_labels) {
        let warped = warp_labels(ml.get()?, field)?;
        let d = dice(&warped, fl.get()?, true)?;
        rows.push(MetricRow::new(id, "dice", d.mean));
        for (c, v) in d.per_class {
            rows.push(MetricRow::new(id, format!("dice_{c}"), v));
        }
    }
    rows.push(MetricRow::new(id, "sdlogj", sd_log_jacobian(field)));
    rows.push(MetricRow::new(id, "folding", folding_fraction(field)));
    if let Some(gt) = &case.ground_truth {
        rows.push(MetricRow::new(
            id,
            "epe_mm",
            mean_endpoint_error(field, gt.get()?)?,
        ));
    }
    if let Some((lf, lm)) = &case.landmarks {
        let t = target_registration_error(lf, lm, field)?;
        rows.push(MetricRow::new(id, "tre_mm", t.mean));
        rows.push(MetricRow::new(id, "tre_excluded", t.excluded.len() as f64));
    }
    Ok(rows)
}

/// Registers the case with `state` plus refinement and scores the dense result.
pub fn evaluate_case<T: Real>(
    case: &EvalCase,
    state: &FeatureExtractorState<T>,
    convex: &CoupledConvexConfig,
    refinement: &RefinementConfig,
) -> Result<(DisplacementField, Vec<MetricRow>)> {
    let reg = register(
        case.fixed.get()?,
        case.moving.get()?,
        state,
        convex,
        refinement,
    )?;
    let rows = score_field(case, &reg.refined.field)?;
    Ok((reg.refined.field, rows))
}

/// Scores the identity transform.
pub fn evaluate_identity(case: &EvalCase) -> Result<Vec<MetricRow>> {
    let f = case.fixed.get()?;
    let zero = DisplacementField::zeros(f.shape(), f.spacing(), 1)?;
    score_field(case, &zero)
}

/// Mean of `metric` over rows.
pub fn mean_metric(rows: &[MetricRow], metric: &str) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.metric == metric)
        .map(|r| r.value)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
