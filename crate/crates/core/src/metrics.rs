//! Evaluation metrics for synthesized linkages.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{input_range, normalize_angle, solve_output, InputRange, KinematicsError, LinkageDims, TypeConfig};
use crate::points::PrecisionPointSequence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("predicted dims {0:?} are not a valid linkage")]
    InvalidDims([f64; 4]),
    #[error("no precision points to evaluate")]
    Empty,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

/// Outcome of scoring one linkage against a set of precision points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub s_simul: f64,
    pub per_point_pred: Vec<f64>,
    pub per_point_abs_err_deg: Vec<f64>,
    /// `false` where the input had to be clamped to a dead center.
    pub reachable_flags: Vec<bool>,
}

impl EvalResult {
    pub fn max_abs_err_deg(&self) -> f64 {
        self.per_point_abs_err_deg.iter().copied().fold(0.0, f64::max)
    }
}

pub fn cosine_similarity(a: &[f64; 4], b: &[f64; 4]) -> Result<f64, MetricsError> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Wrap-aware absolute difference in degrees.
pub fn absolute_error_deg(theta_out: f64, theta_pred: f64) -> f64 {
    normalize_angle(theta_pred - theta_out).abs().to_degrees()
}

/// Output of the cycle map at `phi`, made total.
///
/// Cycle parameters inside the domain are evaluated directly. A rocker input
/// outside the domain is first matched against the forward leg modulo `2pi`
/// (principal values imply the forward leg); failing that it is clamped to
/// the angularly nearest dead center. Returns the output and whether the
/// input was reachable without clamping.
pub fn simulate_total(r: &LinkageDims, cfg: TypeConfig, range: &InputRange, phi: f64) -> Result<(f64, bool), KinematicsError> {
    if let Ok(out) = crate::kinematics::simulate_in_range(r, cfg, range, phi) {
        return Ok((out, true));
    }
    let InputRange::RockerRange { theta_min, theta_max } = *range else {
        unreachable!("a crank input reaches every angle");
    };
    let k = ((theta_min - phi) / TAU).ceil();
    let shifted = phi + k * TAU;
    if shifted <= theta_max {
        return Ok((solve_output(r, shifted, cfg.inversion)?, true));
    }
    let d_min = normalize_angle(phi - theta_min).abs();
    let d_max = normalize_angle(phi - theta_max).abs();
    let dcp = if d_min <= d_max { theta_min } else { theta_max };
    Ok((solve_output(r, dcp, cfg.inversion)?, false))
}

/// `S = 1 - mean cos(theta_out - f(theta_in))`; 0 is a perfect match, 2 the worst.
pub fn simulation_metric(
    r_pred: &LinkageDims,
    cfg: TypeConfig,
    points: &PrecisionPointSequence,
) -> Result<EvalResult, MetricsError> {
    score(r_pred, cfg, points, false)
}

/// Like [`simulation_metric`] but each rocker point is scored against both
/// legs of the cycle and the better one is kept.
///
/// Not part of the reference method: it is a convenience for user points
/// whose leg is unknown.
pub fn simulation_metric_both_legs(
    r_pred: &LinkageDims,
    cfg: TypeConfig,
    points: &PrecisionPointSequence,
) -> Result<EvalResult, MetricsError> {
    score(r_pred, cfg, points, true)
}

fn score(
    r_pred: &LinkageDims,
    cfg: TypeConfig,
    points: &PrecisionPointSequence,
    both_legs: bool,
) -> Result<EvalResult, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !r_pred.is_valid() {
        return Err(MetricsError::InvalidDims(r_pred.to_array()));
    }
    let range = input_range(r_pred, cfg)?;
    let n = points.len();
    let mut per_point_pred = Vec::with_capacity(n);
    let mut per_point_abs_err_deg = Vec::with_capacity(n);
    let mut reachable_flags = Vec::with_capacity(n);
    let mut cos_sum = 0.0;
    for p in &points.points {
        let (mut pred, mut reachable) = simulate_total(r_pred, cfg, &range, p.theta_in)?;
        if both_legs && !cfg.input_is_crank() {
            // same physical angle on the other leg
            let other_phi = match range.locate(p.theta_in) {
                Some((crate::kinematics::Leg::Return, _)) => p.theta_in - TAU,
                _ => p.theta_in + TAU,
            };
            let (alt, alt_reachable) = simulate_total(r_pred, cfg, &range, other_phi)?;
            if (p.theta_out - alt).cos() > (p.theta_out - pred).cos() {
                pred = alt;
                reachable = alt_reachable;
            }
        }
        cos_sum += (p.theta_out - pred).cos();
        per_point_pred.push(pred);
        per_point_abs_err_deg.push(absolute_error_deg(p.theta_out, pred));
        reachable_flags.push(reachable);
    }
    let s_simul = (1.0 - cos_sum / n as f64).clamp(0.0, 2.0);
    Ok(EvalResult { s_simul, per_point_pred, per_point_abs_err_deg, reachable_flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Inversion, LinkageType};
    use crate::points::PrecisionPoint;

    #[test]
    fn cosine_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&a, &a.map(|x| 2.0 * x)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0; 4], &a), Err(MetricsError::ZeroVector));
    }

    #[test]
    fn absolute_error_examples() {
        assert_eq!(absolute_error_deg(0.3, 0.3), 0.0);
        let e = absolute_error_deg(157.56737f64.to_radians(), 157.53504f64.to_radians());
        assert!((e - 0.03233).abs() < 1e-9, "{e}");
        let e = absolute_error_deg((-179.0f64).to_radians(), 179.0f64.to_radians());
        assert!((e - 2.0).abs() < 1e-9, "{e}");
    }

    #[test]
    fn invalid_dims_and_empty_points_are_errors() {
        let cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus);
        let pts = PrecisionPointSequence::new(vec![PrecisionPoint::new(0.0, 0.0)]);
        assert!(matches!(
            simulation_metric(&LinkageDims::new(1.0, 1.0, 1.0, 5.0), cfg, &pts),
            Err(MetricsError::InvalidDims(_))
        ));
        assert_eq!(
            simulation_metric(&LinkageDims::new(3.0, 1.0, 3.5, 2.0), cfg, &PrecisionPointSequence::default()),
            Err(MetricsError::Empty)
        );
    }
}
