//! ON / UNDER / OFF usage classification of a fitted belt curve.
//!
//! A belt worn over the shoulder climbs steeply away from the bottom anchor;
//! worn under the arm it stays much flatter. The classifier samples the
//! fitted curve, measures the angle between the image x-axis and the ray from
//! the bottom anchor to each sample, and thresholds the median.

use serde::{Deserialize, Serialize};

use crate::assembler::SeatConfig;
use crate::float::Float;
use crate::shape::{sample_curve, BeltCurve};

/// Number of curve samples the angle statistic is computed over.
pub const ANGLE_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum UsageLabel {
    /// Correctly fastened over the shoulder.
    On,
    /// Fastened under the arm.
    Under,
    /// No belt observed.
    Off,
}

impl std::fmt::Display for UsageLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            UsageLabel::On => "ON",
            UsageLabel::Under => "UNDER",
            UsageLabel::Off => "OFF",
        };
        f.write_str(s)
    }
}

/// Classification outcome for one seat in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UsageResult<F = f64> {
    pub label: UsageLabel,
    /// Median anchor-ray angle in degrees; absent for OFF.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_angle_deg: Option<F>,
    /// Inlier ratio of the fit backing the decision (0 when nothing fit).
    pub confidence: F,
}

impl<F: Float> UsageResult<F> {
    fn off(confidence: F) -> Self {
        Self {
            label: UsageLabel::Off,
            median_angle_deg: None,
            confidence,
        }
    }
}

/// Undirected angle between the image x-axis and the segment from `anchor`
/// to `p`, degrees in `[0, 90]`.
fn segment_angle_deg<F: Float>(anchor: [F; 2], p: [F; 2]) -> Option<F> {
    let dx = p[0] - anchor[0];
    let dy = p[1] - anchor[1];
    if dx.abs() < F::from_f64_lit(1e-9) && dy.abs() < F::from_f64_lit(1e-9) {
        return None; // the sample coincides with the anchor
    }
    let deg = dy.atan2(dx).abs().to_degrees();
    let folded = if deg > F::from_f64_lit(90.0) {
        F::from_f64_lit(180.0) - deg
    } else {
        deg
    };
    Some(folded)
}

fn median<F: Float>(values: &mut [F]) -> F {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / F::from_f64_lit(2.0)
    }
}

/// Classifies a fitted curve (or its absence) into ON / UNDER / OFF.
///
/// No curve, or a curve whose consensus support falls under the seat's
/// `min_candidates`, reads as OFF. Otherwise the median angle over
/// [`ANGLE_SAMPLES`] curve samples decides: at or above the seat threshold is
/// ON, below is UNDER.
pub fn classify<F: Float>(
    curve: Option<&BeltCurve<F>>,
    seat: &SeatConfig<F>,
    bl_anchor_img: [F; 2],
) -> UsageResult<F> {
    let Some(curve) = curve else {
        return UsageResult::off(F::zero());
    };
    if curve.inlier_count < seat.min_candidates {
        return UsageResult::off(curve.inlier_ratio);
    }
    let mut angles: Vec<F> = sample_curve(curve, ANGLE_SAMPLES)
        .into_iter()
        .filter_map(|p| segment_angle_deg(bl_anchor_img, p))
        .collect();
    if angles.is_empty() {
        return UsageResult::off(curve.inlier_ratio);
    }
    let median_angle = median(&mut angles);
    let label = if median_angle >= seat.angle_threshold_deg {
        UsageLabel::On
    } else {
        UsageLabel::Under
    };
    UsageResult {
        label,
        median_angle_deg: Some(median_angle),
        confidence: curve.inlier_ratio,
    }
}
