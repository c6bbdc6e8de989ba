//! Global assembler: the per-seat elliptical location mask.
//!
//! The seat's two 3D anchors project into the image and span an ellipse whose
//! major axis is the anchor segment; candidates from the local predictor are
//! kept only when they fall inside it (and clear the score threshold). The
//! belt is spring-tensioned toward the anchors no matter how it is worn, so a
//! loose anchor-derived ellipse bounds where belt pixels can appear.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::geometry::{
    build_ellipse_frame, image_to_local, project_anchor, Anchor3D, CameraModel, EllipseFrame,
};
use crate::predictor::CandidatePoint;

fn default_gamma_pre<F: Float>() -> F {
    F::from_f64_lit(0.1)
}

fn default_angle_threshold<F: Float>() -> F {
    F::from_f64_lit(30.0)
}

fn default_min_candidates() -> usize {
    12
}

/// Per-seat geometry and decision thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "F: Float + Deserialize<'de>"))]
pub struct SeatConfig<F = f64> {
    /// Identifier used in result records; filled from the seat index when
    /// left empty.
    #[serde(default)]
    pub name: String,
    /// Top-right belt anchor, vehicle frame, millimeters.
    pub anchor_tr: Anchor3D<F>,
    /// Bottom-left belt anchor, vehicle frame, millimeters.
    pub anchor_bl: Anchor3D<F>,
    /// Minor axis of the location mask, pixels. Mutually exclusive with
    /// `d_minor_ratio`; when both are absent the ratio default applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_minor: Option<F>,
    /// Minor axis as a fraction of the projected anchor distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_minor_ratio: Option<F>,
    /// Minimum predictor score for a candidate to enter shape modeling.
    #[serde(default = "default_gamma_pre")]
    pub gamma_pre: F,
    /// ON / UNDER decision threshold on the median anchor-ray angle, degrees.
    #[serde(default = "default_angle_threshold")]
    pub angle_threshold_deg: F,
    /// Minimum inlier support below which the seat reads as OFF.
    #[serde(default = "default_min_candidates")]
    pub min_candidates: usize,
}

impl<F: Float> SeatConfig<F> {
    /// Default minor-to-major axis ratio when the seat config gives neither
    /// an absolute nor a relative minor axis.
    pub const DEFAULT_MINOR_RATIO: f64 = 0.45;

    pub fn validate(&self, poly_order: usize) -> Result<()> {
        if let (Some(_), Some(_)) = (self.d_minor, self.d_minor_ratio) {
            return Err(Error::Config(format!(
                "seat '{}': give d_minor or d_minor_ratio, not both",
                self.name
            )));
        }
        if let Some(d) = self.d_minor {
            if !(d > F::zero()) {
                return Err(Error::Config(format!(
                    "seat '{}': d_minor must be positive",
                    self.name
                )));
            }
        }
        if let Some(r) = self.d_minor_ratio {
            if !(r > F::zero()) || r > F::one() {
                return Err(Error::Config(format!(
                    "seat '{}': d_minor_ratio must be in (0, 1]",
                    self.name
                )));
            }
        }
        if !(self.gamma_pre > F::zero()) || self.gamma_pre > F::one() {
            return Err(Error::Config(format!(
                "seat '{}': gamma_pre must be in (0, 1]",
                self.name
            )));
        }
        let ninety = F::from_f64_lit(90.0);
        if !(self.angle_threshold_deg > F::zero()) || self.angle_threshold_deg >= ninety {
            return Err(Error::Config(format!(
                "seat '{}': angle threshold must be in (0, 90) degrees",
                self.name
            )));
        }
        if self.min_candidates < poly_order + 1 {
            return Err(Error::Config(format!(
                "seat '{}': min_candidates {} below polynomial order + 1 = {}",
                self.name,
                self.min_candidates,
                poly_order + 1
            )));
        }
        Ok(())
    }

    /// Minor axis in pixels for a given projected anchor distance.
    pub fn resolve_d_minor(&self, d_major: F) -> F {
        if let Some(d) = self.d_minor {
            return d;
        }
        let ratio = self
            .d_minor_ratio
            .unwrap_or_else(|| F::from_f64_lit(Self::DEFAULT_MINOR_RATIO));
        ratio * d_major
    }
}

/// Elliptical location mask in the image; membership is the closed quadratic
/// form evaluated in the ellipse-local frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationMask<F = f64> {
    pub frame: EllipseFrame<F>,
}

/// Projects the seat anchors and spans the location mask between them.
pub fn build_mask<F: Float>(cam: &CameraModel<F>, seat: &SeatConfig<F>) -> Result<LocationMask<F>> {
    let tr = project_anchor(cam, &seat.anchor_tr)?;
    let bl = project_anchor(cam, &seat.anchor_bl)?;
    let dx = tr[0] - bl[0];
    let dy = tr[1] - bl[1];
    let d_major = (dx * dx + dy * dy).sqrt();
    if d_major == F::zero() {
        return Err(Error::DegenerateFrame);
    }
    let frame = build_ellipse_frame(tr, bl, seat.resolve_d_minor(d_major))?;
    Ok(LocationMask { frame })
}

/// Closed-set membership: the local quadratic form evaluates at most 1.
pub fn contains<F: Float>(mask: &LocationMask<F>, p: [F; 2]) -> bool {
    let local = image_to_local(&mask.frame, p);
    let half = F::from_f64_lit(0.5);
    let a = half * mask.frame.d_major;
    let b = half * mask.frame.d_minor;
    let qx = local[0] / a;
    let qy = local[1] / b;
    qx * qx + qy * qy <= F::one()
}

/// Keeps candidates inside the mask with score at or above `gamma_pre`,
/// preserving input order.
pub fn filter_candidates<F: Float>(
    cands: &[CandidatePoint<F>],
    mask: &LocationMask<F>,
    gamma_pre: F,
) -> Vec<CandidatePoint<F>> {
    cands
        .iter()
        .filter(|c| {
            c.score >= gamma_pre
                && contains(
                    mask,
                    [
                        F::from_usize_lit(c.x as usize),
                        F::from_usize_lit(c.y as usize),
                    ],
                )
        })
        .copied()
        .collect()
}
