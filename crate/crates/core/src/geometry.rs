//! Coordinate machinery shared by all pipeline stages.
//!
//! Three pieces live here: rotated patch sampling out of the raster, pinhole
//! projection of 3D seat anchors, and the ellipse-local coordinate frame
//! spanned by the projected anchor pair. Everything is a pure function of
//! immutable inputs and safe to call from any number of workers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::image::GrayImage;

/// Pinhole camera: intrinsics `fx, fy, cx, cy` (pixels) and extrinsics
/// `r` (row-major 3x3 rotation), `t` (translation, millimeters).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel<F = f64> {
    pub fx: F,
    pub fy: F,
    pub cx: F,
    pub cy: F,
    pub r: [[F; 3]; 3],
    pub t: [F; 3],
}

impl<F: Float> CameraModel<F> {
    /// Validating constructor: `r` must be a proper rotation (orthonormal,
    /// determinant 1, both within 1e-9) and the focal lengths positive.
    pub fn new(fx: F, fy: F, cx: F, cy: F, r: [[F; 3]; 3], t: [F; 3]) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            r,
            t,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fx <= F::zero() || self.fy <= F::zero() {
            return Err(Error::InvalidParameter(
                "focal lengths must be positive".into(),
            ));
        }
        let tol = F::from_f64_lit(1e-9);
        let r = &self.r;
        for a in 0..3 {
            for b in 0..3 {
                // (R^T R)[a][b] = sum_k R[k][a] * R[k][b]
                let mut dot = F::zero();
                for row in r.iter() {
                    dot += row[a] * row[b];
                }
                let expect = if a == b { F::one() } else { F::zero() };
                if (dot - expect).abs() > tol {
                    return Err(Error::InvalidParameter(format!(
                        "rotation is not orthonormal: (R^T R)[{a}][{b}] = {dot}"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - F::one()).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "rotation determinant {det} is not 1"
            )));
        }
        Ok(())
    }

    /// Identity extrinsics, handy for tests and image-frame corpora.
    pub fn axis_aligned(fx: F, fy: F, cx: F, cy: F) -> Self {
        let z = F::zero();
        let o = F::one();
        Self {
            fx,
            fy,
            cx,
            cy,
            r: [[o, z, z], [z, o, z], [z, z, o]],
            t: [z, z, z],
        }
    }
}

/// Fixed seatbelt mounting point in the vehicle frame, millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor3D<F = f64> {
    pub x: F,
    pub y: F,
    pub z: F,
}

impl<F: Float> Anchor3D<F> {
    pub fn new(x: F, y: F, z: F) -> Self {
        Self { x, y, z }
    }
}

/// Ellipse-local coordinate frame: origin at the midpoint of the projected
/// anchor segment, x-axis along the segment, rotated by `theta_s` against the
/// image x-axis.
///
/// `theta_s` carries the sign of the anchor segment's slope (range
/// `(-pi, pi]`); the bare arc-cosine of the direction ratio would fold
/// downward-sloping segments onto upward ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseFrame<F = f64> {
    pub origin: [F; 2],
    pub theta_s: F,
    pub d_major: F,
    pub d_minor: F,
}

impl<F: Float> EllipseFrame<F> {
    pub fn new(origin: [F; 2], theta_s: F, d_major: F, d_minor: F) -> Result<Self> {
        let frame = Self {
            origin,
            theta_s,
            d_major,
            d_minor,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_major > F::zero()) || !(self.d_minor > F::zero()) {
            return Err(Error::InvalidParameter(
                "ellipse axes must be positive".into(),
            ));
        }
        if self.d_minor > self.d_major {
            return Err(Error::InvalidParameter(format!(
                "d_minor {} exceeds d_major {}",
                self.d_minor, self.d_major
            )));
        }
        if !self.theta_s.is_finite() || !self.origin[0].is_finite() || !self.origin[1].is_finite()
        {
            return Err(Error::InvalidParameter(
                "ellipse frame fields must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Square window of sampled intensities, row-major, `side x side`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<F = f64> {
    side: usize,
    data: Vec<F>,
}

impl<F: Float> Patch<F> {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Intensity at row `i`, column `j` (both zero-based).
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.side + j]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub(crate) fn from_vec(side: usize, data: Vec<F>) -> Self {
        debug_assert_eq!(data.len(), side * side);
        Self { side, data }
    }
}

/// Bilinear read at a real-valued source coordinate; taps falling outside the
/// image contribute `pad`.
#[inline]
pub(crate) fn bilinear<F: Float>(img: &GrayImage, sx: F, sy: F, pad: F) -> F {
    let x0f = sx.floor();
    let y0f = sy.floor();
    let fx = sx - x0f;
    let fy = sy - y0f;
    let x0 = x0f.to_f64().unwrap_or(f64::NAN) as i64;
    let y0 = y0f.to_f64().unwrap_or(f64::NAN) as i64;
    let tap = |x: i64, y: i64| -> F {
        if img.in_bounds(x, y) {
            F::from_usize_lit(img.get(x as u32, y as u32) as usize)
        } else {
            pad
        }
    };
    let p00 = tap(x0, y0);
    let p10 = tap(x0 + 1, y0);
    let p01 = tap(x0, y0 + 1);
    let p11 = tap(x0 + 1, y0 + 1);
    let one = F::one();
    let top = (one - fx) * p00 + fx * p10;
    let bottom = (one - fx) * p01 + fx * p11;
    (one - fy) * top + fy * bottom
}

/// Samples an `side x side` patch around `(x, y)`, rotated by `theta`.
///
/// Entry `(i, j)` reads the image at the rotated source coordinate
///
/// ```text
/// [sx]   [cos t  -sin t] [j - k]   [x]
/// [sy] = [sin t   cos t] [i - k] + [y]        k = (side - 1) / 2
/// ```
///
/// with bilinear interpolation; source coordinates outside the image read as
/// `pad`. The offset is taken from the patch center so the middle entry lands
/// exactly on `(x, y)` for odd `side`. `theta` may be any finite angle.
pub fn sample_rotated_patch<F: Float>(
    img: &GrayImage,
    x: u32,
    y: u32,
    theta: F,
    side: usize,
    pad: F,
) -> Result<Patch<F>> {
    validate_patch_request(img, x, y, theta, side)?;
    let mut data = vec![F::zero(); side * side];
    sample_rotated_patch_into(img, x, y, theta, side, pad, &mut data);
    Ok(Patch::from_vec(side, data))
}

pub(crate) fn validate_patch_request<F: Float>(
    img: &GrayImage,
    x: u32,
    y: u32,
    theta: F,
    side: usize,
) -> Result<()> {
    if side < 3 || side % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "patch side {side} must be odd and at least 3"
        )));
    }
    if !theta.is_finite() {
        return Err(Error::InvalidParameter("theta must be finite".into()));
    }
    if x >= img.width() || y >= img.height() {
        return Err(Error::InvalidParameter(format!(
            "patch center ({x}, {y}) outside {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Allocation-free sampling core shared by the public API and the scan loop.
pub(crate) fn sample_rotated_patch_into<F: Float>(
    img: &GrayImage,
    x: u32,
    y: u32,
    theta: F,
    side: usize,
    pad: F,
    out: &mut [F],
) {
    debug_assert_eq!(out.len(), side * side);
    let k = ((side - 1) / 2) as i64;
    let (sin_t, cos_t) = theta.sin_cos();
    let cx = F::from_usize_lit(x as usize);
    let cy = F::from_usize_lit(y as usize);

    // When every tap (including the +1 bilinear neighbors) is guaranteed
    // inside the image we can skip per-tap bounds checks.
    let radius = (k as f64) * std::f64::consts::SQRT_2;
    let margin = radius.ceil() as i64 + 1;
    let interior = i64::from(x) >= margin
        && i64::from(y) >= margin
        && i64::from(x) + margin < i64::from(img.width())
        && i64::from(y) + margin < i64::from(img.height());

    let mut idx = 0;
    for i in -k..=k {
        let fi = F::from_f64_lit(i as f64);
        let row_x = cx - sin_t * fi;
        let row_y = cy + cos_t * fi;
        for j in -k..=k {
            let fj = F::from_f64_lit(j as f64);
            let sx = cos_t * fj + row_x;
            let sy = sin_t * fj + row_y;
            out[idx] = if interior {
                bilinear_unchecked(img, sx, sy)
            } else {
                bilinear(img, sx, sy, pad)
            };
            idx += 1;
        }
    }
}

#[inline]
fn bilinear_unchecked<F: Float>(img: &GrayImage, sx: F, sy: F) -> F {
    let x0f = sx.floor();
    let y0f = sy.floor();
    let fx = sx - x0f;
    let fy = sy - y0f;
    let x0 = x0f.to_f64().unwrap() as usize;
    let y0 = y0f.to_f64().unwrap() as usize;
    let r0 = img.row(y0 as u32);
    let r1 = img.row(y0 as u32 + 1);
    let p00 = F::from_usize_lit(r0[x0] as usize);
    let p10 = F::from_usize_lit(r0[x0 + 1] as usize);
    let p01 = F::from_usize_lit(r1[x0] as usize);
    let p11 = F::from_usize_lit(r1[x0 + 1] as usize);
    let one = F::one();
    let top = (one - fx) * p00 + fx * p10;
    let bottom = (one - fx) * p01 + fx * p11;
    (one - fy) * top + fy * bottom
}

/// Projects a vehicle-frame anchor through the camera, returning image pixels.
///
/// The homogeneous scale drops out by dividing by the camera-frame depth;
/// non-positive depth is an error.
pub fn project_anchor<F: Float>(cam: &CameraModel<F>, a: &Anchor3D<F>) -> Result<[F; 2]> {
    let r = &cam.r;
    let xc = r[0][0] * a.x + r[0][1] * a.y + r[0][2] * a.z + cam.t[0];
    let yc = r[1][0] * a.x + r[1][1] * a.y + r[1][2] * a.z + cam.t[1];
    let zc = r[2][0] * a.x + r[2][1] * a.y + r[2][2] * a.z + cam.t[2];
    if zc <= F::zero() {
        return Err(Error::BehindCamera {
            depth: zc.to_f64().unwrap_or(f64::NEG_INFINITY),
        });
    }
    Ok([cam.fx * xc / zc + cam.cx, cam.fy * yc / zc + cam.cy])
}

/// Builds the ellipse-local frame from the two projected anchors.
///
/// The major axis length is the anchor distance; the origin sits at the
/// segment midpoint; `theta_s` is the arc-cosine of the normalized x-span,
/// negated when the segment slopes upward in image coordinates (`y_tr <
/// y_bl`) so that the frame's x-axis genuinely points from `a_bl` to `a_tr`.
pub fn build_ellipse_frame<F: Float>(
    a_tr: [F; 2],
    a_bl: [F; 2],
    d_minor: F,
) -> Result<EllipseFrame<F>> {
    let dx = a_tr[0] - a_bl[0];
    let dy = a_tr[1] - a_bl[1];
    let d_major = (dx * dx + dy * dy).sqrt();
    if d_major == F::zero() {
        return Err(Error::DegenerateFrame);
    }
    let half = F::from_f64_lit(0.5);
    let origin = [(a_tr[0] + a_bl[0]) * half, (a_tr[1] + a_bl[1]) * half];
    let ratio = (dx / d_major).max(-F::one()).min(F::one());
    let mut theta_s = ratio.acos();
    if dy < F::zero() {
        theta_s = -theta_s;
    }
    EllipseFrame::new(origin, theta_s, d_major, d_minor)
}

/// Maps an ellipse-local point into image coordinates (rotation plus offset).
#[inline]
pub fn local_to_image<F: Float>(frame: &EllipseFrame<F>, p_local: [F; 2]) -> [F; 2] {
    let (sin_t, cos_t) = frame.theta_s.sin_cos();
    [
        cos_t * p_local[0] - sin_t * p_local[1] + frame.origin[0],
        sin_t * p_local[0] + cos_t * p_local[1] + frame.origin[1],
    ]
}

/// Exact inverse of [`local_to_image`].
#[inline]
pub fn image_to_local<F: Float>(frame: &EllipseFrame<F>, p_global: [F; 2]) -> [F; 2] {
    let (sin_t, cos_t) = frame.theta_s.sin_cos();
    let dx = p_global[0] - frame.origin[0];
    let dy = p_global[1] - frame.origin[1];
    [cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy]
}
