//! Per-pixel, per-direction local seatbelt predictor.
//!
//! For every probed pixel the predictor resamples its square neighborhood
//! along a set of evenly spaced directions and tests three criteria on each
//! directional patch:
//!
//! * **structure** — the gradient magnitudes, accumulated across the patch
//!   into a 1D curve, must show two edge peaks with plausible spacing;
//! * **intensity** — a Gaussian-weighted patch mean must fall inside the
//!   configured band;
//! * **smoothness** — the raw intensity variance in a small region of
//!   interest must stay low.
//!
//! The tuning regime is deliberately high recall: downstream masking and
//! consensus fitting are expected to remove false positives.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::geometry::{self, Patch};
use crate::image::GrayImage;
use crate::linalg;

/// All tunables of the local predictor. `side() = 2k + 1` is the patch side.
///
/// When deserialized, omitted fields take their defaults; an omitted (or
/// empty) weight vector resolves to uniform weights over `directions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "F: Float + Deserialize<'de>"))]
pub struct PredictorParams<F = f64> {
    /// Neighborhood radius; the square window has side `2k + 1`.
    pub k: usize,
    /// Number of evenly spaced probe directions in `[0, pi)`.
    pub directions: usize,
    /// Per-direction weights, nonnegative, summing to 1.
    #[serde(default = "Vec::new")]
    pub weights: Vec<F>,
    /// Inter-edge distance bounds, pixels.
    pub tau_min: F,
    pub tau_max: F,
    /// Bounds on `d_edges / max(peak_left, peak_right)`, unitless.
    pub rho_min: F,
    pub rho_max: F,
    /// Weighted-intensity bounds, 8-bit intensity units.
    pub delta_min: F,
    pub delta_max: F,
    /// Scale of the Gaussian intensity weights, pixels.
    pub sigma: F,
    /// Region-of-interest radius for the smoothness criterion, pixels.
    pub omega: usize,
    /// Smoothness (summed squared deviation) bounds.
    pub phi_min: F,
    pub phi_max: F,
    /// Smoothing filter window (odd) and polynomial order.
    pub sg_window: usize,
    pub sg_order: usize,
    /// Scan grid step, pixels.
    pub stride: usize,
}

impl<F: Float> Default for PredictorParams<F> {
    fn default() -> Self {
        let directions = 8;
        let lit = F::from_f64_lit;
        Self {
            k: 7,
            directions,
            weights: uniform_weights(directions),
            tau_min: lit(4.0),
            tau_max: lit(12.0),
            rho_min: lit(0.02),
            rho_max: lit(0.9),
            delta_min: lit(30.0),
            delta_max: lit(200.0),
            sigma: lit(3.75),
            omega: 2,
            phi_min: lit(0.0),
            phi_max: lit(1500.0),
            sg_window: 5,
            sg_order: 2,
            stride: 2,
        }
    }
}

/// Equal weights `1/D` for `d` directions.
pub fn uniform_weights<F: Float>(d: usize) -> Vec<F> {
    let w = F::one() / F::from_usize_lit(d);
    vec![w; d]
}

impl<F: Float> PredictorParams<F> {
    /// Patch side `L = 2k + 1`.
    pub fn side(&self) -> usize {
        2 * self.k + 1
    }

    /// Fills an empty weight vector with uniform weights; called after
    /// deserialization.
    pub fn resolve_weights(&mut self) {
        if self.weights.is_empty() {
            self.weights = uniform_weights(self.directions);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.side();
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.directions == 0 || self.directions > 32 {
            return Err(Error::InvalidParameter(
                "direction count must be in 1..=32".into(),
            ));
        }
        if self.weights.len() != self.directions {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} directions",
                self.weights.len(),
                self.directions
            )));
        }
        let mut sum = F::zero();
        for &w in &self.weights {
            if !w.is_finite() || w < F::zero() {
                return Err(Error::InvalidParameter(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            sum += w;
        }
        if (sum - F::one()).abs() > F::from_f64_lit(1e-9) {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        for (name, lo, hi) in [
            ("tau", self.tau_min, self.tau_max),
            ("rho", self.rho_min, self.rho_max),
            ("delta", self.delta_min, self.delta_max),
            ("phi", self.phi_min, self.phi_max),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidParameter(format!(
                    "{name} bounds [{lo}, {hi}] must be finite and ordered"
                )));
            }
        }
        if !(self.sigma > F::zero()) {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        if self.sg_window % 2 == 0 || self.sg_order >= self.sg_window || self.sg_window > side {
            return Err(Error::InvalidParameter(format!(
                "smoothing window {} / order {} invalid for patch side {side}",
                self.sg_window, self.sg_order
            )));
        }
        if self.stride == 0 || self.stride > side {
            return Err(Error::InvalidParameter(format!(
                "stride {} must be in 1..={side}",
                self.stride
            )));
        }
        Ok(())
    }

    /// Probe direction `d`, radians in `[0, pi)`.
    pub fn theta(&self, d: usize) -> F {
        F::PI() * F::from_usize_lit(d) / F::from_usize_lit(self.directions)
    }
}

/// Per-direction outcome for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult<F = f64> {
    /// One entry per probe direction: did all three criteria pass?
    pub r: Vec<bool>,
    /// Weighted fraction of passing directions, in `[0, 1]`.
    pub score: F,
}

impl<F: Float> DirectionResult<F> {
    /// Index of the highest-weighted passing direction (smallest index on
    /// ties), or `None` when nothing passed.
    pub fn best_index(&self, weights: &[F]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (d, &passed) in self.r.iter().enumerate() {
            if !passed {
                continue;
            }
            match best {
                Some(b) if weights[d] <= weights[b] => {}
                _ => best = Some(d),
            }
        }
        best
    }
}

/// Weighted sum of binary direction outcomes.
///
/// Passing weights are accumulated in ascending value order, which makes the
/// result independent of how the direction list happens to be enumerated.
pub fn weighted_score<F: Float>(r: &[bool], weights: &[F]) -> F {
    let mut passing: Vec<F> = r
        .iter()
        .zip(weights)
        .filter_map(|(&p, &w)| p.then_some(w))
        .collect();
    passing.sort_by(|a, b| a.partial_cmp(b).expect("weights are finite"));
    let mut sum = F::zero();
    for w in passing {
        sum += w;
    }
    sum
}

/// A scan hit: pixel location, its predictor score, and the direction of the
/// highest-weighted passing probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePoint<F = f64> {
    pub x: u32,
    pub y: u32,
    pub score: F,
    pub best_theta: F,
}

/// Accumulates per-column gradient magnitude across the patch.
///
/// Derivatives use central differences in the interior and one-sided
/// differences on the patch border; every output entry is nonnegative.
pub fn gradient_projection<F: Float>(patch: &Patch<F>) -> Vec<F> {
    let side = patch.side();
    let mut curve = vec![F::zero(); side];
    gradient_projection_into(side, patch.as_slice(), &mut curve);
    curve
}

fn gradient_projection_into<F: Float>(side: usize, data: &[F], curve: &mut [F]) {
    let half = F::from_f64_lit(0.5);
    for c in curve.iter_mut() {
        *c = F::zero();
    }
    for i in 0..side {
        let row = &data[i * side..(i + 1) * side];
        let above = &data[i.saturating_sub(1) * side..];
        let below = &data[(i + 1).min(side - 1) * side..];
        for j in 0..side {
            let gx = if j == 0 {
                row[1] - row[0]
            } else if j == side - 1 {
                row[side - 1] - row[side - 2]
            } else {
                (row[j + 1] - row[j - 1]) * half
            };
            let gy = if i == 0 || i == side - 1 {
                below[j] - above[j]
            } else {
                (below[j] - above[j]) * half
            };
            curve[j] += (gx * gx + gy * gy).sqrt();
        }
    }
}

/// Center-point Savitzky-Golay smoothing coefficients for the given window
/// and polynomial order.
pub fn savgol_coefficients<F: Float>(window: usize, order: usize) -> Result<Vec<F>> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParameter("window must be odd".into()));
    }
    if order >= window {
        return Err(Error::InvalidParameter(
            "order must be smaller than window".into(),
        ));
    }
    let h = (window / 2) as i64;
    let n = order + 1;
    // Normal matrix M[p][q] = sum_m m^(p+q); solving M g = e0 gives the
    // center-evaluation weights c_m = sum_q g_q m^q.
    let mut m = vec![vec![F::zero(); n]; n];
    for p in 0..n {
        for q in 0..n {
            let mut acc = F::zero();
            for off in -h..=h {
                acc += F::from_f64_lit(off as f64).powi((p + q) as i32);
            }
            m[p][q] = acc;
        }
    }
    let mut e0 = vec![F::zero(); n];
    e0[0] = F::one();
    let g = linalg::solve(m, e0)
        .ok_or_else(|| Error::DegenerateFit("smoothing normal matrix is singular".into()))?;
    let mut coeffs = Vec::with_capacity(window);
    for off in -h..=h {
        let mut c = F::zero();
        for (q, &gq) in g.iter().enumerate() {
            c += gq * F::from_f64_lit(off as f64).powi(q as i32);
        }
        coeffs.push(c);
    }
    Ok(coeffs)
}

/// Savitzky-Golay least-squares smoothing of a 1D curve.
///
/// Boundary samples are extended by point reflection through the end values
/// (`y[-m] = 2 y[0] - y[m]`), which keeps constants and straight ramps fixed.
pub fn smooth_curve<F: Float>(curve: &[F], sg_window: usize, sg_order: usize) -> Result<Vec<F>> {
    if sg_window > curve.len() {
        return Err(Error::InvalidParameter(format!(
            "smoothing window {} exceeds curve length {}",
            sg_window,
            curve.len()
        )));
    }
    let coeffs = savgol_coefficients::<F>(sg_window, sg_order)?;
    let mut out = vec![F::zero(); curve.len()];
    smooth_curve_into(curve, &coeffs, &mut out);
    Ok(out)
}

fn smooth_curve_into<F: Float>(curve: &[F], coeffs: &[F], out: &mut [F]) {
    let len = curve.len() as i64;
    let h = (coeffs.len() / 2) as i64;
    let two = F::from_f64_lit(2.0);
    let read = |idx: i64| -> F {
        if idx < 0 {
            two * curve[0] - curve[(-idx) as usize]
        } else if idx >= len {
            two * curve[(len - 1) as usize] - curve[(2 * (len - 1) - idx) as usize]
        } else {
            curve[idx as usize]
        }
    };
    for (t, slot) in out.iter_mut().enumerate() {
        let mut acc = F::zero();
        for (m, &c) in coeffs.iter().enumerate() {
            acc += c * read(t as i64 + m as i64 - h);
        }
        *slot = acc;
    }
}

/// Finds the cut position separating the curve into two classes with maximal
/// inter-class distance.
///
/// The objective is evaluated with unnormalized class mass and first-moment
/// sums over one-based positions, exactly
/// `w_left (mu_left - mu_total)^2 + w_right (mu_right - mu_total)^2`.
/// The returned index is zero-based and names the last element of the left
/// class; ties resolve to the smallest index.
pub fn optimal_cut<F: Float>(curve: &[F]) -> Result<usize> {
    let len = curve.len();
    if len < 2 {
        return Err(Error::InvalidParameter(
            "curve must have at least 2 entries".into(),
        ));
    }
    let mut total_w = F::zero();
    let mut total_mu = F::zero();
    for (pos, &v) in curve.iter().enumerate() {
        total_w += v;
        total_mu += F::from_usize_lit(pos + 1) * v;
    }
    if total_w == F::zero() {
        return Err(Error::NoSignal);
    }
    let mut w_left = F::zero();
    let mut mu_left = F::zero();
    let mut best_idx = 0usize;
    let mut best_obj = F::neg_infinity();
    for cut in 0..len - 1 {
        w_left += curve[cut];
        mu_left += F::from_usize_lit(cut + 1) * curve[cut];
        let w_right = total_w - w_left;
        let mu_right = total_mu - mu_left;
        let dl = mu_left - total_mu;
        let dr = mu_right - total_mu;
        let obj = w_left * dl * dl + w_right * dr * dr;
        if obj > best_obj {
            best_obj = obj;
            best_idx = cut;
        }
    }
    Ok(best_idx)
}

/// Maxima of the two sides split by `cut` (left side `0..=cut`), first
/// occurrence winning ties. Returns `(idx_left, peak_left, idx_right,
/// peak_right)` with zero-based indices.
pub fn locate_peaks<F: Float>(curve: &[F], cut: usize) -> (usize, F, usize, F) {
    debug_assert!(cut + 1 < curve.len());
    let scan_max = |lo: usize, hi: usize| -> (usize, F) {
        let mut idx = lo;
        let mut val = curve[lo];
        for (p, &v) in curve.iter().enumerate().take(hi).skip(lo + 1) {
            if v > val {
                idx = p;
                val = v;
            }
        }
        (idx, val)
    };
    let (il, pl) = scan_max(0, cut + 1);
    let (ir, pr) = scan_max(cut + 1, curve.len());
    (il, pl, ir, pr)
}

/// Bounds test shared by [`structure_criterion`]: edge spacing within
/// `[tau_min, tau_max]` and spacing-to-peak ratio within `[rho_min,
/// rho_max]`.
pub(crate) fn edge_bounds_check<F: Float>(
    d_edges: F,
    peak_left: F,
    peak_right: F,
    params: &PredictorParams<F>,
) -> bool {
    if d_edges < params.tau_min || d_edges > params.tau_max {
        return false;
    }
    let peak = peak_left.max(peak_right);
    let ratio = d_edges / peak;
    ratio >= params.rho_min && ratio <= params.rho_max
}

/// Structure criterion over a smoothed projected-gradient curve: locates the
/// two class peaks and verifies edge spacing and prominence. A curve with no
/// signal is not a belt.
pub fn structure_criterion<F: Float>(curve: &[F], params: &PredictorParams<F>) -> bool {
    let cut = match optimal_cut(curve) {
        Ok(cut) => cut,
        Err(_) => return false,
    };
    let (idx_left, peak_left, idx_right, peak_right) = locate_peaks(curve, cut);
    let d_edges = F::from_usize_lit(idx_right - idx_left);
    edge_bounds_check(d_edges, peak_left, peak_right, params)
}

/// Gaussian patch weights centered per the window formulation (one-based
/// indices against `L/2`), renormalized to sum to 1 over the discrete grid.
pub fn gaussian_weights<F: Float>(side: usize, sigma: F) -> Vec<F> {
    let center = F::from_usize_lit(side) / F::from_f64_lit(2.0);
    let two_sigma_sq = F::from_f64_lit(2.0) * sigma * sigma;
    let mut weights = Vec::with_capacity(side * side);
    let mut sum = F::zero();
    for i in 1..=side {
        let di = center - F::from_usize_lit(i);
        for j in 1..=side {
            let dj = center - F::from_usize_lit(j);
            let w = (-(di * di + dj * dj) / two_sigma_sq).exp();
            sum += w;
            weights.push(w);
        }
    }
    for w in &mut weights {
        *w = *w / sum;
    }
    weights
}

/// Intensity criterion: Gaussian-weighted patch mean within the configured
/// band.
pub fn intensity_criterion<F: Float>(patch: &Patch<F>, params: &PredictorParams<F>) -> bool {
    let weights = gaussian_weights(patch.side(), params.sigma);
    let d = weighted_intensity(patch.as_slice(), &weights);
    d >= params.delta_min && d <= params.delta_max
}

fn weighted_intensity<F: Float>(data: &[F], weights: &[F]) -> F {
    let mut d = F::zero();
    for (&v, &w) in data.iter().zip(weights) {
        d += v * w;
    }
    d
}

/// Smoothness criterion: summed squared deviation from the center intensity
/// over the `(2 omega + 1)^2` region of interest, on raw image values. The
/// region is clipped to the image near borders.
pub fn smoothness_criterion<F: Float>(
    img: &GrayImage,
    x: u32,
    y: u32,
    params: &PredictorParams<F>,
) -> bool {
    let d = smoothness_sum(img, x, y, params.omega);
    let d = F::from_f64_lit(d as f64);
    d >= params.phi_min && d <= params.phi_max
}

fn smoothness_sum(img: &GrayImage, x: u32, y: u32, omega: usize) -> u64 {
    let omega = omega as i64;
    let center = i64::from(img.get(x, y));
    let x0 = (i64::from(x) - omega).max(0);
    let x1 = (i64::from(x) + omega).min(i64::from(img.width()) - 1);
    let y0 = (i64::from(y) - omega).max(0);
    let y1 = (i64::from(y) + omega).min(i64::from(img.height()) - 1);
    let mut acc = 0u64;
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let d = i64::from(img.get(xx as u32, yy as u32)) - center;
            acc += (d * d) as u64;
        }
    }
    acc
}

/// Precomputed tables for repeated pixel evaluation with one parameter set.
struct ScanContext<'p, F> {
    params: &'p PredictorParams<F>,
    side: usize,
    gauss: Vec<F>,
    sg_coeffs: Vec<F>,
    /// Patch-sampling rotation per probe direction: the sampled rows run
    /// along the direction under test when the sampling rotation is its
    /// perpendicular.
    sampling_angles: Vec<F>,
    uniform_margin: i64,
}

/// Reusable per-worker buffers for the scan hot loop.
struct Scratch<F> {
    patch: Vec<F>,
    curve: Vec<F>,
    smoothed: Vec<F>,
}

impl<F: Float> Scratch<F> {
    fn new(side: usize) -> Self {
        Self {
            patch: vec![F::zero(); side * side],
            curve: vec![F::zero(); side],
            smoothed: vec![F::zero(); side],
        }
    }
}

impl<'p, F: Float> ScanContext<'p, F> {
    fn new(params: &'p PredictorParams<F>) -> Result<Self> {
        params.validate()?;
        let side = params.side();
        let half_pi = F::FRAC_PI_2();
        let pi = F::PI();
        let sampling_angles = (0..params.directions)
            .map(|d| {
                let a = params.theta(d) + half_pi;
                if a >= pi {
                    a - pi
                } else {
                    a
                }
            })
            .collect();
        let radius = (params.k as f64) * std::f64::consts::SQRT_2;
        Ok(Self {
            params,
            side,
            gauss: gaussian_weights(side, params.sigma),
            sg_coeffs: savgol_coefficients(params.sg_window, params.sg_order)?,
            sampling_angles,
            uniform_margin: radius.ceil() as i64 + 1,
        })
    }

    /// Axis-aligned window read (the zero-rotation patch), out-of-image
    /// sources padded with zero.
    fn fill_axis_patch(&self, img: &GrayImage, x: u32, y: u32, out: &mut [F]) {
        let k = self.params.k as i64;
        let mut idx = 0;
        for i in -k..=k {
            for j in -k..=k {
                out[idx] =
                    F::from_usize_lit(img.get_or_pad(i64::from(x) + j, i64::from(y) + i, 0) as usize);
                idx += 1;
            }
        }
    }

    /// True when the whole sampling support (any rotation, plus bilinear
    /// taps) is inside the image and holds a single intensity value. Constant
    /// support means every directional curve is flat, and a flat curve can
    /// never satisfy the spacing-to-peak ratio, so all directions fail.
    fn support_is_uniform(&self, img: &GrayImage, x: u32, y: u32) -> bool {
        let m = self.uniform_margin;
        let x0 = i64::from(x) - m;
        let y0 = i64::from(y) - m;
        let x1 = i64::from(x) + m;
        let y1 = i64::from(y) + m;
        if x0 < 0 || y0 < 0 || x1 >= i64::from(img.width()) || y1 >= i64::from(img.height()) {
            return false;
        }
        let first = img.get(x0 as u32, y0 as u32);
        for yy in y0..=y1 {
            let row = img.row(yy as u32);
            for xx in x0..=x1 {
                if row[xx as usize] != first {
                    return false;
                }
            }
        }
        true
    }

    /// Full per-pixel prediction: bitmask of passing directions.
    fn predict_mask(&self, img: &GrayImage, x: u32, y: u32, scratch: &mut Scratch<F>) -> u32 {
        let p = self.params;
        if !smoothness_criterion(img, x, y, p) {
            return 0;
        }
        self.fill_axis_patch(img, x, y, &mut scratch.patch);
        let d_int = weighted_intensity(&scratch.patch, &self.gauss);
        if d_int < p.delta_min || d_int > p.delta_max {
            return 0;
        }
        if self.support_is_uniform(img, x, y) {
            return 0;
        }
        let mut mask = 0u32;
        for d in 0..p.directions {
            geometry::sample_rotated_patch_into(
                img,
                x,
                y,
                self.sampling_angles[d],
                self.side,
                F::zero(),
                &mut scratch.patch,
            );
            gradient_projection_into(self.side, &scratch.patch, &mut scratch.curve);
            smooth_curve_into(&scratch.curve, &self.sg_coeffs, &mut scratch.smoothed);
            if structure_from_smoothed(&scratch.smoothed, p) {
                mask |= 1 << d;
            }
        }
        mask
    }

    fn result_from_mask(&self, mask: u32) -> DirectionResult<F> {
        let r: Vec<bool> = (0..self.params.directions)
            .map(|d| mask & (1 << d) != 0)
            .collect();
        let score = weighted_score(&r, &self.params.weights);
        DirectionResult { r, score }
    }

    fn candidate_from_mask(&self, x: u32, y: u32, mask: u32) -> Option<CandidatePoint<F>> {
        if mask == 0 {
            return None;
        }
        let result = self.result_from_mask(mask);
        if result.score > F::zero() {
            let best = result
                .best_index(&self.params.weights)
                .expect("positive score implies a passing direction");
            Some(CandidatePoint {
                x,
                y,
                score: result.score,
                best_theta: self.params.theta(best),
            })
        } else {
            None
        }
    }
}

fn structure_from_smoothed<F: Float>(curve: &[F], params: &PredictorParams<F>) -> bool {
    match optimal_cut(curve) {
        Ok(cut) => {
            let (il, pl, ir, pr) = locate_peaks(curve, cut);
            edge_bounds_check(F::from_usize_lit(ir - il), pl, pr, params)
        }
        Err(_) => false,
    }
}

/// Evaluates the full criteria conjunction for one pixel across all probe
/// directions.
///
/// The intensity and smoothness criteria are direction independent (isotropic
/// Gaussian, axis-aligned region of interest) and are evaluated once, gating
/// the per-direction structure test.
///
/// # Panics
/// Panics if `(x, y)` lies outside the image or the parameters are invalid.
pub fn predict_pixel<F: Float>(
    img: &GrayImage,
    x: u32,
    y: u32,
    params: &PredictorParams<F>,
) -> DirectionResult<F> {
    assert!(
        x < img.width() && y < img.height(),
        "probe pixel outside image"
    );
    let ctx = ScanContext::new(params).expect("invalid predictor parameters");
    let mut scratch = Scratch::new(ctx.side);
    let mask = ctx.predict_mask(img, x, y, &mut scratch);
    ctx.result_from_mask(mask)
}

/// Scans the stride grid and collects every pixel with a positive predictor
/// score, in row-major order.
///
/// Rows are processed as independent parallel tasks and concatenated in row
/// order, so the output is byte-identical regardless of worker count.
pub fn scan_image<F: Float>(
    img: &GrayImage,
    params: &PredictorParams<F>,
) -> Result<Vec<CandidatePoint<F>>> {
    let ctx = ScanContext::new(params)?;
    if (img.width() as usize) < ctx.side || (img.height() as usize) < ctx.side {
        return Err(Error::InvalidParameter(format!(
            "image {}x{} smaller than patch side {}",
            img.width(),
            img.height(),
            ctx.side
        )));
    }
    let ys: Vec<u32> = (0..img.height()).step_by(params.stride).collect();
    let rows: Vec<Vec<CandidatePoint<F>>> = ys
        .par_iter()
        .map(|&y| {
            let mut scratch = Scratch::new(ctx.side);
            let mut out = Vec::new();
            let mut x = 0u32;
            while x < img.width() {
                let mask = ctx.predict_mask(img, x, y, &mut scratch);
                if let Some(c) = ctx.candidate_from_mask(x, y, mask) {
                    out.push(c);
                }
                x += params.stride as u32;
            }
            out
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch_from(side: usize, f: impl Fn(usize, usize) -> f64) -> Patch<f64> {
        let mut data = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                data.push(f(i, j));
            }
        }
        Patch::from_vec(side, data)
    }

    /// Direct evaluation of the projected-gradient formula, written
    /// separately from the implementation.
    fn oracle_gradient_projection(side: usize, get: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut curve = vec![0.0; side];
        for j in 0..side {
            for i in 0..side {
                let dj = if j == 0 {
                    get(i, 1) - get(i, 0)
                } else if j == side - 1 {
                    get(i, side - 1) - get(i, side - 2)
                } else {
                    (get(i, j + 1) - get(i, j - 1)) / 2.0
                };
                let di = if i == 0 {
                    get(1, j) - get(0, j)
                } else if i == side - 1 {
                    get(side - 1, j) - get(side - 2, j)
                } else {
                    (get(i + 1, j) - get(i - 1, j)) / 2.0
                };
                curve[j] += (dj * dj + di * di).sqrt();
            }
        }
        curve
    }

    /// Exhaustive evaluation of the cut objective, coded independently.
    fn oracle_optimal_cut(curve: &[f64]) -> usize {
        let len = curve.len();
        let mu_total: f64 = curve.iter().enumerate().map(|(p, v)| (p + 1) as f64 * v).sum();
        let mut best = (0usize, f64::NEG_INFINITY);
        for cut in 0..len - 1 {
            let w_l: f64 = curve[..=cut].iter().sum();
            let w_r: f64 = curve[cut + 1..].iter().sum();
            let mu_l: f64 = curve[..=cut]
                .iter()
                .enumerate()
                .map(|(p, v)| (p + 1) as f64 * v)
                .sum();
            let mu_r: f64 = curve[cut + 1..]
                .iter()
                .enumerate()
                .map(|(p, v)| (cut + 1 + p + 1) as f64 * v)
                .sum();
            let obj = w_l * (mu_l - mu_total).powi(2) + w_r * (mu_r - mu_total).powi(2);
            if obj > best.1 {
                best = (cut, obj);
            }
        }
        best.0
    }

    #[test]
    fn constant_patch_projects_to_zero() {
        let patch = patch_from(9, |_, _| 42.0);
        let curve = gradient_projection(&patch);
        assert!(curve.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_matches_direct_evaluation() {
        let step = |_, j: usize| if j < 4 { 10.0 } else { 90.0 };
        let patch = patch_from(9, step);
        let curve = gradient_projection(&patch);
        let oracle = oracle_gradient_projection(9, step);
        for (got, want) in curve.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        // Peak lives at the edge columns.
        let max = curve.iter().cloned().fold(f64::MIN, f64::max);
        assert!(curve[3] == max || curve[4] == max);
        assert!(curve[0] < max && curve[8] < max);
    }

    #[test]
    fn two_bright_lines_give_two_local_maxima() {
        let lines = |_, j: usize| if j == 3 || j == 9 { 200.0 } else { 20.0 };
        let patch = patch_from(13, lines);
        let curve = gradient_projection(&patch);
        let mut maxima = Vec::new();
        for j in 1..12 {
            if curve[j] > curve[j - 1] && curve[j] >= curve[j + 1] {
                maxima.push(j);
            }
        }
        assert_eq!(maxima.len(), 2, "curve {curve:?}");
    }

    proptest! {
        #[test]
        fn gradient_is_shift_invariant(shift in -50.0..50.0f64, seed in 0u64..1000) {
            let vals: Vec<f64> = (0..49)
                .map(|i| (((seed + i as u64) * 2654435761) % 256) as f64)
                .collect();
            let base = Patch::from_vec(7, vals.clone());
            let shifted = Patch::from_vec(7, vals.iter().map(|v| v + shift).collect());
            let a = gradient_projection(&base);
            let b = gradient_projection(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn score_is_invariant_under_direction_permutation(
            mask in 0u32..256,
            swap_a in 0usize..8,
            swap_b in 0usize..8,
        ) {
            let weights: Vec<f64> = vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.125, 0.075, 0.05];
            let r: Vec<bool> = (0..8).map(|d| mask & (1 << d) != 0).collect();
            let mut weights_p = weights.clone();
            let mut r_p = r.clone();
            weights_p.swap(swap_a, swap_b);
            r_p.swap(swap_a, swap_b);
            let s1 = weighted_score(&r, &weights);
            let s2 = weighted_score(&r_p, &weights_p);
            prop_assert!(s1.to_bits() == s2.to_bits());
        }

        #[test]
        fn cut_matches_oracle_on_random_curves(seed in 0u64..500) {
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) % 1000) as f64 / 10.0
            };
            let curve: Vec<f64> = (0..15).map(|_| next()).collect();
            prop_assume!(curve.iter().any(|&v| v > 0.0));
            prop_assert_eq!(optimal_cut(&curve).unwrap(), oracle_optimal_cut(&curve));
        }
    }

    #[test]
    fn smoothing_keeps_constants() {
        let curve = vec![7.5; 15];
        let out = smooth_curve(&curve, 5, 2).unwrap();
        for v in out {
            assert!((v - 7.5).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_keeps_linear_ramps() {
        let curve: Vec<f64> = (0..15).map(|t| 3.0 + 1.7 * t as f64).collect();
        for order in 1..4 {
            let out = smooth_curve(&curve, 7, order).unwrap();
            for (got, want) in out.iter().zip(&curve) {
                assert!((got - want).abs() < 1e-9, "order {order}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn smoothing_rejects_oversized_window() {
        let curve = vec![1.0; 5];
        assert!(smooth_curve(&curve, 7, 2).is_err());
        assert!(smooth_curve(&curve, 4, 2).is_err());
        assert!(smooth_curve(&curve, 5, 5).is_err());
    }

    #[test]
    fn smoothing_matches_tabulated_quadratic_coefficients() {
        // Classic 5-point quadratic smoother: (-3, 12, 17, 12, -3) / 35.
        let table = [-3.0 / 35.0, 12.0 / 35.0, 17.0 / 35.0, 12.0 / 35.0, -3.0 / 35.0];
        let coeffs = savgol_coefficients::<f64>(5, 2).unwrap();
        for (got, want) in coeffs.iter().zip(&table) {
            assert!((got - want).abs() < 1e-9);
        }

        let curve: Vec<f64> = (0..15)
            .map(|t| {
                let t = t as f64;
                40.0 * (-(t - 4.0) * (t - 4.0) / 3.0).exp()
                    + 55.0 * (-(t - 10.0) * (t - 10.0) / 2.5).exp()
                    + ((t * 2654.435761).sin() * 4.0)
            })
            .collect();
        let got = smooth_curve(&curve, 5, 2).unwrap();
        // Independent application: tabulated taps plus the same endpoint
        // reflection rule.
        let read = |idx: i64| -> f64 {
            if idx < 0 {
                2.0 * curve[0] - curve[(-idx) as usize]
            } else if idx >= 15 {
                2.0 * curve[14] - curve[(28 - idx) as usize]
            } else {
                curve[idx as usize]
            }
        };
        for (t, &g) in got.iter().enumerate() {
            let mut want = 0.0;
            for (m, c) in table.iter().enumerate() {
                want += c * read(t as i64 + m as i64 - 2);
            }
            assert!((g - want).abs() < 1e-9);
        }

        let var = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64
        };
        assert!(var(&got) < var(&curve));
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0 as i64
        };
        assert!((argmax(&got) - 4).abs() <= 1 || (argmax(&got) - 10).abs() <= 1);
    }

    #[test]
    fn cut_separates_two_spikes() {
        let curve = [0.0, 0.0, 9.0, 0.0, 0.0, 0.0, 9.0, 0.0, 0.0];
        let cut = optimal_cut(&curve).unwrap();
        assert_eq!(cut, oracle_optimal_cut(&curve));
        // The chosen split keeps the first spike in the left class.
        assert!((2..6).contains(&cut));
        let (il, _, ir, _) = locate_peaks(&curve, cut);
        assert_eq!((il, ir), (2, 6));
    }

    #[test]
    fn cut_on_single_spike_matches_oracle() {
        let mut curve = [0.0; 11];
        curve[5] = 12.0;
        assert_eq!(optimal_cut(&curve).unwrap(), oracle_optimal_cut(&curve));
    }

    #[test]
    fn cut_breaks_mirror_ties_to_the_left() {
        // Integer-valued palindrome: objective values are exactly symmetric,
        // so the tie rule decides.
        let curve = [1.0, 4.0, 2.0, 7.0, 2.0, 4.0, 1.0];
        let cut = optimal_cut(&curve).unwrap();
        let mu_total: f64 = curve.iter().enumerate().map(|(p, v)| (p + 1) as f64 * v).sum();
        let obj = |c: usize| {
            let w_l: f64 = curve[..=c].iter().sum();
            let mu_l: f64 = curve[..=c]
                .iter()
                .enumerate()
                .map(|(p, v)| (p + 1) as f64 * v)
                .sum();
            let w_r: f64 = curve[c + 1..].iter().sum();
            let mu_r = mu_total - mu_l;
            w_l * (mu_l - mu_total).powi(2) + w_r * (mu_r - mu_total).powi(2)
        };
        let mirror = curve.len() - 2 - cut;
        assert_eq!(obj(cut), obj(mirror));
        assert!(cut <= mirror);
        assert_eq!(cut, oracle_optimal_cut(&curve));
    }

    #[test]
    fn cut_rejects_all_zero() {
        assert!(matches!(
            optimal_cut(&[0.0f64; 8]),
            Err(Error::NoSignal)
        ));
    }

    #[test]
    fn peaks_direct_example() {
        // Split after the third element: maxima at positions 1 and 4
        // (values 5 and 7).
        let curve = [0.0, 5.0, 0.0, 0.0, 7.0, 0.0];
        assert_eq!(locate_peaks(&curve, 2), (1, 5.0, 4, 7.0));
    }

    #[test]
    fn peaks_prefer_first_occurrence_on_flat_sides() {
        let curve = [3.0, 3.0, 3.0, 1.0, 1.0];
        let (il, pl, ir, pr) = locate_peaks(&curve, 2);
        assert_eq!((il, pl, ir, pr), (0, 3.0, 3, 1.0));
    }

    #[test]
    fn peaks_match_naive_scan_on_random_curves() {
        let mut state = 99u64;
        for _ in 0..200 {
            let curve: Vec<f64> = (0..15)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    ((state >> 40) % 500) as f64
                })
                .collect();
            let cut = 6;
            let (il, pl, ir, pr) = locate_peaks(&curve, cut);
            let naive = |lo: usize, hi: usize| {
                let mut best = lo;
                for p in lo..hi {
                    if curve[p] > curve[best] {
                        best = p;
                    }
                }
                (best, curve[best])
            };
            assert_eq!(naive(0, cut + 1), (il, pl));
            assert_eq!(naive(cut + 1, curve.len()), (ir, pr));
        }
    }

    fn test_params() -> PredictorParams<f64> {
        PredictorParams {
            k: 7,
            ..PredictorParams::default()
        }
    }

    #[test]
    fn structure_accepts_clean_parallel_edges() {
        // Ribbon of width 8 inside a 15-wide patch: edges land within the
        // default spacing bounds; contrast keeps the ratio in band.
        let params = test_params();
        let ribbon = |_, j: usize| if (4..12).contains(&j) { 110.0 } else { 170.0 };
        let patch = patch_from(15, ribbon);
        let curve = gradient_projection(&patch);
        let smoothed = smooth_curve(&curve, params.sg_window, params.sg_order).unwrap();
        assert!(structure_criterion(&smoothed, &params));
    }

    #[test]
    fn structure_rejects_constant_patch() {
        let params = test_params();
        let patch = patch_from(15, |_, _| 128.0);
        let curve = gradient_projection(&patch);
        let smoothed = smooth_curve(&curve, params.sg_window, params.sg_order).unwrap();
        assert!(!structure_criterion(&smoothed, &params));
    }

    #[test]
    fn structure_rejects_spacing_beyond_tau_max() {
        let mut params = test_params();
        params.k = 13; // side 27, so a 24-pixel spacing fits in the patch
        params.tau_min = 4.0;
        params.tau_max = 12.0;
        let wide = |_, j: usize| if (1..25).contains(&j) { 110.0 } else { 170.0 };
        let patch = patch_from(27, wide);
        let curve = gradient_projection(&patch);
        let smoothed = smooth_curve(&curve, params.sg_window, params.sg_order).unwrap();
        assert!(!structure_criterion(&smoothed, &params));
    }

    #[test]
    fn edge_acceptance_is_a_single_interval() {
        let params = test_params();
        let (pl, pr) = (9.0, 11.0);
        let accepted: Vec<bool> = (1..30)
            .map(|d| edge_bounds_check(d as f64, pl, pr, &params))
            .collect();
        let first = accepted.iter().position(|&a| a);
        let last = accepted.iter().rposition(|&a| a);
        if let (Some(first), Some(last)) = (first, last) {
            for (i, &a) in accepted.iter().enumerate() {
                assert_eq!(a, (first..=last).contains(&i));
            }
        }
        // Growing spacing past tau_max with fixed peaks flips to reject.
        assert!(!edge_bounds_check(params.tau_max + 1.0, pl, pr, &params));
    }

    #[test]
    fn intensity_weighted_mean_of_constant_is_the_constant() {
        let params = test_params();
        let weights = gaussian_weights::<f64>(15, params.sigma);
        let sum: f64 = weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let patch = patch_from(15, |_, _| 90.0);
        assert!(intensity_criterion(&patch, &params));
        let bright = patch_from(15, |_, _| 255.0);
        assert!(!intensity_criterion(&bright, &params)); // delta_max = 200
        let dark = patch_from(15, |_, _| 10.0);
        assert!(!intensity_criterion(&dark, &params)); // delta_min = 30
    }

    #[test]
    fn intensity_matches_direct_double_sum() {
        let params = test_params();
        let center_bright = |i: usize, j: usize| {
            let di = i as f64 - 7.0;
            let dj = j as f64 - 7.0;
            60.0 + 120.0 * (-(di * di + dj * dj) / 30.0).exp()
        };
        let patch = patch_from(15, center_bright);
        // Direct evaluation of the weighted sum, one-based indices.
        let sigma = params.sigma;
        let mut raw = 0.0;
        let mut norm = 0.0;
        for i in 1..=15usize {
            for j in 1..=15usize {
                let w = (-(((7.5 - i as f64).powi(2) + (7.5 - j as f64).powi(2))
                    / (2.0 * sigma * sigma)))
                    .exp();
                raw += w * patch.get(i - 1, j - 1);
                norm += w;
            }
        }
        let expected = raw / norm;
        let weights = gaussian_weights::<f64>(15, sigma);
        let got = weighted_intensity(patch.as_slice(), &weights);
        assert!((got - expected).abs() < 1e-9);
        // Center-weighted mean exceeds the flat mean for a center-bright patch.
        let flat_mean: f64 = patch.as_slice().iter().sum::<f64>() / 225.0;
        assert!(got > flat_mean);
    }

    #[test]
    fn smoothness_zero_variance_passes() {
        let img = GrayImage::filled(32, 32, 77);
        let params = test_params();
        assert!(smoothness_criterion(&img, 16, 16, &params));
    }

    #[test]
    fn smoothness_rejects_checkerboard() {
        let img = GrayImage::from_fn(32, 32, |x, y| if (x + y) % 2 == 0 { 0 } else { 255 });
        let params = test_params();
        assert!(!smoothness_criterion(&img, 16, 16, &params));
    }

    #[test]
    fn smoothness_matches_direct_summation() {
        let img = GrayImage::from_fn(32, 32, |x, y| ((x * 31 + y * 17) % 256) as u8);
        let params = test_params();
        let (x, y) = (10u32, 12u32);
        let mut direct = 0.0f64;
        for i in -2i64..=2 {
            for j in -2i64..=2 {
                let v = img.get((x as i64 + j) as u32, (y as i64 + i) as u32) as f64;
                let c = img.get(x, y) as f64;
                direct += (v - c) * (v - c);
            }
        }
        let got = smoothness_sum(&img, x, y, params.omega) as f64;
        assert_eq!(got, direct);
    }

    #[test]
    fn smoothness_clips_at_borders() {
        let img = GrayImage::from_fn(8, 8, |x, y| (x * y) as u8);
        let params = test_params();
        // Must not panic, and equals summing only in-image entries.
        let got = smoothness_sum(&img, 0, 0, params.omega);
        let mut direct = 0u64;
        for i in 0..=2i64 {
            for j in 0..=2i64 {
                let d = img.get(j as u32, i as u32) as i64 - img.get(0, 0) as i64;
                direct += (d * d) as u64;
            }
        }
        assert_eq!(got, direct);
    }

    /// A vertical belt ribbon on a mid-gray background.
    fn vertical_belt_image() -> GrayImage {
        GrayImage::from_fn(64, 64, |x, _| {
            if (28..38).contains(&x) {
                100
            } else {
                170
            }
        })
    }

    #[test]
    fn all_criteria_failing_scores_zero() {
        // Saturated image: the intensity band rejects everything.
        let img = GrayImage::filled(64, 64, 255);
        let params = test_params();
        let res = predict_pixel(&img, 32, 32, &params);
        assert!(res.r.iter().all(|&p| !p));
        assert_eq!(res.score, 0.0);
    }

    #[test]
    fn uniform_weights_normalize_full_pass_to_one() {
        let weights = uniform_weights::<f64>(8);
        let score = weighted_score(&[true; 8], &weights);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn vertical_belt_passes_nearest_direction_and_fails_orthogonal() {
        let img = vertical_belt_image();
        let params = test_params();
        let res = predict_pixel(&img, 32, 32, &params);
        // Directions are d * pi / 8; index 4 is the vertical probe.
        assert!(res.r[4], "vertical direction must pass: {:?}", res.r);
        assert!(!res.r[0], "horizontal direction must fail: {:?}", res.r);
        assert!(res.score > 0.0);
        let best = res.best_index(&params.weights).unwrap();
        let theta = params.theta(best);
        assert!((theta - std::f64::consts::FRAC_PI_2).abs() < std::f64::consts::PI / 8.0 + 1e-12);
    }

    #[test]
    fn blank_images_scan_to_empty() {
        let params = test_params();
        // Mid-gray: passes intensity and smoothness, but constant support
        // carries no structure.
        let gray = GrayImage::filled(64, 64, 128);
        assert!(scan_image(&gray, &params).unwrap().is_empty());
        // Saturated: rejected by the intensity band.
        let white = GrayImage::filled(64, 64, 255);
        assert!(scan_image(&white, &params).unwrap().is_empty());
    }

    #[test]
    fn scan_rejects_undersized_images() {
        let params = test_params();
        let img = GrayImage::filled(10, 10, 90);
        assert!(scan_image(&img, &params).is_err());
    }

    #[test]
    fn stride_two_is_stride_one_filtered_to_even_grid() {
        let img = vertical_belt_image();
        let mut p1 = test_params();
        p1.stride = 1;
        let mut p2 = test_params();
        p2.stride = 2;
        let fine = scan_image(&img, &p1).unwrap();
        let coarse = scan_image(&img, &p2).unwrap();
        let filtered: Vec<_> = fine
            .into_iter()
            .filter(|c| c.x % 2 == 0 && c.y % 2 == 0)
            .collect();
        assert_eq!(coarse, filtered);
        assert!(!coarse.is_empty());
    }

    #[test]
    fn scan_is_deterministic_across_worker_counts() {
        let img = GrayImage::from_fn(96, 96, |x, y| {
            let belt = (40..49).contains(&x);
            let base = if belt { 105 } else { 165 };
            (base + ((x * 7 + y * 13) % 5)) as u8
        });
        let params = test_params();
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = pool1.install(|| scan_image(&img, &params).unwrap());
        let b = pool4.install(|| scan_image(&img, &params).unwrap());
        assert_eq!(a.len(), b.len());
        for (l, r) in a.iter().zip(&b) {
            assert_eq!(l.x, r.x);
            assert_eq!(l.y, r.y);
            assert_eq!(l.score.to_bits(), r.score.to_bits());
            assert_eq!(l.best_theta.to_bits(), r.best_theta.to_bits());
        }
        // Row-major ordering.
        for w in a.windows(2) {
            assert!((w[0].y, w[0].x) < (w[1].y, w[1].x));
        }
    }

    #[test]
    fn scan_candidates_hug_a_straight_ribbon() {
        // Diagonal-ish belt: ax + by + c = 0 ribbon geometry is known, so any
        // candidate further than side/2 from the centerline is a gross miss.
        let (a, b, c) = (1.0f64, -3.0f64, 40.0f64);
        let norm = (a * a + b * b).sqrt();
        let width = 9.0;
        let img = GrayImage::from_fn(128, 128, |x, y| {
            let d = (a * x as f64 + b * y as f64 + c).abs() / norm;
            if d <= width / 2.0 {
                100
            } else {
                170
            }
        });
        let params = test_params();
        let cands = scan_image(&img, &params).unwrap();
        assert!(!cands.is_empty());
        let side = params.side() as f64;
        let near = cands
            .iter()
            .filter(|cand| {
                let d = (a * cand.x as f64 + b * cand.y as f64 + c).abs() / norm;
                d <= width / 2.0 + side / 2.0
            })
            .count();
        let ratio = near as f64 / cands.len() as f64;
        assert!(ratio >= 0.9, "only {ratio:.2} of candidates near the ribbon");
    }

    #[test]
    fn predict_matches_scan_grid_entry() {
        let img = vertical_belt_image();
        let params = test_params();
        let cands = scan_image(&img, &params).unwrap();
        let sample = cands[cands.len() / 2];
        let res = predict_pixel(&img, sample.x, sample.y, &params);
        assert_eq!(res.score, sample.score);
    }

    #[test]
    fn params_validation_catches_bad_settings() {
        let mut p = test_params();
        p.weights = vec![0.5; 8];
        assert!(p.validate().is_err());
        let mut p = test_params();
        p.tau_min = 10.0;
        p.tau_max = 4.0;
        assert!(p.validate().is_err());
        let mut p = test_params();
        p.stride = 0;
        assert!(p.validate().is_err());
        let mut p = test_params();
        p.sg_window = 17; // exceeds side 15
        assert!(p.validate().is_err());
        assert!(test_params().validate().is_ok());
    }
}
