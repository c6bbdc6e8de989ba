//! Ground-truthed synthetic cabin scenes.
//!
//! Real in-cabin footage is awkward to ship with a repository, so every
//! pipeline stage is exercised against rendered scenes instead: a belt ribbon
//! swept along a polynomial centerline in a declared ellipse frame, over
//! flat, gradient or textured backgrounds, degraded by blur, sensor noise,
//! occluding rectangles and an optional barrel warp. The renderer returns the
//! exact centerline it drew, so localization error is measurable to the
//! sub-pixel.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{image_to_local, local_to_image, EllipseFrame};
use crate::image::GrayImage;
use crate::shape::eval_poly;
use crate::usage::UsageLabel;

/// Belt ribbon description: centerline polynomial in the scene's ellipse
/// frame, ribbon width and fill intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeltSpec {
    /// Centerline coefficients in the local frame, constant term first.
    pub coeffs: Vec<f64>,
    /// Ribbon width, pixels. At least 3.
    pub width: f64,
    /// Ribbon fill intensity, 0..=255.
    pub intensity: f64,
}

/// Background presets probing different failure modes of the local criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    /// Uniform level.
    Flat { level: f64 },
    /// Linear ramp: `level = base + slope_x * x + slope_y * y`.
    Gradient { base: f64, slope_x: f64, slope_y: f64 },
    /// Value-noise texture: bilinear interpolation of a random lattice with
    /// the given feature scale (pixels) and amplitude around `base`.
    Texture { base: f64, amplitude: f64, scale: f64 },
}

/// Axis-aligned occluding rectangle (a hand, a sleeve) drawn over the belt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub intensity: u8,
}

impl Occluder {
    fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x as f64
            && p[0] < (self.x + self.width) as f64
            && p[1] >= self.y as f64
            && p[1] < (self.y + self.height) as f64
    }
}

/// Complete description of one renderable scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Frame the belt centerline coefficients live in.
    pub frame: EllipseFrame,
    /// Belt to render; absent for OFF scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belt: Option<BeltSpec>,
    pub background: Background,
    /// Gaussian sensor noise sigma, intensity units.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Box blur kernel size, pixels; 0 or 1 disables, otherwise odd.
    #[serde(default)]
    pub blur: usize,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    /// Barrel warp strength; 0 disables.
    #[serde(default)]
    pub warp_kappa: f64,
    /// Intended usage label; must be OFF exactly when `belt` is absent.
    pub label: UsageLabel,
    pub seed: u64,
}

/// What the renderer actually drew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: UsageLabel,
    /// Belt centerline in image coordinates (post-warp); empty for OFF.
    pub centerline: Vec<[f64; 2]>,
    /// Per-centerline-point flag: covered by an occluder.
    pub occluded: Vec<bool>,
}

/// Barrel distortion around the image center: radii scale by
/// `1 + kappa * (r / r_half_diagonal)^2`.
pub fn warp_point(p: [f64; 2], width: u32, height: u32, kappa: f64) -> [f64; 2] {
    if kappa == 0.0 {
        return p;
    }
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let dx = p[0] - cx;
    let dy = p[1] - cy;
    let r_norm = (cx * cx + cy * cy).sqrt();
    let r2 = (dx * dx + dy * dy) / (r_norm * r_norm);
    let s = 1.0 + kappa * r2;
    [cx + dx * s, cy + dy * s]
}

/// Number of ground-truth centerline samples per scene.
pub const CENTERLINE_SAMPLES: usize = 160;

fn centerline_points(spec: &SceneSpec, belt: &BeltSpec) -> Vec<[f64; 2]> {
    let half = spec.frame.d_major / 2.0;
    (0..CENTERLINE_SAMPLES)
        .map(|i| {
            let t = i as f64 / (CENTERLINE_SAMPLES - 1) as f64;
            let x = -half + t * spec.frame.d_major;
            let y = eval_poly(&belt.coeffs, x);
            warp_point(
                local_to_image(&spec.frame, [x, y]),
                spec.width,
                spec.height,
                spec.warp_kappa,
            )
        })
        .collect()
}

fn validate_scene(spec: &SceneSpec) -> Result<()> {
    if spec.width < 32 || spec.height < 32 {
        return Err(Error::InvalidScene("image smaller than 32x32".into()));
    }
    if spec.blur > 1 && spec.blur % 2 == 0 {
        return Err(Error::InvalidScene(format!(
            "blur kernel {} must be odd",
            spec.blur
        )));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::InvalidScene("noise sigma must be nonnegative".into()));
    }
    if !spec.warp_kappa.is_finite() || spec.warp_kappa.abs() > 0.5 {
        return Err(Error::InvalidScene(
            "warp kappa must be finite and within +-0.5".into(),
        ));
    }
    match (&spec.belt, spec.label) {
        (None, UsageLabel::Off) => {}
        (None, _) => {
            return Err(Error::InvalidScene(
                "ON/UNDER scenes need a belt".into(),
            ))
        }
        (Some(_), UsageLabel::Off) => {
            return Err(Error::InvalidScene("OFF scenes must not draw a belt".into()))
        }
        (Some(belt), _) => {
            if belt.width < 3.0 {
                return Err(Error::InvalidScene(format!(
                    "belt width {} below 3 px",
                    belt.width
                )));
            }
            if !(0.0..=255.0).contains(&belt.intensity) {
                return Err(Error::InvalidScene("belt intensity outside 0..=255".into()));
            }
            let margin = belt.width / 2.0 + 1.0;
            for p in centerline_points(spec, belt) {
                if p[0] < margin
                    || p[1] < margin
                    || p[0] > spec.width as f64 - 1.0 - margin
                    || p[1] > spec.height as f64 - 1.0 - margin
                {
                    return Err(Error::InvalidScene(format!(
                        "belt geometry leaves the image at ({:.1}, {:.1})",
                        p[0], p[1]
                    )));
                }
            }
        }
    }
    Ok(())
}

fn fill_background(spec: &SceneSpec, buf: &mut [f64], rng: &mut ChaCha8Rng) {
    let w = spec.width as usize;
    match &spec.background {
        Background::Flat { level } => buf.fill(*level),
        Background::Gradient {
            base,
            slope_x,
            slope_y,
        } => {
            for y in 0..spec.height as usize {
                for x in 0..w {
                    buf[y * w + x] = base + slope_x * x as f64 + slope_y * y as f64;
                }
            }
        }
        Background::Texture {
            base,
            amplitude,
            scale,
        } => {
            let scale = scale.max(1.0);
            let gw = (spec.width as f64 / scale).ceil() as usize + 2;
            let gh = (spec.height as f64 / scale).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
            for y in 0..spec.height as usize {
                let gy = y as f64 / scale;
                let y0 = gy.floor() as usize;
                let fy = gy - gy.floor();
                for x in 0..w {
                    let gx = x as f64 / scale;
                    let x0 = gx.floor() as usize;
                    let fx = gx - gx.floor();
                    let v00 = lattice[y0 * gw + x0];
                    let v10 = lattice[y0 * gw + x0 + 1];
                    let v01 = lattice[(y0 + 1) * gw + x0];
                    let v11 = lattice[(y0 + 1) * gw + x0 + 1];
                    let v = v00 * (1.0 - fx) * (1.0 - fy)
                        + v10 * fx * (1.0 - fy)
                        + v01 * (1.0 - fx) * fy
                        + v11 * fx * fy;
                    buf[y * w + x] = base + amplitude * (v * 2.0 - 1.0);
                }
            }
        }
    }
}

fn draw_ribbon(spec: &SceneSpec, belt: &BeltSpec, centerline: &[[f64; 2]], buf: &mut [f64]) {
    let w = spec.width as usize;
    let h = spec.height as usize;
    let reach = belt.width / 2.0 + 1.0;
    let mut dist = vec![f64::INFINITY; w * h];
    for seg in centerline.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = ((a[0].min(b[0]) - reach).floor().max(0.0)) as usize;
        let x1 = ((a[0].max(b[0]) + reach).ceil().min(w as f64 - 1.0)) as usize;
        let y0 = ((a[1].min(b[1]) - reach).floor().max(0.0)) as usize;
        let y1 = ((a[1].max(b[1]) + reach).ceil().min(h as f64 - 1.0)) as usize;
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64, y as f64];
                let t = if len_sq > 0.0 {
                    (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len_sq).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let qx = a[0] + t * ab[0] - p[0];
                let qy = a[1] + t * ab[1] - p[1];
                let d = (qx * qx + qy * qy).sqrt();
                let slot = &mut dist[y * w + x];
                if d < *slot {
                    *slot = d;
                }
            }
        }
    }
    // One-pixel coverage ramp centered on the geometric edge.
    let half = belt.width / 2.0;
    for (px, d) in buf.iter_mut().zip(&dist) {
        let cov = (half + 0.5 - d).clamp(0.0, 1.0);
        if cov > 0.0 {
            *px = *px * (1.0 - cov) + belt.intensity * cov;
        }
    }
}

fn box_blur(buf: &mut Vec<f64>, width: usize, height: usize, kernel: usize) {
    if kernel <= 1 {
        return;
    }
    let r = (kernel / 2) as i64;
    let norm = 1.0 / kernel as f64;
    let mut tmp = vec![0.0; buf.len()];
    for y in 0..height {
        let row = &buf[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for dx in -r..=r {
                let xi = (x as i64 + dx).clamp(0, width as i64 - 1) as usize;
                acc += row[xi];
            }
            tmp[y * width + x] = acc * norm;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for dy in -r..=r {
                let yi = (y as i64 + dy).clamp(0, height as i64 - 1) as usize;
                acc += tmp[yi * width + x];
            }
            buf[y * width + x] = acc * norm;
        }
    }
}

/// Renders the scene. Deterministic for a fixed spec (including its seed).
pub fn render(spec: &SceneSpec) -> Result<(GrayImage, GroundTruth)> {
    validate_scene(spec)?;
    let w = spec.width as usize;
    let h = spec.height as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buf = vec![0.0f64; w * h];
    fill_background(spec, &mut buf, &mut rng);

    let centerline = spec
        .belt
        .as_ref()
        .map(|belt| centerline_points(spec, belt))
        .unwrap_or_default();
    if let Some(belt) = &spec.belt {
        draw_ribbon(spec, belt, &centerline, &mut buf);
    }
    for occ in &spec.occluders {
        let x1 = (occ.x + occ.width).min(spec.width);
        let y1 = (occ.y + occ.height).min(spec.height);
        for y in occ.y..y1 {
            for x in occ.x..x1 {
                buf[y as usize * w + x as usize] = occ.intensity as f64;
            }
        }
    }
    box_blur(&mut buf, w, h, spec.blur);
    if spec.noise_sigma > 0.0 {
        // Box-Muller pairs from the scene stream.
        let mut pending: Option<f64> = None;
        for px in buf.iter_mut() {
            let n = match pending.take() {
                Some(n) => n,
                None => {
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    let mag = (-2.0 * u1.ln()).sqrt();
                    let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
                    pending = Some(mag * s);
                    mag * c
                }
            };
            *px += spec.noise_sigma * n;
        }
    }
    let data: Vec<u8> = buf.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let img = GrayImage::from_raw(spec.width, spec.height, data)?;
    let occluded = centerline
        .iter()
        .map(|&p| spec.occluders.iter().any(|o| o.contains(p)))
        .collect();
    Ok((
        img,
        GroundTruth {
            label: spec.label,
            centerline,
            occluded,
        },
    ))
}

/// Randomized corpus controls. Class geometry (the belt polynomial) is drawn
/// so the ground-truth median anchor angle falls in the class band, and the
/// belt stays inside the location mask the evaluation config will use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    /// Rendered image size.
    pub width: u32,
    pub height: u32,
    /// Which configured seat the scenes are rendered for.
    pub seat_index: usize,
    pub count_per_class: usize,
    pub seed: u64,
    /// Ribbon width range, pixels.
    pub belt_width: [f64; 2],
    /// Belt fill intensity range.
    pub belt_intensity: [f64; 2],
    /// Background base level range.
    pub background_level: [f64; 2],
    /// Minimum |belt - background| contrast.
    pub min_contrast: f64,
    /// Sensor noise sigma range.
    pub noise_sigma: [f64; 2],
    /// Box blur kernel sizes drawn uniformly.
    pub blur_sizes: Vec<usize>,
    /// Fraction of the centerline covered by the occluder, range.
    pub occlusion_fraction: [f64; 2],
    /// Probability that a scene gets an occluder at all.
    pub occlusion_probability: f64,
    /// Maximum barrel warp strength; per-scene kappa is uniform in
    /// `[-max, max]` when warping triggers.
    pub warp_kappa_max: f64,
    pub warp_probability: f64,
    /// Target median-angle band for ON scenes, degrees.
    pub on_angle_deg: [f64; 2],
    /// Target median-angle band for UNDER scenes, degrees.
    pub under_angle_deg: [f64; 2],
    /// Background preset mix: probability of texture, of gradient (the rest
    /// is flat).
    pub texture_fraction: f64,
    pub gradient_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            seat_index: 0,
            count_per_class: 100,
            seed: 0xBE17,
            belt_width: [7.5, 10.5],
            belt_intensity: [70.0, 110.0],
            background_level: [150.0, 190.0],
            min_contrast: 45.0,
            noise_sigma: [1.0, 10.0],
            blur_sizes: vec![0, 3, 5],
            occlusion_fraction: [0.10, 0.25],
            occlusion_probability: 0.5,
            warp_kappa_max: 0.12,
            warp_probability: 0.5,
            on_angle_deg: [38.0, 62.0],
            under_angle_deg: [8.0, 23.0],
            texture_fraction: 0.34,
            gradient_fraction: 0.33,
        }
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] >= range[1] {
        return range[0];
    }
    rng.gen_range(range[0]..range[1])
}

/// Median of the undirected angles (degrees) between the image x-axis and
/// rays from `anchor` to the centerline points. Mirrors the classifier's
/// statistic so generated scenes land in their class band by construction.
pub fn median_anchor_angle_deg(centerline: &[[f64; 2]], anchor: [f64; 2]) -> Option<f64> {
    let mut angles: Vec<f64> = centerline
        .iter()
        .filter_map(|p| {
            let dx = p[0] - anchor[0];
            let dy = p[1] - anchor[1];
            if dx.abs() < 1e-9 && dy.abs() < 1e-9 {
                return None;
            }
            let a = dy.atan2(dx).abs().to_degrees();
            Some(if a > 90.0 { 180.0 - a } else { a })
        })
        .collect();
    if angles.is_empty() {
        return None;
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = angles.len();
    Some(if n % 2 == 1 {
        angles[n / 2]
    } else {
        (angles[n / 2 - 1] + angles[n / 2]) / 2.0
    })
}

fn scene_in_mask(spec: &SceneSpec, belt: &BeltSpec) -> bool {
    // Post-warp centerline must stay well inside the declared ellipse, or the
    // assembler would discard the very pixels the scene is supposed to carry.
    let a = spec.frame.d_major / 2.0;
    let b = spec.frame.d_minor / 2.0;
    centerline_points(spec, belt).iter().all(|&p| {
        let l = image_to_local(&spec.frame, p);
        let qx = l[0] / a;
        let qy = l[1] / b;
        qx * qx + qy * qy <= 0.92f64.powi(2)
    })
}

fn sample_background(corpus: &CorpusSpec, rng: &mut ChaCha8Rng) -> Background {
    let base = uniform_in(rng, corpus.background_level);
    let roll: f64 = rng.gen();
    if roll < corpus.texture_fraction {
        Background::Texture {
            base,
            amplitude: rng.gen_range(25.0..45.0),
            scale: rng.gen_range(1.5..3.0),
        }
    } else if roll < corpus.texture_fraction + corpus.gradient_fraction {
        Background::Gradient {
            base: base - 40.0,
            slope_x: rng.gen_range(-0.12..0.12),
            slope_y: rng.gen_range(-0.08..0.12),
        }
    } else {
        Background::Flat { level: base }
    }
}

fn class_coeffs(
    corpus: &CorpusSpec,
    frame: &EllipseFrame,
    label: UsageLabel,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let h = frame.d_major / 2.0;
    let b = frame.d_minor / 2.0;
    match label {
        UsageLabel::On => {
            // Gentle arc near the anchor axis.
            let c0 = rng.gen_range(-0.08..0.08) * b;
            let c1 = rng.gen_range(-0.08..0.08);
            let sag = rng.gen_range(-0.22..0.22) * b;
            let c3 = rng.gen_range(-0.08..0.08) * b / (h * h * h);
            vec![c0, c1, -sag / (h * h), c3, 0.0]
        }
        UsageLabel::Under => {
            // Deep parabolic sag; the sign that lowers the anchor angles is
            // resolved by the acceptance loop in `generate_scene`.
            let s = rng.gen_range(0.55..0.8) * b;
            let c1 = rng.gen_range(-0.06..0.06);
            let c3 = rng.gen_range(-0.15..0.15) * s / (h * h * h);
            vec![s, c1, -s / (h * h), c3, 0.0]
        }
        UsageLabel::Off => Vec::new(),
    }
}

/// Draws one scene of the requested class. Geometry is rejection-sampled
/// until the ground-truth median angle lands in the class band and the belt
/// stays inside both the image and the mask ellipse.
pub fn generate_scene(
    corpus: &CorpusSpec,
    frame: &EllipseFrame,
    label: UsageLabel,
    seed: u64,
) -> Result<SceneSpec> {
    let (width, height) = (corpus.width, corpus.height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = sample_background(corpus, &mut rng);
    let bg_level = match &background {
        Background::Flat { level } => *level,
        Background::Gradient { base, .. } => *base + 40.0,
        Background::Texture { base, .. } => *base,
    };
    let noise_sigma = uniform_in(&mut rng, corpus.noise_sigma);
    let blur = corpus.blur_sizes[rng.gen_range(0..corpus.blur_sizes.len().max(1))];
    let mut spec = SceneSpec {
        width,
        height,
        frame: *frame,
        belt: None,
        background,
        noise_sigma,
        blur,
        occluders: Vec::new(),
        warp_kappa: 0.0,
        label,
        seed: rng.gen(),
    };
    if label == UsageLabel::Off {
        return Ok(spec);
    }

    let band = match label {
        UsageLabel::On => corpus.on_angle_deg,
        UsageLabel::Under => corpus.under_angle_deg,
        UsageLabel::Off => unreachable!(),
    };
    let anchor = local_to_image(frame, [-frame.d_major / 2.0, 0.0]);
    let mut intensity = uniform_in(&mut rng, corpus.belt_intensity);
    if (bg_level - intensity).abs() < corpus.min_contrast {
        intensity = bg_level - corpus.min_contrast;
    }
    for attempt in 0..200 {
        // Shrink the warp as attempts accumulate; strong warps are the usual
        // reason geometry escapes the mask.
        let shrink = 1.0 / (1.0 + attempt as f64 / 20.0);
        let warp = if rng.gen::<f64>() < corpus.warp_probability {
            rng.gen_range(-corpus.warp_kappa_max..corpus.warp_kappa_max) * shrink
        } else {
            0.0
        };
        let mut coeffs = class_coeffs(corpus, frame, label, &mut rng);
        // Try both sag signs; image-frame orientation decides which one
        // lowers the anchor angles.
        for flip in [1.0, -1.0] {
            let trial: Vec<f64> = coeffs.iter().map(|c| c * flip).collect();
            let belt = BeltSpec {
                coeffs: trial.clone(),
                width: uniform_in(&mut rng, corpus.belt_width),
                intensity: intensity.clamp(0.0, 255.0),
            };
            spec.warp_kappa = warp;
            spec.belt = Some(belt.clone());
            if validate_scene(&spec).is_err() || !scene_in_mask(&spec, &belt) {
                continue;
            }
            let gt = centerline_points(&spec, &belt);
            let Some(angle) = median_anchor_angle_deg(&gt, anchor) else {
                continue;
            };
            if angle >= band[0] && angle <= band[1] {
                if rng.gen::<f64>() < corpus.occlusion_probability {
                    let frac = uniform_in(&mut rng, corpus.occlusion_fraction);
                    spec.occluders = vec![occluder_over(&gt, frac, &belt, &mut rng, width, height)];
                }
                return Ok(spec);
            }
        }
        coeffs.clear();
    }
    Err(Error::InvalidScene(format!(
        "could not realize a {label} scene inside the mask; check anchors and angle bands"
    )))
}

/// Rectangle covering `fraction` of the centerline, centered on a random
/// interior span.
fn occluder_over(
    centerline: &[[f64; 2]],
    fraction: f64,
    belt: &BeltSpec,
    rng: &mut ChaCha8Rng,
    width: u32,
    height: u32,
) -> Occluder {
    let n = centerline.len();
    let span = ((n as f64 * fraction) as usize).max(2);
    let start = rng.gen_range(n / 5..(n - n / 5 - span).max(n / 5 + 1));
    let pts = &centerline[start..start + span];
    let pad = belt.width / 2.0 + 3.0;
    let x0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min) - pad;
    let x1 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) + pad;
    let y0 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min) - pad;
    let y1 = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max) + pad;
    let x0 = x0.max(0.0) as u32;
    let y0 = y0.max(0.0) as u32;
    Occluder {
        x: x0,
        y: y0,
        width: (x1.min(width as f64 - 1.0) as u32).saturating_sub(x0).max(1),
        height: (y1.min(height as f64 - 1.0) as u32).saturating_sub(y0).max(1),
        intensity: if rng.gen() { 225 } else { 40 },
    }
}

/// Generates `count_per_class` scenes for each label, deterministically from
/// the corpus seed.
pub fn generate_corpus(corpus: &CorpusSpec, frame: &EllipseFrame) -> Result<Vec<SceneSpec>> {
    let mut scenes = Vec::with_capacity(corpus.count_per_class * 3);
    for (class_idx, label) in [UsageLabel::On, UsageLabel::Under, UsageLabel::Off]
        .into_iter()
        .enumerate()
    {
        for i in 0..corpus.count_per_class {
            let seed = corpus
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((class_idx as u64) << 32)
                .wrapping_add(i as u64);
            scenes.push(generate_scene(corpus, frame, label, seed)?);
        }
    }
    Ok(scenes)
}

/// One corpus image with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path relative to the manifest file.
    pub image: String,
    pub label: UsageLabel,
    pub centerline: Vec<[f64; 2]>,
    pub occluded: Vec<bool>,
    pub seed: u64,
    pub noise_sigma: f64,
    pub blur: usize,
    pub warp_kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Renders every scene into `out_dir` as PNG plus a `manifest.json` mapping
/// image paths to ground truth. Returns the manifest path.
pub fn write_corpus(scenes: &[SceneSpec], out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries: Vec<ManifestEntry> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<ManifestEntry> {
            let (img, gt) = render(spec)?;
            let name = format!("scene_{i:04}.png");
            img.save_png(out_dir.join(&name))?;
            Ok(ManifestEntry {
                image: name,
                label: gt.label,
                centerline: gt.centerline,
                occluded: gt.occluded,
                seed: spec.seed,
                noise_sigma: spec.noise_sigma,
                blur: spec.blur,
                warp_kappa: spec.warp_kappa,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { entries };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Eval(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Eval(format!("manifest parse: {e}")))
}
