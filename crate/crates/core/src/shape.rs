//! Polynomial belt-shape modeling with MSAC outlier rejection.
//!
//! Fitting happens in the ellipse-local frame: the belt may loop back on
//! itself in image x (a stretched belt seen through a wide lens), but along
//! the anchor axis it stays single-valued, so an ordinary polynomial in local
//! x models it. The fitted curve maps back into the image for rendering and
//! usage classification.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::geometry::{image_to_local, local_to_image, EllipseFrame};
use crate::linalg;
use crate::predictor::CandidatePoint;

/// Fitted belt curve in the ellipse-local frame, with fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeltCurve<F = f64> {
    /// Polynomial coefficients, constant term first.
    pub coeffs: Vec<F>,
    /// Polynomial order `N` (`coeffs.len() == N + 1`).
    pub order: usize,
    /// Size of the consensus set the final fit was computed on.
    pub inlier_count: usize,
    /// Consensus size over total candidate count.
    pub inlier_ratio: F,
    /// Root-mean-square residual over the consensus set, local-frame pixels.
    pub rms_residual: F,
    /// The frame the coefficients live in.
    pub frame: EllipseFrame<F>,
}

fn default_iterations() -> usize {
    500
}

fn default_inlier_tol<F: Float>() -> F {
    F::from_f64_lit(2.0)
}

fn default_min_inlier_ratio<F: Float>() -> F {
    F::from_f64_lit(0.25)
}

/// Default MSAC seed, overridable per run.
pub const DEFAULT_SEED: u64 = 0x5EA7_BE17;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// MSAC loop controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "F: Float + Deserialize<'de>"))]
pub struct MsacParams<F = f64> {
    pub iterations: usize,
    /// Residual threshold for consensus membership, local-frame pixels.
    pub inlier_tol: F,
    /// Minimum consensus fraction; below it the fit reads as no belt.
    pub min_inlier_ratio: F,
    pub seed: u64,
}

impl<F: Float> Default for MsacParams<F> {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            inlier_tol: default_inlier_tol(),
            min_inlier_ratio: default_min_inlier_ratio(),
            seed: default_seed(),
        }
    }
}

impl<F: Float> MsacParams<F> {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "MSAC needs at least one iteration".into(),
            ));
        }
        if !(self.inlier_tol > F::zero()) {
            return Err(Error::InvalidParameter(
                "inlier tolerance must be positive".into(),
            ));
        }
        if self.min_inlier_ratio < F::zero() || self.min_inlier_ratio > F::one() {
            return Err(Error::InvalidParameter(
                "min inlier ratio must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Horner evaluation of a constant-first coefficient vector.
pub fn eval_poly<F: Float>(coeffs: &[F], x: F) -> F {
    let mut acc = F::zero();
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Ordinary least squares for `y = beta_0 + beta_1 x + ... + beta_N x^N`.
///
/// The x values are affinely rescaled to `[-1, 1]` before building the normal
/// equations (Vandermonde conditioning) and the coefficients mapped back, so
/// the returned vector is in the caller's coordinates.
pub fn fit_polynomial<F: Float>(points: &[[F; 2]], order: usize) -> Result<Vec<F>> {
    let m = order + 1;
    if points.len() < m {
        return Err(Error::InvalidParameter(format!(
            "{} points cannot determine an order-{order} polynomial",
            points.len()
        )));
    }
    if distinct_x_count(points, m) < m {
        return Err(Error::DegenerateFit(format!(
            "fewer than {m} distinct x values"
        )));
    }
    let mut x_min = points[0][0];
    let mut x_max = points[0][0];
    for p in points {
        x_min = x_min.min(p[0]);
        x_max = x_max.max(p[0]);
    }
    let span = x_max - x_min;
    if span == F::zero() {
        return Err(Error::DegenerateFit("all x values coincide".into()));
    }
    // u = a x + b maps [x_min, x_max] onto [-1, 1].
    let two = F::from_f64_lit(2.0);
    let a = two / span;
    let b = -(x_max + x_min) / span;

    let mut normal = vec![vec![F::zero(); m]; m];
    let mut rhs = vec![F::zero(); m];
    let mut powers = vec![F::zero(); 2 * m - 1];
    for p in points {
        let u = a * p[0] + b;
        let mut up = F::one();
        for slot in powers.iter_mut() {
            *slot = up;
            up = up * u;
        }
        for (r, rhs_r) in rhs.iter_mut().enumerate() {
            *rhs_r += powers[r] * p[1];
            for c in 0..m {
                normal[r][c] += powers[r + c];
            }
        }
        // `powers` is rebuilt per point; only the accumulators persist.
        for slot in powers.iter_mut() {
            *slot = F::zero();
        }
    }
    let alpha = linalg::solve(normal, rhs)
        .ok_or_else(|| Error::DegenerateFit("singular normal equations".into()))?;

    // Expand sum_q alpha_q (a x + b)^q back into x coefficients.
    let mut coeffs = vec![F::zero(); m];
    let mut basis = vec![F::zero(); m]; // (a x + b)^q, grown iteratively
    basis[0] = F::one();
    let mut degree = 0usize;
    for (q, &aq) in alpha.iter().enumerate() {
        if q > 0 {
            // basis *= (a x + b)
            for d in (0..=degree).rev() {
                let v = basis[d];
                basis[d + 1] += a * v;
                basis[d] = b * v;
            }
            degree += 1;
        }
        for d in 0..=degree {
            coeffs[d] += aq * basis[d];
        }
    }
    Ok(coeffs)
}

fn distinct_x_count<F: Float>(points: &[[F; 2]], cap: usize) -> usize {
    let mut xs: Vec<F> = points.iter().map(|p| p[0]).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    xs.dedup_by(|a, b| a == b);
    xs.len().min(cap)
}

/// MSAC fit outcome before frame attachment.
#[derive(Debug, Clone, PartialEq)]
pub struct MsacFit<F = f64> {
    pub coeffs: Vec<F>,
    pub inlier_count: usize,
    pub inlier_ratio: F,
    pub rms_residual: F,
    /// Truncated quadratic loss of the returned coefficients over all points.
    pub truncated_loss: F,
}

/// MSAC polynomial fit: repeatedly fits minimal samples, scores hypotheses by
/// truncated quadratic loss, refits on the best consensus set.
///
/// Deterministic for a fixed seed. `Ok(None)` means no belt: too few points,
/// no non-degenerate hypothesis, or consensus below `min_inlier_ratio`. The
/// refit is kept only when it does not score worse than the hypothesis it
/// came from.
pub fn fit_msac<F: Float>(
    points: &[[F; 2]],
    order: usize,
    params: &MsacParams<F>,
) -> Result<Option<MsacFit<F>>> {
    params.validate()?;
    let m = order + 1;
    if points.len() < m {
        return Ok(None);
    }
    let tol = params.inlier_tol;
    let tol_sq = tol * tol;
    let loss_of = |coeffs: &[F]| -> F {
        let mut loss = F::zero();
        for p in points {
            let r = p[1] - eval_poly(coeffs, p[0]);
            loss += (r * r).min(tol_sq);
        }
        loss
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(F, Vec<F>)> = None;
    let mut sample = Vec::with_capacity(m);
    for _ in 0..params.iterations {
        let picks = rand::seq::index::sample(&mut rng, points.len(), m);
        sample.clear();
        sample.extend(picks.iter().map(|i| points[i]));
        let Ok(coeffs) = fit_polynomial(&sample, order) else {
            continue;
        };
        let loss = loss_of(&coeffs);
        let better = match &best {
            Some((best_loss, _)) => loss < *best_loss,
            None => true,
        };
        if better {
            best = Some((loss, coeffs));
        }
    }
    let Some((hypothesis_loss, hypothesis)) = best else {
        return Ok(None);
    };

    let consensus: Vec<[F; 2]> = points
        .iter()
        .filter(|p| (p[1] - eval_poly(&hypothesis, p[0])).abs() <= tol)
        .copied()
        .collect();
    if consensus.len() < m {
        return Ok(None);
    }
    let ratio = F::from_usize_lit(consensus.len()) / F::from_usize_lit(points.len());
    if ratio < params.min_inlier_ratio {
        return Ok(None);
    }

    let (coeffs, loss) = match fit_polynomial(&consensus, order) {
        Ok(refit) => {
            let refit_loss = loss_of(&refit);
            if refit_loss <= hypothesis_loss {
                (refit, refit_loss)
            } else {
                (hypothesis, hypothesis_loss)
            }
        }
        Err(_) => (hypothesis, hypothesis_loss),
    };

    let mut ss = F::zero();
    for p in &consensus {
        let r = p[1] - eval_poly(&coeffs, p[0]);
        ss += r * r;
    }
    let rms = (ss / F::from_usize_lit(consensus.len())).sqrt();
    Ok(Some(MsacFit {
        coeffs,
        inlier_count: consensus.len(),
        inlier_ratio: ratio,
        rms_residual: rms,
        truncated_loss: loss,
    }))
}

/// Maps candidates into the ellipse-local frame and runs the MSAC fit.
///
/// Candidates are sorted by pixel coordinates before the seeded sampling, so
/// the outcome does not depend on upstream ordering.
pub fn model_shape<F: Float>(
    cands: &[CandidatePoint<F>],
    frame: &EllipseFrame<F>,
    order: usize,
    msac: &MsacParams<F>,
) -> Result<Option<BeltCurve<F>>> {
    let mut sorted: Vec<&CandidatePoint<F>> = cands.iter().collect();
    sorted.sort_by_key(|c| (c.x, c.y));
    let local: Vec<[F; 2]> = sorted
        .iter()
        .map(|c| {
            image_to_local(
                frame,
                [
                    F::from_usize_lit(c.x as usize),
                    F::from_usize_lit(c.y as usize),
                ],
            )
        })
        .collect();
    let fit = fit_msac(&local, order, msac)?;
    Ok(fit.map(|f| BeltCurve {
        coeffs: f.coeffs,
        order,
        inlier_count: f.inlier_count,
        inlier_ratio: f.inlier_ratio,
        rms_residual: f.rms_residual,
        frame: *frame,
    }))
}

/// Samples the curve at `count` evenly spaced local x positions spanning the
/// full major axis and maps the points into image coordinates.
///
/// The polynomial interpolates across candidate gaps, so occluded belt
/// segments are covered by the sampled curve.
pub fn sample_curve<F: Float>(curve: &BeltCurve<F>, count: usize) -> Vec<[F; 2]> {
    assert!(count >= 2, "need at least the two endpoints");
    let half = curve.frame.d_major / F::from_f64_lit(2.0);
    let step = curve.frame.d_major / F::from_usize_lit(count - 1);
    (0..count)
        .map(|i| {
            let x = -half + step * F::from_usize_lit(i);
            let y = eval_poly(&curve.coeffs, x);
            local_to_image(&curve.frame, [x, y])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_points(coeffs: &[f64], xs: impl IntoIterator<Item = f64>) -> Vec<[f64; 2]> {
        xs.into_iter().map(|x| [x, eval_poly(coeffs, x)]).collect()
    }

    #[test]
    fn recovers_an_exact_line() {
        let pts = curve_points(&[2.0, 3.0], (0..10).map(|i| i as f64));
        let coeffs = fit_polynomial(&pts, 1).unwrap();
        assert!((coeffs[0] - 2.0).abs() < 1e-9);
        assert!((coeffs[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_a_noiseless_cubic() {
        let truth = [1.0, -1.0, 0.0, 0.5];
        let pts = curve_points(&truth, (0..50).map(|i| -2.0 + i as f64 * 0.1));
        let coeffs = fit_polynomial(&pts, 3).unwrap();
        for (got, want) in coeffs.iter().zip(&truth) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn handles_the_default_quartic_order() {
        let truth = [0.3, -0.7, 0.02, 0.001, -0.0004];
        let pts = curve_points(&truth, (0..80).map(|i| -40.0 + i as f64));
        let coeffs = fit_polynomial(&pts, 4).unwrap();
        for (got, want) in coeffs.iter().zip(&truth) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_rank_deficient_systems() {
        // Five points but only three distinct x values.
        let pts = vec![[0.0, 1.0], [0.0, 2.0], [1.0, 3.0], [1.0, 4.0], [2.0, 5.0]];
        assert!(matches!(
            fit_polynomial(&pts, 4),
            Err(Error::DegenerateFit(_))
        ));
        assert!(fit_polynomial(&pts, 2).is_ok());
    }

    #[test]
    fn residuals_are_orthogonal_to_vandermonde_columns() {
        let mut state = 17u64;
        let mut noise = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) % 1000) as f64 / 500.0 - 1.0
        };
        let pts: Vec<[f64; 2]> = (0..60)
            .map(|i| {
                let x = -1.5 + i as f64 * 0.05;
                [x, 2.0 - x + 0.3 * x * x + noise()]
            })
            .collect();
        let coeffs = fit_polynomial(&pts, 2).unwrap();
        for p in 0..3usize {
            let mut dot = 0.0;
            let mut r_norm = 0.0;
            let mut v_norm = 0.0;
            for pt in &pts {
                let r = pt[1] - eval_poly(&coeffs, pt[0]);
                let v = pt[0].powi(p as i32);
                dot += r * v;
                r_norm += r * r;
                v_norm += v * v;
            }
            let cosine = dot.abs() / (r_norm.sqrt() * v_norm.sqrt() + 1e-30);
            assert!(cosine < 1e-6, "column {p}: cosine {cosine}");
        }
    }

    #[test]
    fn msac_without_outliers_equals_plain_least_squares() {
        let truth = [5.0, 0.5, -0.01];
        let pts = curve_points(&truth, (0..100).map(|i| i as f64 - 50.0));
        let params = MsacParams::default();
        let fit = fit_msac(&pts, 2, &params).unwrap().unwrap();
        let direct = fit_polynomial(&pts, 2).unwrap();
        assert_eq!(fit.coeffs, direct);
        assert_eq!(fit.inlier_count, 100);
        assert_eq!(fit.inlier_ratio, 1.0);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn msac_survives_thirty_percent_outliers() {
        let truth = [2.0, 0.3, -0.02, 0.0008];
        let mut state = 3u64;
        let mut uniform = |lo: f64, hi: f64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            lo + (hi - lo) * ((state >> 11) as f64 / (1u64 << 53) as f64)
        };
        let mut pts = Vec::new();
        for i in 0..70 {
            let x = -60.0 + i as f64 * 120.0 / 69.0;
            let noise = uniform(-1.0, 1.0) * 0.5;
            pts.push([x, eval_poly(&truth, x) + noise]);
        }
        for _ in 0..30 {
            pts.push([uniform(-60.0, 60.0), uniform(-80.0, 80.0)]);
        }
        let fit = fit_msac(&pts, 3, &MsacParams::default()).unwrap().unwrap();
        let mut max_dev = 0.0f64;
        for i in 0..=120 {
            let x = -60.0 + i as f64;
            let dev = (eval_poly(&fit.coeffs, x) - eval_poly(&truth, x)).abs();
            max_dev = max_dev.max(dev);
        }
        assert!(max_dev <= 1.5, "max deviation {max_dev}");
    }

    #[test]
    fn msac_reports_no_belt_without_consensus() {
        // Five points stacked on one x: every minimal sample is degenerate.
        let pts = vec![[3.0, 0.0], [3.0, 2.0], [3.0, 4.5], [3.0, 9.0], [3.0, 16.0]];
        let params = MsacParams {
            min_inlier_ratio: 0.5,
            ..MsacParams::default()
        };
        assert!(fit_msac(&pts, 4, &params).unwrap().is_none());
        // Fewer points than the order needs.
        let few = vec![[0.0, 0.0], [1.0, 1.0]];
        assert!(fit_msac(&few, 4, &params).unwrap().is_none());
    }

    #[test]
    fn msac_is_bit_deterministic_for_a_seed() {
        let truth = [1.0, -0.2, 0.004];
        let mut pts = curve_points(&truth, (0..80).map(|i| i as f64 - 40.0));
        pts.extend([[0.0, 55.0], [10.0, -40.0], [-30.0, 70.0]]);
        let params = MsacParams {
            seed: 99,
            ..MsacParams::default()
        };
        let a = fit_msac(&pts, 2, &params).unwrap().unwrap();
        let b = fit_msac(&pts, 2, &params).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn msac_refit_never_scores_worse_than_its_hypothesis() {
        let mut state = 1234u64;
        let mut uniform = |lo: f64, hi: f64| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            lo + (hi - lo) * ((state >> 11) as f64 / (1u64 << 53) as f64)
        };
        for trial in 0..50 {
            let pts: Vec<[f64; 2]> = (0..40)
                .map(|_| [uniform(-30.0, 30.0), uniform(-30.0, 30.0)])
                .collect();
            let params = MsacParams {
                seed: trial,
                min_inlier_ratio: 0.0,
                ..MsacParams::default()
            };
            if let Some(fit) = fit_msac(&pts, 2, &params).unwrap() {
                // Recompute the best hypothesis loss by replaying the loop.
                let tol_sq = params.inlier_tol * params.inlier_tol;
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                let mut best_loss = f64::INFINITY;
                for _ in 0..params.iterations {
                    let picks = rand::seq::index::sample(&mut rng, pts.len(), 3);
                    let sample: Vec<[f64; 2]> = picks.iter().map(|i| pts[i]).collect();
                    if let Ok(coeffs) = fit_polynomial(&sample, 2) {
                        let loss: f64 = pts
                            .iter()
                            .map(|p| {
                                let r = p[1] - eval_poly(&coeffs, p[0]);
                                (r * r).min(tol_sq)
                            })
                            .sum();
                        best_loss = best_loss.min(loss);
                    }
                }
                assert!(fit.truncated_loss <= best_loss + 1e-9);
            }
        }
    }

    fn frame_for_test() -> EllipseFrame {
        EllipseFrame::new([320.0, 240.0], -0.9, 380.0, 300.0).unwrap()
    }

    #[test]
    fn candidates_on_the_major_axis_fit_a_flat_curve() {
        let frame = frame_for_test();
        let cands: Vec<CandidatePoint> = (0..60)
            .map(|i| {
                let x = -180.0 + i as f64 * 6.0;
                let p = local_to_image(&frame, [x, 0.0]);
                CandidatePoint {
                    x: p[0].round() as u32,
                    y: p[1].round() as u32,
                    score: 0.5,
                    best_theta: 0.0,
                }
            })
            .collect();
        let curve = model_shape(&cands, &frame, 4, &MsacParams::default())
            .unwrap()
            .unwrap();
        // Rounding to pixel grid bounds the coefficients near zero.
        assert!(curve.coeffs[0].abs() < 1.5);
        for &c in &curve.coeffs[1..] {
            assert!(c.abs() < 0.5);
        }
    }

    #[test]
    fn empty_candidates_mean_no_belt() {
        let frame = frame_for_test();
        assert!(model_shape::<f64>(&[], &frame, 4, &MsacParams::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn candidate_order_does_not_change_the_fit() {
        let frame = frame_for_test();
        let mut cands: Vec<CandidatePoint> = (0..50)
            .map(|i| {
                let x = -150.0 + i as f64 * 6.0;
                let y = 20.0 * (x / 150.0) * (x / 150.0);
                let p = local_to_image(&frame, [x, y]);
                CandidatePoint {
                    x: p[0].round() as u32,
                    y: p[1].round() as u32,
                    score: 0.5,
                    best_theta: 0.0,
                }
            })
            .collect();
        let params = MsacParams::default();
        let a = model_shape(&cands, &frame, 2, &params).unwrap().unwrap();
        cands.reverse();
        cands.swap(3, 17);
        let b = model_shape(&cands, &frame, 2, &params).unwrap().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stretched_belt_fits_locally_but_not_in_image_x() {
        // Steep frame: the belt is single-valued in local x but folds back in
        // image x.
        let frame = EllipseFrame::new([300.0, 240.0], 1.35, 360.0, 300.0).unwrap();
        let truth = [0.0, 0.0, 0.0016, 0.0, -0.0000004];
        let image_pts: Vec<[f64; 2]> = (0..90)
            .map(|i| {
                let x = -170.0 + i as f64 * 340.0 / 89.0;
                local_to_image(&frame, [x, eval_poly(&truth, x)])
            })
            .collect();
        // Multi-valued in image x: some x column is hit twice.
        let mut xs: Vec<f64> = image_pts.iter().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let folded = image_pts.windows(2).any(|w| w[1][0] < w[0][0]);
        assert!(folded, "scene must fold back in image x");

        let local_pts: Vec<[f64; 2]> = image_pts
            .iter()
            .map(|&p| image_to_local(&frame, p))
            .collect();
        let params = MsacParams::default();
        let local_fit = fit_msac(&local_pts, 4, &params).unwrap().unwrap();
        assert!(local_fit.rms_residual < 0.5);

        let image_fit = fit_msac(&image_pts, 4, &params).unwrap();
        let image_rms_over_all = image_fit.map(|f| {
            let mut ss = 0.0;
            for p in &image_pts {
                let r = p[1] - eval_poly(&f.coeffs, p[0]);
                ss += r * r;
            }
            (ss / image_pts.len() as f64).sqrt()
        });
        match image_rms_over_all {
            None => {}
            Some(rms) => assert!(rms > 10.0, "image-frame fit should fail, rms {rms}"),
        }
    }

    #[test]
    fn sampled_zero_polynomial_lies_on_the_anchor_segment() {
        let frame = frame_for_test();
        let curve = BeltCurve {
            coeffs: vec![0.0; 5],
            order: 4,
            inlier_count: 10,
            inlier_ratio: 1.0,
            rms_residual: 0.0,
            frame,
        };
        let pts = sample_curve(&curve, 2);
        let half = frame.d_major / 2.0;
        let a = local_to_image(&frame, [-half, 0.0]);
        let b = local_to_image(&frame, [half, 0.0]);
        assert!((pts[0][0] - a[0]).abs() < 1e-9 && (pts[0][1] - a[1]).abs() < 1e-9);
        assert!((pts[1][0] - b[0]).abs() < 1e-9 && (pts[1][1] - b[1]).abs() < 1e-9);
    }

    #[test]
    fn sampled_points_satisfy_the_polynomial_after_round_trip() {
        let frame = frame_for_test();
        let curve = BeltCurve {
            coeffs: vec![4.0, 0.1, -0.002, 0.0, 0.00000012],
            order: 4,
            inlier_count: 10,
            inlier_ratio: 1.0,
            rms_residual: 0.0,
            frame,
        };
        for p in sample_curve(&curve, 64) {
            let local = image_to_local(&frame, p);
            let want = eval_poly(&curve.coeffs, local[0]);
            assert!((local[1] - want).abs() < 1e-9);
        }
    }
}
