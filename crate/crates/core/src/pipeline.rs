//! Batch frame processing: detect over images, evaluate against a corpus
//! manifest.
//!
//! Per frame and per seat the stages run scan -> mask filter -> shape fit ->
//! usage classification. Frames are processed by a worker pool and results
//! re-assembled in input order, so output is byte-identical for any worker
//! count. Timings are kept out of the serialized records unless explicitly
//! requested.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembler::{self, LocationMask, SeatConfig};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::project_anchor;
use crate::image::GrayImage;
use crate::overlay;
use crate::predictor::scan_image;
use crate::shape::{model_shape, sample_curve, BeltCurve};
use crate::synth::{self, Manifest};
use crate::usage::{classify, UsageLabel, UsageResult};

/// Per-seat precomputed geometry; masks depend only on calibration and seat
/// config, so they are built once at startup.
#[derive(Debug, Clone)]
pub struct SeatRuntime {
    pub config: SeatConfig,
    pub mask: LocationMask,
    pub bl_anchor: [f64; 2],
}

/// A loaded config plus everything derived from it.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub seats: Vec<SeatRuntime>,
}

/// Stage wall-clock breakdown, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTimings {
    pub scan_ms: f64,
    pub assemble_ms: f64,
    pub model_ms: f64,
    pub classify_ms: f64,
    pub total_ms: f64,
}

/// One seat's outcome within a frame.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeatResult {
    pub seat: String,
    pub usage: UsageResult,
    /// Fitted curve; absent when the seat reads OFF.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve: Option<BeltCurve>,
    /// Scan hits before and after mask/score filtering.
    pub candidates_before: usize,
    pub candidates_after: usize,
    /// Present only when timings were requested; excluded from the
    /// determinism contract.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<StageTimings>,
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub frame: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seats: Vec<SeatResult>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let mut seats = Vec::with_capacity(config.seats.len());
        for seat in &config.seats {
            let mask = assembler::build_mask(&config.camera, seat)?;
            let bl_anchor = project_anchor(&config.camera, &seat.anchor_bl)?;
            seats.push(SeatRuntime {
                config: seat.clone(),
                mask,
                bl_anchor,
            });
        }
        Ok(Self { config, seats })
    }

    /// Runs every stage on one frame. `include_timings` controls whether the
    /// measured stage times are attached to the results.
    pub fn process_frame(&self, frame_id: &str, img: &GrayImage, include_timings: bool) -> FrameRecord {
        let t_total = Instant::now();
        let t_scan = Instant::now();
        let cands = match scan_image(img, &self.config.predictor) {
            Ok(c) => c,
            Err(e) => {
                return FrameRecord {
                    frame: frame_id.to_string(),
                    error: Some(e.to_string()),
                    seats: Vec::new(),
                }
            }
        };
        let scan_ms = ms_since(t_scan);

        let mut seats = Vec::with_capacity(self.seats.len());
        for seat in &self.seats {
            let t_assemble = Instant::now();
            let filtered =
                assembler::filter_candidates(&cands, &seat.mask, seat.config.gamma_pre);
            let assemble_ms = ms_since(t_assemble);

            let t_model = Instant::now();
            let curve = if filtered.len() < seat.config.min_candidates {
                None
            } else {
                model_shape(
                    &filtered,
                    &seat.mask.frame,
                    self.config.poly_order,
                    &self.config.msac,
                )
                .unwrap_or(None)
            };
            let model_ms = ms_since(t_model);

            let t_classify = Instant::now();
            let usage = classify(curve.as_ref(), &seat.config, seat.bl_anchor);
            let classify_ms = ms_since(t_classify);

            let curve = if usage.label == UsageLabel::Off {
                None
            } else {
                curve
            };
            seats.push(SeatResult {
                seat: seat.config.name.clone(),
                usage,
                curve,
                candidates_before: cands.len(),
                candidates_after: filtered.len(),
                timing_ms: include_timings.then(|| StageTimings {
                    scan_ms,
                    assemble_ms,
                    model_ms,
                    classify_ms,
                    total_ms: ms_since(t_total),
                }),
            });
        }
        FrameRecord {
            frame: frame_id.to_string(),
            error: None,
            seats,
        }
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Options for a detect run.
#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    /// Worker threads; 0 means one per logical CPU.
    pub jobs: usize,
    /// Attach stage timings to the serialized records.
    pub include_timings: bool,
    /// Write per-frame overlays here.
    pub overlay_dir: Option<PathBuf>,
}

/// Builds the worker pool for a run.
pub fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if jobs > 0 {
        builder = builder.num_threads(jobs);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))
}

/// Expands an input path: a single image file, or a directory scanned for
/// image files in lexicographic path order.
pub fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(Error::io(
            input,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| {
                    matches!(
                        e.to_ascii_lowercase().as_str(),
                        "png" | "jpg" | "jpeg" | "bmp" | "pgm"
                    )
                })
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Processes the inputs and returns one record per frame, in input order.
/// Unreadable frames produce error records; processing continues.
pub fn run_detect(
    pipeline: &Pipeline,
    inputs: &[PathBuf],
    opts: &DetectOptions,
) -> Result<Vec<FrameRecord>> {
    if let Some(dir) = &opts.overlay_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let pool = worker_pool(opts.jobs)?;
    let records: Vec<FrameRecord> = pool.install(|| {
        inputs
            .par_iter()
            .map(|path| {
                let frame_id = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                match GrayImage::load(path) {
                    Ok(img) => {
                        let record = pipeline.process_frame(&frame_id, &img, opts.include_timings);
                        if let Some(dir) = &opts.overlay_dir {
                            let out = dir.join(format!(
                                "{}.png",
                                path.file_stem().unwrap_or_default().to_string_lossy()
                            ));
                            // Presentation only; never mutates the record.
                            let _ = overlay::save_detection_overlay(&img, &record, &out);
                        }
                        record
                    }
                    Err(e) => FrameRecord {
                        frame: frame_id,
                        error: Some(e.to_string()),
                        seats: Vec::new(),
                    },
                }
            })
            .collect()
    });
    Ok(records)
}

/// Serializes records as JSON lines.
pub fn write_jsonl(records: &[FrameRecord], mut out: impl Write) -> Result<()> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Eval(format!("record serialization: {e}")))?;
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io("<output>", e))?;
    }
    Ok(())
}

fn label_index(label: UsageLabel) -> usize {
    match label {
        UsageLabel::On => 0,
        UsageLabel::Under => 1,
        UsageLabel::Off => 2,
    }
}

const LABELS: [UsageLabel; 3] = [UsageLabel::On, UsageLabel::Under, UsageLabel::Off];

/// Distance from `p` to the polyline through `pts`.
pub(crate) fn point_polyline_distance(p: [f64; 2], pts: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    if pts.len() == 1 {
        let dx = p[0] - pts[0][0];
        let dy = p[1] - pts[0][1];
        return (dx * dx + dy * dy).sqrt();
    }
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let ab = [b[0] - a[0], b[1] - a[1]];
        let len_sq = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len_sq > 0.0 {
            (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dx = a[0] + t * ab[0] - p[0];
        let dy = a[1] + t * ab[1] - p[1];
        best = best.min(dx * dx + dy * dy);
    }
    best.sqrt()
}

/// Number of points the fitted curve is sampled at for RMSE computation.
const RMSE_CURVE_SAMPLES: usize = 256;

/// Root-mean-square distance from ground-truth centerline points to the
/// fitted curve. `only_occluded` restricts the statistic to occluded points.
fn curve_rmse(
    curve: &BeltCurve,
    centerline: &[[f64; 2]],
    occluded: &[bool],
    only_occluded: bool,
) -> Option<f64> {
    let fitted = sample_curve(curve, RMSE_CURVE_SAMPLES);
    let mut ss = 0.0;
    let mut n = 0usize;
    for (i, gt) in centerline.iter().enumerate() {
        if only_occluded && !occluded.get(i).copied().unwrap_or(false) {
            continue;
        }
        let d = point_polyline_distance(*gt, &fitted);
        ss += d * d;
        n += 1;
    }
    (n > 0).then(|| (ss / n as f64).sqrt())
}

/// Per-class tallies in the evaluation report.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClassStats {
    pub label: UsageLabel,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Aggregate evaluation over a rendered corpus.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    /// `confusion[truth][predicted]`, rows and columns ordered ON, UNDER, OFF.
    pub confusion: [[usize; 3]; 3],
    pub per_class: Vec<ClassStats>,
    /// Curve RMSE statistics over correctly classified ON/UNDER frames.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse_p95: Option<f64>,
    /// RMSE restricted to occluded centerline spans, where present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occluded_rmse_mean: Option<f64>,
    pub mean_latency_ms: f64,
    /// Human-readable floor violations; empty means the run passed.
    pub floor_failures: Vec<String>,
}

impl EvalReport {
    pub fn passed(&self) -> bool {
        self.floor_failures.is_empty()
    }
}

/// Runs the detector over every manifest entry and scores it against ground
/// truth. The corpus seat is `corpus.seat_index` (first seat without a
/// corpus block).
pub fn run_eval(pipeline: &Pipeline, manifest_path: &Path, jobs: usize) -> Result<EvalReport> {
    let manifest = synth::load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let seat_index = pipeline
        .config
        .corpus
        .as_ref()
        .map(|c| c.seat_index)
        .unwrap_or(0);
    if seat_index >= pipeline.seats.len() {
        return Err(Error::Eval(format!(
            "corpus seat index {seat_index} out of range"
        )));
    }
    eval_manifest(pipeline, &manifest, base, seat_index, jobs)
}

/// Evaluation core, shared with the acceptance suite (which feeds an
/// in-memory manifest).
pub fn eval_manifest(
    pipeline: &Pipeline,
    manifest: &Manifest,
    image_base: &Path,
    seat_index: usize,
    jobs: usize,
) -> Result<EvalReport> {
    struct FrameEval {
        truth: UsageLabel,
        predicted: UsageLabel,
        rmse: Option<f64>,
        occluded_rmse: Option<f64>,
        latency_ms: f64,
    }

    let pool = worker_pool(jobs)?;
    let evals: Vec<FrameEval> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| -> Result<FrameEval> {
                let path = image_base.join(&entry.image);
                let img = GrayImage::load(&path)?;
                let t0 = Instant::now();
                let record = pipeline.process_frame(&entry.image, &img, false);
                let latency_ms = ms_since(t0);
                if let Some(err) = record.error {
                    return Err(Error::Eval(format!("{}: {err}", entry.image)));
                }
                let seat = &record.seats[seat_index];
                let predicted = seat.usage.label;
                let correct = predicted == entry.label;
                let is_tp_curve = correct && entry.label != UsageLabel::Off;
                let rmse = match (&seat.curve, is_tp_curve) {
                    (Some(curve), true) => {
                        curve_rmse(curve, &entry.centerline, &entry.occluded, false)
                    }
                    _ => None,
                };
                let occluded_rmse = match (&seat.curve, is_tp_curve) {
                    (Some(curve), true) => {
                        curve_rmse(curve, &entry.centerline, &entry.occluded, true)
                    }
                    _ => None,
                };
                Ok(FrameEval {
                    truth: entry.label,
                    predicted,
                    rmse,
                    occluded_rmse,
                    latency_ms,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut confusion = [[0usize; 3]; 3];
    let mut latency_sum = 0.0;
    let mut rmses = Vec::new();
    let mut occluded_rmses = Vec::new();
    for e in &evals {
        confusion[label_index(e.truth)][label_index(e.predicted)] += 1;
        latency_sum += e.latency_ms;
        if let Some(r) = e.rmse {
            rmses.push(r);
        }
        if let Some(r) = e.occluded_rmse {
            occluded_rmses.push(r);
        }
    }
    let per_class: Vec<ClassStats> = LABELS
        .iter()
        .map(|&label| {
            let row = confusion[label_index(label)];
            let total: usize = row.iter().sum();
            let correct = row[label_index(label)];
            ClassStats {
                label,
                total,
                correct,
                accuracy: if total > 0 {
                    correct as f64 / total as f64
                } else {
                    1.0
                },
            }
        })
        .collect();

    rmses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rmse_mean = (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64);
    let rmse_p95 = (!rmses.is_empty()).then(|| {
        let idx = ((rmses.len() as f64 * 0.95).ceil() as usize).clamp(1, rmses.len()) - 1;
        rmses[idx]
    });
    let occluded_rmse_mean = (!occluded_rmses.is_empty())
        .then(|| occluded_rmses.iter().sum::<f64>() / occluded_rmses.len() as f64);

    let floors = &pipeline.config.eval;
    let mut floor_failures = Vec::new();
    for stats in &per_class {
        if stats.total > 0 && stats.accuracy < floors.min_class_accuracy {
            floor_failures.push(format!(
                "{} accuracy {:.4} below floor {:.4}",
                stats.label, stats.accuracy, floors.min_class_accuracy
            ));
        }
    }
    if let Some(mean) = rmse_mean {
        if mean > floors.max_rmse_mean {
            floor_failures.push(format!(
                "curve RMSE mean {mean:.3} px above ceiling {:.3}",
                floors.max_rmse_mean
            ));
        }
    }
    if let Some(p95) = rmse_p95 {
        if p95 > floors.max_rmse_p95 {
            floor_failures.push(format!(
                "curve RMSE p95 {p95:.3} px above ceiling {:.3}",
                floors.max_rmse_p95
            ));
        }
    }

    Ok(EvalReport {
        frames: evals.len(),
        confusion,
        per_class,
        rmse_mean,
        rmse_p95,
        occluded_rmse_mean,
        mean_latency_ms: if evals.is_empty() {
            0.0
        } else {
            latency_sum / evals.len() as f64
        },
        floor_failures,
    })
}
