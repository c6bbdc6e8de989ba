//! Seatbelt detection and usage recognition.
//!
//! A bottom-up pipeline over in-cabin camera frames:
//!
//! 1. **Predictor** — scans the image with a sliding window and decides per
//!    pixel and per direction whether the local patch looks like a belt
//!    (parallel edge structure, intensity range, surface smoothness).
//! 2. **Assembler** — projects the seat's 3D anchors through the calibrated
//!    camera, spans an elliptical location mask between them, and keeps only
//!    candidates inside it.
//! 3. **Shape** — fits a polynomial to the surviving candidates in the
//!    ellipse-local frame with MSAC outlier rejection and maps the curve back
//!    into the image.
//! 4. **Usage** — classifies the fitted curve as ON / UNDER / OFF from the
//!    angles between the image x-axis and rays from the bottom anchor.
//!
//! The `synth` module renders ground-truthed synthetic cabin scenes so every
//! stage is testable end to end, and `pipeline` wires the stages into the
//! batch frontend used by the `beltscan` binary.
//!
//! Numeric routines are generic over the scalar type (see [`float::Float`]);
//! type defaults instantiate everything at `f64`, which is what the pipeline
//! uses.

pub mod assembler;
pub mod config;
pub mod error;
pub mod float;
pub mod geometry;
pub mod image;
mod linalg;
pub mod overlay;
pub mod pipeline;
pub mod predictor;
pub mod shape;
pub mod synth;
pub mod usage;

pub use crate::error::{Error, Result};
pub use crate::float::Float;
pub use crate::image::GrayImage;

pub use crate::assembler::{LocationMask, SeatConfig};
pub use crate::geometry::{Anchor3D, CameraModel, EllipseFrame, Patch};
pub use crate::predictor::{CandidatePoint, DirectionResult, PredictorParams};
pub use crate::shape::{BeltCurve, MsacParams};
pub use crate::usage::{UsageLabel, UsageResult};
