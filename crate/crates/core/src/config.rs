//! Pipeline configuration and calibration files (TOML).
//!
//! Two documents drive a run:
//!
//! * a **calibration file** with the camera intrinsics and extrinsics,
//!   referenced by path from the pipeline config and parsed once at startup;
//! * a **pipeline config** with one or more `[[seat]]` blocks, predictor and
//!   MSAC tunables, output options, evaluation floors, and an optional
//!   `[corpus]` block for the synthetic generator.
//!
//! The README documents both schemas field by field.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::assembler::SeatConfig;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::predictor::PredictorParams;
use crate::shape::MsacParams;
use crate::synth::CorpusSpec;

/// On-disk calibration schema: scalar intrinsics, `r` as 9 row-major rotation
/// entries, `t` as 3 translation entries in millimeters.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    r: Vec<f64>,
    t: Vec<f64>,
}

/// Parses and validates a calibration file.
pub fn load_calibration(path: &Path) -> Result<CameraModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: CalibrationFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if raw.r.len() != 9 {
        return Err(Error::Config(format!(
            "{}: r must hold 9 row-major entries, got {}",
            path.display(),
            raw.r.len()
        )));
    }
    if raw.t.len() != 3 {
        return Err(Error::Config(format!(
            "{}: t must hold 3 entries, got {}",
            path.display(),
            raw.t.len()
        )));
    }
    let r = [
        [raw.r[0], raw.r[1], raw.r[2]],
        [raw.r[3], raw.r[4], raw.r[5]],
        [raw.r[6], raw.r[7], raw.r[8]],
    ];
    CameraModel::new(raw.fx, raw.fy, raw.cx, raw.cy, r, [raw.t[0], raw.t[1], raw.t[2]])
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Output sinks for `detect`.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputOptions {
    /// JSON-lines results path; `detect` falls back to stdout without it.
    pub json: Option<PathBuf>,
    /// Directory for rendered overlays; enables overlay output.
    pub overlay_dir: Option<PathBuf>,
}

fn default_min_class_accuracy() -> f64 {
    0.95
}

fn default_max_rmse_mean() -> f64 {
    2.0
}

fn default_max_rmse_p95() -> f64 {
    4.0
}

/// Floors `eval` enforces; falling short exits with the eval-failure code.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalFloors {
    pub min_class_accuracy: f64,
    /// Ceiling on the mean per-frame curve RMSE, pixels.
    pub max_rmse_mean: f64,
    /// Ceiling on the 95th-percentile curve RMSE, pixels.
    pub max_rmse_p95: f64,
}

impl Default for EvalFloors {
    fn default() -> Self {
        Self {
            min_class_accuracy: default_min_class_accuracy(),
            max_rmse_mean: default_max_rmse_mean(),
            max_rmse_p95: default_max_rmse_p95(),
        }
    }
}

fn default_poly_order() -> usize {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    /// Path to the calibration file, relative to this config file.
    calibration: PathBuf,
    #[serde(default)]
    predictor: PredictorParams,
    #[serde(default)]
    msac: MsacParams,
    /// Polynomial order of the belt model.
    #[serde(default = "default_poly_order")]
    poly_order: usize,
    #[serde(rename = "seat")]
    seats: Vec<SeatConfig>,
    #[serde(default)]
    output: OutputOptions,
    #[serde(default)]
    eval: EvalFloors,
    corpus: Option<CorpusSpec>,
}

/// Fully resolved, validated pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub camera: CameraModel,
    pub seats: Vec<SeatConfig>,
    pub predictor: PredictorParams,
    pub msac: MsacParams,
    pub poly_order: usize,
    pub output: OutputOptions,
    pub eval: EvalFloors,
    pub corpus: Option<CorpusSpec>,
}

/// Loads a pipeline config, pulling in and validating its calibration file.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let calib_path = if raw.calibration.is_absolute() {
        raw.calibration.clone()
    } else {
        base.join(&raw.calibration)
    };
    let camera = load_calibration(&calib_path)?;

    let mut predictor = raw.predictor;
    predictor.resolve_weights();
    predictor
        .validate()
        .map_err(|e| Error::Config(format!("[predictor] {e}")))?;
    raw.msac
        .validate()
        .map_err(|e| Error::Config(format!("[msac] {e}")))?;
    if raw.poly_order == 0 || raw.poly_order > 10 {
        return Err(Error::Config(format!(
            "poly_order {} out of the sensible 1..=10 range",
            raw.poly_order
        )));
    }
    if raw.seats.is_empty() {
        return Err(Error::Config("at least one [[seat]] block required".into()));
    }
    let mut seats = raw.seats;
    for (i, seat) in seats.iter_mut().enumerate() {
        if seat.name.is_empty() {
            seat.name = format!("seat{i}");
        }
    }
    {
        let mut names: Vec<&str> = seats.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != seats.len() {
            return Err(Error::Config("seat names must be unique".into()));
        }
    }
    for seat in &seats {
        seat.validate(raw.poly_order)?;
    }
    if let Some(corpus) = &raw.corpus {
        if corpus.seat_index >= seats.len() {
            return Err(Error::Config(format!(
                "[corpus] seat_index {} but only {} seats configured",
                corpus.seat_index,
                seats.len()
            )));
        }
        if corpus.count_per_class == 0 {
            return Err(Error::Config("[corpus] count_per_class must be positive".into()));
        }
    }
    Ok(PipelineConfig {
        camera,
        seats,
        predictor,
        msac: raw.msac,
        poly_order: raw.poly_order,
        output: raw.output,
        eval: raw.eval,
        corpus: raw.corpus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    const CALIB: &str = r#"
fx = 520.0
fy = 515.0
cx = 320.0
cy = 240.0
r = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
t = [0.0, 0.0, 0.0]
"#;

    const CONFIG: &str = r#"
calibration = "calib.toml"
poly_order = 4

[predictor]
k = 7
stride = 2

[msac]
iterations = 300
seed = 11

[[seat]]
name = "driver"
anchor_tr = { x = 300.0, y = -250.0, z = 1400.0 }
anchor_bl = { x = -280.0, y = 300.0, z = 1500.0 }
d_minor_ratio = 0.8
gamma_pre = 0.12
angle_threshold_deg = 30.0
min_candidates = 20

[output]
json = "out.jsonl"

[eval]
min_class_accuracy = 0.9
"#;

    #[test]
    fn loads_a_complete_config() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "calib.toml", CALIB);
        let cfg_path = write_file(dir.path(), "pipeline.toml", CONFIG);
        let cfg = load_config(&cfg_path).unwrap();
        assert_eq!(cfg.camera.fx, 520.0);
        assert_eq!(cfg.predictor.k, 7);
        assert_eq!(cfg.predictor.weights.len(), 8);
        assert_eq!(cfg.msac.iterations, 300);
        assert_eq!(cfg.seats[0].name, "driver");
        assert_eq!(cfg.eval.min_class_accuracy, 0.9);
        assert_eq!(cfg.eval.max_rmse_mean, 2.0);
        assert_eq!(cfg.output.json.as_deref(), Some(Path::new("out.jsonl")));
    }

    #[test]
    fn missing_calibration_file_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = write_file(dir.path(), "pipeline.toml", CONFIG);
        let err = load_config(&cfg_path).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn bad_rotation_is_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let calib = CALIB.replace("r = [1.0,", "r = [2.0,");
        write_file(dir.path(), "calib.toml", &calib);
        let cfg_path = write_file(dir.path(), "pipeline.toml", CONFIG);
        assert!(matches!(load_config(&cfg_path), Err(Error::Config(_))));
    }

    #[test]
    fn wrong_rotation_arity_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let calib = CALIB.replace(
            "r = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]",
            "r = [1.0, 0.0, 0.0, 1.0]",
        );
        write_file(dir.path(), "calib.toml", &calib);
        let cfg_path = write_file(dir.path(), "pipeline.toml", CONFIG);
        assert!(matches!(load_config(&cfg_path), Err(Error::Config(_))));
    }

    #[test]
    fn seats_are_required() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "calib.toml", CALIB);
        let no_seat: String = CONFIG
            .lines()
            .take_while(|l| !l.starts_with("[[seat]]"))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg_path = write_file(dir.path(), "pipeline.toml", &no_seat);
        assert!(load_config(&cfg_path).is_err());
    }

    #[test]
    fn unknown_keys_are_flagged() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "calib.toml", CALIB);
        let cfg = CONFIG.replace("[msac]", "[msac]\nbogus_knob = 3");
        let cfg_path = write_file(dir.path(), "pipeline.toml", &cfg);
        assert!(matches!(load_config(&cfg_path), Err(Error::Config(_))));
    }

    #[test]
    fn default_seat_names_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        write_file(dir.path(), "calib.toml", CALIB);
        let cfg = CONFIG.replace("name = \"driver\"\n", "");
        let cfg_path = write_file(dir.path(), "pipeline.toml", &cfg);
        let cfg = load_config(&cfg_path).unwrap();
        assert_eq!(cfg.seats[0].name, "seat0");
    }
}
