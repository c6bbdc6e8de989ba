//! `beltscan` — seatbelt detection and usage recognition over image frames.
//!
//! Subcommands:
//!
//! * `detect` — run the pipeline over an image or a directory of frames,
//!   emitting one JSON line per frame and optional overlays.
//! * `eval` — score a detect run against a synthetic-corpus manifest,
//!   enforcing the configured accuracy and RMSE floors.
//! * `synth` — render the ground-truthed synthetic corpus described by the
//!   config's `[corpus]` block.
//! * `mask-preview` — draw the per-seat location ellipses over a frame for
//!   config debugging.
//!
//! Exit codes: 0 success, 1 config error, 2 eval-floor failure, 3 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beltscan_core::config::{load_config, PipelineConfig};
use beltscan_core::pipeline::{
    collect_inputs, run_detect, run_eval, write_jsonl, DetectOptions, Pipeline,
};
use beltscan_core::synth::{generate_corpus, write_corpus};
use beltscan_core::{overlay, Error, GrayImage};

#[derive(Parser)]
#[command(name = "beltscan", version, about = "Seatbelt detection and usage recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long, env = "BELTSCAN_CONFIG")]
    config: PathBuf,
    /// Worker threads (0 = one per CPU core).
    #[arg(long, env = "BELTSCAN_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Override the MSAC random seed from the config.
    #[arg(long, env = "BELTSCAN_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Detect belts and classify usage over frames.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Input image file or directory of frames.
        #[arg(long, env = "BELTSCAN_INPUT")]
        input: PathBuf,
        /// JSON-lines output path (defaults to the config's output.json, then
        /// stdout).
        #[arg(long, env = "BELTSCAN_OUT")]
        out: Option<PathBuf>,
        /// Directory for rendered overlays (green curve, red label).
        #[arg(long, env = "BELTSCAN_OVERLAY_DIR")]
        overlay_dir: Option<PathBuf>,
        /// Attach per-stage timings to each record (breaks byte-for-byte
        /// reproducibility of the output).
        #[arg(long)]
        timings: bool,
    },
    /// Score the detector against a synthetic-corpus manifest.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Manifest produced by `synth`.
        #[arg(long)]
        manifest: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long, env = "BELTSCAN_OUT")]
        out: Option<PathBuf>,
    },
    /// Render the synthetic corpus described by the config's [corpus] block.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for images and manifest.json.
        #[arg(long, env = "BELTSCAN_OUT")]
        out: PathBuf,
    },
    /// Draw the per-seat location-mask ellipses for config debugging.
    MaskPreview {
        #[command(flatten)]
        common: CommonArgs,
        /// Frame to draw over; a blank canvas is used when omitted.
        #[arg(long, env = "BELTSCAN_INPUT")]
        input: Option<PathBuf>,
        /// Output PNG path.
        #[arg(long, env = "BELTSCAN_OUT")]
        out: PathBuf,
    },
}

/// Exit codes promised by the interface contract.
const EXIT_CONFIG: u8 = 1;
const EXIT_EVAL_FLOOR: u8 = 2;
const EXIT_IO: u8 = 3;

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Image { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn load_pipeline(common: &CommonArgs) -> Result<Pipeline, Error> {
    let mut config: PipelineConfig = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.msac.seed = seed;
    }
    Pipeline::new(config)
}

fn run() -> Result<(), (u8, String)> {
    let cli = Cli::parse();
    match cli.command {
        Command::Detect {
            common,
            input,
            out,
            overlay_dir,
            timings,
        } => {
            let pipeline =
                load_pipeline(&common).map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let inputs =
                collect_inputs(&input).map_err(|e| (EXIT_IO, e.to_string()))?;
            let opts = DetectOptions {
                jobs: common.jobs,
                include_timings: timings,
                overlay_dir: overlay_dir.or_else(|| pipeline.config.output.overlay_dir.clone()),
            };
            let records = run_detect(&pipeline, &inputs, &opts)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let out_path = out.or_else(|| pipeline.config.output.json.clone());
            match out_path {
                Some(path) => {
                    let file = std::fs::File::create(&path)
                        .map_err(|e| (EXIT_IO, format!("{}: {e}", path.display())))?;
                    write_jsonl(&records, std::io::BufWriter::new(file))
                        .map_err(|e| (EXIT_IO, e.to_string()))?;
                }
                None => {
                    let stdout = std::io::stdout();
                    write_jsonl(&records, stdout.lock())
                        .map_err(|e| (EXIT_IO, e.to_string()))?;
                }
            }
            Ok(())
        }
        Command::Eval {
            common,
            manifest,
            out,
        } => {
            let pipeline =
                load_pipeline(&common).map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let report = run_eval(&pipeline, &manifest, common.jobs)
                .map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            match out {
                Some(path) => std::fs::write(&path, json.as_bytes())
                    .map_err(|e| (EXIT_IO, format!("{}: {e}", path.display())))?,
                None => println!("{json}"),
            }
            if !report.passed() {
                let mut msg = String::from("evaluation floors not met:");
                for f in &report.floor_failures {
                    msg.push_str("\n  ");
                    msg.push_str(f);
                }
                return Err((EXIT_EVAL_FLOOR, msg));
            }
            Ok(())
        }
        Command::Synth { common, out } => {
            let pipeline =
                load_pipeline(&common).map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let mut corpus = pipeline
                .config
                .corpus
                .clone()
                .ok_or_else(|| (EXIT_CONFIG, "config has no [corpus] block".to_string()))?;
            if let Some(seed) = common.seed {
                corpus.seed = seed;
            }
            let frame = pipeline.seats[corpus.seat_index].mask.frame;
            let scenes = generate_corpus(&corpus, &frame)
                .map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            let manifest = write_corpus(&scenes, &out)
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            eprintln!(
                "rendered {} scenes into {} (manifest: {})",
                scenes.len(),
                out.display(),
                manifest.display()
            );
            Ok(())
        }
        Command::MaskPreview { common, input, out } => {
            let pipeline =
                load_pipeline(&common).map_err(|e| (exit_code_for(&e), e.to_string()))?;
            let img = match input {
                Some(path) => GrayImage::load(&path).map_err(|e| (EXIT_IO, e.to_string()))?,
                None => blank_canvas(&pipeline),
            };
            let frames: Vec<(&str, &beltscan_core::EllipseFrame)> = pipeline
                .seats
                .iter()
                .map(|s| (s.config.name.as_str(), &s.mask.frame))
                .collect();
            overlay::save_mask_preview(&img, &frames, &out)
                .map_err(|e| (EXIT_IO, e.to_string()))?;
            Ok(())
        }
    }
}

/// Canvas sized from the corpus block when present, else a default frame
/// comfortably containing the principal point.
fn blank_canvas(pipeline: &Pipeline) -> GrayImage {
    let (w, h) = pipeline
        .config
        .corpus
        .as_ref()
        .map(|c| (c.width, c.height))
        .unwrap_or((
            (pipeline.config.camera.cx * 2.0) as u32,
            (pipeline.config.camera.cy * 2.0) as u32,
        ));
    GrayImage::filled(w.max(64), h.max(64), 32)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            let _ = writeln!(std::io::stderr(), "beltscan: {msg}");
            ExitCode::from(code)
        }
    }
}
