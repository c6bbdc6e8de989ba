//! Presentation-only rendering: detection overlays and mask previews.
//!
//! Overlays burn the fitted curve in green with the usage label in red above
//! it. Rendering never feeds back into results; it is a pure sink.

use std::path::Path;

use ::image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::{local_to_image, EllipseFrame};
use crate::image::GrayImage;
use crate::pipeline::FrameRecord;
use crate::shape::sample_curve;

const GREEN: Rgb<u8> = Rgb([40, 230, 70]);
const RED: Rgb<u8> = Rgb([235, 40, 40]);
const MASK_COLOR: Rgb<u8> = Rgb([250, 210, 60]);
const ANCHOR_COLOR: Rgb<u8> = Rgb([80, 160, 255]);

/// 5x7 glyphs for the usage labels, one row per byte, MSB-left.
fn glyph(c: char) -> Option<[u8; 7]> {
    let rows = match c {
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'N' => [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'D' => [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110],
        'E' => [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000, 0b11111],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'F' => [0b11111, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000, 0b10000],
        ' ' => [0; 7],
        _ => return None,
    };
    Some(rows)
}

fn to_rgb(img: &GrayImage) -> RgbImage {
    let mut rgb = RgbImage::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y);
            rgb.put_pixel(x, y, Rgb([v, v, v]));
        }
    }
    rgb
}

fn put_disc(rgb: &mut RgbImage, cx: f64, cy: f64, radius: i64, color: Rgb<u8>) {
    let x0 = cx.round() as i64;
    let y0 = cy.round() as i64;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy > radius * radius {
                continue;
            }
            let (x, y) = (x0 + dx, y0 + dy);
            if x >= 0 && y >= 0 && (x as u32) < rgb.width() && (y as u32) < rgb.height() {
                rgb.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

fn draw_polyline(rgb: &mut RgbImage, pts: &[[f64; 2]], color: Rgb<u8>) {
    for p in pts {
        put_disc(rgb, p[0], p[1], 1, color);
    }
}

/// Draws `text` with the embedded font, top-left corner at `(x, y)`.
fn draw_text(rgb: &mut RgbImage, text: &str, x: i64, y: i64, scale: u32, color: Rgb<u8>) {
    let mut pen_x = x;
    for c in text.chars() {
        let Some(rows) = glyph(c) else {
            pen_x += 6 * scale as i64;
            continue;
        };
        for (ry, row) in rows.iter().enumerate() {
            for rx in 0..5 {
                if row & (0b10000 >> rx) == 0 {
                    continue;
                }
                for sy in 0..scale {
                    for sx in 0..scale {
                        let px = pen_x + (rx as i64) * scale as i64 + sx as i64;
                        let py = y + (ry as i64) * scale as i64 + sy as i64;
                        if px >= 0
                            && py >= 0
                            && (px as u32) < rgb.width()
                            && (py as u32) < rgb.height()
                        {
                            rgb.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
        pen_x += 6 * scale as i64;
    }
}

fn save_rgb(rgb: &RgbImage, path: &Path) -> Result<()> {
    rgb.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Renders the frame's fitted curves (green) and usage labels (red, above
/// each curve) over the grayscale input.
pub fn save_detection_overlay(
    img: &GrayImage,
    record: &FrameRecord,
    path: &Path,
) -> Result<()> {
    let mut rgb = to_rgb(img);
    for seat in &record.seats {
        let scale = 2u32;
        let (label_x, label_y) = match &seat.curve {
            Some(curve) => {
                let count = (curve.frame.d_major as usize).max(64);
                let pts = sample_curve(curve, count);
                draw_polyline(&mut rgb, &pts, GREEN);
                let top = pts
                    .iter()
                    .min_by(|a, b| a[1].partial_cmp(&b[1]).unwrap())
                    .copied()
                    .unwrap_or([8.0, 24.0]);
                (top[0] as i64 - 15, top[1] as i64 - 7 * scale as i64 - 6)
            }
            None => (8, 8),
        };
        let text = seat.usage.label.to_string();
        let width = 6 * scale as i64 * text.len() as i64;
        let x = label_x.clamp(0, (img.width() as i64 - width).max(0));
        let y = label_y.clamp(0, img.height() as i64 - 7 * scale as i64);
        draw_text(&mut rgb, &text, x, y, scale, RED);
    }
    save_rgb(&rgb, path)
}

/// Renders the location-mask ellipses (and anchor endpoints) over a frame for
/// config debugging.
pub fn save_mask_preview(
    img: &GrayImage,
    frames: &[(&str, &EllipseFrame)],
    path: &Path,
) -> Result<()> {
    let mut rgb = to_rgb(img);
    for (_, frame) in frames {
        let steps = 1440;
        let a = frame.d_major / 2.0;
        let b = frame.d_minor / 2.0;
        for i in 0..steps {
            let t = i as f64 / steps as f64 * std::f64::consts::TAU;
            let p = local_to_image(frame, [a * t.cos(), b * t.sin()]);
            put_disc(&mut rgb, p[0], p[1], 0, MASK_COLOR);
        }
        for end in [[-a, 0.0], [a, 0.0]] {
            let p = local_to_image(frame, end);
            put_disc(&mut rgb, p[0], p[1], 2, ANCHOR_COLOR);
        }
    }
    save_rgb(&rgb, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::SeatResult;
    use crate::usage::{UsageLabel, UsageResult};

    #[test]
    fn overlay_and_preview_write_png_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::filled(160, 120, 128);
        let frame = EllipseFrame::new([80.0, 60.0], 0.4, 100.0, 60.0).unwrap();
        let record = FrameRecord {
            frame: "t".into(),
            error: None,
            seats: vec![SeatResult {
                seat: "driver".into(),
                usage: UsageResult {
                    label: UsageLabel::On,
                    median_angle_deg: Some(44.0),
                    confidence: 0.9,
                },
                curve: Some(crate::shape::BeltCurve {
                    coeffs: vec![0.0, 0.1, 0.001],
                    order: 2,
                    inlier_count: 50,
                    inlier_ratio: 0.9,
                    rms_residual: 0.3,
                    frame,
                }),
                candidates_before: 100,
                candidates_after: 60,
                timing_ms: None,
            }],
        };
        let overlay_path = dir.path().join("overlay.png");
        save_detection_overlay(&img, &record, &overlay_path).unwrap();
        assert!(overlay_path.exists());

        let preview_path = dir.path().join("mask.png");
        save_mask_preview(&img, &[("driver", &frame)], &preview_path).unwrap();
        assert!(preview_path.exists());

        // Re-load and confirm colored pixels landed.
        let reloaded = ::image::open(&overlay_path).unwrap().to_rgb8();
        let has_green = reloaded.pixels().any(|p| p.0 == [40, 230, 70]);
        let has_red = reloaded.pixels().any(|p| p.0 == [235, 40, 40]);
        assert!(has_green && has_red);
    }
}
