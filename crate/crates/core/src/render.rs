//! Identity-coloured box overlays for tracker output.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::mot_io::{group_by_frame, BoundingBox, DetectionRecord, Sequence};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image error for {path}: {message}")]
    Image { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const BOX_THICKNESS: u32 = 2;
const GOLDEN_FRACTION: f64 = 0.618_033_988_749_895;

/// Hue of an identity: golden-ratio steps around the colour wheel, so nearby
/// identities land far apart.
pub fn identity_hue(id: i64) -> f64 {
    (id as f64 * GOLDEN_FRACTION).rem_euclid(1.0)
}

pub fn identity_color(id: i64) -> [u8; 3] {
    hsv_to_rgb(identity_hue(id), 0.85, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let sector = h * 6.0;
    let i = sector.floor();
    let f = sector - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

/// Rectangle outline, clipped to the image, drawn inward from the box edge.
pub fn draw_box(img: &mut RgbImage, bbox: &BoundingBox, color: [u8; 3]) {
    let x0 = bbox.left.round() as i64;
    let y0 = bbox.top.round() as i64;
    let x1 = bbox.right().round() as i64 - 1;
    let y1 = bbox.bottom().round() as i64 - 1;
    for t in 0..BOX_THICKNESS as i64 {
        for x in x0..=x1 {
            put(img, x, y0 + t, color);
            put(img, x, y1 - t, color);
        }
        for y in y0..=y1 {
            put(img, x0 + t, y, color);
            put(img, x1 - t, y, color);
        }
    }
}

/// 3x5 digit glyphs, one row per entry, most significant bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Writes `id` in the box's top-left corner on a filled tag of its colour.
pub fn draw_label(img: &mut RgbImage, bbox: &BoundingBox, id: i64, color: [u8; 3]) {
    let text = id.to_string();
    let scale = 2i64;
    let (x0, y0) = (bbox.left.round() as i64, bbox.top.round() as i64);
    let width = text.len() as i64 * 4 * scale + scale;
    let height = 5 * scale + 2 * scale;
    for y in 0..height {
        for x in 0..width {
            put(img, x0 + x, y0 + y, color);
        }
    }
    let ink = if color.iter().map(|&c| c as u32).sum::<u32>() > 380 { [0, 0, 0] } else { [255, 255, 255] };
    for (k, ch) in text.bytes().enumerate() {
        let glyph = match ch {
            b'0'..=b'9' => DIGITS[(ch - b'0') as usize],
            _ => continue,
        };
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x0 + scale + k as i64 * 4 * scale + col * scale + dx;
                            let y = y0 + scale + row as i64 * scale + dy;
                            put(img, x, y, ink);
                        }
                    }
                }
            }
        }
    }
}

/// Writes one image per sequence frame into `out_dir`. Frames without
/// records are copied byte for byte. Returns the number of annotated frames.
pub fn render_overlay(seq: &Sequence, records: &[DetectionRecord], out_dir: &Path) -> Result<usize, RenderError> {
    fs::create_dir_all(out_dir)?;
    let by_frame = group_by_frame(records);
    let mut annotated = 0;
    for (i, src) in seq.frames.iter().enumerate() {
        let frame = i as i64 + 1;
        let name = src.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        let dst = out_dir.join(&name);
        let Some(recs) = by_frame.get(&frame) else {
            fs::copy(src, &dst)?;
            continue;
        };
        let err = |e: image::ImageError| RenderError::Image {
            path: src.display().to_string(),
            message: e.to_string(),
        };
        let mut img = image::open(src).map_err(err)?.to_rgb8();
        let mut sorted = recs.clone();
        sorted.sort_by_key(|r| r.identity);
        for r in &sorted {
            let id = r.identity.unwrap_or(0);
            draw_box(&mut img, &r.bbox, identity_color(id));
        }
        for r in &sorted {
            if let Some(id) = r.identity {
                draw_label(&mut img, &r.bbox, id, identity_color(id));
            }
        }
        img.save(&dst).map_err(|e| RenderError::Image {
            path: dst.display().to_string(),
            message: e.to_string(),
        })?;
        annotated += 1;
    }
    Ok(annotated)
}
