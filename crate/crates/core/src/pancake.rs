//! "Pancake" view: azimuthal-equidistant projection of electrode positions
//! onto a plane, for quick visual QC of a labeled set.
//!
//! Directions are taken from a center point (default: centroid of the
//! electrodes) in a RAS-style frame: +x right, +y anterior, +z superior.
//! The polar angle from +z maps to radius, so the vertex lands at the
//! origin and the projection preserves angular distance from the vertex.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::volume::WorldPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct PancakePoint {
    pub label: String,
    /// Rightward coordinate (radians of polar angle).
    pub u: f64,
    /// Anterior coordinate (radians of polar angle).
    pub v: f64,
}

/// Project labeled points. `center` defaults to the centroid when `None`.
pub fn pancake_project(
    points: &[(String, WorldPoint)],
    center: Option<WorldPoint>,
) -> Result<Vec<PancakePoint>> {
    if points.is_empty() {
        return Err(Error::InvalidParams("no points to project".to_string()));
    }
    let center = center.map(|c| c.to_vec()).unwrap_or_else(|| {
        points.iter().map(|(_, p)| p.to_vec()).sum::<Vector3<f64>>() / points.len() as f64
    });
    let mut out = Vec::with_capacity(points.len());
    for (label, p) in points {
        let d = p.to_vec() - center;
        let norm = d.norm();
        if norm < 1e-9 {
            return Err(Error::DegeneratePoint(label.clone()));
        }
        let d = d / norm;
        let theta = d.z.clamp(-1.0, 1.0).acos();
        // Horizontal component may vanish at the exact vertex; there the
        // azimuth is irrelevant because theta = 0.
        let phi = if theta < 1e-12 {
            0.0
        } else {
            d.y.atan2(d.x)
        };
        out.push(PancakePoint {
            label: label.clone(),
            u: theta * phi.cos(),
            v: theta * phi.sin(),
        });
    }
    Ok(out)
}

/// CSV: `label,u,v`.
pub fn pancake_to_csv(points: &[PancakePoint]) -> String {
    let mut s = String::from("label,u,v\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.label, p.u, p.v));
    }
    s
}

// 3x5 bitmap glyphs, row-major top to bottom, for A-Z and 0-9.
const GLYPH_W: usize = 3;

fn glyph(c: char) -> [u8; 5] {
    // Each byte holds a 3-bit row, MSB = left pixel.
    match c.to_ascii_uppercase() {
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'C' => [0b011, 0b100, 0b100, 0b100, 0b011],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'F' => [0b111, 0b100, 0b110, 0b100, 0b100],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'I' => [0b111, 0b010, 0b010, 0b010, 0b111],
        'J' => [0b001, 0b001, 0b001, 0b101, 0b010],
        'K' => [0b101, 0b110, 0b100, 0b110, 0b101],
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'N' => [0b101, 0b111, 0b111, 0b111, 0b101],
        'O' => [0b010, 0b101, 0b101, 0b101, 0b010],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'Q' => [0b010, 0b101, 0b101, 0b110, 0b011],
        'R' => [0b110, 0b101, 0b110, 0b110, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        'U' => [0b101, 0b101, 0b101, 0b101, 0b111],
        'V' => [0b101, 0b101, 0b101, 0b101, 0b010],
        'W' => [0b101, 0b101, 0b111, 0b111, 0b101],
        'X' => [0b101, 0b101, 0b010, 0b101, 0b101],
        'Y' => [0b101, 0b101, 0b010, 0b010, 0b010],
        'Z' => [0b111, 0b001, 0b010, 0b100, 0b111],
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b110, 0b001, 0b010, 0b100, 0b111],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b110, 0b001, 0b110],
        '6' => [0b011, 0b100, 0b110, 0b101, 0b010],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b010, 0b101, 0b010, 0b101, 0b010],
        '9' => [0b010, 0b101, 0b011, 0b001, 0b110],
        _ => [0b000, 0b000, 0b000, 0b000, 0b000],
    }
}

fn draw_text(img: &mut [u8], w: usize, h: usize, x0: i64, y0: i64, text: &str, value: u8) {
    for (ci, c) in text.chars().enumerate() {
        let g = glyph(c);
        let gx0 = x0 + (ci * (GLYPH_W + 1)) as i64;
        for (ry, row) in g.iter().enumerate() {
            for rx in 0..GLYPH_W {
                if row & (1 << (GLYPH_W - 1 - rx)) != 0 {
                    let x = gx0 + rx as i64;
                    let y = y0 + ry as i64;
                    if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                        img[y as usize * w + x as usize] = value;
                    }
                }
            }
        }
    }
}

fn draw_disc(img: &mut [u8], w: usize, h: usize, cx: i64, cy: i64, r: i64, value: u8) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                let x = cx + dx;
                let y = cy + dy;
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    img[y as usize * w + x as usize] = value;
                }
            }
        }
    }
}

/// Render the projection to a binary PGM (P5) raster with labels.
/// +u is drawn to the right, +v (anterior) upward.
pub fn render_pancake_pgm(points: &[PancakePoint], size: usize) -> Result<Vec<u8>> {
    if points.is_empty() {
        return Err(Error::InvalidParams("no points to render".to_string()));
    }
    if size < 64 {
        return Err(Error::InvalidParams("raster size must be >= 64".to_string()));
    }
    let max_r = points
        .iter()
        .map(|p| (p.u * p.u + p.v * p.v).sqrt())
        .fold(0.0f64, f64::max)
        .max(1e-6);
    let scale = (size as f64 / 2.0 - 20.0) / max_r;
    let half = size as f64 / 2.0;
    let mut img = vec![255u8; size * size];
    for p in points {
        let x = (half + p.u * scale).round() as i64;
        let y = (half - p.v * scale).round() as i64;
        draw_disc(&mut img, size, size, x, y, 2, 0);
        draw_text(&mut img, size, size, x + 4, y - 2, &p.label, 0);
    }
    let mut out = format!("P5\n{size} {size}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    Ok(out)
}

pub fn write_pancake_pgm(
    points: &[PancakePoint],
    size: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = render_pancake_pgm(points, size)?;
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::IoFailure {
        path: path.as_ref().display().to_string(),
        source: e,
    })
}
