//! UV-map visualization.
//!
//! Foreground pixels are colored `R = round(255 u)`, `G = round(255 v)`,
//! `B = 128`; background is black. UVs are clamped to `[0, 1]` first. The
//! mapping is injective on UVs that differ by at least 1/255 in one channel,
//! and the output bytes depend only on the map.

use std::path::Path;

use crate::assign::{UvMap, BACKGROUND};
use crate::error::Result;
use crate::io::{encode_png, write_bytes};

pub const FOREGROUND_BLUE: u8 = 128;

pub fn uv_color(uv: [f64; 2]) -> [u8; 3] {
    let ch = |t: f64| (t.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(uv[0]), ch(uv[1]), FOREGROUND_BLUE]
}

/// Row-major RGB8 pixels of the visualization.
pub fn render_rgb(uvmap: &UvMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(uvmap.width * uvmap.height * 3);
    for (v, uv) in uvmap.vertex_of.iter().zip(&uvmap.uv_of) {
        if *v == BACKGROUND {
            out.extend_from_slice(&[0, 0, 0]);
        } else {
            out.extend_from_slice(&uv_color(*uv));
        }
    }
    out
}

pub fn render_png(uvmap: &UvMap) -> Result<Vec<u8>> {
    encode_png(uvmap.width, uvmap.height, png::ColorType::Rgb, &render_rgb(uvmap))
}

pub fn render_uvmap(uvmap: &UvMap, out_path: &Path) -> Result<()> {
    write_bytes(out_path, &render_png(uvmap)?)
}
