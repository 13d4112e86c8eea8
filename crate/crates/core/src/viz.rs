//! Plot and montage rendering: learning curves and per-layer bar charts as
//! self-contained SVG, probe-weight montages as PNG. Everything is written
//! with fixed formatting so identical inputs give identical bytes.

use std::path::Path;

use crate::color::{hue_distance, rgb_to_hsv, srgb_encode};
use crate::error::{Error, Result};
use crate::render::Image8;
use crate::scene::CubeColor;
use crate::tensor::Tensor;

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 420.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

const SERIES_COLORS: [&str; 6] = [
    "#5e3c99", "#e66101", "#b2182b", "#2166ac", "#4dac26", "#878787",
];

/// One plotted series: points (x, mean) with an optional sd envelope.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub sd: Vec<f64>,
}

/// Line plot with sd envelopes and an optional horizontal reference line.
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub reference: Option<(String, f64)>,
    pub y_range: (f64, f64),
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let x_min = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .fold(f64::INFINITY, f64::min)
            .min(0.0);
        let x_max = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .fold(1.0, f64::max);
        let (y_min, y_max) = self.y_range;
        let iw = PLOT_W - MARGIN_L - MARGIN_R;
        let ih = PLOT_H - MARGIN_T - MARGIN_B;
        let sx = move |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min).max(1e-12) * iw;
        let sy = move |y: f64| MARGIN_T + (1.0 - (y - y_min) / (y_max - y_min).max(1e-12)) * ih;

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        svg.push_str(&format!(
            "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>\n",
            MARGIN_L,
            xml_escape(&self.title)
        ));

        // Axes and ticks.
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(MARGIN_L),
            fmt(MARGIN_T),
            fmt(MARGIN_L),
            fmt(PLOT_H - MARGIN_B)
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            fmt(MARGIN_L),
            fmt(PLOT_H - MARGIN_B),
            fmt(PLOT_W - MARGIN_R),
            fmt(PLOT_H - MARGIN_B)
        ));
        for i in 0..=5 {
            let y = y_min + (y_max - y_min) * i as f64 / 5.0;
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                fmt(MARGIN_L - 6.0),
                fmt(sy(y) + 4.0),
                fmt(y)
            ));
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
                fmt(MARGIN_L),
                fmt(sy(y)),
                fmt(PLOT_W - MARGIN_R),
                fmt(sy(y))
            ));
            let x = x_min + (x_max - x_min) * i as f64 / 5.0;
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                fmt(sx(x)),
                fmt(PLOT_H - MARGIN_B + 18.0),
                fmt(x)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(MARGIN_L + iw / 2.0),
            fmt(PLOT_H - 12.0),
            xml_escape(&self.x_label)
        ));
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            fmt(MARGIN_T + ih / 2.0),
            fmt(MARGIN_T + ih / 2.0),
            xml_escape(&self.y_label)
        ));

        // Envelopes first, lines on top.
        for (si, s) in self.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            if s.sd.iter().any(|&v| v > 0.0) {
                let mut pts = String::new();
                for (p, sd) in s.points.iter().zip(&s.sd) {
                    pts.push_str(&format!("{},{} ", fmt(sx(p.0)), fmt(sy(p.1 + sd))));
                }
                for (p, sd) in s.points.iter().zip(&s.sd).rev() {
                    pts.push_str(&format!("{},{} ", fmt(sx(p.0)), fmt(sy(p.1 - sd))));
                }
                svg.push_str(&format!(
                    "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.15\"/>\n",
                    pts.trim_end()
                ));
            }
        }
        for (si, s) in self.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|p| format!("{},{}", fmt(sx(p.0)), fmt(sy(p.1))))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                pts.join(" ")
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
                fmt(PLOT_W - MARGIN_R + 10.0),
                fmt(MARGIN_T + 16.0 * (si as f64 + 1.0)),
                xml_escape(&s.name)
            ));
        }
        if let Some((name, y)) = &self.reference {
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-dasharray=\"2,4\"/>\n",
                fmt(MARGIN_L),
                fmt(sy(*y)),
                fmt(PLOT_W - MARGIN_R),
                fmt(sy(*y))
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" fill=\"black\">{}</text>\n",
                fmt(PLOT_W - MARGIN_R + 10.0),
                fmt(sy(*y) + 4.0),
                xml_escape(name)
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Grouped bar chart: one group per category, one bar per series, with sd
/// whiskers.
pub struct BarChart {
    pub title: String,
    pub categories: Vec<String>,
    /// (series name, per-category mean, per-category sd); NaN means skip.
    pub series: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub y_label: String,
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let iw = PLOT_W - MARGIN_L - MARGIN_R;
        let ih = PLOT_H - MARGIN_T - MARGIN_B;
        let n_cat = self.categories.len().max(1);
        let n_ser = self.series.len().max(1);
        let group_w = iw / n_cat as f64;
        let bar_w = (group_w * 0.8) / n_ser as f64;
        let sy = move |y: f64| MARGIN_T + (1.0 - y.clamp(0.0, 1.0)) * ih;

        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        svg.push_str(&format!(
            "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>\n",
            MARGIN_L,
            xml_escape(&self.title)
        ));
        for i in 0..=5 {
            let y = i as f64 / 5.0;
            svg.push_str(&format!(
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
                fmt(MARGIN_L),
                fmt(sy(y)),
                fmt(PLOT_W - MARGIN_R),
                fmt(sy(y))
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                fmt(MARGIN_L - 6.0),
                fmt(sy(y) + 4.0),
                fmt(y)
            ));
        }
        for (ci, cat) in self.categories.iter().enumerate() {
            let gx = MARGIN_L + ci as f64 * group_w;
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                fmt(gx + group_w / 2.0),
                fmt(PLOT_H - MARGIN_B + 18.0),
                xml_escape(cat)
            ));
            for (si, (_, means, sds)) in self.series.iter().enumerate() {
                let v = means.get(ci).copied().unwrap_or(f64::NAN);
                if !v.is_finite() {
                    continue;
                }
                let sd = sds.get(ci).copied().unwrap_or(0.0);
                let color = SERIES_COLORS[si % SERIES_COLORS.len()];
                let x = gx + group_w * 0.1 + si as f64 * bar_w;
                svg.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>\n",
                    fmt(x),
                    fmt(sy(v)),
                    fmt(bar_w * 0.9),
                    fmt(sy(0.0) - sy(v))
                ));
                if sd > 0.0 {
                    let cxm = x + bar_w * 0.45;
                    svg.push_str(&format!(
                        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
                        fmt(cxm),
                        fmt(sy(v + sd)),
                        fmt(cxm),
                        fmt(sy(v - sd))
                    ));
                }
            }
        }
        for (si, (name, _, _)) in self.series.iter().enumerate() {
            let color = SERIES_COLORS[si % SERIES_COLORS.len()];
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
                fmt(PLOT_W - MARGIN_R + 10.0),
                fmt(MARGIN_T + 16.0 * si as f64),
            ));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\">{}</text>\n",
                fmt(PLOT_W - MARGIN_R + 24.0),
                fmt(MARGIN_T + 16.0 * si as f64 + 9.0),
                xml_escape(name)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            fmt(MARGIN_T + ih / 2.0),
            fmt(MARGIN_T + ih / 2.0),
            xml_escape(&self.y_label)
        ));
        svg.push_str("</svg>\n");
        svg
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Probe weight visualization.
// ---------------------------------------------------------------------------

const TILE_SCALE: usize = 4;
const TILE_GAP: usize = 3;
const UNDERLINE: usize = 4;

/// Reshape each class's 3072 raw-pixel weights to a 32x32 RGB tile. One
/// affine map takes the global [min, max] to [0, 1]; a constant weight
/// image degenerates to mid-gray. Brighter therefore means higher value.
pub fn weight_images(weights: &Tensor<f32>) -> Result<Vec<Image8>> {
    let shape = weights.shape();
    if shape.len() != 2 || shape[1] != 3072 {
        return Err(Error::shape(
            "weight_visualization",
            format!("want [classes, 3072] raw-pixel weights, got {shape:?}"),
        ));
    }
    let lo = weights.data().iter().cloned().fold(f32::INFINITY, f32::min) as f64;
    let hi = weights.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let scale = if hi - lo < 1e-12 { 0.0 } else { 1.0 / (hi - lo) };

    let mut out = Vec::with_capacity(shape[0]);
    for class in 0..shape[0] {
        let w = &weights.data()[class * 3072..(class + 1) * 3072];
        let mut srgb = vec![[0.0f64; 3]; 1024];
        for i in 0..1024 {
            for c in 0..3 {
                let v = w[c * 1024 + i] as f64;
                let norm = if scale == 0.0 { 0.5 } else { (v - lo) * scale };
                srgb[i][c] = norm;
            }
        }
        out.push(Image8::from_srgb(32, 32, &srgb));
    }
    Ok(out)
}

/// Tile the per-class weight images into one montage, each tile underlined
/// with the true object color.
pub fn weight_montage(tiles: &[Image8], palette: &[CubeColor]) -> Result<Image8> {
    if tiles.len() != palette.len() {
        return Err(Error::shape(
            "weight_montage",
            format!("{} tiles vs {} palette entries", tiles.len(), palette.len()),
        ));
    }
    let cols = 10usize.min(tiles.len().max(1));
    let rows = tiles.len().div_ceil(cols);
    let cell_w = 32 * TILE_SCALE + TILE_GAP;
    let cell_h = 32 * TILE_SCALE + UNDERLINE + 2 + TILE_GAP;
    let width = cols * cell_w + TILE_GAP;
    let height = rows * cell_h + TILE_GAP;
    let mut data = vec![255u8; width * height * 3];

    for (idx, (tile, color)) in tiles.iter().zip(palette).enumerate() {
        let cx = TILE_GAP + (idx % cols) * cell_w;
        let cy = TILE_GAP + (idx / cols) * cell_h;
        for py in 0..32 * TILE_SCALE {
            for px in 0..32 * TILE_SCALE {
                let src = ((py / TILE_SCALE) * 32 + px / TILE_SCALE) * 3;
                let dst = ((cy + py) * width + cx + px) * 3;
                data[dst..dst + 3].copy_from_slice(&tile.data[src..src + 3]);
            }
        }
        let rgb8: Vec<u8> = color
            .albedo_rgb
            .iter()
            .map(|&v| (srgb_encode(v) * 255.0).round() as u8)
            .collect();
        for py in 0..UNDERLINE {
            let y = cy + 32 * TILE_SCALE + 2 + py;
            for px in 0..32 * TILE_SCALE {
                let dst = (y * width + cx + px) * 3;
                data[dst..dst + 3].copy_from_slice(&rgb8);
            }
        }
    }
    Ok(Image8 {
        width,
        height,
        data,
    })
}

/// Circular mean hue of the positive part of one class's weight image,
/// chroma-weighted, over the pixels selected by `mask` (all pixels when
/// `None`). Returns None when no selected pixel carries positive chroma.
pub fn positive_weight_hue(class_weights: &[f32], mask: Option<&[bool]>) -> Option<f64> {
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    for i in 0..1024 {
        if let Some(m) = mask {
            if !m[i] {
                continue;
            }
        }
        let pos = [
            (class_weights[i] as f64).max(0.0),
            (class_weights[1024 + i] as f64).max(0.0),
            (class_weights[2048 + i] as f64).max(0.0),
        ];
        let max = pos[0].max(pos[1]).max(pos[2]);
        if max <= 0.0 {
            continue;
        }
        let (h, s, v) = rgb_to_hsv(pos);
        let chroma = s * v;
        if chroma <= 0.0 {
            continue;
        }
        let angle = h * std::f64::consts::TAU;
        sx += angle.cos() * chroma;
        sy += angle.sin() * chroma;
    }
    if sx == 0.0 && sy == 0.0 {
        return None;
    }
    Some((sy.atan2(sx) / std::f64::consts::TAU).rem_euclid(1.0))
}

/// Fraction of classes whose positive-weight mean hue falls within
/// `max_err_turns` of the object's true hue. `mask` restricts the mean to
/// a pixel subset; passing the cube-projection mask measures the claim
/// that the cube's own weights carry the object hue, undiluted by the
/// color-opponent context structure at the cube-floor boundary.
pub fn hue_alignment(
    weights: &Tensor<f32>,
    palette: &[CubeColor],
    max_err_turns: f64,
    mask: Option<&[bool]>,
) -> f64 {
    let mut aligned = 0usize;
    for (class, color) in palette.iter().enumerate() {
        let row = &weights.data()[class * 3072..(class + 1) * 3072];
        if let Some(h) = positive_weight_hue(row, mask) {
            if hue_distance(h, color.hue) <= max_err_turns {
                aligned += 1;
            }
        }
    }
    aligned as f64 / palette.len() as f64
}
