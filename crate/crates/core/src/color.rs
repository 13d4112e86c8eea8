//! Color-space conversions: hexcone HSV <-> linear RGB and the sRGB transfer
//! function. All channels are f64 fractions.

use crate::error::{Error, Result};

/// Linear RGB triple.
pub type Rgb = [f64; 3];

/// Standard hexcone HSV -> linear RGB. `h` is a fraction of the color circle
/// in [0,1); `s`, `v` in [0,1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Result<Rgb> {
    if !(0.0..1.0).contains(&h) {
        return Err(Error::numeric("hsv_to_rgb", format!("hue {h} outside [0,1)")));
    }
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&v) {
        return Err(Error::numeric(
            "hsv_to_rgb",
            format!("saturation {s} or value {v} outside [0,1]"),
        ));
    }
    let hp = h * 6.0;
    let sector = hp.floor() as usize % 6;
    let c = v * s;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match sector {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    Ok([r + m, g + m, b + m])
}

/// Inverse of [`hsv_to_rgb`]. Returns (h, s, v) with h in [0,1).
pub fn rgb_to_hsv(rgb: Rgb) -> (f64, f64, f64) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    } / 6.0;
    let s = if max == 0.0 { 0.0 } else { chroma / max };
    (h.rem_euclid(1.0), s, max)
}

/// sRGB transfer function (linear -> display). Input must be in [0,1].
#[inline]
pub fn srgb_encode(linear: f64) -> f64 {
    if linear <= 0.0031308 {
        12.92 * linear
    } else {
        1.055 * linear.powf(1.0 / 2.4) - 0.055
    }
}

/// Inverse sRGB transfer function (display -> linear).
#[inline]
pub fn srgb_decode(encoded: f64) -> f64 {
    if encoded <= 0.04045 {
        encoded / 12.92
    } else {
        ((encoded + 0.055) / 1.055).powf(2.4)
    }
}

/// Rec. 709 relative luminance of a linear RGB triple.
#[inline]
pub fn luminance(rgb: Rgb) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

/// Circular distance between two hue fractions, in turns (max 0.5).
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}
