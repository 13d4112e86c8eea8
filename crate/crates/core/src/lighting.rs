//! Per-frame spotlight states: the three-step sampler and the 24-bit
//! lighting label.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::rng::light_stream;

pub const POWER_MIN_W: f64 = 300.0;
pub const POWER_MAX_W: f64 = 1000.0;
pub const P_ON: f64 = 0.5;

/// The seven spotlight tints. Their mixture spans the whole RGB gamut.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpotColor {
    Red = 0,
    Green = 1,
    Blue = 2,
    Cyan = 3,
    Yellow = 4,
    Magenta = 5,
    White = 6,
}

impl SpotColor {
    pub const ALL: [SpotColor; 7] = [
        SpotColor::Red,
        SpotColor::Green,
        SpotColor::Blue,
        SpotColor::Cyan,
        SpotColor::Yellow,
        SpotColor::Magenta,
        SpotColor::White,
    ];

    pub fn from_index(i: usize) -> SpotColor {
        Self::ALL[i]
    }

    /// Linear RGB tint of the light.
    pub fn tint(self) -> Rgb {
        match self {
            SpotColor::Red => [1.0, 0.0, 0.0],
            SpotColor::Green => [0.0, 1.0, 0.0],
            SpotColor::Blue => [0.0, 0.0, 1.0],
            SpotColor::Cyan => [0.0, 1.0, 1.0],
            SpotColor::Yellow => [1.0, 1.0, 0.0],
            SpotColor::Magenta => [1.0, 0.0, 1.0],
            SpotColor::White => [1.0, 1.0, 1.0],
        }
    }

    /// Binary RGB code used by the lighting label.
    pub fn code(self) -> [u8; 3] {
        let t = self.tint();
        [t[0] as u8, t[1] as u8, t[2] as u8]
    }
}

/// State of a single spotlight in one frame. `color` and `power` are
/// meaningful only while `on`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotlightState {
    pub on: bool,
    pub color: SpotColor,
    pub power_w: f64,
}

impl SpotlightState {
    pub const OFF: SpotlightState = SpotlightState {
        on: false,
        color: SpotColor::White,
        power_w: 0.0,
    };
}

/// Per-frame state of all eight spotlights, indexed like the rig positions.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLighting {
    pub states: [SpotlightState; 8],
}

/// 24 binary values; triplet k is the binary RGB code of light k, all zeros
/// when the light is off.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LightingLabel {
    pub bits: [u8; 24],
}

/// Sample one spotlight from its dedicated stream. Consumes exactly three
/// draws (on, color, power) regardless of the on/off outcome, so streams
/// stay aligned and any light is reproducible in isolation.
pub fn sample_spotlight(rng: &mut ChaCha8Rng) -> SpotlightState {
    let on = rng.gen::<f64>() < P_ON;
    let color = SpotColor::ALL[(rng.gen::<u64>() % 7) as usize];
    let power_w = POWER_MIN_W + rng.gen::<f64>() * (POWER_MAX_W - POWER_MIN_W);
    if on {
        SpotlightState { on, color, power_w }
    } else {
        SpotlightState::OFF
    }
}

/// Lighting for one frame of one object sequence: each light independently
/// on with p = 0.5, tinted uniformly over the seven colors, powered
/// uniformly over [300, 1000] W.
pub fn sample_frame_lighting(master_seed: u64, object: u64, frame: u64) -> FrameLighting {
    let mut states = [SpotlightState::OFF; 8];
    for (k, s) in states.iter_mut().enumerate() {
        let mut rng = light_stream(master_seed, object, frame, k as u64);
        *s = sample_spotlight(&mut rng);
    }
    FrameLighting { states }
}

/// Encode a frame's lighting as the 24-bit label. Off lights map to
/// (0,0,0); power is discarded.
pub fn encode_lighting_label(fl: &FrameLighting) -> LightingLabel {
    let mut bits = [0u8; 24];
    for (k, s) in fl.states.iter().enumerate() {
        if s.on {
            bits[3 * k..3 * k + 3].copy_from_slice(&s.color.code());
        }
    }
    LightingLabel { bits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn all_off() -> FrameLighting {
        FrameLighting {
            states: [SpotlightState::OFF; 8],
        }
    }

    #[test]
    fn label_all_off_is_zero() {
        assert_eq!(encode_lighting_label(&all_off()).bits, [0u8; 24]);
    }

    #[test]
    fn label_single_white_light() {
        let mut fl = all_off();
        fl.states[0] = SpotlightState {
            on: true,
            color: SpotColor::White,
            power_w: 500.0,
        };
        let mut expect = [0u8; 24];
        expect[0..3].copy_from_slice(&[1, 1, 1]);
        assert_eq!(encode_lighting_label(&fl).bits, expect);
    }

    #[test]
    fn label_magenta_is_red_plus_blue() {
        let mut fl = all_off();
        fl.states[3] = SpotlightState {
            on: true,
            color: SpotColor::Magenta,
            power_w: 400.0,
        };
        let label = encode_lighting_label(&fl);
        assert_eq!(&label.bits[9..12], &[1, 0, 1]);
    }

    #[test]
    fn codes_are_injective_and_cover_eight_triplets() {
        let mut seen = HashSet::new();
        seen.insert([0u8; 3]); // off
        for c in SpotColor::ALL {
            seen.insert(c.code());
        }
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn sampling_is_deterministic_per_frame() {
        let a = sample_frame_lighting(11, 4, 321);
        let b = sample_frame_lighting(11, 4, 321);
        assert_eq!(a, b);
        let c = sample_frame_lighting(11, 4, 322);
        assert_ne!(a, c);
    }

    #[test]
    fn sampled_powers_stay_in_range() {
        for frame in 0..200 {
            let fl = sample_frame_lighting(3, 0, frame);
            for s in fl.states.iter().filter(|s| s.on) {
                assert!((POWER_MIN_W..=POWER_MAX_W).contains(&s.power_w));
            }
        }
    }

    #[test]
    fn on_rate_and_all_off_probability() {
        let mut on = 0usize;
        let mut frames_all_off = 0usize;
        let n_frames = 20_000;
        for frame in 0..n_frames {
            let fl = sample_frame_lighting(5, 0, frame);
            let lit = fl.states.iter().filter(|s| s.on).count();
            on += lit;
            if lit == 0 {
                frames_all_off += 1;
            }
        }
        let rate = on as f64 / (8 * n_frames) as f64;
        assert!((rate - 0.5).abs() < 0.02, "on-rate {rate}");
        // P(all 8 off) = 0.5^8 ~ 0.39%; allow a 4-sigma binomial band.
        let p = frames_all_off as f64 / n_frames as f64;
        let expect = 0.5f64.powi(8);
        let sigma = (expect * (1.0 - expect) / n_frames as f64).sqrt();
        assert!((p - expect).abs() < 4.0 * sigma, "all-off rate {p}");
    }
}
