//! Smooth synthetic sRGB images for round-trip and sweep tests.

#![allow(dead_code)]

use rand::Rng;
use rawdet_core::SrgbImage;

/// Low-frequency colour field: a per-channel base, a gentle linear ramp and
/// a long-wavelength sinusoid, kept inside `[lo, hi]` code values.
pub fn smooth_srgb<R: Rng>(rng: &mut R, w: usize, h: usize, lo: f64, hi: f64) -> SrgbImage {
    let mid = 0.5 * (lo + hi);
    let span = 0.5 * (hi - lo);
    let mut params = [[0.0; 6]; 3];
    for p in &mut params {
        *p = [
            mid + rng.random_range(-0.4..0.4) * span, // base
            rng.random_range(-0.08..0.08) * span,     // ramp in x
            rng.random_range(-0.08..0.08) * span,     // ramp in y
            rng.random_range(0.0..0.08) * span,       // wave amplitude
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.2..0.6),               // wave count across the image
        ];
    }
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / w as f64 - 0.5;
            let v = y as f64 / h as f64 - 0.5;
            for p in &params {
                let wave = p[3] * (std::f64::consts::TAU * p[5] * (u + 0.7 * v) + p[4]).sin();
                let val = p[0] + 2.0 * p[1] * u + 2.0 * p[2] * v + wave;
                data.push(val.clamp(lo, hi).round() as u8);
            }
        }
    }
    SrgbImage::new(w, h, data).unwrap()
}
