//! Minimal forward pipeline from Bayer RAW to a 3-channel image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BayerImage, Cfa, LinearImage};
use crate::unprocess::{apply_ccm, reapply_safe_wb, smoothstep, BayerSidecar};

/// Black/white level removal: `clip((s − black)/(white − black), 0, 1)`.
pub fn normalize(img: &BayerImage) -> Result<Vec<f64>> {
    let (black, white) = (img.black_level() as f64, img.white_level() as f64);
    if white <= black {
        return Err(Error::invalid("bayer levels", "white level must exceed black level"));
    }
    let span = white - black;
    Ok(img
        .samples()
        .iter()
        .map(|&s| ((s as f64 - black) / span).clamp(0.0, 1.0))
        .collect())
}

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * n - 2 - i as usize
    } else {
        i as usize
    }
}

/// Bilinear demosaicing with mirrored borders.
///
/// Native sites keep their sample; each missing channel is the mean of the
/// same-colour samples in the 3×3 neighbourhood (two horizontal/vertical,
/// four cross or four diagonal neighbours depending on the site).
pub fn demosaic(values: &[f64], width: usize, height: usize, cfa: Cfa) -> Result<LinearImage> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
        return Err(Error::invalid(
            "image size",
            format!("demosaicing needs positive even dimensions, got {width}x{height}"),
        ));
    }
    if values.len() != width * height {
        return Err(Error::Dimension {
            expected: width * height,
            got: values.len(),
        });
    }
    let mut data = vec![0.0; 3 * width * height];
    data.par_chunks_mut(3 * width).enumerate().for_each(|(y, row)| {
        for x in 0..width {
            let native = cfa.channel_at(x, y);
            let mut sum = [0.0; 3];
            let mut count = [0u32; 3];
            for dy in -1isize..=1 {
                let yy = mirror(y as isize + dy, height);
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let xx = mirror(x as isize + dx, width);
                    let c = cfa.channel_at(xx, yy);
                    sum[c] += values[yy * width + xx];
                    count[c] += 1;
                }
            }
            for c in 0..3 {
                row[3 * x + c] = if c == native {
                    values[y * width + x]
                } else {
                    sum[c] / count[c] as f64
                };
            }
        }
    });
    LinearImage::new(width, height, data)
}

/// `in^(1/gamma)`.
pub fn gamma_correct(img: &LinearImage, gamma: f64) -> Result<LinearImage> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::domain(format!("gamma must be > 0, got {gamma}")));
    }
    if img.data().iter().any(|&v| v < 0.0) {
        return Err(Error::domain("gamma correction of a negative value"));
    }
    let inv = 1.0 / gamma;
    let data = img.data().iter().map(|&v| v.powf(inv)).collect();
    LinearImage::new(img.width(), img.height(), data)
}

/// normalize → demosaic → gamma.
pub fn develop(img: &BayerImage, gamma: f64) -> Result<LinearImage> {
    let norm = normalize(img)?;
    let rgb = demosaic(&norm, img.width(), img.height(), img.cfa())?;
    gamma_correct(&rgb, gamma)
}

/// Whether gamma is applied before or after resizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevelopOrder {
    #[default]
    DevelopFirst,
    DownsampleFirst,
}

/// [`develop`] followed (or preceded, before gamma) by box down-sampling.
pub fn develop_resized(
    img: &BayerImage,
    gamma: f64,
    target: (usize, usize),
    order: DevelopOrder,
) -> Result<LinearImage> {
    match order {
        DevelopOrder::DevelopFirst => downsample_image(&develop(img, gamma)?, target.0, target.1),
        DevelopOrder::DownsampleFirst => {
            let norm = normalize(img)?;
            let rgb = demosaic(&norm, img.width(), img.height(), img.cfa())?;
            gamma_correct(&downsample_image(&rgb, target.0, target.1)?, gamma)
        }
    }
}

/// Source pixels and overlap lengths covered by each output cell of a
/// `src → dst` box resampling.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * ratio;
            let hi = if i + 1 == dst { src as f64 } else { (i + 1) as f64 * ratio };
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let o = hi.min((j + 1) as f64) - lo.max(j as f64);
                    (o > 0.0).then_some((j, o))
                })
                .collect()
        })
        .collect()
}

/// Overlap-weighted mean, written relative to the first sample so a
/// constant input reproduces the constant exactly.
#[inline]
fn weighted_mean(taps: &[(usize, f64)], get: impl Fn(usize) -> f64) -> f64 {
    let base = get(taps[0].0);
    let mut num = 0.0;
    let mut den = 0.0;
    for &(j, o) in taps {
        num += o * (get(j) - base);
        den += o;
    }
    base + num / den
}

/// Area-averaging (box) resampling to a smaller size.
pub fn downsample_image(img: &LinearImage, target_w: usize, target_h: usize) -> Result<LinearImage> {
    let (w, h) = (img.width(), img.height());
    if target_w == 0 || target_h == 0 || target_w > w || target_h > h {
        return Err(Error::invalid(
            "resize target",
            format!("cannot box-resample {w}x{h} to {target_w}x{target_h}"),
        ));
    }
    let xw = box_weights(w, target_w);
    let yw = box_weights(h, target_h);
    let src = img.data();

    let mut horiz = vec![0.0; 3 * target_w * h];
    horiz.par_chunks_mut(3 * target_w).enumerate().for_each(|(y, row)| {
        for (i, taps) in xw.iter().enumerate() {
            for c in 0..3 {
                row[3 * i + c] = weighted_mean(taps, |x| src[3 * (y * w + x) + c]);
            }
        }
    });

    let mut out = vec![0.0; 3 * target_w * target_h];
    out.par_chunks_mut(3 * target_w).enumerate().for_each(|(i, row)| {
        let taps = &yw[i];
        for x in 0..target_w {
            for c in 0..3 {
                row[3 * x + c] = weighted_mean(taps, |y| horiz[3 * (y * target_w + x) + c]);
            }
        }
    });
    LinearImage::new(target_w, target_h, out)
}

/// Parameters for rendering a synthetic RAW image back to display space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderParams {
    pub ccm: [[f64; 3]; 3],
    pub wb_gains: [f64; 3],
    pub safe_wb_threshold: f64,
    pub gamma: f64,
    pub scale_factor: f64,
}

impl From<&BayerSidecar> for RenderParams {
    fn from(s: &BayerSidecar) -> Self {
        Self {
            ccm: s.ccm,
            wb_gains: s.wb_gains,
            safe_wb_threshold: s.safe_wb_threshold,
            gamma: s.gamma,
            scale_factor: s.scale_factor,
        }
    }
}

/// Full forward ISP: demosaic, undo brightness scaling, white balance,
/// colour matrix, gamma and smoothstep tone curve. Output is display-referred
/// in `[0, 1]`.
pub fn render(img: &BayerImage, params: &RenderParams) -> Result<LinearImage> {
    if !(params.scale_factor > 0.0) {
        return Err(Error::domain("scale factor must be > 0"));
    }
    if !(params.gamma > 0.0) {
        return Err(Error::domain("gamma must be > 0"));
    }
    let norm = normalize(img)?;
    let cam = demosaic(&norm, img.width(), img.height(), img.cfa())?;
    let inv_gamma = 1.0 / params.gamma;
    let mut data = Vec::with_capacity(cam.data().len());
    for px in cam.pixels() {
        let unscaled = px.map(|v| v / params.scale_factor);
        let balanced = reapply_safe_wb(unscaled, params.wb_gains, params.safe_wb_threshold)?;
        let rgb = apply_ccm(balanced, &params.ccm);
        data.extend(rgb.map(|v| smoothstep(v.clamp(0.0, 1.0).powf(inv_gamma))));
    }
    LinearImage::new(img.width(), img.height(), data)
}
