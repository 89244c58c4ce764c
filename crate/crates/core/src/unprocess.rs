//! sRGB to synthetic RAW conversion.
//!
//! The pipeline inverts a simple camera ISP stage by stage: tone curve,
//! gamma, colour matrix and white balance. It then rescales the image to a
//! requested mean brightness, samples it through a colour filter array, adds
//! Gaussian shot/read noise and quantises to 16 bits.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{ccm_matrix, BayerImage, CameraProfile, Cfa, LinearImage, NoiseParams, SrgbImage};

/// Mean brightness scale: a target of `FULL_SCALE` means every sample saturates.
pub const FULL_SCALE: f64 = 65536.0;

/// Samples drawn from one ChaCha stream by [`add_noise`].
pub const NOISE_BLOCK: usize = 4096;

fn check_unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} expects a value in [0, 1], got {v}")))
    }
}

/// Inverse sRGB-style gamma with the default exponent 2.2.
pub fn srgb_to_linear(v: f64) -> Result<f64> {
    gamma_expand(v, CameraProfile::DEFAULT_GAMMA)
}

/// `v^gamma` for `v` in `[0, 1]`.
pub fn gamma_expand(v: f64, gamma: f64) -> Result<f64> {
    check_unit(v, "gamma expansion")?;
    if !(gamma > 0.0) {
        return Err(Error::domain(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(v.powf(gamma))
}

/// The smoothstep tone curve `3x² - 2x³`.
pub fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Inverse of [`smoothstep`] on `[0, 1]`.
pub fn invert_tonemap(y: f64) -> Result<f64> {
    check_unit(y, "tone-map inversion")?;
    Ok(0.5 - ((1.0 - 2.0 * y).asin() / 3.0).sin())
}

pub fn apply_ccm(pixel: [f64; 3], ccm: &[[f64; 3]; 3]) -> [f64; 3] {
    let v = ccm_matrix(ccm) * Vector3::from(pixel);
    [v.x, v.y, v.z]
}

fn inverse_ccm(ccm: &[[f64; 3]; 3]) -> Result<Matrix3<f64>> {
    let m = ccm_matrix(ccm);
    if m.determinant().abs() <= 1e-8 {
        return Err(Error::invalid("colour matrix", "matrix is singular"));
    }
    m.try_inverse()
        .ok_or_else(|| Error::invalid("colour matrix", "matrix is singular"))
}

/// `ccm⁻¹ · pixel`.
pub fn apply_inverse_ccm(pixel: [f64; 3], ccm: &[[f64; 3]; 3]) -> Result<[f64; 3]> {
    let v = inverse_ccm(ccm)? * Vector3::from(pixel);
    Ok([v.x, v.y, v.z])
}

fn check_gains(gains: [f64; 3], threshold: f64) -> Result<()> {
    if gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::domain("white-balance gains must be > 0"));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::domain(format!(
            "safe white-balance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    Ok(())
}

/// Effective gain used by the highlight-safe inversion: `g` up to the
/// threshold, then linearly ramped to 1 at full scale.
fn effective_gain(v: f64, g: f64, threshold: f64) -> f64 {
    if g <= 1.0 || v <= threshold || threshold >= 1.0 {
        g
    } else {
        let t = ((v - threshold) / (1.0 - threshold)).min(1.0);
        g + (1.0 - g) * t
    }
}

/// Divides each channel by its white-balance gain. For gains above one the
/// gain fades to 1 between `threshold` and 1, so bright values stay bright
/// instead of being pulled into an implausible range.
pub fn safe_invert_wb(pixel: [f64; 3], gains: [f64; 3], threshold: f64) -> Result<[f64; 3]> {
    check_gains(gains, threshold)?;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let v = pixel[c].max(0.0);
        out[c] = v / effective_gain(v, gains[c], threshold);
    }
    Ok(out)
}

/// Forward counterpart of [`safe_invert_wb`]: maps its output back to its
/// input exactly on `[0, 1]`.
pub fn reapply_safe_wb(pixel: [f64; 3], gains: [f64; 3], threshold: f64) -> Result<[f64; 3]> {
    check_gains(gains, threshold)?;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let y = pixel[c].max(0.0);
        let g = gains[c];
        out[c] = if g <= 1.0 || threshold >= 1.0 || y <= threshold / g {
            y * g
        } else {
            // y = v / (g + (1-g)(v-t)/(1-t)) solved for v
            let t = threshold;
            y * (g - t) / (1.0 - t - y + y * g)
        };
    }
    Ok(out)
}

/// Rescales so the sensor-weighted mean ([`LinearImage::sensor_mean`]) hits
/// `target_mean / 65536`, then clips to `[0, 1]`. Returns the scale factor.
pub fn scale_to_brightness(img: &LinearImage, target_mean: f64) -> Result<(LinearImage, f64)> {
    if !(target_mean > 0.0 && target_mean <= FULL_SCALE) {
        return Err(Error::domain(format!(
            "target brightness must lie in (0, {FULL_SCALE}], got {target_mean}"
        )));
    }
    let mean = img.sensor_mean();
    if !(mean > 0.0) {
        return Err(Error::domain("cannot rescale an image with zero mean"));
    }
    let s = (target_mean / FULL_SCALE) / mean;
    let data = img.data().iter().map(|&v| (v * s).clamp(0.0, 1.0)).collect();
    Ok((LinearImage::new(img.width(), img.height(), data)?, s))
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
        return Err(Error::invalid(
            "image size",
            format!("Bayer images need positive even dimensions, got {width}x{height}"),
        ));
    }
    Ok(())
}

/// Keeps the channel selected by `cfa` at every pixel.
pub fn mosaic_normalized(img: &LinearImage, cfa: Cfa) -> Result<Vec<f64>> {
    let (w, h) = (img.width(), img.height());
    check_even(w, h)?;
    let data = img.data();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(data[3 * (y * w + x) + cfa.channel_at(x, y)]);
        }
    }
    Ok(out)
}

/// `round(black + x·(white − black))` with `x` clipped to `[0, 1]`.
pub fn quantize_sample(x: f64, black: u16, white: u16) -> u16 {
    let span = (white - black) as f64;
    (black as f64 + x.clamp(0.0, 1.0) * span).round() as u16
}

pub fn quantize(
    values: &[f64],
    width: usize,
    height: usize,
    cfa: Cfa,
    black: u16,
    white: u16,
) -> Result<BayerImage> {
    if black >= white {
        return Err(Error::invalid("bayer levels", "black level must be below white level"));
    }
    let samples = values.iter().map(|&x| quantize_sample(x, black, white)).collect();
    BayerImage::new(width, height, cfa, samples, black, white)
}

pub fn mosaic(img: &LinearImage, cfa: Cfa, black: u16, white: u16) -> Result<BayerImage> {
    let values = mosaic_normalized(img, cfa)?;
    quantize(&values, img.width(), img.height(), cfa, black, white)
}

/// Adds `Normal(0, lambda_read + lambda_shot·x)` noise and clips to `[0, 1]`.
///
/// Sample `i` draws from ChaCha stream `i / NOISE_BLOCK` of `seed`, so the
/// result is a pure function of `(x, p, seed)` regardless of thread count.
pub fn add_noise(x: &[f64], p: &NoiseParams, seed: u64) -> Vec<f64> {
    if p.lambda_shot == 0.0 && p.lambda_read == 0.0 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    out.par_chunks_mut(NOISE_BLOCK)
        .zip(x.par_chunks(NOISE_BLOCK))
        .enumerate()
        .for_each(|(block, (dst, src))| {
            let mut rng = rng::stream_rng(seed, block as u64);
            for (d, &v) in dst.iter_mut().zip(src) {
                let z: f64 = rng.sample(StandardNormal);
                let sigma = p.variance_at(v).max(0.0).sqrt();
                *d = (v + sigma * z).clamp(0.0, 1.0);
            }
        });
    out
}

/// Maps the unit-less noise level `n` of a sweep onto variances:
/// `lambda_shot = n²·base_shot`, `lambda_read = n²·base_read`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMapping {
    pub base_shot: f64,
    pub base_read: f64,
}

impl Default for NoiseMapping {
    fn default() -> Self {
        Self {
            base_shot: 1e-5,
            base_read: 1e-6,
        }
    }
}

impl NoiseMapping {
    pub fn params(&self, level: f64) -> Result<NoiseParams> {
        NoiseParams::new(level * level * self.base_shot, level * level * self.base_read)
    }
}

/// Closed interval used for log-uniform sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        let r = Self { min, max };
        r.validate()?;
        Ok(r)
    }

    pub fn fixed(v: f64) -> Self {
        Self { min: v, max: v }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.min.is_finite()
            && self.max.is_finite()
            && self.min >= 0.0
            && self.min <= self.max
            && (self.min > 0.0 || self.max == 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "range",
                format!("[{}, {}] is not a valid log-uniform range", self.min, self.max),
            ))
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.min..=self.max).contains(&v)
    }

    fn sample_log_uniform<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if self.min == self.max {
            return self.min;
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (lo + u * (hi - lo)).exp().clamp(self.min, self.max)
    }
}

/// Ranges for per-image augmentation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub brightness: Range,
    pub lambda_shot: Range,
    pub lambda_read: Range,
    pub wb_red: Range,
    pub wb_blue: Range,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let m = NoiseMapping::default();
        Self {
            brightness: Range { min: 64.0, max: 16384.0 },
            lambda_shot: Range { min: m.base_shot, max: 100.0 * m.base_shot },
            lambda_read: Range { min: m.base_read, max: 100.0 * m.base_read },
            wb_red: Range { min: 1.2, max: 2.4 },
            wb_blue: Range { min: 1.2, max: 2.4 },
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.brightness.validate()?;
        self.lambda_shot.validate()?;
        self.lambda_read.validate()?;
        self.wb_red.validate()?;
        self.wb_blue.validate()?;
        if !(self.brightness.min > 0.0 && self.brightness.max <= FULL_SCALE) {
            return Err(Error::invalid("augment config", "brightness must lie in (0, 65536]"));
        }
        if !(self.wb_red.min > 0.0 && self.wb_blue.min > 0.0) {
            return Err(Error::invalid("augment config", "white-balance gains must be > 0"));
        }
        Ok(())
    }
}

/// Parameters for unprocessing one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSample {
    pub target_brightness: f64,
    pub noise: NoiseParams,
    pub wb_gains: [f64; 3],
    pub ccm_index: usize,
}

/// Draws brightness, noise and gains log-uniformly and a profile uniformly
/// from a bank of `bank_len` entries.
pub fn sample_augmentation(seed: u64, config: &AugmentConfig, bank_len: usize) -> Result<AugmentSample> {
    if bank_len == 0 {
        return Err(Error::invalid("profile bank", "bank is empty"));
    }
    config.validate()?;
    let mut rng = rng::stream_rng(seed, 0);
    let target_brightness = config.brightness.sample_log_uniform(&mut rng);
    let lambda_shot = config.lambda_shot.sample_log_uniform(&mut rng);
    let lambda_read = config.lambda_read.sample_log_uniform(&mut rng);
    let r = config.wb_red.sample_log_uniform(&mut rng);
    let b = config.wb_blue.sample_log_uniform(&mut rng);
    let ccm_index = rng.random_range(0..bank_len);
    Ok(AugmentSample {
        target_brightness,
        noise: NoiseParams::new(lambda_shot, lambda_read)?,
        wb_gains: [r, 1.0, b],
        ccm_index,
    })
}

/// Runs every stage up to and including brightness scaling. Returns the
/// scaled camera-space image and the scale factor.
pub fn unprocess_linear(
    img: &SrgbImage,
    profile: &CameraProfile,
    aug: &AugmentSample,
) -> Result<(LinearImage, f64)> {
    profile.validate()?;
    check_gains(aug.wb_gains, profile.safe_wb_threshold)?;
    let inv = inverse_ccm(&profile.ccm)?;
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let mut lin = [0.0; 3];
        for c in 0..3 {
            let y = invert_tonemap(px[c] as f64 / 255.0)?;
            lin[c] = gamma_expand(y, profile.gamma)?;
        }
        let cam = inv * Vector3::from(lin);
        let cam = [
            cam.x.clamp(0.0, 1.0),
            cam.y.clamp(0.0, 1.0),
            cam.z.clamp(0.0, 1.0),
        ];
        data.extend(safe_invert_wb(cam, aug.wb_gains, profile.safe_wb_threshold)?);
    }
    let linear = LinearImage::new(img.width(), img.height(), data)?;
    scale_to_brightness(&linear, aug.target_brightness)
}

/// Synthetic RAW image plus the scale applied to reach its brightness.
#[derive(Debug, Clone, PartialEq)]
pub struct Unprocessed {
    pub bayer: BayerImage,
    pub scale_factor: f64,
}

/// Converts an sRGB image to a noisy 16-bit Bayer mosaic.
pub fn unprocess_image(
    img: &SrgbImage,
    profile: &CameraProfile,
    aug: &AugmentSample,
    seed: u64,
) -> Result<Unprocessed> {
    check_even(img.width(), img.height())?;
    let (scaled, scale_factor) = unprocess_linear(img, profile, aug)?;
    let clean = mosaic_normalized(&scaled, profile.cfa)?;
    let noisy = add_noise(&clean, &aug.noise, seed);
    let bayer = quantize(
        &noisy,
        img.width(),
        img.height(),
        profile.cfa,
        profile.black_level,
        profile.white_level,
    )?;
    Ok(Unprocessed {
        bayer,
        scale_factor,
    })
}

/// Metadata written next to each synthetic Bayer PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayerSidecar {
    pub cfa: Cfa,
    pub black_level: u16,
    pub white_level: u16,
    pub wb_gains: [f64; 3],
    pub ccm: [[f64; 3]; 3],
    pub target_brightness: f64,
    pub noise: NoiseParams,
    pub seed: u64,
    /// Factor applied by brightness scaling; needed to render the image back.
    #[serde(default = "one")]
    pub scale_factor: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_threshold")]
    pub safe_wb_threshold: f64,
}

fn one() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    CameraProfile::DEFAULT_GAMMA
}
fn default_threshold() -> f64 {
    CameraProfile::DEFAULT_SAFE_WB_THRESHOLD
}

impl BayerSidecar {
    pub fn new(profile: &CameraProfile, aug: &AugmentSample, seed: u64, scale_factor: f64) -> Self {
        Self {
            cfa: profile.cfa,
            black_level: profile.black_level,
            white_level: profile.white_level,
            wb_gains: aug.wb_gains,
            ccm: profile.ccm,
            target_brightness: aug.target_brightness,
            noise: aug.noise,
            seed,
            scale_factor,
            gamma: profile.gamma,
            safe_wb_threshold: profile.safe_wb_threshold,
        }
    }
}

/// Per-image seed: stable in the image id, never in processing order.
pub fn image_seed(seed: u64, image_id: &str) -> u64 {
    rng::derive_seed(seed, "image", image_id.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepItem {
    pub image_id: String,
    pub bayer: BayerImage,
    pub sidecar: BayerSidecar,
    /// Mean of the noise-free quantised mosaic.
    pub signal_mean: f64,
}

/// One synthetic dataset for a `(brightness, noise level)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSet {
    pub brightness: f64,
    pub noise_level: f64,
    pub noise: NoiseParams,
    /// Sorted by image id.
    pub items: Vec<SweepItem>,
}

impl VariantSet {
    pub fn name(&self) -> String {
        format!("b{}_n{}", self.brightness, self.noise_level)
    }

    /// Mean 16-bit value over all emitted samples.
    pub fn measured_brightness(&self) -> f64 {
        mean_over(self.items.iter().map(|i| (i.bayer.mean(), i.bayer.samples().len())))
    }

    /// Mean 16-bit value of the noise-free signal.
    pub fn signal_brightness(&self) -> f64 {
        mean_over(self.items.iter().map(|i| (i.signal_mean, i.bayer.samples().len())))
    }
}

fn mean_over(parts: impl Iterator<Item = (f64, usize)>) -> f64 {
    let (sum, n) = parts.fold((0.0, 0usize), |(s, n), (m, k)| (s + m * k as f64, n + k));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Builds one variant dataset per `(brightness, noise level)` pair, in
/// brightness-major order.
pub fn synthesize_sweep(
    dataset: &[(String, SrgbImage)],
    brightness_list: &[f64],
    noise_levels: &[f64],
    profile: &CameraProfile,
    mapping: &NoiseMapping,
    seed: u64,
) -> Result<Vec<VariantSet>> {
    if brightness_list.is_empty() || noise_levels.is_empty() {
        return Err(Error::invalid("sweep", "brightness and noise lists must be non-empty"));
    }
    let mut seen = HashSet::new();
    for (id, _) in dataset {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid("sweep", format!("duplicate image id {id:?}")));
        }
    }
    let mut order: Vec<&(String, SrgbImage)> = dataset.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));

    let mut sets = Vec::with_capacity(brightness_list.len() * noise_levels.len());
    for &brightness in brightness_list {
        for &level in noise_levels {
            let noise = mapping.params(level)?;
            let items = order
                .par_iter()
                .map(|(id, img)| {
                    let s = image_seed(seed, id);
                    let aug = AugmentSample {
                        target_brightness: brightness,
                        noise,
                        wb_gains: profile.wb_gains,
                        ccm_index: 0,
                    };
                    let (scaled, scale) = unprocess_linear(img, profile, &aug)?;
                    let clean = mosaic_normalized(&scaled, profile.cfa)?;
                    let signal = quantize(
                        &clean,
                        img.width(),
                        img.height(),
                        profile.cfa,
                        profile.black_level,
                        profile.white_level,
                    )?;
                    let noisy = add_noise(&clean, &noise, s);
                    let bayer = quantize(
                        &noisy,
                        img.width(),
                        img.height(),
                        profile.cfa,
                        profile.black_level,
                        profile.white_level,
                    )?;
                    Ok(SweepItem {
                        image_id: id.clone(),
                        bayer,
                        sidecar: BayerSidecar::new(profile, &aug, s, scale),
                        signal_mean: signal.mean(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sets.push(VariantSet {
                brightness,
                noise_level: level,
                noise,
                items,
            });
        }
    }
    Ok(sets)
}

/// Four built-in profiles: identity plus three camera-like matrices.
pub fn builtin_profile_bank() -> Vec<CameraProfile> {
    serde_json::from_str(include_str!("../data/profiles.json"))
        .expect("built-in profile bank is valid")
}
