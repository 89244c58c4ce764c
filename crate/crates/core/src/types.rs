//! Domain types shared by every pipeline stage.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2×2 colour-filter-array layout, named by the top-left 2×2 block in
/// row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Cfa {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl Cfa {
    /// Channel (0 = R, 1 = G, 2 = B) sampled at pixel `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        let block = match self {
            Cfa::Rggb => [0, 1, 1, 2],
            Cfa::Bggr => [2, 1, 1, 0],
            Cfa::Grbg => [1, 0, 2, 1],
            Cfa::Gbrg => [1, 2, 0, 1],
        };
        block[(y & 1) * 2 + (x & 1)]
    }
}

impl FromStr for Cfa {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(Cfa::Rggb),
            "BGGR" => Ok(Cfa::Bggr),
            "GRBG" => Ok(Cfa::Grbg),
            "GBRG" => Ok(Cfa::Gbrg),
            other => Err(Error::invalid("cfa", format!("unknown pattern {other:?}"))),
        }
    }
}

/// Single-channel 16-bit CFA mosaic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BayerImage {
    width: usize,
    height: usize,
    cfa: Cfa,
    samples: Vec<u16>,
    black_level: u16,
    white_level: u16,
}

impl BayerImage {
    pub fn new(
        width: usize,
        height: usize,
        cfa: Cfa,
        samples: Vec<u16>,
        black_level: u16,
        white_level: u16,
    ) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::Dimension {
                expected: width * height,
                got: samples.len(),
            });
        }
        if black_level >= white_level {
            return Err(Error::invalid(
                "bayer levels",
                format!("black level {black_level} must be below white level {white_level}"),
            ));
        }
        Ok(Self {
            width,
            height,
            cfa,
            samples,
            black_level,
            white_level,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cfa(&self) -> Cfa {
        self.cfa
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn black_level(&self) -> u16 {
        self.black_level
    }

    pub fn white_level(&self) -> u16 {
        self.white_level
    }

    /// Mean of the raw 16-bit samples.
    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| s as f64).sum::<f64>() / self.samples.len() as f64
    }
}

/// Interleaved RGB image in linear light.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Dimension {
                expected: 3 * width * height,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("linear image", "non-finite sample"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Mean over all channels of all pixels.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean as seen through any 2×2 Bayer filter: `(R + 2G + B) / 4`
    /// averaged over pixels. Independent of the CFA orientation.
    pub fn sensor_mean(&self) -> f64 {
        let n = self.width * self.height;
        if n == 0 {
            return 0.0;
        }
        let sum: f64 = self.pixels().map(|[r, g, b]| r + 2.0 * g + b).sum();
        sum / (4.0 * n as f64)
    }
}

/// 8-bit gamma-encoded RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SrgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Dimension {
                expected: 3 * width * height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Parameters of the invertible camera pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct CameraProfile {
    pub name: String,
    /// Camera RGB to linear sRGB.
    pub ccm: [[f64; 3]; 3],
    pub wb_gains: [f64; 3],
    pub gamma: f64,
    pub black_level: u16,
    pub white_level: u16,
    pub safe_wb_threshold: f64,
    pub cfa: Cfa,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    #[serde(default)]
    name: String,
    ccm: [[f64; 3]; 3],
    #[serde(default = "unit_gains")]
    wb_gains: [f64; 3],
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default)]
    black_level: u16,
    #[serde(default = "default_white")]
    white_level: u16,
    #[serde(default = "default_threshold")]
    safe_wb_threshold: f64,
    #[serde(default)]
    cfa: Cfa,
}

fn unit_gains() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn default_gamma() -> f64 {
    CameraProfile::DEFAULT_GAMMA
}
fn default_white() -> u16 {
    u16::MAX
}
fn default_threshold() -> f64 {
    CameraProfile::DEFAULT_SAFE_WB_THRESHOLD
}

impl TryFrom<RawProfile> for CameraProfile {
    type Error = Error;

    fn try_from(raw: RawProfile) -> Result<Self> {
        let p = CameraProfile {
            name: raw.name,
            ccm: raw.ccm,
            wb_gains: raw.wb_gains,
            gamma: raw.gamma,
            black_level: raw.black_level,
            white_level: raw.white_level,
            safe_wb_threshold: raw.safe_wb_threshold,
            cfa: raw.cfa,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<CameraProfile> for RawProfile {
    fn from(p: CameraProfile) -> Self {
        RawProfile {
            name: p.name,
            ccm: p.ccm,
            wb_gains: p.wb_gains,
            gamma: p.gamma,
            black_level: p.black_level,
            white_level: p.white_level,
            safe_wb_threshold: p.safe_wb_threshold,
            cfa: p.cfa,
        }
    }
}

impl CameraProfile {
    pub const DEFAULT_GAMMA: f64 = 2.2;
    pub const DEFAULT_SAFE_WB_THRESHOLD: f64 = 0.9;

    /// Identity colour matrix, unit gains, default gamma and full 16-bit range.
    pub fn identity() -> Self {
        CameraProfile {
            name: "identity".into(),
            ccm: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            wb_gains: unit_gains(),
            gamma: Self::DEFAULT_GAMMA,
            black_level: 0,
            white_level: u16::MAX,
            safe_wb_threshold: Self::DEFAULT_SAFE_WB_THRESHOLD,
            cfa: Cfa::Rggb,
        }
    }

    pub fn with_ccm(mut self, ccm: [[f64; 3]; 3]) -> Result<Self> {
        self.ccm = ccm;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = ccm_matrix(&self.ccm);
        if m.determinant().abs() <= 1e-8 {
            return Err(Error::invalid("camera profile", "colour matrix is singular"));
        }
        for (i, row) in self.ccm.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(
                    "camera profile",
                    format!("colour matrix row {i} sums to {s}, expected 1"),
                ));
            }
        }
        if self.wb_gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("camera profile", "white-balance gains must be > 0"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("camera profile", "gamma must be > 0"));
        }
        if self.black_level >= self.white_level {
            return Err(Error::invalid("camera profile", "black level must be below white level"));
        }
        if !(self.safe_wb_threshold > 0.0 && self.safe_wb_threshold <= 1.0) {
            return Err(Error::invalid(
                "camera profile",
                "safe white-balance threshold must lie in (0, 1]",
            ));
        }
        Ok(())
    }
}

pub(crate) fn ccm_matrix(ccm: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| ccm[r][c])
}

/// Gaussian sensor noise: variance `lambda_read + lambda_shot * x` for a
/// normalised signal `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseParams {
    pub lambda_shot: f64,
    pub lambda_read: f64,
}

impl NoiseParams {
    pub fn new(lambda_shot: f64, lambda_read: f64) -> Result<Self> {
        if !(lambda_shot >= 0.0 && lambda_read >= 0.0) || !lambda_shot.is_finite() || !lambda_read.is_finite() {
            return Err(Error::invalid("noise params", "variances must be finite and >= 0"));
        }
        Ok(Self {
            lambda_shot,
            lambda_read,
        })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn variance_at(&self, x: f64) -> f64 {
        self.lambda_read + self.lambda_shot * x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Place {
    Indoor,
    Outdoor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Light {
    Daylight,
    Lowlight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Weather {
    None,
    Clear,
    Fog,
    Rain,
    RainFog,
}

/// Capture condition of an image. Only the nine combinations that occur in
/// the dataset can be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConditionTag {
    place: Place,
    light: Light,
    weather: Weather,
}

impl ConditionTag {
    /// All constructible tags, in dataset table order.
    pub const ALL: [ConditionTag; 9] = [
        ConditionTag::raw(Place::Indoor, Light::Daylight, Weather::None),
        ConditionTag::raw(Place::Indoor, Light::Lowlight, Weather::None),
        ConditionTag::raw(Place::Outdoor, Light::Daylight, Weather::Clear),
        ConditionTag::raw(Place::Outdoor, Light::Daylight, Weather::Fog),
        ConditionTag::raw(Place::Outdoor, Light::Daylight, Weather::Rain),
        ConditionTag::raw(Place::Outdoor, Light::Daylight, Weather::RainFog),
        ConditionTag::raw(Place::Outdoor, Light::Lowlight, Weather::Clear),
        ConditionTag::raw(Place::Outdoor, Light::Lowlight, Weather::Fog),
        ConditionTag::raw(Place::Outdoor, Light::Lowlight, Weather::Rain),
    ];

    const fn raw(place: Place, light: Light, weather: Weather) -> Self {
        Self {
            place,
            light,
            weather,
        }
    }

    pub fn new(place: Place, light: Light, weather: Weather) -> Result<Self> {
        let tag = Self::raw(place, light, weather);
        if Self::ALL.contains(&tag) {
            Ok(tag)
        } else {
            Err(Error::invalid(
                "condition",
                format!("{place:?}/{light:?}/{weather:?} is not a recorded condition"),
            ))
        }
    }

    pub fn place(&self) -> Place {
        self.place
    }

    pub fn light(&self) -> Light {
        self.light
    }

    pub fn weather(&self) -> Weather {
        self.weather
    }

    /// Position in [`ConditionTag::ALL`].
    pub fn ordinal(&self) -> usize {
        Self::ALL
            .iter()
            .position(|t| t == self)
            .expect("constructed tags are always recorded conditions")
    }
}

impl PartialOrd for ConditionTag {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConditionTag {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ordinal().cmp(&other.ordinal())
    }
}

impl fmt::Display for ConditionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let place = match self.place {
            Place::Indoor => "indoor",
            Place::Outdoor => "outdoor",
        };
        let light = match self.light {
            Light::Daylight => "daylight",
            Light::Lowlight => "lowlight",
        };
        let weather = match self.weather {
            Weather::None => return write!(f, "{place}/{light}"),
            Weather::Clear => "clear",
            Weather::Fog => "fog",
            Weather::Rain => "rain",
            Weather::RainFog => "rain_fog",
        };
        write!(f, "{place}/{light}/{weather}")
    }
}

impl FromStr for ConditionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid("condition", format!("unknown condition string {s:?}"));
        let mut parts = s.split('/');
        let place = match parts.next() {
            Some("indoor") => Place::Indoor,
            Some("outdoor") => Place::Outdoor,
            _ => return Err(bad()),
        };
        let light = match parts.next() {
            Some("daylight") => Light::Daylight,
            Some("lowlight") => Light::Lowlight,
            _ => return Err(bad()),
        };
        let weather = match parts.next() {
            None | Some("none") => Weather::None,
            Some("clear") => Weather::Clear,
            Some("fog") => Weather::Fog,
            Some("rain") => Weather::Rain,
            Some("rain_fog") => Weather::RainFog,
            Some(_) => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        ConditionTag::new(place, light, weather).map_err(|_| bad())
    }
}

impl TryFrom<String> for ConditionTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ConditionTag> for String {
    fn from(t: ConditionTag) -> Self {
        t.to_string()
    }
}

/// Axis-aligned box, top-left origin, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("bbox", "non-finite coordinate"));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::invalid(
                "bbox",
                format!("width and height must be positive, got {}x{}", self.w, self.h),
            ));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// Intersection with `other`, if it has positive area.
    pub fn clip_to(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then_some(BBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub ignore: bool,
}

/// Where a tile was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileProvenance {
    pub parent_image_id: u64,
    pub x0: u32,
    pub y0: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub condition: ConditionTag,
    pub tile: Option<TileProvenance>,
}

/// Images, annotations and category taxonomy of a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl DatasetIndex {
    /// Builds an index and checks id uniqueness and referential integrity.
    pub fn new(
        images: Vec<ImageRecord>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self> {
        let index = Self {
            images,
            annotations,
            categories,
        };
        index.validate()?;
        Ok(index)
    }

    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::with_capacity(self.images.len());
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(Error::DuplicateId {
                    entity: "image",
                    id: img.id,
                });
            }
            if img.width == 0 || img.height == 0 {
                return Err(Error::invalid(
                    "image record",
                    format!("image {} has zero size", img.id),
                ));
            }
        }
        let mut category_ids = HashSet::with_capacity(self.categories.len());
        for cat in &self.categories {
            if !category_ids.insert(cat.id) {
                return Err(Error::DuplicateId {
                    entity: "category",
                    id: cat.id,
                });
            }
        }
        let mut ann_ids = HashSet::with_capacity(self.annotations.len());
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(Error::DuplicateId {
                    entity: "annotation",
                    id: ann.id,
                });
            }
            if !image_ids.contains(&ann.image_id) {
                return Err(Error::DanglingReference {
                    entity: "annotation",
                    id: ann.id,
                    target: "image",
                    target_id: ann.image_id,
                });
            }
            if !category_ids.contains(&ann.category_id) {
                return Err(Error::DanglingReference {
                    entity: "annotation",
                    id: ann.id,
                    target: "category",
                    target_id: ann.category_id,
                });
            }
            ann.bbox.validate()?;
        }
        Ok(())
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Keeps the given images and the annotations that belong to them.
    pub fn restrict_to(&self, keep: &HashSet<u64>) -> DatasetIndex {
        DatasetIndex {
            images: self
                .images
                .iter()
                .filter(|i| keep.contains(&i.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

impl DetectionResult {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(
                "detection",
                format!("score {} outside [0, 1]", self.score),
            ));
        }
        self.bbox.validate()
    }
}

/// AP family plus condition breakdown. `-1` marks a slice without ground
/// truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "AP50")]
    pub ap50: f64,
    #[serde(rename = "AP75")]
    pub ap75: f64,
    #[serde(rename = "APs")]
    pub ap_s: f64,
    #[serde(rename = "APm")]
    pub ap_m: f64,
    #[serde(rename = "APl")]
    pub ap_l: f64,
    #[serde(rename = "APnormal")]
    pub ap_normal: f64,
    #[serde(rename = "APlow")]
    pub ap_low: f64,
    #[serde(rename = "APrain")]
    pub ap_rain: f64,
    #[serde(rename = "APfog")]
    pub ap_fog: f64,
}

impl MetricsReport {
    pub const UNDEFINED: f64 = -1.0;

    /// `(column name, value)` pairs in report order.
    pub fn entries(&self) -> [(&'static str, f64); 10] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("APs", self.ap_s),
            ("APm", self.ap_m),
            ("APl", self.ap_l),
            ("APnormal", self.ap_normal),
            ("APlow", self.ap_low),
            ("APrain", self.ap_rain),
            ("APfog", self.ap_fog),
        ]
    }
}

/// Number of images per recorded condition; every condition is present.
pub fn condition_count_table(index: &DatasetIndex) -> BTreeMap<ConditionTag, usize> {
    let mut table: BTreeMap<ConditionTag, usize> =
        ConditionTag::ALL.iter().map(|&t| (t, 0)).collect();
    for img in &index.images {
        *table.entry(img.condition).or_default() += 1;
    }
    table
}
