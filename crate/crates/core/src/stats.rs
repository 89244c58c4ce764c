//! Dataset statistics: instance/category counts, box sizes, brightness and
//! object-centre density.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{ConditionTag, DatasetIndex, Light, Place, SrgbImage};

/// Counts keyed by value, plus the population mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountHistogram {
    pub bins: BTreeMap<usize, usize>,
    pub mean: f64,
    pub total: usize,
}

impl CountHistogram {
    fn from_counts(counts: impl IntoIterator<Item = usize>) -> Self {
        let mut bins = BTreeMap::new();
        let (mut sum, mut n) = (0usize, 0usize);
        for c in counts {
            *bins.entry(c).or_insert(0) += 1;
            sum += c;
            n += 1;
        }
        let mean = if n == 0 { 0.0 } else { sum as f64 / n as f64 };
        Self { bins, mean, total: n }
    }

    pub fn max_bin(&self) -> Option<usize> {
        self.bins.keys().next_back().copied()
    }
}

fn per_image<F>(index: &DatasetIndex, mut f: F) -> Result<Vec<usize>>
where
    F: FnMut(&[&crate::types::Annotation]) -> usize,
{
    if index.images.is_empty() {
        return Err(Error::invalid("statistics", "index has no images"));
    }
    let mut by_image: HashMap<u64, Vec<&crate::types::Annotation>> = HashMap::new();
    for a in &index.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    Ok(index
        .images
        .iter()
        .map(|img| f(by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[])))
        .collect())
}

/// Histogram of annotation counts per image.
pub fn instances_per_image(index: &DatasetIndex) -> Result<CountHistogram> {
    Ok(CountHistogram::from_counts(per_image(index, |a| a.len())?))
}

/// Histogram of distinct category ids per image.
pub fn categories_per_image(index: &DatasetIndex) -> Result<CountHistogram> {
    let counts = per_image(index, |anns| {
        anns.iter().map(|a| a.category_id).collect::<BTreeSet<_>>().len()
    })?;
    Ok(CountHistogram::from_counts(counts))
}

/// Fixed-width histogram over `[lo, hi]`; the top edge falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, v: f64) {
        let n = self.counts.len();
        let t = ((v - self.lo) / (self.hi - self.lo) * n as f64).floor();
        let i = if t < 0.0 { 0 } else { (t as usize).min(n - 1) };
        self.counts[i] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Fractions per bin; sums to 1 unless empty.
    pub fn density(&self) -> Vec<f64> {
        let t = self.total();
        if t == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / t as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxSizes {
    /// One value per annotation, in index order.
    pub values: Vec<f64>,
    pub histogram: Histogram,
}

/// Bins used for relative box sizes.
pub const BOX_SIZE_BINS: usize = 50;

/// `sqrt(box area / image area)` per annotation.
pub fn relative_box_sizes(index: &DatasetIndex) -> Result<BoxSizes> {
    let dims: HashMap<u64, (u32, u32)> =
        index.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    let mut values = Vec::with_capacity(index.annotations.len());
    let mut histogram = Histogram::new(0.0, 1.0, BOX_SIZE_BINS);
    for a in &index.annotations {
        let &(w, h) = dims.get(&a.image_id).ok_or(Error::DanglingReference {
            entity: "annotation",
            id: a.id,
            target: "image",
            target_id: a.image_id,
        })?;
        let v = (a.bbox.area() / (w as f64 * h as f64)).sqrt();
        histogram.add(v);
        values.push(v);
    }
    Ok(BoxSizes { values, histogram })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryCount {
    pub category_id: u64,
    pub name: String,
    pub count: usize,
}

/// Instance count per category, descending; ties by ascending id.
pub fn instances_per_category(index: &DatasetIndex) -> Vec<CategoryCount> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for a in &index.annotations {
        *counts.entry(a.category_id).or_default() += 1;
    }
    let mut out: Vec<CategoryCount> = index
        .categories
        .iter()
        .filter_map(|c| {
            counts.get(&c.id).map(|&count| CategoryCount {
                category_id: c.id,
                name: c.name.clone(),
                count,
            })
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.category_id.cmp(&b.category_id)));
    out
}

/// Average gray value `(r + g + b) / 3` over all pixels.
pub fn mean_gray(img: &SrgbImage) -> f64 {
    let n = img.width() * img.height();
    if n == 0 {
        return 0.0;
    }
    let sum: u64 = img.data().iter().map(|&v| v as u64).sum();
    sum as f64 / (3.0 * n as f64)
}

/// Brightness histogram group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BrightnessGroup {
    OutdoorDaylight,
    OutdoorLowlight,
    IndoorDaylight,
    IndoorLowlight,
}

impl BrightnessGroup {
    pub fn of(tag: &ConditionTag) -> Self {
        match (tag.place(), tag.light()) {
            (Place::Outdoor, Light::Daylight) => Self::OutdoorDaylight,
            (Place::Outdoor, Light::Lowlight) => Self::OutdoorLowlight,
            (Place::Indoor, Light::Daylight) => Self::IndoorDaylight,
            (Place::Indoor, Light::Lowlight) => Self::IndoorLowlight,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::OutdoorDaylight => "outdoor_daylight",
            Self::OutdoorLowlight => "outdoor_lowlight",
            Self::IndoorDaylight => "indoor_daylight",
            Self::IndoorLowlight => "indoor_lowlight",
        }
    }
}

/// Bins for brightness histograms over `[0, 255]`.
pub const BRIGHTNESS_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrightnessReport {
    /// Per-image mean gray value, input order.
    pub values: Vec<f64>,
    pub groups: BTreeMap<BrightnessGroup, Histogram>,
}

/// Mean gray value per image, histogrammed per place/light group.
pub fn brightness_distribution(images: &[(ConditionTag, SrgbImage)]) -> BrightnessReport {
    let values: Vec<f64> = images.par_iter().map(|(_, img)| mean_gray(img)).collect();
    let mut groups = BTreeMap::new();
    for ((tag, _), &v) in images.iter().zip(&values) {
        groups
            .entry(BrightnessGroup::of(tag))
            .or_insert_with(|| Histogram::new(0.0, 255.0, BRIGHTNESS_BINS))
            .add(v);
    }
    BrightnessReport { values, groups }
}

/// Object-centre density on a `grid × grid` raster, row-major, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heatmap {
    pub grid: usize,
    pub density: Vec<f64>,
}

impl Heatmap {
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.density[row * self.grid + col]
    }
}

pub const HEATMAP_GRID: usize = 64;

pub fn center_heatmap(index: &DatasetIndex, grid: usize) -> Result<Heatmap> {
    if grid == 0 {
        return Err(Error::invalid("heatmap", "grid must be positive"));
    }
    if index.annotations.is_empty() {
        return Err(Error::invalid("heatmap", "index has no annotations"));
    }
    let dims: HashMap<u64, (u32, u32)> =
        index.images.iter().map(|i| (i.id, (i.width, i.height))).collect();
    let mut counts = vec![0usize; grid * grid];
    let bin = |v: f64| -> usize {
        let t = (v * grid as f64).floor();
        if t < 0.0 {
            0
        } else {
            (t as usize).min(grid - 1)
        }
    };
    for a in &index.annotations {
        let (w, h) = dims[&a.image_id];
        let (cx, cy) = a.bbox.center();
        counts[bin(cy / h as f64) * grid + bin(cx / w as f64)] += 1;
    }
    let n = index.annotations.len() as f64;
    Ok(Heatmap {
        grid,
        density: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Everything the `stats` command writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub images: usize,
    pub instances: usize,
    pub condition_counts: BTreeMap<String, usize>,
    pub instances_per_image: CountHistogram,
    pub categories_per_image: CountHistogram,
    pub relative_box_size: Histogram,
    pub instances_per_category: Vec<CategoryCount>,
    pub center_heatmap: Option<Heatmap>,
    pub brightness: Option<BrightnessReport>,
}

pub fn build_report(index: &DatasetIndex, brightness: Option<BrightnessReport>) -> Result<StatsReport> {
    Ok(StatsReport {
        images: index.images.len(),
        instances: index.annotations.len(),
        condition_counts: crate::types::condition_count_table(index)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        instances_per_image: instances_per_image(index)?,
        categories_per_image: categories_per_image(index)?,
        relative_box_size: relative_box_sizes(index)?.histogram,
        instances_per_category: instances_per_category(index),
        center_heatmap: if index.annotations.is_empty() {
            None
        } else {
            Some(center_heatmap(index, HEATMAP_GRID)?)
        },
        brightness,
    })
}
