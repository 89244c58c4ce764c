//! COCO-style box AP with configurable area ranges and condition slices.
//!
//! Conventions: ten IoU thresholds 0.50:0.05:0.95, 101-point interpolated
//! precision, at most 100 detections per image and category, and area ranges
//! that are half-open `[lo, hi)`. A category contributes to a slice only if
//! it has at least one non-ignored ground-truth box in it.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    BBox, DatasetIndex, DetectionResult, ImageRecord, Light, MetricsReport, Weather,
};

/// Which set of area ranges to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    #[default]
    Downsampled,
    Sliced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub const ALL: AreaRange = AreaRange {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn contains(&self, area: f64) -> bool {
        area >= self.lo && area < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub small: AreaRange,
    pub medium: AreaRange,
    pub large: AreaRange,
    pub max_dets: usize,
    pub setting: Setting,
}

impl EvalConfig {
    /// 0.50, 0.55, …, 0.95.
    pub fn coco_thresholds() -> Vec<f64> {
        (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
    }

    pub fn new(setting: Setting) -> Self {
        let (s, m) = match setting {
            Setting::Downsampled => (128.0, 320.0),
            Setting::Sliced => (64.0, 160.0),
        };
        Self {
            iou_thresholds: Self::coco_thresholds(),
            small: AreaRange { lo: 0.0, hi: s * s },
            medium: AreaRange { lo: s * s, hi: m * m },
            large: AreaRange { lo: m * m, hi: f64::INFINITY },
            max_dets: 100,
            setting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "eval config",
                "IoU thresholds must be strictly increasing in (0, 1]",
            ));
        }
        let ranges = [self.small, self.medium, self.large];
        if ranges.iter().any(|r| !(r.lo < r.hi)) || ranges.windows(2).any(|w| w[0].hi > w[1].lo) {
            return Err(Error::invalid("eval config", "area ranges must be ordered and disjoint"));
        }
        if self.max_dets == 0 {
            return Err(Error::invalid("eval config", "max_dets must be positive"));
        }
        for needed in [0.5, 0.75] {
            if !t.contains(&needed) {
                return Err(Error::invalid(
                    "eval config",
                    format!("thresholds must include {needed}"),
                ));
            }
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::new(Setting::Downsampled)
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetBox {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetOutcome {
    TruePositive { gt: usize },
    /// Matched an ignored ground-truth box; excluded from precision.
    Ignored { gt: usize },
    FalsePositive,
}

/// Result of greedy matching for one image and category.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    /// Indices of the considered detections, by descending score.
    pub order: Vec<usize>,
    /// Outcome of `order[k]`.
    pub outcomes: Vec<DetOutcome>,
    /// Detection (input index) matched to each non-ignored ground truth.
    pub gt_matched: Vec<Option<usize>>,
}

/// Descending by score, stable on ties.
pub fn score_order(dets: &[DetBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy matching: each detection, best score first, takes the unmatched
/// non-ignored ground truth with the highest IoU ≥ `iou_thr` (lowest index
/// on ties). Failing that it is absorbed by the best ignored ground truth
/// with IoU ≥ `iou_thr`, if any; otherwise it is a false positive. Ignored
/// ground truths can absorb any number of detections.
pub fn match_greedy(gts: &[GtBox], dets: &[DetBox], iou_thr: f64, max_dets: usize) -> MatchTable {
    let mut order = score_order(dets);
    order.truncate(max_dets);
    let mut gt_matched = vec![None; gts.len()];
    let mut outcomes = Vec::with_capacity(order.len());
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        let mut best_ignored: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(&dets[d].bbox, &gt.bbox);
            if v < iou_thr {
                continue;
            }
            let slot = if gt.ignore {
                &mut best_ignored
            } else if gt_matched[g].is_none() {
                &mut best
            } else {
                continue;
            };
            if slot.is_none_or(|(_, b)| v > b) {
                *slot = Some((g, v));
            }
        }
        outcomes.push(match (best, best_ignored) {
            (Some((g, _)), _) => {
                gt_matched[g] = Some(d);
                DetOutcome::TruePositive { gt: g }
            }
            (None, Some((g, _))) => DetOutcome::Ignored { gt: g },
            (None, None) => DetOutcome::FalsePositive,
        });
    }
    for (g, gt) in gts.iter().enumerate() {
        if gt.ignore {
            gt_matched[g] = None;
        }
    }
    MatchTable {
        order,
        outcomes,
        gt_matched,
    }
}

/// Recall levels 0, 0.01, …, 1.00.
pub const RECALL_POINTS: usize = 101;

/// 101-point interpolated AP of a ranked TP/FP sequence (`true` = TP).
/// Returns −1 when there are no positives.
pub fn average_precision(tp: &[bool], n_positive: usize) -> f64 {
    if n_positive == 0 {
        return MetricsReport::UNDEFINED;
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut tps = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        tps.push(hits);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (1..precision.len()).rev() {
        if precision[k] > precision[k - 1] {
            precision[k - 1] = precision[k];
        }
    }
    let mut sum = 0.0;
    let mut k = 0;
    for r in 0..RECALL_POINTS {
        // first rank whose recall tps/n reaches r/100
        while k < tps.len() && tps[k] * (RECALL_POINTS - 1) < r * n_positive {
            k += 1;
        }
        if k == tps.len() {
            break;
        }
        sum += precision[k];
    }
    sum / RECALL_POINTS as f64
}

/// Images contributing to a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageSlice {
    All,
    /// Daylight with clear (outdoor) or no (indoor) weather.
    Normal,
    Lowlight,
    /// Rain, including rain with fog.
    Rain,
    /// Fog, including rain with fog.
    Fog,
}

impl ImageSlice {
    pub fn contains(&self, img: &ImageRecord) -> bool {
        let c = img.condition;
        match self {
            ImageSlice::All => true,
            ImageSlice::Normal => {
                c.light() == Light::Daylight && matches!(c.weather(), Weather::Clear | Weather::None)
            }
            ImageSlice::Lowlight => c.light() == Light::Lowlight,
            ImageSlice::Rain => matches!(c.weather(), Weather::Rain | Weather::RainFog),
            ImageSlice::Fog => matches!(c.weather(), Weather::Fog | Weather::RainFog),
        }
    }
}

struct Prepared {
    /// Image ids in ascending order.
    images: Vec<u64>,
    categories: Vec<u64>,
    gts: HashMap<(u64, u64), Vec<(BBox, bool)>>,
    dets: HashMap<(u64, u64), Vec<DetBox>>,
}

fn prepare(gt: &DatasetIndex, dets: &[DetectionResult], slice: ImageSlice) -> Result<Prepared> {
    let image_ids: HashSet<u64> = gt.images.iter().map(|i| i.id).collect();
    let category_ids: HashSet<u64> = gt.categories.iter().map(|c| c.id).collect();
    for (i, d) in dets.iter().enumerate() {
        if !image_ids.contains(&d.image_id) {
            return Err(Error::DanglingReference {
                entity: "detection",
                id: i as u64,
                target: "image",
                target_id: d.image_id,
            });
        }
        if !category_ids.contains(&d.category_id) {
            return Err(Error::DanglingReference {
                entity: "detection",
                id: i as u64,
                target: "category",
                target_id: d.category_id,
            });
        }
    }
    let mut images: Vec<u64> = gt
        .images
        .iter()
        .filter(|i| slice.contains(i))
        .map(|i| i.id)
        .collect();
    images.sort_unstable();
    let keep: HashSet<u64> = images.iter().copied().collect();

    let mut gts: HashMap<(u64, u64), Vec<(BBox, bool)>> = HashMap::new();
    for a in gt.annotations.iter().filter(|a| keep.contains(&a.image_id)) {
        gts.entry((a.image_id, a.category_id))
            .or_default()
            .push((a.bbox, a.ignore));
    }
    let mut by_key: HashMap<(u64, u64), Vec<DetBox>> = HashMap::new();
    for d in dets.iter().filter(|d| keep.contains(&d.image_id)) {
        by_key.entry((d.image_id, d.category_id)).or_default().push(DetBox {
            bbox: d.bbox,
            score: d.score,
        });
    }
    let mut categories: Vec<u64> = gt.categories.iter().map(|c| c.id).collect();
    categories.sort_unstable();
    Ok(Prepared {
        images,
        categories,
        gts,
        dets: by_key,
    })
}

/// Per-category AP for each threshold, or `None` when the category has no
/// non-ignored ground truth in the area range.
fn category_ap(p: &Prepared, cat: u64, area: AreaRange, thresholds: &[f64], max_dets: usize) -> Option<Vec<f64>> {
    let mut n_positive = 0;
    let mut per_image: Vec<(Vec<GtBox>, &[DetBox])> = Vec::new();
    for &img in &p.images {
        let gts: Vec<GtBox> = p
            .gts
            .get(&(img, cat))
            .map(|v| {
                v.iter()
                    .map(|&(bbox, ignore)| GtBox {
                        bbox,
                        ignore: ignore || !area.contains(bbox.area()),
                    })
                    .collect()
            })
            .unwrap_or_default();
        n_positive += gts.iter().filter(|g| !g.ignore).count();
        let dets = p.dets.get(&(img, cat)).map(Vec::as_slice).unwrap_or(&[]);
        per_image.push((gts, dets));
    }
    if n_positive == 0 {
        return None;
    }
    let aps = thresholds
        .iter()
        .map(|&thr| {
            // (score, is_tp) in image order, each image already score-sorted
            let mut ranked: Vec<(f64, bool)> = Vec::new();
            for (gts, dets) in &per_image {
                let table = match_greedy(gts, dets, thr, max_dets);
                for (&d, outcome) in table.order.iter().zip(&table.outcomes) {
                    match outcome {
                        DetOutcome::TruePositive { .. } => ranked.push((dets[d].score, true)),
                        DetOutcome::Ignored { .. } => {}
                        DetOutcome::FalsePositive => {
                            if area.contains(dets[d].bbox.area()) {
                                ranked.push((dets[d].score, false));
                            }
                        }
                    }
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            let tp: Vec<bool> = ranked.into_iter().map(|(_, t)| t).collect();
            average_precision(&tp, n_positive)
        })
        .collect();
    Some(aps)
}

/// Mean AP over categories and the given thresholds, or −1 if no category
/// has ground truth.
fn slice_ap(p: &Prepared, area: AreaRange, thresholds: &[f64], max_dets: usize) -> f64 {
    let per_cat: Vec<Option<Vec<f64>>> = p
        .categories
        .par_iter()
        .map(|&c| category_ap(p, c, area, thresholds, max_dets))
        .collect();
    let values: Vec<f64> = per_cat.into_iter().flatten().flatten().collect();
    if values.is_empty() {
        MetricsReport::UNDEFINED
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// AP of one image slice over all thresholds and all areas.
pub fn slice_average_precision(
    gt: &DatasetIndex,
    dets: &[DetectionResult],
    cfg: &EvalConfig,
    slice: ImageSlice,
) -> Result<f64> {
    cfg.validate()?;
    let p = prepare(gt, dets, slice)?;
    Ok(slice_ap(&p, AreaRange::ALL, &cfg.iou_thresholds, cfg.max_dets))
}

/// Full report: AP, AP50, AP75, size APs and condition APs.
pub fn evaluate(gt: &DatasetIndex, dets: &[DetectionResult], cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let all = prepare(gt, dets, ImageSlice::All)?;
    let t = &cfg.iou_thresholds;
    let md = cfg.max_dets;
    let cond = |s: ImageSlice| -> Result<f64> {
        Ok(slice_ap(&prepare(gt, dets, s)?, AreaRange::ALL, t, md))
    };
    Ok(MetricsReport {
        ap: slice_ap(&all, AreaRange::ALL, t, md),
        ap50: slice_ap(&all, AreaRange::ALL, &[0.5], md),
        ap75: slice_ap(&all, AreaRange::ALL, &[0.75], md),
        ap_s: slice_ap(&all, cfg.small, t, md),
        ap_m: slice_ap(&all, cfg.medium, t, md),
        ap_l: slice_ap(&all, cfg.large, t, md),
        ap_normal: cond(ImageSlice::Normal)?,
        ap_low: cond(ImageSlice::Lowlight)?,
        ap_rain: cond(ImageSlice::Rain)?,
        ap_fog: cond(ImageSlice::Fog)?,
    })
}

/// Per-category AP (all images, all areas, all thresholds) for debugging.
pub fn per_category_ap(
    gt: &DatasetIndex,
    dets: &[DetectionResult],
    cfg: &EvalConfig,
) -> Result<BTreeMap<u64, f64>> {
    cfg.validate()?;
    let p = prepare(gt, dets, ImageSlice::All)?;
    Ok(p.categories
        .iter()
        .map(|&c| {
            let v = category_ap(&p, c, AreaRange::ALL, &cfg.iou_thresholds, cfg.max_dets)
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .unwrap_or(MetricsReport::UNDEFINED);
            (c, v)
        })
        .collect())
}
