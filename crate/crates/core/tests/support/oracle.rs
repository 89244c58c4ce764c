//! Brute-force reference evaluator and a random instance generator.
//!
//! Written without reusing any matching or AP code from the library: boxes
//! are compared through corner coordinates, interpolated precision is taken
//! as the maximum over every prefix of the ranking, and recall levels are
//! compared in integer arithmetic.

#![allow(dead_code)]

use rand::Rng;
use rawdet_core::metrics::EvalConfig;
use rawdet_core::{
    Annotation, BBox, Category, ConditionTag, DatasetIndex, DetectionResult, ImageRecord,
    MetricsReport,
};

fn corner_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x, a.y, a.x + a.w, a.y + a.h);
    let (bx1, by1, bx2, by2) = (b.x, b.y, b.x + b.w, b.y + b.h);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.w * a.h + b.w * b.h - inter)
}

fn in_slice(tag: &ConditionTag, slice: &str) -> bool {
    let s = tag.to_string();
    match slice {
        "all" => true,
        "normal" => s == "indoor/daylight" || s == "outdoor/daylight/clear",
        "low" => s.contains("lowlight"),
        "rain" => s.ends_with("/rain") || s.ends_with("/rain_fog"),
        "fog" => s.ends_with("/fog") || s.ends_with("/rain_fog"),
        _ => unreachable!(),
    }
}

/// Interpolated AP by exhaustive search over ranking prefixes.
fn brute_ap(ranked_tp: &[bool], n_pos: usize) -> f64 {
    let mut total = 0.0;
    for r in 0..=100usize {
        let mut best = 0.0f64;
        let mut tp = 0usize;
        for (k, &t) in ranked_tp.iter().enumerate() {
            if t {
                tp += 1;
            }
            if tp * 100 >= r * n_pos {
                best = best.max(tp as f64 / (k + 1) as f64);
            }
        }
        total += best;
    }
    total / 101.0
}

fn category_threshold_ap(
    gt: &DatasetIndex,
    dets: &[DetectionResult],
    cfg: &EvalConfig,
    images: &[&ImageRecord],
    cat: u64,
    thr: f64,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    let inside = |b: &BBox| b.w * b.h >= lo && b.w * b.h < hi;
    let mut n_pos = 0;
    // (score, image id, position in image ranking, is tp)
    let mut rows: Vec<(f64, u64, usize, bool)> = Vec::new();
    for img in images {
        let g: Vec<(BBox, bool)> = gt
            .annotations
            .iter()
            .filter(|a| a.image_id == img.id && a.category_id == cat)
            .map(|a| (a.bbox, a.ignore || !inside(&a.bbox)))
            .collect();
        n_pos += g.iter().filter(|x| !x.1).count();
        let mut d: Vec<(usize, &DetectionResult)> = dets
            .iter()
            .filter(|d| d.image_id == img.id && d.category_id == cat)
            .enumerate()
            .collect();
        // insertion sort, descending score, keeps input order on ties
        for i in 1..d.len() {
            let mut j = i;
            while j > 0 && d[j - 1].1.score < d[j].1.score {
                d.swap(j - 1, j);
                j -= 1;
            }
        }
        d.truncate(cfg.max_dets);
        let mut taken = vec![false; g.len()];
        for (pos, (_, det)) in d.iter().enumerate() {
            let mut pick: Option<usize> = None;
            let mut pick_iou = -1.0;
            let mut absorbed = false;
            for (k, (b, ign)) in g.iter().enumerate() {
                let v = corner_iou(&det.bbox, b);
                if v < thr {
                    continue;
                }
                if *ign {
                    absorbed = true;
                } else if !taken[k] && v > pick_iou {
                    pick = Some(k);
                    pick_iou = v;
                }
            }
            if let Some(k) = pick {
                taken[k] = true;
                rows.push((det.score, img.id, pos, true));
            } else if !absorbed && inside(&det.bbox) {
                rows.push((det.score, img.id, pos, false));
            }
        }
    }
    if n_pos == 0 {
        return None;
    }
    rows.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let tp: Vec<bool> = rows.iter().map(|r| r.3).collect();
    Some(brute_ap(&tp, n_pos))
}

fn mean_or_undefined(v: Vec<f64>) -> f64 {
    if v.is_empty() {
        -1.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn metric(gt: &DatasetIndex, dets: &[DetectionResult], cfg: &EvalConfig, slice: &str, thrs: &[f64], lo: f64, hi: f64) -> f64 {
    let images: Vec<&ImageRecord> = gt.images.iter().filter(|i| in_slice(&i.condition, slice)).collect();
    let mut values = Vec::new();
    for c in &gt.categories {
        for &t in thrs {
            if let Some(ap) = category_threshold_ap(gt, dets, cfg, &images, c.id, t, lo, hi) {
                values.push(ap);
            }
        }
    }
    mean_or_undefined(values)
}

/// Reference implementation of the full metrics report.
pub fn reference_evaluate(gt: &DatasetIndex, dets: &[DetectionResult], cfg: &EvalConfig) -> MetricsReport {
    let t = &cfg.iou_thresholds;
    let inf = f64::INFINITY;
    MetricsReport {
        ap: metric(gt, dets, cfg, "all", t, 0.0, inf),
        ap50: metric(gt, dets, cfg, "all", &[0.5], 0.0, inf),
        ap75: metric(gt, dets, cfg, "all", &[0.75], 0.0, inf),
        ap_s: metric(gt, dets, cfg, "all", t, cfg.small.lo, cfg.small.hi),
        ap_m: metric(gt, dets, cfg, "all", t, cfg.medium.lo, cfg.medium.hi),
        ap_l: metric(gt, dets, cfg, "all", t, cfg.large.lo, cfg.large.hi),
        ap_normal: metric(gt, dets, cfg, "normal", t, 0.0, inf),
        ap_low: metric(gt, dets, cfg, "low", t, 0.0, inf),
        ap_rain: metric(gt, dets, cfg, "rain", t, 0.0, inf),
        ap_fog: metric(gt, dets, cfg, "fog", t, 0.0, inf),
    }
}

fn random_box<R: Rng>(rng: &mut R, base: Option<&BBox>) -> BBox {
    match base {
        // jittered copy so IoU lands on both sides of the thresholds
        Some(b) => BBox {
            x: (b.x + rng.random_range(-12..=12) as f64).max(0.0),
            y: (b.y + rng.random_range(-12..=12) as f64).max(0.0),
            w: (b.w + rng.random_range(-12..=12) as f64).max(4.0),
            h: (b.h + rng.random_range(-12..=12) as f64).max(4.0),
        },
        None => BBox {
            x: rng.random_range(0..300) as f64,
            y: rng.random_range(0..300) as f64,
            w: rng.random_range(8..220) as f64,
            h: rng.random_range(8..220) as f64,
        },
    }
}

/// Random evaluation instance: up to 5 images, 3 categories, 10 detections
/// per image. Scores come from a coarse grid to force ties.
pub fn random_instance<R: Rng>(rng: &mut R) -> (DatasetIndex, Vec<DetectionResult>) {
    let n_img = rng.random_range(1..=5);
    let n_cat = rng.random_range(1..=3u64);
    let categories = (1..=n_cat)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
        })
        .collect();
    let mut images = Vec::new();
    let mut anns = Vec::new();
    let mut dets = Vec::new();
    for i in 0..n_img {
        let id = 10 + 3 * i as u64;
        images.push(ImageRecord {
            id,
            file_name: format!("{id}.png"),
            width: 512,
            height: 512,
            condition: ConditionTag::ALL[rng.random_range(0..9)],
            tile: None,
        });
        let n_gt = rng.random_range(0..=5);
        let mut gts = Vec::new();
        for _ in 0..n_gt {
            let b = random_box(rng, None);
            let a = Annotation {
                id: anns.len() as u64 + 1,
                image_id: id,
                category_id: rng.random_range(1..=n_cat),
                bbox: b,
                ignore: rng.random_bool(0.15),
            };
            gts.push(a.clone());
            anns.push(a);
        }
        let n_det = rng.random_range(0..=10);
        for _ in 0..n_det {
            let near = if !gts.is_empty() && rng.random_bool(0.7) {
                Some(&gts[rng.random_range(0..gts.len())])
            } else {
                None
            };
            let category_id = match near {
                Some(g) if rng.random_bool(0.85) => g.category_id,
                _ => rng.random_range(1..=n_cat),
            };
            dets.push(DetectionResult {
                image_id: id,
                category_id,
                bbox: random_box(rng, near.map(|g| &g.bbox)),
                score: rng.random_range(1..=10) as f64 / 10.0,
            });
        }
    }
    let index = DatasetIndex::new(images, anns, categories).expect("valid random index");
    (index, dets)
}

/// Largest absolute difference over the ten report entries. Two undefined
/// entries compare equal; undefined against defined counts as infinite.
pub fn max_report_diff(a: &MetricsReport, b: &MetricsReport) -> f64 {
    a.entries()
        .iter()
        .zip(b.entries().iter())
        .map(|((_, x), (_, y))| {
            if (*x < 0.0) != (*y < 0.0) {
                f64::INFINITY
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, f64::max)
}
