//! Dataset splitting, annotation down-scaling and tile slicing.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::types::{Annotation, BBox, ConditionTag, DatasetIndex, ImageRecord, TileProvenance};

/// Relative slack for the inclusive `>=` boundary rules below.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: DatasetIndex,
    pub test: DatasetIndex,
}

/// `floor(fraction · n)`, robust to representation error in `fraction`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + BOUNDARY_EPS).floor() as usize
}

/// Splits every condition separately and merges the parts.
///
/// Images of one condition are sorted by id, shuffled with a ChaCha stream
/// keyed by `(seed, condition)`, and the first `floor(fraction·n)` go to
/// train. Annotations follow their images; both outputs are sorted by id.
pub fn split_dataset(index: &DatasetIndex, train_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(
            "split fraction",
            format!("{train_fraction} is not in (0, 1)"),
        ));
    }
    let mut groups: BTreeMap<ConditionTag, Vec<u64>> = BTreeMap::new();
    for img in &index.images {
        groups.entry(img.condition).or_default().push(img.id);
    }
    let mut train_ids = HashSet::new();
    for (cond, mut ids) in groups {
        ids.sort_unstable();
        let stream = rng::derive_seed(seed, "split", cond.to_string().as_bytes());
        ids.shuffle(&mut rng::stream_rng(stream, 0));
        train_ids.extend(ids.into_iter().take(train_count_for(&cond, index, train_fraction)));
    }
    let test_ids: HashSet<u64> = index
        .images
        .iter()
        .map(|i| i.id)
        .filter(|id| !train_ids.contains(id))
        .collect();
    Ok(SplitResult {
        train: sorted(index.restrict_to(&train_ids)),
        test: sorted(index.restrict_to(&test_ids)),
    })
}

fn train_count_for(cond: &ConditionTag, index: &DatasetIndex, fraction: f64) -> usize {
    let n = index.images.iter().filter(|i| i.condition == *cond).count();
    train_count(n, fraction)
}

fn sorted(mut index: DatasetIndex) -> DatasetIndex {
    index.images.sort_by_key(|i| i.id);
    index.annotations.sort_by_key(|a| a.id);
    index
}

/// Scales every box by `(scale_x, scale_y)` and every image size by the same
/// factors (rounded). Boxes whose scaled area is below `min_area` are marked
/// ignored; an area of exactly `min_area` is kept.
pub fn downsample_annotations(
    index: &DatasetIndex,
    scale_x: f64,
    scale_y: f64,
    min_area: f64,
) -> Result<DatasetIndex> {
    for s in [scale_x, scale_y] {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid("scale", format!("{s} is not in (0, 1]")));
        }
    }
    let scales: HashMap<u64, (f64, f64)> =
        index.images.iter().map(|i| (i.id, (scale_x, scale_y))).collect();
    let images = index
        .images
        .iter()
        .map(|i| ImageRecord {
            width: ((i.width as f64 * scale_x).round() as u32).max(1),
            height: ((i.height as f64 * scale_y).round() as u32).max(1),
            ..i.clone()
        })
        .collect();
    rescale(index, images, &scales, min_area)
}

/// Resizes every image to `target_w × target_h`, deriving per-image scales.
pub fn downsample_to(
    index: &DatasetIndex,
    target_w: u32,
    target_h: u32,
    min_area: f64,
) -> Result<DatasetIndex> {
    let mut scales = HashMap::new();
    let mut images = Vec::with_capacity(index.images.len());
    for i in &index.images {
        if target_w == 0 || target_h == 0 || target_w > i.width || target_h > i.height {
            return Err(Error::invalid(
                "resize target",
                format!(
                    "cannot down-sample image {} ({}x{}) to {target_w}x{target_h}",
                    i.id, i.width, i.height
                ),
            ));
        }
        scales.insert(
            i.id,
            (target_w as f64 / i.width as f64, target_h as f64 / i.height as f64),
        );
        images.push(ImageRecord {
            width: target_w,
            height: target_h,
            ..i.clone()
        });
    }
    rescale(index, images, &scales, min_area)
}

fn rescale(
    index: &DatasetIndex,
    images: Vec<ImageRecord>,
    scales: &HashMap<u64, (f64, f64)>,
    min_area: f64,
) -> Result<DatasetIndex> {
    let annotations = index
        .annotations
        .iter()
        .map(|a| {
            let (sx, sy) = scales[&a.image_id];
            let bbox = BBox {
                x: a.bbox.x * sx,
                y: a.bbox.y * sy,
                w: a.bbox.w * sx,
                h: a.bbox.h * sy,
            };
            let tiny = bbox.area() < min_area * (1.0 - BOUNDARY_EPS);
            Annotation {
                bbox,
                ignore: a.ignore || tiny,
                ..a.clone()
            }
        })
        .collect();
    DatasetIndex::new(images, annotations, index.categories.clone())
}

/// Tile origins along one axis: multiples of `tile − overlap`, with the last
/// origin clamped to `len − tile`. Axes shorter than a tile get one origin
/// at zero (the tile is then clipped to the axis).
pub fn tile_axis(len: u32, tile: u32, overlap: u32) -> Result<Vec<u32>> {
    if tile == 0 || overlap >= tile {
        return Err(Error::invalid(
            "tiling",
            format!("overlap {overlap} must be smaller than tile size {tile}"),
        ));
    }
    if len <= tile {
        return Ok(vec![0]);
    }
    let stride = tile - overlap;
    let mut origins = Vec::new();
    let mut p = 0u32;
    loop {
        if p + tile >= len {
            origins.push(len - tile);
            return Ok(origins);
        }
        origins.push(p);
        p += stride;
    }
}

/// Row-major list of `(x0, y0)` tile origins.
pub fn tile_grid(width: u32, height: u32, tile: u32, overlap: u32) -> Result<Vec<(u32, u32)>> {
    let xs = tile_axis(width, tile, overlap)?;
    let ys = tile_axis(height, tile, overlap)?;
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub tile: u32,
    pub overlap: u32,
    /// Minimum fraction of a box's area that must fall inside the tile.
    pub keep_fraction: f64,
    pub drop_empty: bool,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            tile: 1280,
            overlap: 300,
            keep_fraction: 0.4,
            drop_empty: true,
        }
    }
}

/// A tile cut from a parent image; annotations are in tile coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub origin: (u32, u32),
    pub size: (u32, u32),
    pub parent_image_id: u64,
    pub annotations: Vec<Annotation>,
}

/// Whether `visible / area >= keep_fraction`, inclusive.
pub fn keeps(visible: f64, area: f64, keep_fraction: f64) -> bool {
    visible >= keep_fraction * area * (1.0 - BOUNDARY_EPS)
}

/// Cuts one image into tiles. Annotation ids are left as in the parent.
pub fn slice_image(image: &ImageRecord, annotations: &[&Annotation], cfg: &SliceConfig) -> Result<Vec<Tile>> {
    if !(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0) {
        return Err(Error::invalid(
            "slicing",
            format!("keep fraction {} is not in (0, 1]", cfg.keep_fraction),
        ));
    }
    let size = (cfg.tile.min(image.width), cfg.tile.min(image.height));
    let mut tiles = Vec::new();
    for (x0, y0) in tile_grid(image.width, image.height, cfg.tile, cfg.overlap)? {
        let window = BBox {
            x: x0 as f64,
            y: y0 as f64,
            w: size.0 as f64,
            h: size.1 as f64,
        };
        let kept: Vec<Annotation> = annotations
            .iter()
            .filter_map(|a| {
                let clipped = a.bbox.clip_to(&window)?;
                keeps(clipped.area(), a.bbox.area(), cfg.keep_fraction).then(|| Annotation {
                    bbox: BBox {
                        x: clipped.x - window.x,
                        y: clipped.y - window.y,
                        ..clipped
                    },
                    ..(*a).clone()
                })
            })
            .collect();
        if cfg.drop_empty && kept.is_empty() {
            continue;
        }
        tiles.push(Tile {
            origin: (x0, y0),
            size,
            parent_image_id: image.id,
            annotations: kept,
        });
    }
    Ok(tiles)
}

fn tile_file_name(parent: &str, x0: u32, y0: u32) -> String {
    match parent.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_x{x0}_y{y0}.{ext}"),
        None => format!("{parent}_x{x0}_y{y0}"),
    }
}

/// Slices every image into tiles and returns them as a new index.
///
/// Tiles are ordered by parent id, then row-major by origin; tile images and
/// annotations are renumbered from 1 in that order. Each tile inherits the
/// parent's condition and records its provenance.
pub fn slice_dataset(index: &DatasetIndex, cfg: &SliceConfig) -> Result<DatasetIndex> {
    let mut by_image: HashMap<u64, Vec<&Annotation>> = HashMap::new();
    for a in &index.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    for anns in by_image.values_mut() {
        anns.sort_by_key(|a| a.id);
    }
    let mut parents: Vec<&ImageRecord> = index.images.iter().collect();
    parents.sort_by_key(|i| i.id);

    let per_image = parents
        .par_iter()
        .map(|img| {
            let anns = by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
            slice_image(img, anns, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (parent, tiles) in parents.iter().zip(per_image) {
        for tile in tiles {
            let id = images.len() as u64 + 1;
            images.push(ImageRecord {
                id,
                file_name: tile_file_name(&parent.file_name, tile.origin.0, tile.origin.1),
                width: tile.size.0,
                height: tile.size.1,
                condition: parent.condition,
                tile: Some(TileProvenance {
                    parent_image_id: parent.id,
                    x0: tile.origin.0,
                    y0: tile.origin.1,
                }),
            });
            for a in tile.annotations {
                annotations.push(Annotation {
                    id: annotations.len() as u64 + 1,
                    image_id: id,
                    ..a
                });
            }
        }
    }
    DatasetIndex::new(images, annotations, index.categories.clone())
}
