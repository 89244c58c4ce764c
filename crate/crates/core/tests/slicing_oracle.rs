use std::collections::BTreeMap;

use rand::Rng;
use rawdet_core::datapipe::{slice_dataset, tile_grid, SliceConfig};
use rawdet_core::rng::stream_rng;
use rawdet_core::{Annotation, BBox, Category, DatasetIndex, ImageRecord};

const W: u32 = 6000;
const H: u32 = 4000;

fn origins(len: u32) -> Vec<u32> {
    let mut v: Vec<u32> = (0..).map(|k| k * 980).take_while(|&p| p + 1280 < len).collect();
    v.push(len - 1280);
    v
}

type TileKey = (u64, u32, u32);
/// (category, x, y, w, h) in tile coordinates, sorted.
type TileBoxes = Vec<(u64, i64, i64, i64, i64)>;

/// Pixel-counting reference slicer for integer boxes.
fn brute_force(index: &DatasetIndex) -> BTreeMap<TileKey, TileBoxes> {
    let mut out = BTreeMap::new();
    for img in &index.images {
        for &y0 in &origins(img.height) {
            for &x0 in &origins(img.width) {
                let mut kept = Vec::new();
                for a in index.annotations.iter().filter(|a| a.image_id == img.id) {
                    let (bx, by, bw, bh) = (a.bbox.x as i64, a.bbox.y as i64, a.bbox.w as i64, a.bbox.h as i64);
                    let mut visible = 0i64;
                    let (mut minx, mut miny, mut maxx, mut maxy) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
                    for py in by..by + bh {
                        for px in bx..bx + bw {
                            if px >= x0 as i64 && px < (x0 + 1280) as i64 && py >= y0 as i64 && py < (y0 + 1280) as i64 {
                                visible += 1;
                                minx = minx.min(px);
                                miny = miny.min(py);
                                maxx = maxx.max(px);
                                maxy = maxy.max(py);
                            }
                        }
                    }
                    if visible > 0 && visible * 10 >= 4 * bw * bh {
                        kept.push((a.category_id, minx - x0 as i64, miny - y0 as i64, maxx - minx + 1, maxy - miny + 1));
                    }
                }
                if !kept.is_empty() {
                    kept.sort();
                    out.insert((img.id, x0, y0), kept);
                }
            }
        }
    }
    out
}

fn fixture() -> DatasetIndex {
    let mut rng = stream_rng(99, 0);
    let mut images = Vec::new();
    let mut anns = Vec::new();
    for id in 1..=3u64 {
        images.push(ImageRecord {
            id,
            file_name: format!("scene{id}.jpg"),
            width: W,
            height: H,
            condition: rawdet_core::ConditionTag::ALL[id as usize * 2],
            tile: None,
        });
        for _ in 0..25 {
            let w = rng.random_range(10..180);
            let h = rng.random_range(10..180);
            // bias boxes towards tile seams so boundary cases appear
            let seam_x = [1280, 980, 2260, 1960, 4720, 5200][rng.random_range(0..6)];
            let x = (seam_x as i64 - rng.random_range(0..w) as i64).clamp(0, (W - w) as i64);
            let y = rng.random_range(0..(H - h)) as i64;
            anns.push(Annotation {
                id: anns.len() as u64 + 1,
                image_id: id,
                category_id: rng.random_range(1..=2),
                bbox: BBox { x: x as f64, y: y as f64, w: w as f64, h: h as f64 },
                ignore: false,
            });
        }
    }
    // exact 40% and just-below-40% visibility across the x = 1280 seam
    for (x, w) in [(1240.0, 100.0), (1241.0, 100.0)] {
        anns.push(Annotation {
            id: anns.len() as u64 + 1,
            image_id: 1,
            category_id: 1,
            bbox: BBox { x, y: 100.0, w, h: 50.0 },
            ignore: false,
        });
    }
    DatasetIndex::new(
        images,
        anns,
        vec![Category { id: 1, name: "a".into() }, Category { id: 2, name: "b".into() }],
    )
    .unwrap()
}

#[test]
fn slicer_matches_pixel_counting_reference() {
    let index = fixture();
    let sliced = slice_dataset(&index, &SliceConfig::default()).unwrap();
    let mut got: BTreeMap<TileKey, TileBoxes> = BTreeMap::new();
    for img in &sliced.images {
        let p = img.tile.unwrap();
        assert_eq!((img.width, img.height), (1280, 1280));
        let boxes = got.entry((p.parent_image_id, p.x0, p.y0)).or_default();
        for a in sliced.annotations.iter().filter(|a| a.image_id == img.id) {
            let b = a.bbox;
            assert!(b.x >= 0.0 && b.y >= 0.0 && b.right() <= 1280.0 && b.bottom() <= 1280.0);
            boxes.push((a.category_id, b.x as i64, b.y as i64, b.w as i64, b.h as i64));
            for v in [b.x, b.y, b.w, b.h] {
                assert_eq!(v.fract(), 0.0);
            }
        }
        boxes.sort();
    }
    let want = brute_force(&index);
    assert_eq!(got, want);

    // the exact-40% box survives in the first tile, the 39% one does not
    let first = &want[&(1, 0, 0)];
    assert!(first.contains(&(1, 1240, 100, 40, 50)));
    assert!(!first.contains(&(1, 1241, 100, 39, 50)));
}

#[test]
fn grid_matches_reference_enumeration() {
    let grid = tile_grid(W, H, 1280, 300).unwrap();
    let want: Vec<(u32, u32)> = origins(H)
        .iter()
        .flat_map(|&y| origins(W).into_iter().map(move |x| (x, y)))
        .collect();
    assert_eq!(grid, want);
    assert_eq!(grid.len(), 24);
}
