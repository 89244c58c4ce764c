//! Shared fixtures for the CLI and acceptance tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use rawdet_core::rng::stream_rng;
use rawdet_core::{Annotation, BBox, Category, ConditionTag, DatasetIndex, ImageRecord};

/// Images per condition in the published dataset, in table order.
pub const CONDITION_COUNTS: [usize; 9] = [477, 1210, 804, 1110, 1252, 244, 1842, 325, 521];

/// Index with the published per-condition image counts and `instances`
/// boxes spread as evenly as possible over the images.
pub fn table_shaped_index(instances: usize) -> DatasetIndex {
    let mut rng = stream_rng(2024, 0);
    let mut images = Vec::new();
    for (tag, &n) in ConditionTag::ALL.iter().zip(&CONDITION_COUNTS) {
        for _ in 0..n {
            let id = images.len() as u64 + 1;
            images.push(ImageRecord {
                id,
                file_name: format!("{id:05}.png"),
                width: 6000,
                height: 4000,
                condition: *tag,
                tile: None,
            });
        }
    }
    let n_img = images.len();
    let mut annotations = Vec::with_capacity(instances);
    for k in 0..instances {
        let image_id = (k % n_img) as u64 + 1;
        let w = rng.random_range(20.0..800.0);
        let h = rng.random_range(20.0..800.0);
        annotations.push(Annotation {
            id: k as u64 + 1,
            image_id,
            category_id: rng.random_range(1..=19),
            bbox: BBox {
                x: rng.random_range(0.0..6000.0 - w),
                y: rng.random_range(0.0..4000.0 - h),
                w,
                h,
            },
            ignore: false,
        });
    }
    let categories = (1..=19)
        .map(|id| Category {
            id,
            name: format!("class{id}"),
        })
        .collect();
    DatasetIndex::new(images, annotations, categories).unwrap()
}

pub fn rawdet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rawdet"))
}

pub fn run(args: &[&str]) -> Output {
    rawdet().args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every regular file below `root`, relative paths sorted, with contents.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_owned(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
