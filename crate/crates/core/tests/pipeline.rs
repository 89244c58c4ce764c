mod support;

use rand::Rng;
use rawdet_core::datapipe::train_count;
use rawdet_core::distill::run_gradient_checks;
use rawdet_core::isp::{render, RenderParams};
use rawdet_core::rng::stream_rng;
use rawdet_core::stats::{center_heatmap, instances_per_category, instances_per_image};
use rawdet_core::unprocess::{
    builtin_profile_bank, mosaic_normalized, synthesize_sweep, unprocess_image, unprocess_linear,
    AugmentSample, BayerSidecar, NoiseMapping,
};
use rawdet_core::{Annotation, BBox, Category, ConditionTag, DatasetIndex, ImageRecord, NoiseParams};
use support::fixtures::smooth_srgb;

/// Finds a target brightness for which the scaled linear image stays inside
/// `[0.001, 0.9]`.
fn in_range_augment<R: Rng>(
    rng: &mut R,
    img: &rawdet_core::SrgbImage,
    profile: &rawdet_core::CameraProfile,
) -> Option<AugmentSample> {
    for _ in 0..20 {
        let aug = AugmentSample {
            target_brightness: (rng.random_range(7.0f64..9.5)).exp(),
            noise: NoiseParams::zero(),
            wb_gains: [rng.random_range(1.2..2.4), 1.0, rng.random_range(1.2..2.4)],
            ccm_index: 0,
        };
        let (lin, _) = unprocess_linear(img, profile, &aug).unwrap();
        if lin.data().iter().all(|&v| (0.001..=0.9).contains(&v)) {
            return Some(aug);
        }
    }
    None
}

/// Interior pixels come back within two 8-bit codes. The outermost ring is
/// looser: with mirrored borders the missing channels there are one-sided
/// estimates, so the error grows with the local gradient.
#[test]
fn zero_noise_round_trip() {
    let bank = builtin_profile_bank();
    let mut rng = stream_rng(31, 0);
    let mut checked = 0;
    let (mut interior, mut border) = (0.0f64, 0.0f64);
    while checked < 20 {
        let img = smooth_srgb(&mut rng, 64, 48, 30.0, 225.0);
        let profile = &bank[rng.random_range(0..bank.len())];
        let Some(aug) = in_range_augment(&mut rng, &img, profile) else { continue };
        let raw = unprocess_image(&img, profile, &aug, 5).unwrap();
        let sidecar = BayerSidecar::new(profile, &aug, 5, raw.scale_factor);
        let out = render(&raw.bayer, &RenderParams::from(&sidecar)).unwrap();
        let (w, h) = (img.width(), img.height());
        for (i, (o, s)) in out.data().iter().zip(img.data()).enumerate() {
            let e = (o - *s as f64 / 255.0).abs();
            let (x, y) = ((i / 3) % w, (i / 3) / w);
            if x > 0 && y > 0 && x + 1 < w && y + 1 < h {
                interior = interior.max(e);
            } else {
                border = border.max(e);
            }
        }
        checked += 1;
    }
    assert!(interior <= 2.0 / 255.0, "interior error {interior}");
    assert!(border <= 3.0 / 255.0, "border error {border}");
}

/// Residual between the noisy and noise-free mosaic of a mid-grey image has
/// the variance the model predicts, and grows with the noise level.
#[test]
fn unprocess_noise_matches_model() {
    let profile = rawdet_core::CameraProfile::identity();
    let img = rawdet_core::SrgbImage::new(512, 512, vec![128; 512 * 512 * 3]).unwrap();
    let mapping = NoiseMapping::default();
    let mut last_std = 0.0;
    for level in [2.0, 5.0, 10.0] {
        let aug = AugmentSample {
            target_brightness: 20000.0,
            noise: mapping.params(level).unwrap(),
            wb_gains: [1.0; 3],
            ccm_index: 0,
        };
        let (lin, _) = unprocess_linear(&img, &profile, &aug).unwrap();
        let clean = mosaic_normalized(&lin, profile.cfa).unwrap();
        let noisy = unprocess_image(&img, &profile, &aug, 77).unwrap().bayer;
        let scale = (profile.white_level - profile.black_level) as f64;
        let (mut sq, mut model) = (0.0, 0.0);
        for (&q, &x) in noisy.samples().iter().zip(&clean) {
            let r = (q as f64 - profile.black_level as f64) / scale - x;
            sq += r * r;
            model += aug.noise.variance_at(x);
        }
        let ratio = sq / model;
        assert!((ratio - 1.0).abs() < 0.05, "level {level}: variance ratio {ratio}");
        let std = (sq / clean.len() as f64).sqrt();
        assert!(std > last_std);
        last_std = std;
    }
}

#[test]
fn sweep_does_not_depend_on_input_order() {
    let mut rng = stream_rng(3, 0);
    let data: Vec<(String, rawdet_core::SrgbImage)> = (0..4)
        .map(|i| (format!("img{i}"), smooth_srgb(&mut rng, 16, 16, 40.0, 200.0)))
        .collect();
    let mut reversed = data.clone();
    reversed.reverse();
    let profile = builtin_profile_bank()[1].clone();
    let m = NoiseMapping::default();
    let a = synthesize_sweep(&data, &[791.0, 80.0], &[1.0, 10.0], &profile, &m, 9).unwrap();
    let b = synthesize_sweep(&reversed, &[791.0, 80.0], &[1.0, 10.0], &profile, &m, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    let names: Vec<String> = a.iter().map(|s| s.name()).collect();
    assert_eq!(names, ["b791_n1", "b791_n10", "b80_n1", "b80_n10"]);
}

#[test]
fn gradient_suite_passes() {
    let r = run_gradient_checks(11, 200, 10_000).unwrap();
    assert!(r.passed(), "{r:?}");
}

fn record(id: u64, cond: ConditionTag, w: u32, h: u32) -> ImageRecord {
    ImageRecord {
        id,
        file_name: format!("{id}.png"),
        width: w,
        height: h,
        condition: cond,
        tile: None,
    }
}

/// Centres drawn uniformly over the frame give a flat heatmap (chi-square
/// with 63 degrees of freedom, 0.1% critical value 103.4).
#[test]
fn uniform_centres_give_flat_heatmap() {
    let mut rng = stream_rng(5, 0);
    let images = vec![record(1, ConditionTag::ALL[0], 1000, 800)];
    let n = 64_000;
    let anns: Vec<Annotation> = (0..n)
        .map(|i| {
            let (cx, cy) = (rng.random_range(0.0..1000.0), rng.random_range(0.0..800.0));
            Annotation {
                id: i + 1,
                image_id: 1,
                category_id: 1,
                bbox: BBox { x: cx - 0.5, y: cy - 0.5, w: 1.0, h: 1.0 },
                ignore: false,
            }
        })
        .collect();
    let index = DatasetIndex::new(images, anns, vec![Category { id: 1, name: "a".into() }]).unwrap();
    let hm = center_heatmap(&index, 8).unwrap();
    let expected = n as f64 / 64.0;
    let chi2: f64 = hm
        .density
        .iter()
        .map(|d| {
            let o = d * n as f64;
            (o - expected).powi(2) / expected
        })
        .sum();
    assert!(chi2 < 103.4, "chi2 = {chi2}");
    assert!((hm.density.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

/// Nineteen categories with counts 19, 18, …, 1 come back in that order.
#[test]
fn nineteen_category_ranking() {
    let categories: Vec<Category> = (1..=19).map(|id| Category { id, name: format!("k{id}") }).collect();
    let images = vec![record(1, ConditionTag::ALL[3], 500, 500)];
    let mut anns = Vec::new();
    for c in 1..=19u64 {
        for _ in 0..c {
            anns.push(Annotation {
                id: anns.len() as u64 + 1,
                image_id: 1,
                category_id: c,
                bbox: BBox { x: 1.0, y: 1.0, w: 5.0, h: 5.0 },
                ignore: false,
            });
        }
    }
    let index = DatasetIndex::new(images, anns, categories).unwrap();
    let ranked = instances_per_category(&index);
    let ids: Vec<u64> = ranked.iter().map(|c| c.category_id).collect();
    assert_eq!(ids, (1..=19).rev().collect::<Vec<_>>());
    assert_eq!(instances_per_image(&index).unwrap().mean, 190.0);
}

#[test]
fn floor_split_counts() {
    assert_eq!(train_count(476, 0.7), 333);
    assert_eq!(train_count(10, 0.7), 7);
    assert_eq!(train_count(1, 0.7), 0);
}
