use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rawdet_core::datapipe::{downsample_to, slice_dataset, split_dataset, SliceConfig};
use rawdet_core::distill::run_gradient_checks;
use rawdet_core::io;
use rawdet_core::isp::{develop, develop_resized, downsample_image, render, DevelopOrder, RenderParams};
use rawdet_core::metrics::{evaluate, EvalConfig, Setting};
use rawdet_core::rng::derive_seed;
use rawdet_core::stats::{brightness_distribution, build_report, StatsReport};
use rawdet_core::unprocess::{
    builtin_profile_bank, image_seed, sample_augmentation, synthesize_sweep, unprocess_image,
    AugmentConfig, BayerSidecar, NoiseMapping, Range,
};
use rawdet_core::{condition_count_table, CameraProfile, DatasetIndex, SrgbImage};
use rayon::prelude::*;

use crate::{
    Command, DevelopArgs, DistillCheckArgs, DownsampleArgs, EvalArgs, Order, OutputFormat,
    SettingArg, SliceArgs, SplitArgs, StatsArgs, SweepArgs, SynthesizeArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synthesize(a) => synthesize(a),
        Command::Develop(a) => develop_cmd(a),
        Command::Split(a) => split(a),
        Command::Downsample(a) => downsample(a),
        Command::Slice(a) => slice(a),
        Command::Stats(a) => stats(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::DistillCheck(a) => distill_check(a),
    }
}

/// PNG files directly inside `dir`, sorted by name.
fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    ensure!(!out.is_empty(), "no PNG files in {}", dir.display());
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Drops a trailing odd row and column so the image tiles into 2×2 blocks.
fn crop_even(img: SrgbImage) -> Result<SrgbImage> {
    let (w, h) = (img.width() & !1, img.height() & !1);
    if (w, h) == (img.width(), img.height()) {
        return Ok(img);
    }
    ensure!(w > 0 && h > 0, "image of {}x{} is too small", img.width(), img.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for row in img.data().chunks_exact(img.width() * 3).take(h) {
        data.extend_from_slice(&row[..w * 3]);
    }
    Ok(SrgbImage::new(w, h, data)?)
}

fn read_inputs(dir: &Path) -> Result<Vec<(String, SrgbImage)>> {
    list_pngs(dir)?
        .par_iter()
        .map(|p| {
            let img = io::read_srgb_png(p)?;
            if img.width() % 2 != 0 || img.height() % 2 != 0 {
                log::warn!("{}: cropping to even size", p.display());
            }
            Ok((stem(p), crop_even(img)?))
        })
        .collect()
}

fn load_bank(path: Option<&Path>) -> Result<Vec<CameraProfile>> {
    let bank = match path {
        Some(p) => io::load_profile_bank(p)?,
        None => builtin_profile_bank(),
    };
    for p in &bank {
        p.validate().with_context(|| format!("profile {:?}", p.name))?;
    }
    Ok(bank)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_index(index: &DatasetIndex, path: &Path) -> Result<()> {
    write_text(path, &io::index_to_json(index))
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let bank = load_bank(a.profile_bank.as_deref())?;
    let m = NoiseMapping::default();
    let (nlo, nhi) = (a.noise_level.lo.powi(2), a.noise_level.hi.powi(2));
    let cfg = AugmentConfig {
        brightness: Range::new(a.brightness.lo, a.brightness.hi)?,
        lambda_shot: Range::new(nlo * m.base_shot, nhi * m.base_shot)?,
        lambda_read: Range::new(nlo * m.base_read, nhi * m.base_read)?,
        ..AugmentConfig::default()
    };
    cfg.validate()?;
    let inputs = read_inputs(&a.input_dir)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    inputs
        .par_iter()
        .map(|(id, img)| {
            let seed = image_seed(a.seed, id);
            let aug = sample_augmentation(seed, &cfg, bank.len())?;
            let profile = &bank[aug.ccm_index];
            let raw = unprocess_image(img, profile, &aug, derive_seed(seed, "noise", b""))?;
            let sidecar = BayerSidecar::new(profile, &aug, seed, raw.scale_factor);
            io::write_bayer(&raw.bayer, &sidecar, a.out_dir.join(format!("{id}.png")))
                .with_context(|| format!("writing image {id}"))
        })
        .collect::<Result<Vec<()>>>()?;
    log::info!("synthesized {} images into {}", inputs.len(), a.out_dir.display());
    Ok(())
}

fn develop_cmd(a: DevelopArgs) -> Result<()> {
    ensure!(a.gamma > 0.0, "--gamma must be > 0");
    let inputs = list_pngs(&a.input_dir)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    inputs
        .par_iter()
        .map(|path| {
            let (bayer, sidecar) = io::read_bayer(path)?;
            let target = a.target.map(|d| (d.width as usize, d.height as usize));
            let img = if a.full_isp {
                let full = render(&bayer, &RenderParams::from(&sidecar))?;
                match target {
                    Some((w, h)) => downsample_image(&full, w, h)?,
                    None => full,
                }
            } else {
                match target {
                    Some(t) => {
                        let order = match a.order {
                            Order::DevelopFirst => DevelopOrder::DevelopFirst,
                            Order::DownsampleFirst => DevelopOrder::DownsampleFirst,
                        };
                        develop_resized(&bayer, a.gamma, t, order)?
                    }
                    None => develop(&bayer, a.gamma)?,
                }
            };
            let id = stem(path);
            match a.format {
                OutputFormat::Png16 => io::write_rgb16_png(&img, a.out_dir.join(format!("{id}.png")))?,
                OutputFormat::Tensor => io::write_tensor(&img, a.out_dir.join(format!("{id}.tensor")))?,
            }
            Ok(())
        })
        .collect::<Result<Vec<()>>>()?;
    log::info!("developed {} images into {}", inputs.len(), a.out_dir.display());
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let index = io::load_index(&a.index)?;
    let s = split_dataset(&index, a.fraction, a.seed)?;
    save_index(&s.train, &a.out_dir.join("train.json"))?;
    save_index(&s.test, &a.out_dir.join("test.json"))?;
    let train = condition_count_table(&s.train);
    for (cond, total) in condition_count_table(&index) {
        log::info!("{cond}: {} train / {} test", train[&cond], total - train[&cond]);
    }
    log::info!("{} train / {} test images", s.train.images.len(), s.test.images.len());
    Ok(())
}

fn downsample(a: DownsampleArgs) -> Result<()> {
    let index = io::load_index(&a.index)?;
    let out = downsample_to(&index, a.target.width, a.target.height, a.min_area)?;
    let ignored = out.annotations.iter().filter(|x| x.ignore).count();
    save_index(&out, &a.out)?;
    log::info!("{} annotations, {ignored} ignored", out.annotations.len());
    Ok(())
}

fn slice(a: SliceArgs) -> Result<()> {
    let index = io::load_index(&a.index)?;
    let cfg = SliceConfig {
        tile: a.tile,
        overlap: a.overlap,
        keep_fraction: a.keep_frac,
        drop_empty: a.drop_empty,
    };
    let out = slice_dataset(&index, &cfg)?;
    save_index(&out, &a.out)?;
    log::info!(
        "{} images -> {} tiles with {} annotations",
        index.images.len(),
        out.images.len(),
        out.annotations.len()
    );
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))
}

fn write_stats_csvs(r: &StatsReport, dir: &Path) -> Result<()> {
    let mut w = csv_writer(&dir.join("condition_counts.csv"))?;
    w.write_record(["condition", "images"])?;
    for (c, n) in &r.condition_counts {
        w.write_record([c.clone(), n.to_string()])?;
    }
    w.flush()?;

    for (name, hist) in [
        ("instances_per_image.csv", &r.instances_per_image),
        ("categories_per_image.csv", &r.categories_per_image),
    ] {
        let mut w = csv_writer(&dir.join(name))?;
        w.write_record(["count", "images"])?;
        for (k, v) in &hist.bins {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush()?;
    }

    let mut w = csv_writer(&dir.join("relative_box_size.csv"))?;
    w.write_record(["bin_lo", "bin_hi", "count", "density"])?;
    let h = &r.relative_box_size;
    for (i, (c, d)) in h.counts.iter().zip(h.density()).enumerate() {
        let lo = h.lo + i as f64 * h.bin_width();
        w.write_record([lo.to_string(), (lo + h.bin_width()).to_string(), c.to_string(), d.to_string()])?;
    }
    w.flush()?;

    let mut w = csv_writer(&dir.join("instances_per_category.csv"))?;
    w.write_record(["category_id", "name", "count"])?;
    for c in &r.instances_per_category {
        w.write_record([c.category_id.to_string(), c.name.clone(), c.count.to_string()])?;
    }
    w.flush()?;

    if let Some(hm) = &r.center_heatmap {
        let mut w = csv_writer(&dir.join("center_heatmap.csv"))?;
        w.write_record(["row", "col", "density"])?;
        for row in 0..hm.grid {
            for col in 0..hm.grid {
                w.write_record([row.to_string(), col.to_string(), hm.at(col, row).to_string()])?;
            }
        }
        w.flush()?;
    }

    if let Some(b) = &r.brightness {
        let mut w = csv_writer(&dir.join("brightness.csv"))?;
        w.write_record(["group", "bin_lo", "bin_hi", "count", "density"])?;
        for (group, h) in &b.groups {
            for (i, (c, d)) in h.counts.iter().zip(h.density()).enumerate() {
                let lo = h.lo + i as f64 * h.bin_width();
                w.write_record([
                    group.name().to_owned(),
                    lo.to_string(),
                    (lo + h.bin_width()).to_string(),
                    c.to_string(),
                    d.to_string(),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let index = io::load_index(&a.index)?;
    let brightness = match &a.image_dir {
        Some(dir) => {
            let images = index
                .images
                .par_iter()
                .map(|rec| Ok((rec.condition, io::read_srgb_png(dir.join(&rec.file_name))?)))
                .collect::<Result<Vec<_>>>()?;
            Some(brightness_distribution(&images))
        }
        None => None,
    };
    let report = build_report(&index, brightness)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    write_text(
        &a.out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).context("serialising report")?,
    )?;
    write_stats_csvs(&report, &a.out_dir)?;
    log::info!(
        "{} images, {} instances, {:.1} instances per image",
        report.images,
        report.instances,
        report.instances_per_image.mean
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let gt = io::load_index(&a.gt)?;
    let dets = io::load_detections(&a.dets)?;
    let setting = match a.setting {
        SettingArg::Downsampled => Setting::Downsampled,
        SettingArg::Sliced => Setting::Sliced,
    };
    let report = evaluate(&gt, &dets, &EvalConfig::new(setting))?;
    let text = serde_json::to_string_pretty(&report).context("serialising report")? + "\n";
    match &a.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let bank = load_bank(a.profile_bank.as_deref())?;
    let Some(profile) = bank.iter().find(|p| p.name == a.profile) else {
        let names: Vec<&str> = bank.iter().map(|p| p.name.as_str()).collect();
        bail!("no profile named {:?}; available: {}", a.profile, names.join(", "));
    };
    let inputs = read_inputs(&a.input_dir)?;
    let sets = synthesize_sweep(
        &inputs,
        &a.brightness_list,
        &a.noise_list,
        profile,
        &NoiseMapping::default(),
        a.seed,
    )?;
    let mut summary = Vec::new();
    for set in &sets {
        let dir = a.out_dir.join(set.name());
        set.items
            .par_iter()
            .map(|item| io::write_bayer(&item.bayer, &item.sidecar, dir.join(format!("{}.png", item.image_id))))
            .collect::<rawdet_core::Result<Vec<()>>>()?;
        log::info!(
            "{}: mean {:.2} DN (noise-free {:.2} DN, target {})",
            set.name(),
            set.measured_brightness(),
            set.signal_brightness(),
            set.brightness
        );
        summary.push(serde_json::json!({
            "name": set.name(),
            "brightness": set.brightness,
            "noise_level": set.noise_level,
            "lambda_shot": set.noise.lambda_shot,
            "lambda_read": set.noise.lambda_read,
            "images": set.items.len(),
            "measured_brightness": set.measured_brightness(),
            "signal_brightness": set.signal_brightness(),
        }));
    }
    write_text(
        &a.out_dir.join("sweep.json"),
        &serde_json::to_string_pretty(&summary).context("serialising summary")?,
    )
}

fn distill_check(a: DistillCheckArgs) -> Result<()> {
    ensure!(a.instances > 0, "--instances must be positive");
    let r = run_gradient_checks(a.seed, a.instances, a.kl_pairs)?;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    println!(
        "{} kl-gradient: max rel err {:.3e} over {} instances (tol {:.0e}, h = {:.0e}), {} failures",
        verdict(r.kl_failures == 0),
        r.kl_max_rel_error,
        r.instances,
        r.tolerance,
        r.step,
        r.kl_failures
    );
    println!(
        "{} l1-subgradient: max rel err {:.3e} over {} instances (tol {:.0e}, h = {:.0e}), {} failures",
        verdict(r.l1_failures == 0),
        r.l1_max_rel_error,
        r.instances,
        r.tolerance,
        r.step,
        r.l1_failures
    );
    println!(
        "{} kl-non-negative: {} violations over {} pairs",
        verdict(r.kl_negative == 0),
        r.kl_negative,
        r.kl_pairs
    );
    ensure!(r.passed(), "gradient verification failed");
    Ok(())
}
