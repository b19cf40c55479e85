use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use symspot::config::RunConfig;
use symspot::detect::{detect_image, detections_to_csv, heatmap_image, read_detections_csv, tile, PatchGrid, PatchPredictor};
use symspot::eval::KeypointReport;
use symspot::experiment::{curves_csv, run_ablation, summary_csv, tile_samples, Arm};
use symspot::group::group_symbols_with;
use symspot::model::{load_checkpoint, save_checkpoint, train as train_predictor, Predictor};
use symspot::rng::substream_item;
use symspot::schedule::KernelSchedule;
use symspot::synth::{generate_scene, SceneSpec};
use symspot::{AnnotatedImage, Keypoint, Raster};

use crate::inputs::{image_key, json_files, load_ground_truth, load_predictions, GroupedImage};
use crate::{AblateArgs, DetectArgs, EvalArgs, GroupArgs, SynthArgs, TrainArgs};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<()> {
    cfg.synth.validate().context("invalid [synth] scene settings")?;
    let dir = a.out.clone().unwrap_or_else(|| cfg.paths.data_dir.clone()).join(&a.split);
    let stream = format!("synth/{}", a.split);
    for i in 0..a.count {
        let spec = SceneSpec {
            rng_seed: substream_item(cfg.seed, &stream, i as u64),
            ..cfg.synth.clone()
        };
        let scene = generate_scene(&spec).with_context(|| format!("scene {i} of split {}", a.split))?;
        scene.save(&dir, &format!("scene_{i:04}"))?;
    }
    println!("wrote {} scenes to {}", a.count, dir.display());
    Ok(())
}

fn load_split(dir: &Path) -> Result<Vec<AnnotatedImage>> {
    json_files(dir)?
        .iter()
        .map(|f| AnnotatedImage::load(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}

/// The configured schedule with its variant and epoch count replaced.
fn adjust_schedule(s: KernelSchedule, variant: Option<&str>, epochs: Option<usize>) -> Result<KernelSchedule> {
    let m = epochs.unwrap_or(s.epochs());
    let (hi, lo) = (s.sigma_max(), s.sigma_min());
    let alpha = match s {
        KernelSchedule::Pgk { alpha, .. } => alpha,
        _ => 0.3,
    };
    let out = match variant.unwrap_or(s.name()) {
        "pgk" => KernelSchedule::pgk(hi, lo, alpha, m)?,
        "fixed" => KernelSchedule::fixed(lo, m)?,
        "naive_switch" => KernelSchedule::naive_switch(hi, lo, m / 2, m)?,
        other => bail!("unknown schedule {other}"),
    };
    Ok(out)
}

pub fn train(cfg: &RunConfig, a: &TrainArgs) -> Result<()> {
    let schedule = adjust_schedule(cfg.schedule, a.schedule.as_deref(), a.epochs)?;
    let mut run = cfg.clone();
    run.schedule = schedule;
    run.validate()?;
    let data_dir = a.data_dir.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
    let train_dir = data_dir.join("train");
    if !train_dir.is_dir() {
        bail!("training data directory {} does not exist", train_dir.display());
    }
    let patch = run.predictor.patch_size;
    let train_set = tile_samples(&load_split(&train_dir)?, patch)?;
    if train_set.is_empty() {
        bail!("no annotated images in {}", train_dir.display());
    }
    let val_dir = data_dir.join("val");
    let val_set = if val_dir.is_dir() { tile_samples(&load_split(&val_dir)?, patch)? } else { Vec::new() };
    log::info!("{} training and {} validation patches", train_set.len(), val_set.len());

    let mut p = Predictor::new(run.effective_predictor())?;
    let mut report = train_predictor(&mut p, &train_set, &val_set, &schedule)?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| run.paths.checkpoint.clone());
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_checkpoint(&p, &ckpt)?;
    report.checkpoint = Some(ckpt.display().to_string());
    let csv = run.paths.output_dir.join("train_report.csv");
    write_file(&csv, report.to_csv())?;
    println!("checkpoint {}, report {}", ckpt.display(), csv.display());
    Ok(())
}

pub fn detect(cfg: &RunConfig, a: &DetectArgs) -> Result<()> {
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let p = load_checkpoint(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let size = p.patch_size();
    let grid = PatchGrid::new(size, a.stride.unwrap_or(cfg.grid.stride))?;
    let mut opts = cfg.detect_options();
    if let Some(t) = a.threshold {
        opts.threshold = t;
    }
    let mut rows: Vec<(String, Keypoint)> = Vec::new();
    for path in &a.images {
        let raster = Raster::load(path)?;
        let key = image_key(&path.to_string_lossy());
        let dets = detect_image(&p, &raster, &grid, &opts)?;
        log::info!("{key}: {} detections", dets.len());
        rows.extend(dets.into_iter().map(|d| (key.clone(), d.keypoint)));
        if let Some(dir) = &a.heatmap_dir {
            dump_heatmaps(&p, &raster, &grid, dir, &key)?;
        }
    }
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.output_dir.join("detections.csv"));
    write_file(&out, detections_to_csv(rows.iter().map(|(k, d)| (k.as_str(), d))))?;
    println!("{} detections written to {}", rows.len(), out.display());
    Ok(())
}

fn dump_heatmaps(p: &Predictor, raster: &Raster, grid: &PatchGrid, dir: &Path, key: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = Path::new(key).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for patch in tile(raster, grid)? {
        let (h, _) = p.predict(&patch)?;
        heatmap_image(&h).save(dir.join(format!("{stem}_patch{:03}.pgm", patch.index)))?;
    }
    Ok(())
}

pub fn group(cfg: &RunConfig, a: &GroupArgs) -> Result<()> {
    let mut per_image: BTreeMap<String, Vec<Keypoint>> = BTreeMap::new();
    for row in read_detections_csv(&a.detections)? {
        per_image.entry(image_key(&row.image)).or_default().push(row.keypoint);
    }
    let mut regions = BTreeMap::new();
    for r in &a.regions {
        regions.extend(load_ground_truth(r)?.into_iter().map(|(k, ann)| (k, ann.regions)));
    }
    let mut out = Vec::with_capacity(per_image.len());
    for (image, keypoints) in per_image {
        let regions = regions.get(&image).cloned().unwrap_or_default();
        let boxes: Vec<_> = regions.iter().map(|r| r.bbox).collect();
        let result = group_symbols_with(&keypoints, &boxes, &cfg.group);
        log::info!("{image}: {} symbols, {} unmatched points", result.symbols.len(), result.unmatched.len());
        out.push(GroupedImage {
            image,
            keypoints,
            regions,
            symbols: result.symbols,
        });
    }
    let path = a.out.clone().unwrap_or_else(|| cfg.paths.output_dir.join("symbols.json"));
    write_file(&path, serde_json::to_string_pretty(&out)?)?;
    println!("{} symbols written to {}", out.iter().map(|g| g.symbols.len()).sum::<usize>(), path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    cfg.validate()?;
    let gt = load_ground_truth(&a.gt)?;
    let pred = load_predictions(&a.pred)?;
    if let Some(k) = pred.keys().find(|k| !gt.contains_key(*k)) {
        bail!("predictions for image {k} have no ground truth");
    }
    let t = &cfg.thresholds;
    let mut report = KeypointReport::default();
    let empty = Default::default();
    for (key, g) in &gt {
        let p = pred.get(key).unwrap_or(&empty);
        report.add_image(&p.keypoints, &g.keypoints, t.tau_p);
        if let Some(symbols) = &p.symbols {
            report.add_symbols(symbols, &p.keypoints, &g.symbols, &g.keypoints, t.tau_p);
        }
        if let Some(r) = &p.regions {
            report.add_regions(r, &g.regions, t.tau_o);
        }
    }
    let csv = report.to_csv();
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.output_dir.join("metrics.csv"));
    write_file(&out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(cfg: &RunConfig, a: &AblateArgs) -> Result<()> {
    let arms: Vec<Arm> = if a.arms.is_empty() {
        Arm::ALL.to_vec()
    } else {
        a.arms
            .iter()
            .map(|n| Arm::parse(n).with_context(|| format!("unknown arm {n}")))
            .collect::<Result<_>>()?
    };
    let seeds = if a.seeds.is_empty() { vec![cfg.seed] } else { a.seeds.clone() };
    let mut spec = cfg.ablation.clone();
    spec.data_seed = cfg.seed;
    if let Some(m) = a.epochs {
        spec.epochs = m;
    }
    let results = run_ablation(&spec, &arms, &seeds)?;
    let dir: PathBuf = cfg.paths.output_dir.clone();
    write_file(&dir.join("ablation_curves.csv"), curves_csv(&results))?;
    let summary = summary_csv(&results);
    write_file(&dir.join("ablation_summary.csv"), &summary)?;
    println!("{:<16} {:>5} {:>12} {:>8} {:>8}", "arm", "seed", "final_val", "f1", "apek");
    for r in &results {
        let apek = r.test.apek.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:>5} {:>12.6} {:>8.4} {:>8}",
            r.arm.name(),
            r.seed,
            r.final_val_loss(),
            r.test.prf.f1,
            apek
        );
    }
    Ok(())
}
