//! Desk-scale training runs: synthetic patch sets and the schedule and
//! offset ablations.

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotatedImage;
use crate::detect::{detect_image, tile, DetectOptions, PatchGrid};
use crate::error::{Error, Result};
use crate::geom::Keypoint;
use crate::eval::{KeypointReport, Prf};
use crate::model::{train, PredictorConfig, Sample, TrainReport};
use crate::model::Predictor;
use crate::rng::substream_item;
use crate::schedule::KernelSchedule;
use crate::synth::{generate_scene, SceneSpec};

/// Settings shared by every arm of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Predictor settings; `patch_size` is also the scene size.
    pub predictor: PredictorConfig,
    pub epochs: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub alpha: f64,
    pub threshold: f64,
    pub tau_p: f64,
    /// Seed of the data streams; the predictor seed is set separately.
    pub data_seed: u64,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            n_train: 200,
            n_val: 50,
            n_test: 50,
            predictor: PredictorConfig {
                patch_size: 64,
                ..PredictorConfig::default()
            },
            epochs: 60,
            sigma_max: 3.0,
            sigma_min: 1.0,
            alpha: 0.3,
            threshold: crate::codec::DEFAULT_THRESHOLD,
            tau_p: crate::eval::DEFAULT_TAU_P,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Pgk,
    /// Constant sigma equal to `sigma_min`.
    Fixed,
    /// Constant sigma equal to `sigma_max`.
    FixedMax,
    /// `sigma_max` for the first half of training, `sigma_min` after.
    NaiveSwitch,
    /// Progressive schedule with the offset head switched off.
    PgkNoOffsets,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::Pgk, Arm::Fixed, Arm::FixedMax, Arm::NaiveSwitch, Arm::PgkNoOffsets];

    pub fn parse(name: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Pgk => "pgk",
            Arm::Fixed => "fixed",
            Arm::FixedMax => "fixed_max",
            Arm::NaiveSwitch => "naive_switch",
            Arm::PgkNoOffsets => "pgk_no_offsets",
        }
    }

    pub fn schedule(self, spec: &AblationSpec) -> Result<KernelSchedule> {
        match self {
            Arm::Pgk | Arm::PgkNoOffsets => KernelSchedule::pgk(spec.sigma_max, spec.sigma_min, spec.alpha, spec.epochs),
            Arm::Fixed => KernelSchedule::fixed(spec.sigma_min, spec.epochs),
            Arm::FixedMax => KernelSchedule::fixed(spec.sigma_max, spec.epochs),
            Arm::NaiveSwitch => KernelSchedule::naive_switch(spec.sigma_max, spec.sigma_min, spec.epochs / 2, spec.epochs),
        }
    }
}

/// Scene recipe for one patch, varied by index.
fn patch_scene(size: usize, seed: u64) -> SceneSpec {
    let pick = |k: u64, n: u64| (seed.rotate_left(k as u32 * 7) ^ (k * 0x9E37)) % n;
    SceneSpec {
        image_width: size,
        image_height: size,
        n_blocks: 1 + pick(1, 2) as usize,
        n_walls: pick(2, 2) as usize,
        n_scales: pick(3, 2) as usize,
        min_symbol_size: 8,
        max_symbol_size: (size / 2).max(12),
        adjacency: 0.5,
        scale_ticks: pick(4, 2) as usize,
        rng_seed: seed,
        ..SceneSpec::default()
    }
}

/// `n` synthetic `size`-square scenes from the named data stream. A recipe
/// that cannot be placed is retried with the next seed of the stream.
pub fn build_patch_set(n: usize, size: usize, data_seed: u64, stream: &str) -> Result<Vec<AnnotatedImage>> {
    let mut out = Vec::with_capacity(n);
    let mut k = 0u64;
    while out.len() < n {
        let seed = substream_item(data_seed, stream, k);
        k += 1;
        match generate_scene(&patch_scene(size, seed)) {
            Ok(s) => out.push(s),
            Err(Error::Generation(_)) if k < 100 * (n as u64 + 1) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn to_samples(scenes: &[AnnotatedImage]) -> Vec<Sample> {
    scenes
        .iter()
        .map(|s| Sample {
            image: s.raster.normalized(),
            keypoints: s.annotation.keypoints.clone(),
        })
        .collect()
}

/// Cuts each scene into non-overlapping `patch_size` squares, keeping the
/// keypoints that fall inside each one in patch coordinates.
pub fn tile_samples(scenes: &[AnnotatedImage], patch_size: usize) -> Result<Vec<Sample>> {
    let grid = PatchGrid::new(patch_size, patch_size)?;
    let mut out = Vec::new();
    for s in scenes {
        for patch in tile(&s.raster, &grid)? {
            let (ox, oy) = (patch.origin.0 as f64, patch.origin.1 as f64);
            let keypoints = s
                .annotation
                .keypoints
                .iter()
                .map(|k| Keypoint { x: k.x - ox, y: k.y - oy, ..*k })
                .filter(|k| k.in_bounds(patch_size, patch_size))
                .collect();
            out.push(Sample {
                image: patch.raster.normalized(),
                keypoints,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub prf: Prf,
    /// `None` when nothing was detected.
    pub apek: Option<f64>,
    pub detections: usize,
}

/// Whole-image detection on each scene, pooled keypoint metrics.
pub fn evaluate_detection(p: &Predictor, scenes: &[AnnotatedImage], threshold: f64, tau_p: f64) -> Result<DetectionSummary> {
    let size = p.config().patch_size;
    let grid = PatchGrid::new(size, size)?;
    let opts = DetectOptions {
        threshold,
        ..DetectOptions::default()
    };
    let mut report = KeypointReport::default();
    let mut detections = 0;
    for s in scenes {
        let dets: Vec<_> = detect_image(p, &s.raster, &grid, &opts)?.into_iter().map(|d| d.keypoint).collect();
        detections += dets.len();
        report.add_image(&dets, &s.annotation.keypoints, tau_p);
    }
    let all = report.overall();
    Ok(DetectionSummary {
        prf: all.prf(),
        apek: all.apek(),
        detections,
    })
}

pub struct Splits {
    pub train: Vec<AnnotatedImage>,
    pub val: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
}

impl Splits {
    pub fn build(spec: &AblationSpec) -> Result<Splits> {
        let size = spec.predictor.patch_size;
        Ok(Splits {
            train: build_patch_set(spec.n_train, size, spec.data_seed, "train")?,
            val: build_patch_set(spec.n_val, size, spec.data_seed, "val")?,
            test: build_patch_set(spec.n_test, size, spec.data_seed, "test")?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub report: TrainReport,
    pub test: DetectionSummary,
}

impl ArmResult {
    pub fn final_val_loss(&self) -> f64 {
        self.report.final_val.map(|l| l.total).unwrap_or(f64::NAN)
    }

    /// Heatmap term of the final validation loss; comparable across arms
    /// whether or not offsets are trained.
    pub fn final_val_heatmap_loss(&self) -> f64 {
        self.report.final_val.map(|l| l.heatmap).unwrap_or(f64::NAN)
    }
}

/// Trains one arm from a fresh predictor seeded with `seed`.
pub fn run_arm(spec: &AblationSpec, arm: Arm, seed: u64, data: &Splits) -> Result<(ArmResult, Predictor)> {
    let config = PredictorConfig {
        rng_seed: seed,
        epochs: spec.epochs,
        use_offsets: arm != Arm::PgkNoOffsets,
        ..spec.predictor.clone()
    };
    let mut p = Predictor::new(config)?;
    let schedule = arm.schedule(spec)?;
    let report = train(&mut p, &to_samples(&data.train), &to_samples(&data.val), &schedule)?;
    let test = evaluate_detection(&p, &data.test, spec.threshold, spec.tau_p)?;
    log::info!(
        "{} seed {seed}: final val {:.6}, F1 {:.4}, APEK {:?}, {} detections",
        arm.name(),
        report.final_val.map(|l| l.total).unwrap_or(f64::NAN),
        test.prf.f1,
        test.apek,
        test.detections
    );
    Ok((
        ArmResult {
            arm,
            seed,
            report,
            test,
        },
        p,
    ))
}

/// Every arm for every seed, arms in the given order within each seed.
pub fn run_ablation(spec: &AblationSpec, arms: &[Arm], seeds: &[u64]) -> Result<Vec<ArmResult>> {
    let data = Splits::build(spec)?;
    let mut out = Vec::new();
    for &seed in seeds {
        for &arm in arms {
            out.push(run_arm(spec, arm, seed, &data)?.0);
        }
    }
    Ok(out)
}

/// `arm,seed,epoch,sigma,train_loss,val_loss,val_heatmap,val_offset,val_pdf_scaled` rows.
pub fn curves_csv(results: &[ArmResult]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("arm,seed,epoch,sigma,train_loss,val_loss,val_heatmap,val_offset,val_pdf_scaled\n");
    for r in results {
        for e in &r.report.epochs {
            let val = e
                .val
                .map(|v| format!("{:.8},{:.8},{:.8},{:.8}", v.total, v.heatmap, v.offset, v.pdf_scaled_total(e.sigma)))
                .unwrap_or_else(|| ",,,".into());
            let _ = writeln!(s, "{},{},{},{:.6},{:.8},{val}", r.arm.name(), r.seed, e.epoch, e.sigma, e.train_loss);
        }
    }
    s
}

/// `arm,seed,final_sigma,final_val_loss,final_val_heatmap,precision,recall,f1,apek,detections` rows.
pub fn summary_csv(results: &[ArmResult]) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("arm,seed,final_sigma,final_val_loss,final_val_heatmap,precision,recall,f1,apek,detections\n");
    for r in results {
        let apek = r.test.apek.map(|a| format!("{a:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.8},{:.8},{:.6},{:.6},{:.6},{apek},{}",
            r.arm.name(),
            r.seed,
            r.report.final_sigma,
            r.final_val_loss(),
            r.final_val_heatmap_loss(),
            r.test.prf.precision,
            r.test.prf.recall,
            r.test.prf.f1,
            r.test.detections
        );
    }
    s
}
