//! Run configuration: one TOML file for every command.
//!
//! ```toml
//! seed = 0
//!
//! [paths]
//! data_dir = "data"
//! checkpoint = "out/model.ckpt"
//! output_dir = "out"
//!
//! [predictor]          # PredictorConfig; rng_seed is derived from `seed`
//! patch_size = 256
//!
//! [schedule]           # variant = "pgk" | "fixed" | "naive_switch"
//! variant = "pgk"
//! sigma_max = 3.0
//! sigma_min = 1.0
//! alpha = 0.3
//! epochs = 200
//!
//! [grid]
//! patch_size = 256
//! stride = 256
//!
//! [thresholds]
//! threshold = 0.6
//! tau_p = 2.0
//! tau_o = 0.5
//! dedup_radius = 2.0
//! nms_radius = 1
//!
//! [synth]              # SceneSpec used by `synth`
//! [group]              # GroupConfig
//! [ablation]           # AblationSpec used by `ablate`
//! ```
//!
//! Every key is optional. Precedence, lowest first: built-in defaults, the
//! file, environment (`SYMSPOT_OUTPUT_DIR`, `SYMSPOT_THREADS`), command-line
//! flags. Relative paths in the file resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{DetectOptions, PatchGrid};
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_TAU_O, DEFAULT_TAU_P};
use crate::experiment::AblationSpec;
use crate::group::GroupConfig;
use crate::model::PredictorConfig;
use crate::schedule::KernelSchedule;
use crate::synth::SceneSpec;

pub const ENV_OUTPUT_DIR: &str = "SYMSPOT_OUTPUT_DIR";
pub const ENV_THREADS: &str = "SYMSPOT_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            checkpoint: "out/model.ckpt".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Heatmap peak threshold.
    pub threshold: f64,
    pub tau_p: f64,
    pub tau_o: f64,
    pub dedup_radius: f64,
    pub nms_radius: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        let d = DetectOptions::default();
        Thresholds {
            threshold: d.threshold,
            tau_p: DEFAULT_TAU_P,
            tau_o: DEFAULT_TAU_O,
            dedup_radius: d.dedup_radius,
            nms_radius: d.nms_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub paths: Paths,
    pub predictor: PredictorConfig,
    pub schedule: KernelSchedule,
    pub grid: PatchGrid,
    pub thresholds: Thresholds,
    pub synth: SceneSpec,
    pub group: GroupConfig,
    pub ablation: AblationSpec,
    /// Worker threads; `None` leaves the choice to the thread pool.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let predictor = PredictorConfig::default();
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            schedule: KernelSchedule::Pgk {
                sigma_max: 3.0,
                sigma_min: 1.0,
                alpha: 0.3,
                epochs: predictor.epochs,
            },
            grid: PatchGrid::new(predictor.patch_size, predictor.patch_size).expect("default grid is valid"),
            predictor,
            thresholds: Thresholds::default(),
            synth: SceneSpec::default(),
            group: GroupConfig::default(),
            ablation: AblationSpec::default(),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            Error::Config(format!("at `{at}`: {}", e.into_inner().message()))
        })
    }

    /// Parses `path` and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `SYMSPOT_*` variables as returned by `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = lookup(ENV_OUTPUT_DIR).filter(|s| !s.is_empty()) {
            self.paths.output_dir = dir.into();
        }
        if let Some(n) = lookup(ENV_THREADS).filter(|s| !s.is_empty()) {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_THREADS}={n} is not a thread count")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    /// Predictor settings with the epoch count taken from the schedule and
    /// the seed taken from the root seed.
    pub fn effective_predictor(&self) -> PredictorConfig {
        PredictorConfig {
            epochs: self.schedule.epochs(),
            rng_seed: self.seed,
            ..self.predictor.clone()
        }
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            threshold: self.thresholds.threshold,
            nms_radius: self.thresholds.nms_radius,
            dedup_radius: self.thresholds.dedup_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        for (name, v) in [
            ("threshold", t.threshold),
            ("tau_p", t.tau_p),
            ("tau_o", t.tau_o),
            ("dedup_radius", t.dedup_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("thresholds.{name} must be positive, got {v}")));
            }
        }
        if t.tau_o > 1.0 {
            return Err(Error::Config(format!("thresholds.tau_o must be at most 1, got {}", t.tau_o)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.effective_predictor().validate()?;
        self.schedule.validate()?;
        self.grid.validate()?;
        if self.grid.patch_size != self.predictor.patch_size {
            return Err(Error::Config(format!(
                "grid.patch_size {} differs from predictor.patch_size {}",
                self.grid.patch_size, self.predictor.patch_size
            )));
        }
        Ok(())
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.data_dir, &mut self.checkpoint, &mut self.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
