//! Annotation files.
//!
//! ```json
//! { "image": "scene_0000.png", "width": 256, "height": 256,
//!   "keypoints": [{"x": 10.5, "y": 20.5, "type_id": 7}],
//!   "regions": [{"x0": 0, "y0": 0, "x1": 256, "y1": 256, "class": "main"}],
//!   "symbols": [{"class": "block", "keypoint_indices": [0, 1, 2, 3]}] }
//! ```
//!
//! Keypoints may carry an optional `"score"` (default 1). The image path is
//! relative to the directory holding the JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Keypoint, RectangleSymbol, RegionBox};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub keypoints: Vec<Keypoint>,
    #[serde(default)]
    pub regions: Vec<RegionBox>,
    #[serde(default)]
    pub symbols: Vec<RectangleSymbol>,
}

impl Annotation {
    /// Checks the invariants serde cannot express.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::schema("width", "image dimensions must be positive"));
        }
        for (i, k) in self.keypoints.iter().enumerate() {
            if !k.x.is_finite() || k.x < 0.0 || k.x >= self.width as f64 {
                return Err(Error::schema(format!("keypoints[{i}].x"), format!("{} outside [0, {})", k.x, self.width)));
            }
            if !k.y.is_finite() || k.y < 0.0 || k.y >= self.height as f64 {
                return Err(Error::schema(format!("keypoints[{i}].y"), format!("{} outside [0, {})", k.y, self.height)));
            }
            if !(0.0..=1.0).contains(&k.score) {
                return Err(Error::schema(format!("keypoints[{i}].score"), "score must be in [0, 1]"));
            }
        }
        for (i, s) in self.symbols.iter().enumerate() {
            for (j, &idx) in s.keypoint_indices.iter().enumerate() {
                if idx >= self.keypoints.len() {
                    return Err(Error::schema(
                        format!("symbols[{i}].keypoint_indices[{j}]"),
                        format!("index {idx} out of range ({} keypoints)", self.keypoints.len()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Annotation> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ann: Annotation = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::schema(field, e.into_inner().to_string())
        })?;
        ann.validate()?;
        Ok(ann)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Annotation::from_json(&text)
}

pub fn save_annotations(ann: &Annotation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ann.to_json()).map_err(|e| Error::io(path, e))
}

/// A raster together with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub raster: Raster,
    pub annotation: Annotation,
}

impl AnnotatedImage {
    /// Loads the JSON at `path` and the raster it references.
    pub fn load(path: impl AsRef<Path>) -> Result<AnnotatedImage> {
        let path = path.as_ref();
        let annotation = load_annotations(path)?;
        let image_path = image_path_for(path, &annotation.image);
        let raster = Raster::load(&image_path)?;
        if raster.width() != annotation.width || raster.height() != annotation.height {
            return Err(Error::schema(
                "width",
                format!(
                    "annotation says {}x{} but {} is {}x{}",
                    annotation.width,
                    annotation.height,
                    image_path.display(),
                    raster.width(),
                    raster.height()
                ),
            ));
        }
        Ok(AnnotatedImage { raster, annotation })
    }

    /// Writes `<dir>/<stem>.png` and `<dir>/<stem>.json`; returns the JSON path.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let image_name = format!("{stem}.png");
        self.raster.save(dir.join(&image_name))?;
        let ann = Annotation {
            image: image_name,
            ..self.annotation.clone()
        };
        let json = dir.join(format!("{stem}.json"));
        save_annotations(&ann, &json)?;
        Ok(json)
    }
}

fn image_path_for(json: &Path, image: &str) -> PathBuf {
    json.parent().unwrap_or(Path::new(".")).join(image)
}
