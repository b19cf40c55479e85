//! Prediction and ground-truth files, keyed by image name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use symspot::annotation::load_annotations;
use symspot::detect::read_detections_csv;
use symspot::{Annotation, Keypoint, RectangleSymbol, RegionBox};

/// One image's grouping output; `symbols` index into `keypoints`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedImage {
    pub image: String,
    pub keypoints: Vec<Keypoint>,
    #[serde(default)]
    pub regions: Vec<RegionBox>,
    pub symbols: Vec<RectangleSymbol>,
}

/// Predictions for one image. `symbols` and `regions` are `None` when the
/// source carries no such layer.
#[derive(Debug, Clone, Default)]
pub struct Prediction {
    pub keypoints: Vec<Keypoint>,
    pub symbols: Option<Vec<RectangleSymbol>>,
    pub regions: Option<Vec<RegionBox>>,
}

/// Key under which annotations and detections meet: the image file name.
pub fn image_key(name: &str) -> String {
    Path::new(name)
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| name.to_string())
}

pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    out.sort();
    Ok(out)
}

/// Annotations from a JSON file or every JSON file in a directory.
pub fn load_ground_truth(path: &Path) -> Result<BTreeMap<String, Annotation>> {
    let files = if path.is_dir() { json_files(path)? } else { vec![path.to_path_buf()] };
    let mut out = BTreeMap::new();
    for f in files {
        let ann = load_annotations(&f).with_context(|| format!("loading {}", f.display()))?;
        let key = image_key(&ann.image);
        if out.insert(key.clone(), ann).is_some() {
            bail!("two annotations describe image {key}");
        }
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<BTreeMap<String, Prediction>> {
    if path.is_dir() {
        return Ok(from_annotations(load_ground_truth(path)?));
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let mut out: BTreeMap<String, Prediction> = BTreeMap::new();
            for row in read_detections_csv(path)? {
                out.entry(image_key(&row.image)).or_default().keypoints.push(row.keypoint);
            }
            Ok(out)
        }
        Some("json") => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            if text.trim_start().starts_with('[') {
                let grouped: Vec<GroupedImage> =
                    serde_json::from_str(&text).with_context(|| format!("parsing symbols JSON {}", path.display()))?;
                Ok(grouped
                    .into_iter()
                    .map(|g| {
                        let p = Prediction {
                            keypoints: g.keypoints,
                            symbols: Some(g.symbols),
                            regions: (!g.regions.is_empty()).then_some(g.regions),
                        };
                        (image_key(&g.image), p)
                    })
                    .collect())
            } else {
                Ok(from_annotations(load_ground_truth(path)?))
            }
        }
        _ => bail!("{}: expected a .csv or .json file or a directory", path.display()),
    }
}

fn from_annotations(anns: BTreeMap<String, Annotation>) -> BTreeMap<String, Prediction> {
    anns.into_iter()
        .map(|(k, a)| {
            let p = Prediction {
                keypoints: a.keypoints,
                symbols: Some(a.symbols),
                regions: Some(a.regions),
            };
            (k, p)
        })
        .collect()
}
