//! Whole-image inference: tiling, per-patch decoding and stitching.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_argmax_with, encode_heatmap, encode_target, AmplitudeMode, Heatmap, OffsetMap, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::geom::Keypoint;
use crate::raster::Raster;
use crate::taxonomy::{KeypointType, NUM_TYPES};

/// Cells that are the maximum of their `(2r+1)^2` window, as `(x, y)` in
/// row-major order. Among equal values the smallest row-major index wins, so
/// a plateau yields a single survivor.
pub fn nms(plane: ArrayView2<f64>, radius: usize) -> Vec<(usize, usize)> {
    nms_above(plane, radius, f64::NEG_INFINITY)
}

/// [`nms`] restricted to cells strictly above `floor`.
pub fn nms_above(plane: ArrayView2<f64>, radius: usize, floor: f64) -> Vec<(usize, usize)> {
    let (h, w) = plane.dim();
    let r = radius.max(1);
    let mut out = Vec::new();
    for y in 0..h {
        'cell: for x in 0..w {
            let v = plane[[y, x]];
            if !(v > floor) {
                continue;
            }
            for ny in y.saturating_sub(r)..(y + r + 1).min(h) {
                for nx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    if (ny, nx) == (y, x) {
                        continue;
                    }
                    let n = plane[[ny, nx]];
                    let earlier = (ny, nx) < (y, x);
                    if n > v || (n == v && earlier) {
                        continue 'cell;
                    }
                }
            }
            out.push((x, y));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchGrid {
    pub patch_size: usize,
    /// Step between patch origins; equal to `patch_size` for a non-overlapping grid.
    pub stride: usize,
}

impl Default for PatchGrid {
    fn default() -> Self {
        PatchGrid {
            patch_size: 256,
            stride: 256,
        }
    }
}

impl PatchGrid {
    pub fn new(patch_size: usize, stride: usize) -> Result<Self> {
        let g = PatchGrid { patch_size, stride };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(Error::Config("patch_size and stride must be >= 1".into()));
        }
        if self.stride > self.patch_size {
            return Err(Error::Config(format!(
                "stride {} larger than patch {} would leave gaps",
                self.stride, self.patch_size
            )));
        }
        Ok(())
    }

    /// Patch origins along one axis of length `len`.
    pub fn origins(&self, len: usize) -> Vec<usize> {
        let mut v = vec![0];
        while v[v.len() - 1] + self.patch_size < len {
            let next = v[v.len() - 1] + self.stride;
            v.push(next);
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Patch {
    /// Row-major index in the grid.
    pub index: usize,
    /// Top-left corner in image pixels.
    pub origin: (usize, usize),
    pub raster: Raster,
}

/// Cuts `image` into `patch_size` squares; remainders are padded with background.
pub fn tile(image: &Raster, grid: &PatchGrid) -> Result<Vec<Patch>> {
    grid.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Contract("cannot tile an empty image".into()));
    }
    let xs = grid.origins(image.width());
    let ys = grid.origins(image.height());
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &oy in &ys {
        for &ox in &xs {
            out.push(Patch {
                index: out.len(),
                origin: (ox, oy),
                raster: image.crop_padded(ox, oy, grid.patch_size),
            });
        }
    }
    Ok(out)
}

/// Anything that maps a patch to per-class heatmaps (and optionally offsets).
pub trait PatchPredictor: Sync {
    fn patch_size(&self) -> usize;
    fn down_sample(&self) -> usize;
    fn predict(&self, patch: &Patch) -> Result<(Heatmap, Option<OffsetMap>)>;
}

/// Emits the encoded ground truth of whatever keypoints fall inside a patch.
/// Used to check the tiling and stitching path independently of learning.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub keypoints: Vec<Keypoint>,
    pub patch_size: usize,
    pub down_sample: usize,
    pub sigma: f64,
    pub with_offsets: bool,
}

impl OraclePredictor {
    pub fn new(keypoints: Vec<Keypoint>, patch_size: usize, down_sample: usize) -> Self {
        OraclePredictor {
            keypoints,
            patch_size,
            down_sample,
            sigma: 1.0,
            with_offsets: true,
        }
    }
}

impl PatchPredictor for OraclePredictor {
    fn patch_size(&self) -> usize {
        self.patch_size
    }

    fn down_sample(&self) -> usize {
        self.down_sample
    }

    fn predict(&self, patch: &Patch) -> Result<(Heatmap, Option<OffsetMap>)> {
        let (ox, oy) = (patch.origin.0 as f64, patch.origin.1 as f64);
        let size = self.patch_size as f64;
        let local: Vec<Keypoint> = self
            .keypoints
            .iter()
            .filter(|k| k.x >= ox && k.y >= oy && k.x < ox + size && k.y < oy + size)
            .map(|k| Keypoint { x: k.x - ox, y: k.y - oy, ..*k })
            .collect();
        let n = self.patch_size / self.down_sample;
        let shape = (NUM_TYPES, n, n);
        if self.with_offsets {
            let t = encode_target(&local, self.sigma, shape, self.down_sample)?;
            Ok((t.heatmap, Some(t.offsets)))
        } else {
            Ok((encode_heatmap(&local, self.sigma, shape, self.down_sample, AmplitudeMode::UnitPeak)?, None))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub keypoint: Keypoint,
    pub source_patch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectOptions {
    pub threshold: f64,
    pub nms_radius: usize,
    /// Same-class detections closer than this (pixels) are merged.
    pub dedup_radius: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            threshold: DEFAULT_THRESHOLD,
            nms_radius: 1,
            dedup_radius: 2.0,
        }
    }
}

/// Decodes one patch into image-space detections.
pub fn detect_patch(predictor: &dyn PatchPredictor, patch: &Patch, opts: &DetectOptions) -> Result<Vec<Detection>> {
    let (heat, offsets) = predictor.predict(patch)?;
    let local = decode_argmax_with(&heat, offsets.as_ref(), opts.threshold, opts.nms_radius)?;
    Ok(local
        .into_iter()
        .map(|k| Detection {
            keypoint: Keypoint {
                x: k.x + patch.origin.0 as f64,
                y: k.y + patch.origin.1 as f64,
                ..k
            },
            source_patch: patch.index,
        })
        .collect())
}

/// Full-image inference: tile, predict each patch, decode, shift to image
/// coordinates, drop anything in the padding and merge cross-patch duplicates.
pub fn detect_image(
    predictor: &dyn PatchPredictor,
    image: &Raster,
    grid: &PatchGrid,
    opts: &DetectOptions,
) -> Result<Vec<Detection>> {
    if grid.patch_size != predictor.patch_size() {
        return Err(Error::Contract(format!(
            "grid patch {} but predictor expects {}",
            grid.patch_size,
            predictor.patch_size()
        )));
    }
    let patches = tile(image, grid)?;
    let per_patch: Vec<Vec<Detection>> = patches
        .par_iter()
        .map(|p| detect_patch(predictor, p, opts))
        .collect::<Result<_>>()?;
    let (w, h) = (image.width(), image.height());
    let all: Vec<Detection> = per_patch
        .into_iter()
        .flatten()
        .filter(|d| d.keypoint.in_bounds(w, h))
        .collect();
    Ok(dedup(all, opts.dedup_radius))
}

/// Greedy merge: visit by descending score (then patch index and position)
/// and drop any detection within `radius` of a kept one of the same class.
/// The result is sorted by `(y, x, type)`.
pub fn dedup(mut dets: Vec<Detection>, radius: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.keypoint
            .score
            .total_cmp(&a.keypoint.score)
            .then(a.source_patch.cmp(&b.source_patch))
            .then(a.keypoint.y.total_cmp(&b.keypoint.y))
            .then(a.keypoint.x.total_cmp(&b.keypoint.x))
            .then(a.keypoint.kind.cmp(&b.keypoint.kind))
    });
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let dup = kept
            .iter()
            .any(|k| k.keypoint.kind == d.keypoint.kind && k.keypoint.distance(&d.keypoint) <= radius);
        if !dup {
            kept.push(d);
        }
    }
    kept.sort_by(|a, b| {
        a.keypoint
            .y
            .total_cmp(&b.keypoint.y)
            .then(a.keypoint.x.total_cmp(&b.keypoint.x))
            .then(a.keypoint.kind.cmp(&b.keypoint.kind))
    });
    kept
}

/// One row of a detections file.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub image: String,
    pub keypoint: Keypoint,
}

pub const CSV_HEADER: &str = "image,type_id,x,y,score";

/// Formats `image,type_id,x,y,score` rows with 6-decimal fixed point.
pub fn detections_to_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a Keypoint)>) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (image, k) in rows {
        let _ = writeln!(s, "{image},{},{:.6},{:.6},{:.6}", k.kind.id(), k.x, k.y, k.score);
    }
    s
}

pub fn parse_detections_csv(text: &str) -> Result<Vec<DetectionRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::schema("header", format!("expected `{CSV_HEADER}`"))),
    }
    lines
        .map(|(n, line)| {
            let field = |name: &str| format!("line {}: {name}", n + 1);
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 5 {
                return Err(Error::schema(field("row"), format!("expected 5 columns, got {}", cols.len())));
            }
            let num = |i: usize, name: &str| -> Result<f64> {
                cols[i].parse::<f64>().map_err(|e| Error::schema(field(name), e.to_string()))
            };
            let id: u8 = cols[1].parse().map_err(|e: std::num::ParseIntError| Error::schema(field("type_id"), e.to_string()))?;
            let kind = KeypointType::try_from(id).map_err(|m| Error::schema(field("type_id"), m))?;
            Ok(DetectionRow {
                image: cols[0].to_string(),
                keypoint: Keypoint::new(num(2, "x")?, num(3, "y")?, kind).with_score(num(4, "score")?),
            })
        })
        .collect()
}

pub fn read_detections_csv(path: impl AsRef<Path>) -> Result<Vec<DetectionRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections_csv(&text)
}

/// Per-channel view helper for callers that only hold a heatmap.
/// Grayscale view of a heatmap for debugging: per cell the maximum over
/// channels, 0 mapped to black and 1 to white.
pub fn heatmap_image(h: &Heatmap) -> Raster {
    let (_, rows, cols) = h.values.dim();
    let mut pixels = vec![0u8; rows * cols];
    for ((_, y, x), &v) in h.values.indexed_iter() {
        let p = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let cell = &mut pixels[y * cols + x];
        *cell = (*cell).max(p);
    }
    Raster::from_pixels(cols, rows, pixels).expect("sizes agree")
}

pub fn channel(h: &Heatmap, kind: KeypointType) -> ArrayView2<'_, f64> {
    h.values.index_axis(Axis(0), kind.channel())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Window-scan oracle for the tie rule, written independently of `nms`.
    fn nms_oracle(a: &Array2<f64>, r: usize) -> Vec<(usize, usize)> {
        let (h, w) = a.dim();
        let key = |y: usize, x: usize| (a[[y, x]], -((y * w + x) as i64));
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut best = (y, x);
                for ny in 0..h {
                    for nx in 0..w {
                        if ny.abs_diff(y) <= r && nx.abs_diff(x) <= r {
                            let (kv, ki) = key(ny, nx);
                            let (bv, bi) = key(best.0, best.1);
                            if kv > bv || (kv == bv && ki > bi) {
                                best = (ny, nx);
                            }
                        }
                    }
                }
                if best == (y, x) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    #[test]
    fn single_peak_single_survivor() {
        let a = Array2::from_shape_fn((9, 9), |(y, x)| {
            (-(((x as f64) - 4.0).powi(2) + ((y as f64) - 3.0).powi(2)) / 2.0).exp()
        });
        assert_eq!(nms(a.view(), 1), vec![(4, 3)]);
    }

    #[test]
    fn separated_peaks_both_survive() {
        let r = 1;
        let mut a = Array2::<f64>::zeros((3, 9));
        a[[1, 1]] = 1.0;
        a[[1, 1 + 2 * r + 2]] = 0.9;
        let s: Vec<_> = nms(a.view(), r).into_iter().filter(|&(x, y)| a[[y, x]] > 0.5).collect();
        assert_eq!(s, vec![(1, 1), (5, 1)]);
    }

    #[test]
    fn plateau_single_survivor() {
        for (ph, pw) in [(1, 2), (2, 2), (3, 3), (1, 5), (2, 4)] {
            let mut a = Array2::<f64>::zeros((8, 8));
            for y in 2..2 + ph {
                for x in 2..2 + pw {
                    a[[y, x]] = 0.8;
                }
            }
            let s: Vec<_> = nms(a.view(), 1).into_iter().filter(|&(x, y)| a[[y, x]] > 0.5).collect();
            assert_eq!(s, vec![(2, 2)], "{ph}x{pw}");
            assert_eq!(nms(a.view(), 1), nms_oracle(&a, 1));
        }
    }

    #[test]
    fn nms_matches_oracle_on_random_maps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            // coarse values force plenty of ties
            let a = Array2::from_shape_fn((7, 6), |_| rng.random_range(0..4) as f64);
            for r in 1..3 {
                assert_eq!(nms(a.view(), r), nms_oracle(&a, r));
            }
        }
    }

    #[test]
    fn tiling_counts() {
        let g = PatchGrid::new(256, 256).unwrap();
        let p = tile(&Raster::blank(512, 512), &g).unwrap();
        assert_eq!(p.len(), 4);
        let origins: Vec<_> = p.iter().map(|p| p.origin).collect();
        assert_eq!(origins, vec![(0, 0), (256, 0), (0, 256), (256, 256)]);

        let p = tile(&Raster::blank(300, 300), &g).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.iter().all(|p| p.raster.width() == 256 && p.raster.height() == 256));

        let p = tile(&Raster::blank(256, 256), &g).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].origin, (0, 0));

        assert_eq!(PatchGrid::new(256, 128).unwrap().origins(1024), vec![0, 128, 256, 384, 512, 640, 768]);
        assert!(PatchGrid::new(256, 0).is_err());
    }

    #[test]
    fn padding_is_background() {
        let mut img = Raster::blank(300, 300);
        img.fill_rect(0, 0, 300, 300, 0);
        let p = tile(&img, &PatchGrid::default()).unwrap();
        let last = &p[3];
        assert_eq!(last.raster.get(0, 0), 0);
        assert_eq!(last.raster.get(43, 43), 0);
        assert_eq!(last.raster.get(44, 44), 255);
    }

    #[test]
    fn dedup_keeps_higher_score_and_is_idempotent() {
        let k = |x, y, s| Detection {
            keypoint: Keypoint::new(x, y, KeypointType::CornerNw).with_score(s),
            source_patch: 0,
        };
        let other = Detection {
            keypoint: Keypoint::new(10.5, 10.0, KeypointType::CornerNe),
            source_patch: 1,
        };
        let d = dedup(vec![k(10.0, 10.0, 0.7), k(11.0, 10.0, 0.9), k(30.0, 10.0, 0.8), other], 2.0);
        assert_eq!(d.len(), 3);
        assert!(d.iter().any(|x| x.keypoint.x == 11.0));
        assert_eq!(dedup(d.clone(), 2.0), d);
    }

    #[test]
    fn csv_round_trip() {
        let k = [Keypoint::new(1.25, 2.5, KeypointType::TeeS).with_score(0.75)];
        let text = detections_to_csv(k.iter().map(|k| ("a.png", k)));
        assert!(text.contains("a.png,12,1.250000,2.500000,0.750000"));
        let rows = parse_detections_csv(&text).unwrap();
        assert_eq!(rows[0].keypoint, k[0]);
        assert!(parse_detections_csv("image,type_id,x,y,score\na,16,1,1,1\n").is_err());
        assert!(parse_detections_csv("nope\n").is_err());
    }

    #[test]
    fn blank_image_yields_nothing() {
        let oracle = OraclePredictor::new(vec![], 64, 4);
        let d = detect_image(&oracle, &Raster::blank(100, 70), &PatchGrid::new(64, 64).unwrap(), &DetectOptions::default()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn patch_size_mismatch_is_contract_error() {
        let oracle = OraclePredictor::new(vec![], 64, 4);
        let r = detect_image(&oracle, &Raster::blank(100, 70), &PatchGrid::new(32, 32).unwrap(), &DetectOptions::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
