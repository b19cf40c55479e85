//! Heatmap encoding and decoding of keypoints.
//!
//! A keypoint at image position `mu` is assigned to heatmap cell
//! `floor(mu / R)`. The fractional remainder `mu / R - floor(mu / R)` lies in
//! `[0, 1)`; it is stored re-centered by `-1/2`, so stored offsets lie in
//! `[-1/2, 1/2)` and decoding reads `R * (cell + 1/2 + offset)`. A decoder
//! without offsets therefore returns cell centers, at most `R / 2` from the
//! truth along each axis.

use ndarray::{Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::detect::nms_above;
use crate::error::{Error, Result};
use crate::geom::Keypoint;
use crate::taxonomy::KeypointType;

/// Detection threshold on unit-peak heatmaps.
pub const DEFAULT_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeMode {
    /// `exp(-d^2 / 2 sigma^2) / (sqrt(2 pi) sigma)`.
    NormalizedPdf,
    /// `exp(-d^2 / 2 sigma^2)`; peaks at 1.
    #[default]
    UnitPeak,
}

/// Per-class response maps, shape `(C, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Array3<f64>,
    pub down_sample: usize,
    pub mode: AmplitudeMode,
}

impl Heatmap {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }
}

/// Per-class offsets, `values` shape `(2C, h, w)` with channel `2c` holding x
/// and `2c + 1` holding y; `mask` shape `(C, h, w)` marks supervised cells.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetMap {
    pub values: Array3<f64>,
    pub mask: Array3<bool>,
}

impl OffsetMap {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        OffsetMap {
            values: Array3::zeros((2 * channels, h, w)),
            mask: Array3::from_elem((channels, h, w), false),
        }
    }

    #[inline]
    pub fn at(&self, channel: usize, y: usize, x: usize) -> (f64, f64) {
        (self.values[[2 * channel, y, x]], self.values[[2 * channel + 1, y, x]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTarget {
    pub heatmap: Heatmap,
    pub offsets: OffsetMap,
    pub sigma: f64,
}

/// Heatmap cell of a keypoint together with its quantization error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub cell: (usize, usize),
    /// `mu / R - cell`, in `[0, 1)` per axis.
    pub raw_offset: (f64, f64),
    /// `raw_offset - 1/2`, in `[-1/2, 1/2)` per axis.
    pub offset: (f64, f64),
}

/// Maps an image point to its heatmap cell. `bounds` is the image size.
pub fn quantize(x: f64, y: f64, r: usize, bounds: (usize, usize)) -> Result<Quantized> {
    if r == 0 {
        return Err(Error::Domain("down-sampling rate must be >= 1".into()));
    }
    let (w, h) = bounds;
    if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
        return Err(Error::Domain(format!("point ({x}, {y}) outside image {w}x{h}")));
    }
    let (sx, sy) = (x / r as f64, y / r as f64);
    let (cx, cy) = (sx.floor(), sy.floor());
    let raw = (sx - cx, sy - cy);
    Ok(Quantized {
        cell: (cx as usize, cy as usize),
        raw_offset: raw,
        offset: (raw.0 - 0.5, raw.1 - 0.5),
    })
}

/// Image coordinate of a cell plus a stored (re-centered) offset.
#[inline]
pub fn cell_to_image(cell: usize, offset: f64, r: usize) -> f64 {
    r as f64 * (cell as f64 + 0.5 + offset)
}

/// Gaussian kernel value at `(x, y)` for a keypoint at `mu`.
#[inline]
pub fn gaussian(mu: (f64, f64), sigma: f64, x: f64, y: f64, mode: AmplitudeMode) -> f64 {
    let d2 = (x - mu.0).powi(2) + (y - mu.1).powi(2);
    let e = (-d2 / (2.0 * sigma * sigma)).exp();
    match mode {
        AmplitudeMode::UnitPeak => e,
        AmplitudeMode::NormalizedPdf => e / ((2.0 * std::f64::consts::PI).sqrt() * sigma),
    }
}

/// Spatial gradient `(dH/dx, dH/dy)` of the normalized Gaussian.
///
/// `dH/dx = -(x - mu_x) / (sqrt(2 pi) sigma^3) * exp(-d^2 / 2 sigma^2)`.
pub fn heatmap_gradient(mu: (f64, f64), sigma: f64, x: f64, y: f64) -> (f64, f64) {
    let g = gaussian(mu, sigma, x, y, AmplitudeMode::NormalizedPdf) / (sigma * sigma);
    (-(x - mu.0) * g, -(y - mu.1) * g)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma must be positive, got {sigma}")))
    }
}

/// Renders one Gaussian per keypoint into its class channel, combining
/// overlapping Gaussians by elementwise maximum.
pub fn encode_heatmap(
    points: &[Keypoint],
    sigma: f64,
    shape: (usize, usize, usize),
    r: usize,
    mode: AmplitudeMode,
) -> Result<Heatmap> {
    check_sigma(sigma)?;
    let (c, h, w) = shape;
    let mut values = Array3::<f64>::zeros((c, h, w));
    for p in points {
        let q = quantize(p.x, p.y, r, (w * r, h * r))?;
        let ch = p.kind.channel();
        if ch >= c {
            return Err(Error::Contract(format!("type {} has no channel in a {c}-channel heatmap", p.kind)));
        }
        let mu = (q.cell.0 as f64, q.cell.1 as f64);
        let mut plane = values.index_axis_mut(Axis(0), ch);
        for ((y, x), v) in plane.indexed_iter_mut() {
            let g = gaussian(mu, sigma, x as f64, y as f64, mode);
            if g > *v {
                *v = g;
            }
        }
    }
    Ok(Heatmap {
        values,
        down_sample: r,
        mode,
    })
}

/// Training target: unit-peak heatmap plus offsets supervised at each
/// keypoint's own cell. When two keypoints of one class share a cell the
/// first one keeps it.
pub fn encode_target(points: &[Keypoint], sigma: f64, shape: (usize, usize, usize), r: usize) -> Result<EncodedTarget> {
    let heatmap = encode_heatmap(points, sigma, shape, r, AmplitudeMode::UnitPeak)?;
    let (c, h, w) = shape;
    let mut offsets = OffsetMap::zeros(c, h, w);
    for p in points {
        let q = quantize(p.x, p.y, r, (w * r, h * r))?;
        let ch = p.kind.channel();
        let (x, y) = q.cell;
        if offsets.mask[[ch, y, x]] {
            continue;
        }
        offsets.mask[[ch, y, x]] = true;
        offsets.values[[2 * ch, y, x]] = q.offset.0;
        offsets.values[[2 * ch + 1, y, x]] = q.offset.1;
    }
    Ok(EncodedTarget {
        heatmap,
        offsets,
        sigma,
    })
}

/// Decodes every NMS peak above `threshold` (radius 1 cell).
pub fn decode_argmax(h: &Heatmap, offsets: Option<&OffsetMap>, threshold: f64) -> Result<Vec<Keypoint>> {
    decode_argmax_with(h, offsets, threshold, 1)
}

/// Decodes every cell that survives NMS with `nms_radius` and exceeds
/// `threshold` to `R * (cell + 1/2 + offset)`; without offsets the cell
/// center is used. The score is the heatmap value.
pub fn decode_argmax_with(
    h: &Heatmap,
    offsets: Option<&OffsetMap>,
    threshold: f64,
    nms_radius: usize,
) -> Result<Vec<Keypoint>> {
    let (c, hh, ww) = h.shape();
    if let Some(o) = offsets {
        if o.values.dim() != (2 * c, hh, ww) {
            return Err(Error::Contract(format!(
                "offset map {:?} does not match heatmap {:?}",
                o.values.dim(),
                (c, hh, ww)
            )));
        }
    }
    let r = h.down_sample;
    let mut out = Vec::new();
    for ch in 0..c {
        let kind = KeypointType::from_channel(ch)
            .ok_or_else(|| Error::Contract(format!("heatmap channel {ch} has no keypoint type")))?;
        let plane = h.values.index_axis(Axis(0), ch);
        for (x, y) in nms_above(plane, nms_radius, threshold) {
            let v = plane[[y, x]];
            let (ox, oy) = offsets.map_or((0.0, 0.0), |o| o.at(ch, y, x));
            out.push(Keypoint::new(cell_to_image(x, ox, r), cell_to_image(y, oy, r), kind).with_score(v));
        }
    }
    Ok(out)
}

/// Expectation of the cell grid under the channel normalized to sum 1,
/// mapped to image coordinates with the cell-center convention. Negative
/// responses are treated as zero.
pub fn decode_soft_argmax(channel: ArrayView2<f64>, r: usize) -> Result<(f64, f64)> {
    let (mut total, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for ((y, x), &v) in channel.indexed_iter() {
        let v = v.max(0.0);
        total += v;
        sx += v * x as f64;
        sy += v * y as f64;
    }
    if !(total > 0.0) {
        return Err(Error::Undefined("soft-argmax undefined: channel has no positive mass".into()));
    }
    Ok((cell_to_image(0, sx / total, r), cell_to_image(0, sy / total, r)))
}

/// Index of the largest value; ties go to the smallest row-major index.
pub fn argmax(values: ArrayView2<f64>) -> (usize, usize) {
    let mut best = (0, 0);
    let mut best_v = f64::NEG_INFINITY;
    for ((y, x), &v) in values.indexed_iter() {
        if v > best_v {
            best_v = v;
            best = (x, y);
        }
    }
    best
}

/// Monte-Carlo estimate of how often additive Gaussian noise moves the
/// argmax of a single unit-peak Gaussian off its cell.
#[derive(Debug, Clone, Copy)]
pub struct MvdProbe {
    /// Side of the square heatmap; the keypoint sits in its central cell.
    pub size: usize,
}

impl Default for MvdProbe {
    fn default() -> Self {
        MvdProbe { size: 32 }
    }
}

impl MvdProbe {
    pub fn drift_probability(&self, sigma: f64, noise_std: f64, trials: usize, rng_seed: u64) -> Result<f64> {
        check_sigma(sigma)?;
        if trials == 0 {
            return Err(Error::Domain("trials must be >= 1".into()));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Domain(format!("noise_std must be non-negative, got {noise_std}")));
        }
        let n = self.size;
        let center = (n / 2, n / 2);
        let clean = encode_heatmap(
            &[Keypoint::new(
                (center.0 as f64 + 0.5) * 1.0,
                (center.1 as f64 + 0.5) * 1.0,
                KeypointType::CornerNw,
            )],
            sigma,
            (KeypointType::CornerNw.channel() + 1, n, n),
            1,
            AmplitudeMode::UnitPeak,
        )?;
        let clean = clean.values.index_axis(Axis(0), KeypointType::CornerNw.channel()).to_owned();
        if noise_std == 0.0 {
            return Ok(if argmax(clean.view()) == center { 0.0 } else { 1.0 });
        }
        let normal = Normal::new(0.0, noise_std).expect("valid normal");
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut noisy = clean.clone();
        let mut moved = 0usize;
        for _ in 0..trials {
            for (dst, &src) in noisy.iter_mut().zip(clean.iter()) {
                *dst = src + normal.sample(&mut rng);
            }
            if argmax(noisy.view()) != center {
                moved += 1;
            }
        }
        Ok(moved as f64 / trials as f64)
    }
}

/// [`MvdProbe::drift_probability`] on the default 32x32 map.
pub fn mvd_drift_probability(sigma: f64, noise_std: f64, trials: usize, rng_seed: u64) -> Result<f64> {
    MvdProbe::default().drift_probability(sigma, noise_std, trials, rng_seed)
}
