//! Fully-convolutional keypoint predictor.
//!
//! A grayscale patch goes through a small convolution stack whose last
//! layer emits `3C` channels per heatmap cell: `C` heatmap logits (squashed
//! by a sigmoid) followed by `2C` raw offsets laid out `(x, y)` per class.

mod checkpoint;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{ForwardPass, Grads, LayerSpec, Net, Scalar};
pub use train::{evaluate_loss, train, EpochRecord, Sample, TrainReport};

use ndarray::{s, Array2, Array3, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::codec::{AmplitudeMode, EncodedTarget, Heatmap, OffsetMap};
use crate::detect::{Patch, PatchPredictor};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::taxonomy::NUM_TYPES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub patch_size: usize,
    pub down_sample: usize,
    pub classes: usize,
    /// Hidden layers; the product of their strides must equal `down_sample`.
    pub hidden: Vec<LayerSpec>,
    pub learning_rate: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Whether the offset head is trained and used for decoding.
    pub use_offsets: bool,
    /// Initial bias of the heatmap logits.
    pub heatmap_bias: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            patch_size: 256,
            down_sample: 4,
            classes: NUM_TYPES,
            hidden: vec![
                LayerSpec::new(16, 3, 1),
                LayerSpec::new(32, 3, 2),
                LayerSpec::new(64, 3, 2),
                LayerSpec::new(64, 3, 1),
            ],
            learning_rate: 1e-4,
            lambda: 0.1,
            epochs: 200,
            batch_size: 8,
            rng_seed: 0,
            use_offsets: true,
            heatmap_bias: 0.0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.down_sample == 0 || self.patch_size == 0 || self.patch_size % self.down_sample != 0 {
            return fail(format!(
                "patch_size {} must be a positive multiple of down_sample {}",
                self.patch_size, self.down_sample
            ));
        }
        if self.classes != NUM_TYPES {
            return fail(format!("classes must be {NUM_TYPES}, got {}", self.classes));
        }
        let stride: usize = self.hidden.iter().map(|l| l.stride).product();
        if stride != self.down_sample {
            return fail(format!("layer strides multiply to {stride}, expected down_sample {}", self.down_sample));
        }
        if self.hidden.iter().any(|l| l.kernel % 2 == 0 || l.stride == 0 || l.out_channels == 0) {
            return fail("kernels must be odd and strides and widths positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be non-negative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be >= 1".into());
        }
        Ok(())
    }

    pub fn heatmap_size(&self) -> usize {
        self.patch_size / self.down_sample
    }

    pub fn head_channels(&self) -> usize {
        3 * self.classes
    }

    fn head_bias(&self) -> Vec<f64> {
        (0..self.head_channels())
            .map(|c| if c < self.classes { self.heatmap_bias } else { 0.0 })
            .collect()
    }
}

/// Heatmap and offset error terms of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    /// Mean squared error over every heatmap cell.
    pub heatmap: f64,
    /// Mean squared error over the supervised offset entries (0 if none).
    pub offset: f64,
    /// `heatmap + lambda * offset`
    pub total: f64,
}

impl LossParts {
    /// The objective re-expressed for targets at normalized-pdf amplitude,
    /// whose heatmap error is the unit-peak error divided by `2 pi sigma^2`.
    /// Unlike the unit-peak value its all-zero baseline does not shrink with
    /// sigma, so losses at different sigma are comparable.
    pub fn pdf_scaled_total(&self, sigma: f64) -> f64 {
        let lambda_term = self.total - self.heatmap;
        self.heatmap / (2.0 * std::f64::consts::PI * sigma * sigma) + lambda_term
    }
}

/// Raw sums behind a [`LossParts`], additive across batches.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LossSums {
    heat_sq: f64,
    heat_n: usize,
    off_sq: f64,
    off_n: usize,
}

impl LossSums {
    pub(crate) fn add(&mut self, o: &LossSums) {
        self.heat_sq += o.heat_sq;
        self.heat_n += o.heat_n;
        self.off_sq += o.off_sq;
        self.off_n += o.off_n;
    }

    pub(crate) fn parts(&self, lambda: f64) -> LossParts {
        let heatmap = if self.heat_n == 0 { 0.0 } else { self.heat_sq / self.heat_n as f64 };
        let offset = if self.off_n == 0 { 0.0 } else { self.off_sq / self.off_n as f64 };
        LossParts {
            heatmap,
            offset,
            total: heatmap + lambda * offset,
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Objective on decoded predictions. `o_hat` is `(2C, h, w)`; only entries
/// under the target's mask count towards the offset term.
pub fn loss(h_hat: &Array3<f64>, o_hat: &Array3<f64>, target: &EncodedTarget, lambda: f64) -> Result<LossParts> {
    let (c, h, w) = target.heatmap.values.dim();
    if h_hat.dim() != (c, h, w) || o_hat.dim() != (2 * c, h, w) {
        return Err(Error::Contract(format!(
            "prediction shapes {:?}/{:?} do not match target ({c}, {h}, {w})",
            h_hat.dim(),
            o_hat.dim()
        )));
    }
    let mut sums = LossSums {
        heat_n: h_hat.len(),
        ..LossSums::default()
    };
    sums.heat_sq = h_hat.iter().zip(target.heatmap.values.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    for ((ch, y, x), &m) in target.offsets.mask.indexed_iter() {
        if m {
            for k in 0..2 {
                sums.off_sq += (o_hat[[2 * ch + k, y, x]] - target.offsets.values[[2 * ch + k, y, x]]).powi(2);
                sums.off_n += 1;
            }
        }
    }
    Ok(sums.parts(lambda))
}

/// Loss sums of a batch and, if `with_grad`, the derivative of the batch
/// objective with respect to the raw head output.
pub(crate) fn batch_objective<T: Scalar>(
    raw: &Array2<T>,
    targets: &[&EncodedTarget],
    classes: usize,
    hw: (usize, usize),
    lambda: f64,
    use_offsets: bool,
    with_grad: bool,
) -> (LossSums, Option<Array2<T>>) {
    let cells = hw.0 * hw.1;
    let batch = targets.len();
    let heat_n = batch * classes * cells;
    let off_n: usize = if use_offsets {
        targets.iter().map(|t| 2 * t.offsets.mask.iter().filter(|&&m| m).count()).sum()
    } else {
        0
    };
    let mut grad = with_grad.then(|| Array2::<T>::zeros(raw.dim()));
    let mut sums = LossSums {
        heat_n,
        off_n,
        ..LossSums::default()
    };
    for (b, t) in targets.iter().enumerate() {
        for c in 0..classes {
            let tv = t.heatmap.values.index_axis(Axis(0), c);
            for (i, &target) in tv.iter().enumerate() {
                let col = b * cells + i;
                let p = sigmoid(raw[[c, col]].to_f64().expect("finite"));
                let e = p - target;
                sums.heat_sq += e * e;
                if let Some(g) = grad.as_mut() {
                    g[[c, col]] = T::of(2.0 * e / heat_n as f64 * p * (1.0 - p));
                }
            }
        }
        if !use_offsets {
            continue;
        }
        for ((c, y, x), &m) in t.offsets.mask.indexed_iter() {
            if !m {
                continue;
            }
            let col = b * cells + y * hw.1 + x;
            for k in 0..2 {
                let row = classes + 2 * c + k;
                let e = raw[[row, col]].to_f64().expect("finite") - t.offsets.values[[2 * c + k, y, x]];
                sums.off_sq += e * e;
                if let Some(g) = grad.as_mut() {
                    g[[row, col]] = T::of(lambda * 2.0 * e / off_n as f64);
                }
            }
        }
    }
    (sums, grad)
}

/// Batch objective of `net` on square patches and its gradient with respect
/// to every parameter, flattened in [`Net::params`] order.
pub fn objective_with_gradient<T: Scalar>(
    net: &Net<T>,
    patches: &[&Array2<f32>],
    targets: &[&EncodedTarget],
    lambda: f64,
    use_offsets: bool,
) -> Result<(LossParts, Vec<T>)> {
    let size = patches.first().map(|p| p.nrows()).unwrap_or(0);
    if patches.is_empty() || patches.len() != targets.len() || patches.iter().any(|p| p.dim() != (size, size)) {
        return Err(Error::Contract("need one square patch of a common size per target".into()));
    }
    let classes = net.head_channels() / 3;
    let pass = net.forward(stack_inputs(patches), patches.len(), (size, size));
    let expected = (classes, pass.out_hw.0, pass.out_hw.1);
    if let Some(t) = targets.iter().find(|t| t.heatmap.values.dim() != expected) {
        return Err(Error::Contract(format!("target shape {:?}, network gives {expected:?}", t.heatmap.values.dim())));
    }
    let (sums, d) = batch_objective(&pass.output, targets, classes, pass.out_hw, lambda, use_offsets, true);
    let grads = net.backward(&pass, d.expect("gradient requested"));
    let flat = grads.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>()).collect();
    Ok((sums.parts(lambda), flat))
}

/// Stacks normalized `(S, S)` patches into the `(1, B*S*S)` input layout.
pub(crate) fn stack_inputs<T: Scalar>(patches: &[&Array2<f32>]) -> Array2<T> {
    let n: usize = patches.iter().map(|p| p.len()).sum();
    let mut v = Vec::with_capacity(n);
    for p in patches {
        v.extend(p.iter().map(|&x| T::of(x as f64)));
    }
    Array2::from_shape_vec((1, n), v).expect("input shape")
}

/// The trained (or training) model with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    config: PredictorConfig,
    pub(crate) net: Net<f32>,
    pub(crate) epoch: usize,
}

impl Predictor {
    /// Fresh weights drawn from the `init` stream of `config.rng_seed`.
    pub fn new(config: PredictorConfig) -> Result<Predictor> {
        config.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(substream(config.rng_seed, "init"));
        let net = Net::init(&config.hidden, config.head_channels(), &config.head_bias(), &mut rng);
        Ok(Predictor { config, net, epoch: 0 })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    /// Completed training epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Zeroes the output layer, so every heatmap reads exactly 0.5.
    pub fn zero_head(&mut self) {
        let head = self.net.layers.last_mut().expect("head layer");
        head.weight.fill(0.0);
        head.bias.fill(0.0);
    }

    pub fn forward(&self, patch: &Array2<f32>) -> Result<(Heatmap, OffsetMap)> {
        Ok(self.forward_batch(&[patch])?.pop().expect("one output"))
    }

    pub fn forward_batch(&self, patches: &[&Array2<f32>]) -> Result<Vec<(Heatmap, OffsetMap)>> {
        let s = self.config.patch_size;
        for p in patches {
            if p.dim() != (s, s) {
                return Err(Error::Contract(format!("patch is {:?}, predictor expects ({s}, {s})", p.dim())));
            }
        }
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let pass = self.net.forward(stack_inputs(patches), patches.len(), (s, s));
        let (h, w) = pass.out_hw;
        let c = self.config.classes;
        let mut out = Vec::with_capacity(patches.len());
        for b in 0..patches.len() {
            let block = pass.output.slice(s![.., b * h * w..(b + 1) * h * w]);
            let heat = Array3::from_shape_fn((c, h, w), |(ch, y, x)| sigmoid(block[[ch, y * w + x]] as f64));
            let values = Array3::from_shape_fn((2 * c, h, w), |(ch, y, x)| block[[c + ch, y * w + x]] as f64);
            out.push((
                Heatmap {
                    values: heat,
                    down_sample: self.config.down_sample,
                    mode: AmplitudeMode::UnitPeak,
                },
                OffsetMap {
                    values,
                    mask: Array3::from_elem((c, h, w), true),
                },
            ));
        }
        Ok(out)
    }
}

impl PatchPredictor for Predictor {
    fn patch_size(&self) -> usize {
        self.config.patch_size
    }

    fn down_sample(&self) -> usize {
        self.config.down_sample
    }

    fn predict(&self, patch: &Patch) -> Result<(Heatmap, Option<OffsetMap>)> {
        let (h, o) = self.forward(&patch.raster.normalized())?;
        Ok((h, self.config.use_offsets.then_some(o)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_target;
    use crate::geom::Keypoint;
    use crate::taxonomy::KeypointType;
    use rand::SeedableRng;

    fn small_config() -> PredictorConfig {
        PredictorConfig {
            patch_size: 32,
            hidden: vec![LayerSpec::new(4, 3, 1), LayerSpec::new(6, 3, 2), LayerSpec::new(6, 3, 2)],
            ..PredictorConfig::default()
        }
    }

    fn probe(s: usize) -> Array2<f32> {
        Array2::from_shape_fn((s, s), |(y, x)| if x == 10 || y == 7 { 1.0 } else { 0.0 })
    }

    #[test]
    fn output_shapes_reference_architecture() {
        let p = Predictor::new(PredictorConfig::default()).unwrap();
        let (h, o) = p.forward(&probe(256)).unwrap();
        assert_eq!(h.values.dim(), (15, 64, 64));
        assert_eq!(o.values.dim(), (30, 64, 64));
        assert!(h.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_head_gives_half() {
        let mut p = Predictor::new(small_config()).unwrap();
        p.zero_head();
        let (h, o) = p.forward(&probe(32)).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.5));
        assert!(o.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_and_batch_consistent() {
        let p = Predictor::new(small_config()).unwrap();
        let x = probe(32);
        let a = p.forward(&x).unwrap();
        let b = p.forward(&x).unwrap();
        assert_eq!(a, b);
        let other = Array2::<f32>::zeros((32, 32));
        let batch = p.forward_batch(&[&other, &x]).unwrap();
        for (u, v) in batch[1].0.values.iter().zip(a.0.values.iter()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_patch_size_is_contract_error() {
        let p = Predictor::new(small_config()).unwrap();
        assert!(matches!(p.forward(&probe(16)), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        let bad = PredictorConfig {
            patch_size: 30,
            ..small_config()
        };
        assert!(bad.validate().is_err());
        let bad = PredictorConfig {
            down_sample: 2,
            ..small_config()
        };
        assert!(bad.validate().is_err());
        assert!(PredictorConfig::default().validate().is_ok());
    }

    fn target() -> EncodedTarget {
        let k = [Keypoint::new(10.0, 7.0, KeypointType::CornerNw), Keypoint::new(20.5, 3.2, KeypointType::TeeS)];
        encode_target(&k, 1.0, (15, 8, 8), 4).unwrap()
    }

    #[test]
    fn loss_examples() {
        let t = target();
        let perfect = loss(&t.heatmap.values, &t.offsets.values, &t, 0.1).unwrap();
        assert_eq!(perfect, LossParts::default());

        let shifted = &t.heatmap.values + 1.0;
        let l = loss(&shifted, &t.offsets.values, &t, 0.1).unwrap();
        assert!((l.heatmap - 1.0).abs() < 1e-12 && (l.total - 1.0).abs() < 1e-12);

        let mut off = t.offsets.values.clone();
        for ((c, y, x), &m) in t.offsets.mask.indexed_iter() {
            if m {
                off[[2 * c, y, x]] += 0.5;
                off[[2 * c + 1, y, x]] -= 0.5;
            }
        }
        // unsupervised cells are ignored
        off[[0, 0, 0]] += 9.0;
        let l = loss(&t.heatmap.values, &off, &t, 0.1).unwrap();
        assert!((l.total - 0.025).abs() < 1e-12, "{l:?}");
        assert!((l.offset - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_contributes_nothing() {
        let t = encode_target(&[], 1.0, (15, 8, 8), 4).unwrap();
        let off = Array3::from_elem((30, 8, 8), 3.0);
        let l = loss(&t.heatmap.values, &off, &t, 0.1).unwrap();
        assert_eq!(l.offset, 0.0);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn batch_objective_agrees_with_loss() {
        let cfg = small_config();
        let p = Predictor::new(cfg.clone()).unwrap();
        let x = probe(32);
        let t = target();
        let pass = p.net.forward(stack_inputs::<f32>(&[&x]), 1, (32, 32));
        let (sums, _) = batch_objective(&pass.output, &[&t], 15, pass.out_hw, 0.1, true, false);
        let (h, o) = p.forward(&x).unwrap();
        let direct = loss(&h.values, &o.values, &t, 0.1).unwrap();
        let batched = sums.parts(0.1);
        assert!((direct.total - batched.total).abs() < 1e-6);
    }

    /// Analytic gradient of every parameter against central differences on
    /// a two-layer f64 network.
    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut net: Net<f64> = Net::init(&[LayerSpec::new(4, 3, 2)], 45, &[-1.0; 15], &mut rng);
        // widen the head so offset and heatmap gradients are not tiny
        net.layers[1].weight.mapv_inplace(|v| v * 10.0);
        let x = Array2::from_shape_fn((16, 16), |(y, x)| ((x * 3 + y * 5) % 7) as f32 / 7.0);
        let k = [Keypoint::new(5.3, 9.1, KeypointType::CornerNw), Keypoint::new(12.2, 3.7, KeypointType::Cross)];
        let t = encode_target(&k, 1.0, (15, 8, 8), 2).unwrap();
        let input = stack_inputs::<f64>(&[&x]);
        let objective = |n: &Net<f64>| {
            let pass = n.forward(input.clone(), 1, (16, 16));
            batch_objective(&pass.output, &[&t], 15, pass.out_hw, 0.1, true, false).0.parts(0.1).total
        };
        let pass = net.forward(input.clone(), 1, (16, 16));
        let (_, d) = batch_objective(&pass.output, &[&t], 15, pass.out_hw, 0.1, true, true);
        let grads = net.backward(&pass, d.unwrap());
        let analytic: Vec<f64> = grads.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>()).collect();
        let base = net.params();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            net.set_params(&p);
            let up = objective(&net);
            p[i] -= 2.0 * h;
            net.set_params(&p);
            let down = objective(&net);
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
