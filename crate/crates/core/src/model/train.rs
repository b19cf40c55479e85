use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{batch_objective, stack_inputs, LossParts, LossSums, Predictor};
use crate::codec::{encode_target, EncodedTarget};
use crate::error::{Error, Result};
use crate::geom::Keypoint;
use crate::rng::substream;
use crate::schedule::KernelSchedule;

/// A normalized patch (ink = 1) with its keypoints in patch pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Array2<f32>,
    pub keypoints: Vec<Keypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sigma: f64,
    pub train_loss: f64,
    /// Validation objective at this epoch's sigma, after its updates.
    pub val: Option<LossParts>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schedule: KernelSchedule,
    pub epochs: Vec<EpochRecord>,
    /// Sigma the final validation loss is measured at: the schedule's terminal value.
    pub final_sigma: f64,
    pub final_val: Option<LossParts>,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// `epoch,schedule,sigma,train_loss,val_loss,val_heatmap,val_offset,seconds`;
    /// validation columns are blank without a validation set.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("epoch,schedule,sigma,train_loss,val_loss,val_heatmap,val_offset,seconds\n");
        for e in &self.epochs {
            let val = e
                .val
                .map(|v| format!("{:.8},{:.8},{:.8}", v.total, v.heatmap, v.offset))
                .unwrap_or_else(|| ",,".into());
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.8},{val},{:.3}",
                e.epoch,
                self.schedule.name(),
                e.sigma,
                e.train_loss,
                e.seconds
            );
        }
        s
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.val.map(|v| v.total)).collect()
    }

    /// Everything except wall-clock timings agrees.
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.schedule == other.schedule
            && self.final_val == other.final_val
            && self.epochs.len() == other.epochs.len()
            && self
                .epochs
                .iter()
                .zip(&other.epochs)
                .all(|(a, b)| a.sigma == b.sigma && a.train_loss == b.train_loss && a.val == b.val)
    }
}

struct Adam {
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<(Array2<f32>, Array1<f32>)>,
    v: Vec<(Array2<f32>, Array1<f32>)>,
}

impl Adam {
    fn new(p: &Predictor) -> Adam {
        let zeros: Vec<_> = p
            .net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
            .collect();
        Adam {
            lr: p.config().learning_rate as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, p: &mut Predictor, grads: &[(Array2<f32>, Array1<f32>)]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let update = |param: &mut f32, g: f32, m: &mut f32, v: &mut f32| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *param -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (i, layer) in p.net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[i];
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            ndarray::Zip::from(&mut layer.weight)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

fn encode_all(samples: &[Sample], sigma: f64, p: &Predictor) -> Result<Vec<EncodedTarget>> {
    let n = p.config().heatmap_size();
    samples
        .iter()
        .map(|s| encode_target(&s.keypoints, sigma, (p.config().classes, n, n), p.config().down_sample))
        .collect()
}

fn check_samples(samples: &[Sample], p: &Predictor) -> Result<()> {
    let s = p.config().patch_size;
    match samples.iter().position(|x| x.image.dim() != (s, s)) {
        Some(i) => Err(Error::Contract(format!(
            "sample {i} is {:?}, predictor expects ({s}, {s})",
            samples[i].image.dim()
        ))),
        None => Ok(()),
    }
}

/// Objective of `p` on `samples` with targets drawn at `sigma`.
pub fn evaluate_loss(p: &Predictor, samples: &[Sample], sigma: f64) -> Result<LossParts> {
    check_samples(samples, p)?;
    let targets = encode_all(samples, sigma, p)?;
    let cfg = p.config();
    let s = cfg.patch_size;
    let mut sums = LossSums::default();
    for (chunk, tchunk) in samples.chunks(16).zip(targets.chunks(16)) {
        let imgs: Vec<&Array2<f32>> = chunk.iter().map(|x| &x.image).collect();
        let pass = p.net.forward(stack_inputs(&imgs), imgs.len(), (s, s));
        let trefs: Vec<&EncodedTarget> = tchunk.iter().collect();
        let (b, _) = batch_objective(&pass.output, &trefs, cfg.classes, pass.out_hw, cfg.lambda, cfg.use_offsets, false);
        sums.add(&b);
    }
    Ok(sums.parts(if cfg.use_offsets { cfg.lambda } else { 0.0 }))
}

/// Runs every epoch of `schedule`. Epoch `t` (0-based) trains against
/// targets re-encoded at `sigma_at(t)`; batches follow a per-epoch shuffle
/// from the `shuffle` stream of the predictor's seed.
pub fn train(p: &mut Predictor, train_set: &[Sample], val_set: &[Sample], schedule: &KernelSchedule) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    schedule.validate()?;
    check_samples(train_set, p)?;
    check_samples(val_set, p)?;
    let cfg = p.config().clone();
    let s = cfg.patch_size;
    let lambda = if cfg.use_offsets { cfg.lambda } else { 0.0 };
    let mut adam = Adam::new(p);
    let mut shuffle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(substream(cfg.rng_seed, "shuffle"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(schedule.epochs());
    let mut last_finite = f64::NAN;

    for t in 0..schedule.epochs() {
        let started = Instant::now();
        let sigma = schedule.sigma_at(t)?;
        let targets = encode_all(train_set, sigma, p)?;
        order.shuffle(&mut shuffle_rng);
        let mut sums = LossSums::default();
        for batch in order.chunks(cfg.batch_size) {
            let imgs: Vec<&Array2<f32>> = batch.iter().map(|&i| &train_set[i].image).collect();
            let trefs: Vec<&EncodedTarget> = batch.iter().map(|&i| &targets[i]).collect();
            let pass = p.net.forward(stack_inputs(&imgs), imgs.len(), (s, s));
            let (b, grad) = batch_objective(&pass.output, &trefs, cfg.classes, pass.out_hw, cfg.lambda, cfg.use_offsets, true);
            let batch_loss = b.parts(lambda).total;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite { epoch: t, last_finite });
            }
            last_finite = batch_loss;
            sums.add(&b);
            let grads = p.net.backward(&pass, grad.expect("gradient requested"));
            adam.step(p, &grads);
        }
        if p.net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { epoch: t, last_finite });
        }
        p.epoch += 1;
        let train_loss = sums.parts(lambda).total;
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(p, val_set, sigma)?)
        };
        log::info!(
            "{} epoch {t}: sigma {sigma:.4} train {train_loss:.6} val {}",
            schedule.name(),
            val.map(|v| format!("{:.6}", v.total)).unwrap_or_else(|| "-".into())
        );
        records.push(EpochRecord {
            epoch: t,
            sigma,
            train_loss,
            val,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    let final_sigma = schedule.sigma_at(schedule.epochs())?;
    let final_val = if val_set.is_empty() {
        None
    } else {
        Some(evaluate_loss(p, val_set, final_sigma)?)
    };
    Ok(TrainReport {
        schedule: *schedule,
        epochs: records,
        final_sigma,
        final_val,
        checkpoint: None,
    })
}
