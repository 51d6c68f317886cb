//! Entropy-regularized task-oriented loss, optimizer, and the three-step
//! training schedule: backbone alone, then the SC module with the backbone
//! frozen, then a joint fine-tune at a lower learning rate.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::CnnScModel;
use crate::channel::{Channel, ChannelConfig};
use crate::error::Result;
use crate::nn::{Backbone, ParamRef, Parameterized, SnnScModel};

const FREQ_CLAMP: f64 = 1e-6;

/// Empirical bit statistics of transmitted semantic information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyStats {
    pub p0: f64,
    pub p1: f64,
    /// Average entropy in bits, in [0, 1].
    pub h: f64,
}

fn log2_clamped(p: f64) -> f64 {
    p.clamp(FREQ_CLAMP, 1.0 - FREQ_CLAMP).log2()
}

/// Entropy from the frequency of ones. Uses the 0 log 0 := 0 convention
/// (via clamping the frequencies before the log).
pub fn entropy_from_p1(p1: f64) -> EntropyStats {
    let p0 = 1.0 - p1;
    let h = if p1 == 0.0 || p1 == 1.0 {
        0.0
    } else {
        -(p0 * log2_clamped(p0) + p1 * log2_clamped(p1))
    };
    EntropyStats { p0, p1, h }
}

/// Empirical entropy of the transmitted bits over all steps of a batch.
pub fn entropy(step_bits: &[ArrayD<f64>]) -> EntropyStats {
    let mut ones = 0.0;
    let mut total = 0usize;
    for z in step_bits {
        ones += z.sum();
        total += z.len();
    }
    assert!(total > 0, "entropy of an empty bit sequence");
    entropy_from_p1(ones / total as f64)
}

/// L_total = L_CE + (alpha - H)^2.
pub fn total_loss(ce: f64, stats: EntropyStats, alpha: f64) -> f64 {
    ce + (alpha - stats.h).powi(2)
}

/// Gradient of the entropy penalty with respect to every transmitted bit,
/// straight-through on the batch frequency estimate.
pub fn entropy_penalty_bit_grad(stats: EntropyStats, alpha: f64, total_bits: usize) -> f64 {
    let p1 = stats.p1.clamp(FREQ_CLAMP, 1.0 - FREQ_CLAMP);
    let dh_dp1 = ((1.0 - p1) / p1).log2();
    -2.0 * (alpha - stats.h) * dh_dp1 / total_bits as f64
}

/// Softmax cross-entropy, batch-mean. Returns (loss, d loss / d logits,
/// number of correct argmax predictions).
pub fn softmax_ce(logits: &ArrayD<f64>, labels: &[u8]) -> (f64, ArrayD<f64>, usize) {
    let s = logits.shape();
    let (nb, k) = (s[0], s[1]);
    assert_eq!(nb, labels.len());
    let ls = logits.as_slice().unwrap();
    let mut g = ArrayD::zeros(IxDyn(&[nb, k]));
    let gs = g.as_slice_mut().unwrap();
    let mut loss = 0.0;
    let mut correct = 0;
    for n in 0..nb {
        let row = &ls[n * k..][..k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let y = labels[n] as usize;
        loss += -(exps[y] / sum).ln();
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if argmax == y {
            correct += 1;
        }
        for j in 0..k {
            gs[n * k + j] = (exps[j] / sum - if j == y { 1.0 } else { 0.0 }) / nb as f64;
        }
    }
    (loss / nb as f64, g, correct)
}

/// Adaptive moment estimation with standard defaults, state keyed by
/// parameter name.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: HashMap<String, (ArrayD<f64>, ArrayD<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, state: HashMap::new() }
    }

    pub fn step(&mut self, params: &mut [ParamRef<'_>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            let Some(grad) = p.grad.as_deref() else { continue };
            let (m, v) = self
                .state
                .entry(p.name.clone())
                .or_insert_with(|| (ArrayD::zeros(grad.raw_dim()), ArrayD::zeros(grad.raw_dim())));
            let ms = m.as_slice_mut().unwrap();
            let vs = v.as_slice_mut().unwrap();
            let gs = grad.as_slice().unwrap();
            let ws = p.value.as_slice_mut().unwrap();
            for i in 0..gs.len() {
                ms[i] = self.beta1 * ms[i] + (1.0 - self.beta1) * gs[i];
                vs[i] = self.beta2 * vs[i] + (1.0 - self.beta2) * gs[i] * gs[i];
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                ws[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Training schedule stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Backbone,
    ScOnly,
    JointFinetune,
}

impl Stage {
    pub fn tag(&self) -> &'static str {
        match self {
            Stage::Backbone => "backbone",
            Stage::ScOnly => "sc",
            Stage::JointFinetune => "joint",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Entropy target weight.
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// (factor, every_k_epochs)
    pub lr_decay: (f64, usize),
    /// Channel fixed during training (noise power held constant).
    pub channel: ChannelConfig,
    pub stage: Stage,
    pub seed: u64,
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let (factor, every) = self.lr_decay;
        self.lr * factor.powi((epoch / every.max(1)) as i32)
    }
}

/// Append-only CSV metrics log.
pub struct MetricsWriter {
    file: Option<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let mut f = std::fs::File::create(p)?;
                writeln!(f, "stage,epoch,iter,loss_ce,entropy_h,penalty,train_acc")?;
                Some(f)
            }
            None => None,
        };
        Ok(Self { file })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn row(
        &mut self,
        stage: Stage,
        epoch: usize,
        iter: usize,
        ce: f64,
        h: f64,
        penalty: f64,
        acc: f64,
    ) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(
                f,
                "{},{},{},{:.6},{:.6},{:.6},{:.4}",
                stage.tag(),
                epoch,
                iter,
                ce,
                h,
                penalty,
                acc
            )?;
        }
        Ok(())
    }
}

fn gather_batch(images: &ArrayD<f64>, labels: &[u8], idx: &[usize]) -> (ArrayD<f64>, Vec<u8>) {
    let s = images.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let plane = c * h * w;
    let src = images.as_slice().unwrap();
    let mut batch = ArrayD::zeros(IxDyn(&[idx.len(), c, h, w]));
    {
        let dst = batch.as_slice_mut().unwrap();
        for (bi, &i) in idx.iter().enumerate() {
            dst[bi * plane..][..plane].copy_from_slice(&src[i * plane..][..plane]);
        }
    }
    let lab = idx.iter().map(|&i| labels[i]).collect();
    (batch, lab)
}

/// Checksum of all trainable parameters; used to assert frozen contracts.
pub fn param_checksum(p: &mut impl Parameterized) -> f64 {
    let mut params = Vec::new();
    p.visit_params("", &mut params);
    params
        .iter()
        .filter(|p| p.grad.is_some())
        .map(|p| p.value.iter().enumerate().map(|(i, v)| v * (i % 97 + 1) as f64).sum::<f64>())
        .sum()
}

/// Stage 1: train the classifier end-to-end with cross-entropy.
pub fn train_backbone(
    bb: &mut Backbone,
    images: &ArrayD<f64>,
    labels: &[u8],
    cfg: &TrainConfig,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut iter = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = gather_batch(images, labels, chunk);
            bb.zero_grads();
            let f = bb.forward_front(&x);
            let logits = bb.forward_tail(&f);
            let (loss, glogits, correct) = softmax_ce(&logits, &y);
            let gf = bb.backward_tail(&glogits);
            bb.backward_front(&gf);
            let mut params = Vec::new();
            bb.visit_params("backbone", &mut params);
            adam.step(&mut params);
            metrics.row(
                Stage::Backbone,
                epoch,
                iter,
                loss,
                0.0,
                0.0,
                correct as f64 / y.len() as f64,
            )?;
            iter += 1;
        }
    }
    Ok(())
}

/// Stages 2 and 3: train the SC module (backbone frozen) or fine-tune the
/// whole model, with the entropy-regularized loss.
pub fn train_snn_sc(
    bb: &mut Backbone,
    model: &mut SnnScModel,
    images: &ArrayD<f64>,
    labels: &[u8],
    cfg: &TrainConfig,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    assert!(matches!(cfg.stage, Stage::ScOnly | Stage::JointFinetune));
    let joint = cfg.stage == Stage::JointFinetune;
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut channel = Channel::new(cfg.channel);
    let mut order: Vec<usize> = (0..n).collect();
    model.set_training(true);
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut iter = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = gather_batch(images, labels, chunk);
            bb.zero_grads();
            model.zero_grads();
            let f = if joint { bb.forward_front(&x) } else { bb.apply_front(&x) };
            let (fp, zs) = model.forward_train(&f, Some(&mut channel))?;
            let logits = bb.forward_tail(&fp);
            let (ce, glogits, correct) = softmax_ce(&logits, &y);
            let stats = entropy(&zs);
            let penalty = (cfg.alpha - stats.h).powi(2);
            let total_bits: usize = zs.iter().map(|z| z.len()).sum();
            let bit_grad = entropy_penalty_bit_grad(stats, cfg.alpha, total_bits);

            let gfp = bb.backward_tail(&glogits);
            let gf = model.backward_train(&gfp, bit_grad);
            if joint {
                bb.backward_front(&gf);
            }

            let mut params = Vec::new();
            model.visit_params("sc", &mut params);
            if joint {
                bb.visit_params("backbone", &mut params);
            }
            adam.step(&mut params);
            metrics.row(cfg.stage, epoch, iter, ce, stats.h, penalty, correct as f64 / y.len() as f64)?;
            iter += 1;
        }
    }
    model.set_training(false);
    Ok(())
}

/// Train the CNN baseline's SC module with plain cross-entropy, the
/// straight-through quantized channel in the loop and the backbone frozen
/// (or fine-tuned jointly).
pub fn train_cnn_sc(
    bb: &mut Backbone,
    model: &mut CnnScModel,
    images: &ArrayD<f64>,
    labels: &[u8],
    cfg: &TrainConfig,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    assert!(matches!(cfg.stage, Stage::ScOnly | Stage::JointFinetune));
    let joint = cfg.stage == Stage::JointFinetune;
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut channel = Channel::new(cfg.channel);
    let mut order: Vec<usize> = (0..n).collect();
    model.set_training(true);
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut iter = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = gather_batch(images, labels, chunk);
            bb.zero_grads();
            model.zero_grads();
            let f = if joint { bb.forward_front(&x) } else { bb.apply_front(&x) };
            let fp = model.forward_train(&f, Some(&mut channel))?;
            let logits = bb.forward_tail(&fp);
            let (ce, glogits, correct) = softmax_ce(&logits, &y);
            let gfp = bb.backward_tail(&glogits);
            let gf = model.backward_train(&gfp);
            if joint {
                bb.backward_front(&gf);
            }
            let mut params = Vec::new();
            model.visit_params("sc", &mut params);
            if joint {
                bb.visit_params("backbone", &mut params);
            }
            adam.step(&mut params);
            metrics.row(cfg.stage, epoch, iter, ce, 0.0, 0.0, correct as f64 / y.len() as f64)?;
            iter += 1;
        }
    }
    model.set_training(false);
    Ok(())
}
