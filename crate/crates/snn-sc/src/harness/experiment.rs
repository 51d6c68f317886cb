//! Evaluation loops and the accuracy-vs-noise sweep.
//!
//! Every test sample gets its own channel noise stream, seeded from the
//! sample index exactly like the TCP path seeds it from the session id, so
//! in-process evaluation and split inference over the wire are bit-exact
//! replicas of each other.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::baselines::separate::SeparateCodingConfig;
use crate::baselines::{separate_coding_pipeline, CnnScModel};
use crate::channel::{Channel, ChannelConfig, ChannelKind};
use crate::error::{Error, Result};
use crate::nn::backbone::Backbone;
use crate::nn::model::SnnScModel;
use crate::transport::session_channel;

#[derive(Clone, Copy)]
pub struct EvalData<'a> {
    pub images: &'a ArrayD<f64>,
    pub labels: &'a [u8],
}

impl<'a> EvalData<'a> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample(&self, i: usize) -> ArrayD<f64> {
        let s = self.images.shape();
        let plane = s[1] * s[2] * s[3];
        let src = self.images.as_slice().unwrap();
        ArrayD::from_shape_vec(
            IxDyn(&[1, s[1], s[2], s[3]]),
            src[i * plane..][..plane].to_vec(),
        )
        .unwrap()
    }
}

fn argmax(logits: &ArrayD<f64>) -> usize {
    logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Noise-free upper bound: the backbone alone, no split, no channel.
pub fn eval_backbone(bb: &Backbone, data: EvalData) -> f64 {
    let f = bb.apply_front(data.images);
    let logits = bb.apply_tail(&f);
    let k = logits.shape()[1];
    let ls = logits.as_slice().unwrap();
    let correct = data
        .labels
        .iter()
        .enumerate()
        .filter(|(i, &y)| {
            let row = &ls[i * k..][..k];
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(j, _)| j)
                .unwrap();
            best == y as usize
        })
        .count();
    correct as f64 / data.len() as f64
}

/// Split inference through the spiking module, one sample at a time.
pub fn eval_snn(
    bb: &Backbone,
    model: &mut SnnScModel,
    data: EvalData,
    kind: ChannelKind,
    p: f64,
    base_seed: u64,
) -> Result<f64> {
    model.set_training(false);
    let mut correct = 0;
    for i in 0..data.len() {
        let x = data.sample(i);
        let f = bb.apply_front(&x);
        let mut channel = session_channel(kind, p, base_seed, i as u32);
        let fp = model.forward_infer(&f, channel.as_mut())?;
        let logits = bb.apply_tail(&fp);
        if argmax(&logits) == data.labels[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn eval_cnn(
    bb: &Backbone,
    model: &mut CnnScModel,
    data: EvalData,
    kind: ChannelKind,
    p: f64,
    base_seed: u64,
) -> Result<f64> {
    model.set_training(false);
    let mut correct = 0;
    for i in 0..data.len() {
        let x = data.sample(i);
        let f = bb.apply_front(&x);
        let mut channel = session_channel(kind, p, base_seed, i as u32);
        let fp = model.forward_infer(&f, channel.as_mut())?;
        let logits = bb.apply_tail(&fp);
        if argmax(&logits) == data.labels[i] as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct SeparateEval {
    pub accuracy: f64,
    /// Fraction of samples where channel decoding failed outright.
    pub failure_rate: f64,
    pub channel_bits: usize,
}

/// Separate source/channel coding of the analog feature.
pub fn eval_separate(
    bb: &Backbone,
    cfg: &SeparateCodingConfig,
    data: EvalData,
    kind: ChannelKind,
    p: f64,
    base_seed: u64,
) -> Result<SeparateEval> {
    let mut correct = 0;
    let mut failures = 0;
    let mut channel_bits = 0;
    for i in 0..data.len() {
        let x = data.sample(i);
        let f = bb.apply_front(&x);
        let mut channel = Channel::new(ChannelConfig::new(kind, p, base_seed ^ i as u64)?);
        let out = separate_coding_pipeline(&f, cfg, &mut channel);
        channel_bits = out.channel_bits;
        if !out.decode_ok {
            failures += 1;
            continue; // a lost feature cannot classify; count as wrong
        }
        let logits = bb.apply_tail(&out.feature);
        if argmax(&logits) == data.labels[i] as usize {
            correct += 1;
        }
    }
    Ok(SeparateEval {
        accuracy: correct as f64 / data.len() as f64,
        failure_rate: failures as f64 / data.len() as f64,
        channel_bits,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty());
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub train_p: f64,
    pub channel: ChannelKind,
    pub test_p: f64,
    pub trials: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub bits_per_inference: usize,
    pub compression_ratio: f64,
}

pub const SWEEP_HEADER: &str =
    "variant,train_p,channel,test_p,trials,mean_acc,std_acc,bits_per_inference,compression_ratio";

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 64 + SWEEP_HEADER.len());
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{},{:.4},{},{:.6},{:.6},{},{:.4}\n",
            r.variant,
            r.train_p,
            r.channel.tag(),
            r.test_p,
            r.trials,
            r.mean_acc,
            r.std_acc,
            r.bits_per_inference,
            r.compression_ratio
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_HEADER => {}
        _ => return Err(Error::Format("missing or wrong sweep header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Format(format!("row {}: expected 9 fields", i + 2)));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("row {}: bad {what} `{s}`", i + 2)))
        };
        let parse_u = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("row {}: bad {what} `{s}`", i + 2)))
        };
        rows.push(SweepRow {
            variant: fields[0].to_string(),
            train_p: parse_f(fields[1], "train_p")?,
            channel: ChannelKind::from_tag(fields[2])?,
            test_p: parse_f(fields[3], "test_p")?,
            trials: parse_u(fields[4], "trials")?,
            mean_acc: parse_f(fields[5], "mean_acc")?,
            std_acc: parse_f(fields[6], "std_acc")?,
            bits_per_inference: parse_u(fields[7], "bits_per_inference")?,
            compression_ratio: parse_f(fields[8], "compression_ratio")?,
        });
    }
    Ok(rows)
}
