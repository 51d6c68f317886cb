//! Layer primitives with paired forward/backward passes.
//!
//! Every layer caches what its backward pass needs on a small stack, so a
//! layer that is applied once per time step accumulates one cache entry per
//! step and pops them in reverse order during backpropagation through time.
//! All activations are batched NCHW tensors in f64.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::param::{join, ParamRef, Parameterized};
use crate::snn::{self, SurrogateConfig};

fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut t = ArrayD::zeros(IxDyn(shape));
    for v in t.iter_mut() {
        *v = rng.gen_range(-limit..limit);
    }
    t
}

fn dims4(x: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// 2-D convolution (cross-correlation) with bias.
#[derive(Clone)]
pub struct Conv2d {
    pub w: ArrayD<f64>, // (co, ci, k, k)
    pub b: ArrayD<f64>, // (co,)
    pub gw: ArrayD<f64>,
    pub gb: ArrayD<f64>,
    pub stride: usize,
    pub padding: usize,
    xs: Vec<ArrayD<f64>>,
}

impl Conv2d {
    pub fn new(rng: &mut impl Rng, ci: usize, co: usize, k: usize, stride: usize, padding: usize) -> Self {
        let w = he_uniform(rng, &[co, ci, k, k], ci * k * k);
        Self {
            gw: ArrayD::zeros(w.raw_dim()),
            w,
            b: ArrayD::zeros(IxDyn(&[co])),
            gb: ArrayD::zeros(IxDyn(&[co])),
            stride,
            padding,
            xs: Vec::new(),
        }
    }

    pub fn out_hw(&self, ih: usize, iw: usize) -> (usize, usize) {
        let k = self.w.shape()[2];
        (
            (ih + 2 * self.padding - k) / self.stride + 1,
            (iw + 2 * self.padding - k) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let y = self.apply(x);
        self.xs.push(x.clone());
        y
    }

    /// Forward without recording a cache entry (inference).
    pub fn apply(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (nb, ci, ih, iw) = dims4(x);
        let (co, wci, k, _) = dims4(&self.w);
        assert_eq!(ci, wci, "conv input channels mismatch");
        let (oh, ow) = self.out_hw(ih, iw);
        let (s, p) = (self.stride, self.padding);

        let mut out = ArrayD::zeros(IxDyn(&[nb, co, oh, ow]));
        let xs = x.as_slice().unwrap();
        let ws = self.w.as_slice().unwrap();
        let bs = self.b.as_slice().unwrap();
        let os = out.as_slice_mut().unwrap();

        for n in 0..nb {
            for c_o in 0..co {
                for oy in 0..oh {
                    let orow = &mut os[(((n * co + c_o) * oh) + oy) * ow..][..ow];
                    for v in orow.iter_mut() {
                        *v = bs[c_o];
                    }
                    for c_i in 0..ci {
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy as usize >= ih {
                                continue;
                            }
                            let xrow = &xs[(((n * ci + c_i) * ih) + iy as usize) * iw..][..iw];
                            let wrow = &ws[(((c_o * ci + c_i) * k) + ky) * k..][..k];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                if s == 1 {
                                    let shift = kx as isize - p as isize;
                                    let ox0 = (-shift).max(0) as usize;
                                    let ox1 = ow.min((iw as isize - shift).max(0) as usize);
                                    let orow = &mut orow[ox0..ox1];
                                    let xseg = &xrow[(ox0 as isize + shift) as usize..][..orow.len()];
                                    for (o, &xv) in orow.iter_mut().zip(xseg) {
                                        *o += wv * xv;
                                    }
                                } else {
                                    for (ox, o) in orow.iter_mut().enumerate() {
                                        let ix = (ox * s + kx) as isize - p as isize;
                                        if ix >= 0 && (ix as usize) < iw {
                                            *o += wv * xrow[ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> ArrayD<f64> {
        let x = self.xs.pop().expect("conv backward without matching forward");
        let (nb, ci, ih, iw) = dims4(&x);
        let (co, _, k, _) = dims4(&self.w);
        let (oh, ow) = self.out_hw(ih, iw);
        assert_eq!(gy.shape(), [nb, co, oh, ow]);
        let (s, p) = (self.stride, self.padding);

        let mut gx = ArrayD::zeros(x.raw_dim());
        let xs = x.as_slice().unwrap();
        let gys = gy.as_slice().unwrap();
        let ws = self.w.as_slice().unwrap();
        let gws = self.gw.as_slice_mut().unwrap();
        let gbs = self.gb.as_slice_mut().unwrap();
        let gxs = gx.as_slice_mut().unwrap();

        for n in 0..nb {
            for c_o in 0..co {
                for oy in 0..oh {
                    let gyrow = &gys[(((n * co + c_o) * oh) + oy) * ow..][..ow];
                    gbs[c_o] += gyrow.iter().sum::<f64>();
                    for c_i in 0..ci {
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy as usize >= ih {
                                continue;
                            }
                            let xbase = (((n * ci + c_i) * ih) + iy as usize) * iw;
                            let wbase = (((c_o * ci + c_i) * k) + ky) * k;
                            for kx in 0..k {
                                if s == 1 {
                                    let shift = kx as isize - p as isize;
                                    let ox0 = (-shift).max(0) as usize;
                                    let ox1 = ow.min((iw as isize - shift).max(0) as usize);
                                    if ox0 >= ox1 {
                                        continue;
                                    }
                                    let len = ox1 - ox0;
                                    let xoff = xbase + (ox0 as isize + shift) as usize;
                                    let wv = ws[wbase + kx];
                                    let mut wacc = 0.0;
                                    for i in 0..len {
                                        let g = gyrow[ox0 + i];
                                        wacc += xs[xoff + i] * g;
                                        gxs[xoff + i] += wv * g;
                                    }
                                    gws[wbase + kx] += wacc;
                                } else {
                                    for (ox, &g) in gyrow.iter().enumerate() {
                                        let ix = (ox * s + kx) as isize - p as isize;
                                        if ix >= 0 && (ix as usize) < iw {
                                            gws[wbase + kx] += xs[xbase + ix as usize] * g;
                                            gxs[xbase + ix as usize] += ws[wbase + kx] * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn clear_cache(&mut self) {
        self.xs.clear();
    }
}

impl Parameterized for Conv2d {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            value: &mut self.w,
            grad: Some(&mut self.gw),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            value: &mut self.b,
            grad: Some(&mut self.gb),
        });
    }
}

#[derive(Clone)]
struct BnCache {
    xhat: ArrayD<f64>,
    inv_std: Vec<f64>,
}

/// Batch normalization over the channel axis of NCHW tensors.
///
/// Train mode normalizes with batch statistics (batch size >= 2 required)
/// and folds them into a single running accumulator updated on every call;
/// eval mode normalizes with the running statistics.
#[derive(Clone)]
pub struct BatchNorm2d {
    pub gamma: ArrayD<f64>,
    pub beta: ArrayD<f64>,
    pub running_mean: ArrayD<f64>,
    pub running_var: ArrayD<f64>,
    pub ggamma: ArrayD<f64>,
    pub gbeta: ArrayD<f64>,
    pub eps: f64,
    pub momentum: f64,
    pub training: bool,
    caches: Vec<BnCache>,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: ArrayD::ones(IxDyn(&[c])),
            beta: ArrayD::zeros(IxDyn(&[c])),
            running_mean: ArrayD::zeros(IxDyn(&[c])),
            running_var: ArrayD::ones(IxDyn(&[c])),
            ggamma: ArrayD::zeros(IxDyn(&[c])),
            gbeta: ArrayD::zeros(IxDyn(&[c])),
            eps: 1e-5,
            momentum: 0.1,
            training: true,
            caches: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (nb, c, h, w) = dims4(x);
        assert_eq!(c, self.gamma.len());
        if self.training {
            assert!(nb >= 2, "batch norm train mode needs batch size >= 2");
        }
        let m = (nb * h * w) as f64;
        let plane = h * w;
        let xs = x.as_slice().unwrap();
        let mut y = ArrayD::zeros(x.raw_dim());
        let mut xhat = ArrayD::zeros(x.raw_dim());
        let mut inv_std = vec![0.0; c];
        {
            let ys = y.as_slice_mut().unwrap();
            let xh = xhat.as_slice_mut().unwrap();
            for ch in 0..c {
                let (mean, var) = if self.training {
                    let mut sum = 0.0;
                    let mut sq = 0.0;
                    for n in 0..nb {
                        let row = &xs[((n * c + ch) * plane)..][..plane];
                        for &v in row {
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let mean = sum / m;
                    let var = (sq / m - mean * mean).max(0.0);
                    self.running_mean[[ch]] =
                        (1.0 - self.momentum) * self.running_mean[[ch]] + self.momentum * mean;
                    self.running_var[[ch]] =
                        (1.0 - self.momentum) * self.running_var[[ch]] + self.momentum * var;
                    (mean, var)
                } else {
                    (self.running_mean[[ch]], self.running_var[[ch]])
                };
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ch] = istd;
                let (g, b) = (self.gamma[[ch]], self.beta[[ch]]);
                for n in 0..nb {
                    let base = (n * c + ch) * plane;
                    for i in 0..plane {
                        let v = (xs[base + i] - mean) * istd;
                        xh[base + i] = v;
                        ys[base + i] = g * v + b;
                    }
                }
            }
        }
        if self.training {
            self.caches.push(BnCache { xhat, inv_std });
        }
        y
    }

    /// Normalize with running statistics, never caching (inference path).
    pub fn forward_eval(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (nb, c, h, w) = dims4(x);
        assert_eq!(c, self.gamma.len());
        let plane = h * w;
        let xs = x.as_slice().unwrap();
        let mut y = ArrayD::zeros(x.raw_dim());
        let ys = y.as_slice_mut().unwrap();
        for ch in 0..c {
            let mean = self.running_mean[[ch]];
            let istd = 1.0 / (self.running_var[[ch]] + self.eps).sqrt();
            let (g, b) = (self.gamma[[ch]], self.beta[[ch]]);
            for n in 0..nb {
                let base = (n * c + ch) * plane;
                for i in 0..plane {
                    ys[base + i] = g * (xs[base + i] - mean) * istd + b;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> ArrayD<f64> {
        let cache = self.caches.pop().expect("bn backward without matching forward");
        let (nb, c, h, w) = dims4(gy);
        let m = (nb * h * w) as f64;
        let plane = h * w;
        let gys = gy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let mut gx = ArrayD::zeros(gy.raw_dim());
        let gxs = gx.as_slice_mut().unwrap();
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for n in 0..nb {
                let base = (n * c + ch) * plane;
                for i in 0..plane {
                    sum_g += gys[base + i];
                    sum_gx += gys[base + i] * xh[base + i];
                }
            }
            self.gbeta[[ch]] += sum_g;
            self.ggamma[[ch]] += sum_gx;
            let gscale = self.gamma[[ch]] * cache.inv_std[ch];
            for n in 0..nb {
                let base = (n * c + ch) * plane;
                for i in 0..plane {
                    gxs[base + i] = gscale / m
                        * (m * gys[base + i] - sum_g - xh[base + i] * sum_gx);
                }
            }
        }
        gx
    }

    pub fn clear_cache(&mut self) {
        self.caches.clear();
    }
}

impl Parameterized for BatchNorm2d {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "gamma"),
            value: &mut self.gamma,
            grad: Some(&mut self.ggamma),
        });
        out.push(ParamRef {
            name: join(prefix, "beta"),
            value: &mut self.beta,
            grad: Some(&mut self.gbeta),
        });
        out.push(ParamRef {
            name: join(prefix, "running_mean"),
            value: &mut self.running_mean,
            grad: None,
        });
        out.push(ParamRef {
            name: join(prefix, "running_var"),
            value: &mut self.running_var,
            grad: None,
        });
    }
}

#[derive(Default, Clone)]
pub struct Relu {
    masks: Vec<ArrayD<f64>>,
}

impl Relu {
    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let y = x.mapv(|v| v.max(0.0));
        self.masks.push(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        y
    }

    pub fn apply(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> ArrayD<f64> {
        let mask = self.masks.pop().expect("relu backward without forward");
        gy * &mask
    }

    pub fn clear_cache(&mut self) {
        self.masks.clear();
    }
}

#[derive(Default, Clone)]
pub struct Sigmoid {
    ys: Vec<ArrayD<f64>>,
}

impl Sigmoid {
    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let y = x.mapv(snn::sigmoid);
        self.ys.push(y.clone());
        y
    }

    pub fn apply(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        x.mapv(snn::sigmoid)
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> ArrayD<f64> {
        let y = self.ys.pop().expect("sigmoid backward without forward");
        gy * &(y.mapv(|v| v * (1.0 - v)))
    }

    pub fn clear_cache(&mut self) {
        self.ys.clear();
    }
}

/// 2x2 max pooling with stride 2.
#[derive(Default, Clone)]
pub struct MaxPool2d {
    argmax: Vec<(Vec<usize>, Vec<usize>)>, // (input shape via dims, flat argmax per output)
    in_shapes: Vec<Vec<usize>>,
}

impl MaxPool2d {
    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (nb, c, ih, iw) = dims4(x);
        let (oh, ow) = (ih / 2, iw / 2);
        let xs = x.as_slice().unwrap();
        let mut y = ArrayD::zeros(IxDyn(&[nb, c, oh, ow]));
        let mut arg = vec![0usize; nb * c * oh * ow];
        {
            let ys = y.as_slice_mut().unwrap();
            for nc in 0..nb * c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = (nc * ih + oy * 2 + dy) * iw + ox * 2 + dx;
                                if xs[idx] > best {
                                    best = xs[idx];
                                    bi = idx;
                                }
                            }
                        }
                        let o = (nc * oh + oy) * ow + ox;
                        ys[o] = best;
                        arg[o] = bi;
                    }
                }
            }
        }
        self.argmax.push((arg, Vec::new()));
        self.in_shapes.push(x.shape().to_vec());
        y
    }

    pub fn apply(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (nb, c, ih, iw) = dims4(x);
        let (oh, ow) = (ih / 2, iw / 2);
        let xs = x.as_slice().unwrap();
        let mut y = ArrayD::zeros(IxDyn(&[nb, c, oh, ow]));
        let ys = y.as_slice_mut().unwrap();
        for nc in 0..nb * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            best = best.max(xs[(nc * ih + oy * 2 + dy) * iw + ox * 2 + dx]);
                        }
                    }
                    ys[(nc * oh + oy) * ow + ox] = best;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> ArrayD<f64> {
        let (arg, _) = self.argmax.pop().expect("pool backward without forward");
        let shape = self.in_shapes.pop().unwrap();
        let mut gx = ArrayD::zeros(IxDyn(&shape));
        let gxs = gx.as_slice_mut().unwrap();
        for (o, &gi) in gy.as_slice().unwrap().iter().enumerate().map(|(i, g)| (arg[i], g)) {
            gxs[o] += gi;
        }
        gx
    }

    pub fn clear_cache(&mut self) {
        self.argmax.clear();
        self.in_shapes.clear();
    }
}

/// Fully connected layer over flattened inputs: y = x W^T + b.
#[derive(Clone)]
pub struct Linear {
    pub w: ArrayD<f64>, // (k, d)
    pub b: ArrayD<f64>, // (k,)
    pub gw: ArrayD<f64>,
    pub gb: ArrayD<f64>,
    xs: Vec<ArrayD<f64>>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, d: usize, k: usize) -> Self {
        let w = he_uniform(rng, &[k, d], d);
        Self {
            gw: ArrayD::zeros(w.raw_dim()),
            w,
            b: ArrayD::zeros(IxDyn(&[k])),
            gb: ArrayD::zeros(IxDyn(&[k])),
            xs: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let y = self.apply(x);
        self.xs.push(x.clone());
        y
    }

    pub fn apply(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let s = x.shape();
        let (nb, d) = (s[0], s[1]);
        let k = self.w.shape()[0];
        let xs = x.as_slice().unwrap();
        let ws = self.w.as_slice().unwrap();
        let mut y = ArrayD::zeros(IxDyn(&[nb, k]));
        let ys = y.as_slice_mut().unwrap();
        for n in 0..nb {
            for j in 0..k {
                let mut acc = self.b[[j]];
                let wrow = &ws[j * d..][..d];
                let xrow = &xs[n * d..][..d];
                for (wv, xv) in wrow.iter().zip(xrow) {
                    acc += wv * xv;
                }
                ys[n * k + j] = acc;
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> ArrayD<f64> {
        let x = self.xs.pop().expect("linear backward without forward");
        let s = x.shape();
        let (nb, d) = (s[0], s[1]);
        let k = self.w.shape()[0];
        let xs = x.as_slice().unwrap();
        let gys = gy.as_slice().unwrap();
        let ws = self.w.as_slice().unwrap();
        let gws = self.gw.as_slice_mut().unwrap();
        let gbs = self.gb.as_slice_mut().unwrap();
        let mut gx = ArrayD::zeros(x.raw_dim());
        let gxs = gx.as_slice_mut().unwrap();
        for n in 0..nb {
            for j in 0..k {
                let g = gys[n * k + j];
                gbs[j] += g;
                let xrow = &xs[n * d..][..d];
                let wrow = &ws[j * d..][..d];
                let gwrow = &mut gws[j * d..][..d];
                let gxrow = &mut gxs[n * d..][..d];
                for i in 0..d {
                    gwrow[i] += xrow[i] * g;
                    gxrow[i] += wrow[i] * g;
                }
            }
        }
        gx
    }

    pub fn clear_cache(&mut self) {
        self.xs.clear();
    }
}

impl Parameterized for Linear {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: join(prefix, "weight"),
            value: &mut self.w,
            grad: Some(&mut self.gw),
        });
        out.push(ParamRef {
            name: join(prefix, "bias"),
            value: &mut self.b,
            grad: Some(&mut self.gb),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpikingKind {
    If,
    Ihf,
}

/// Spiking activation layer with soft reset, unrolled over time steps.
///
/// The membrane potential persists across `step` calls until `reset`.
/// Backward runs in reverse step order and carries the adjoint of the
/// post-reset potential from step t+1 back to step t.
#[derive(Clone)]
pub struct SpikingLayer {
    pub kind: SpikingKind,
    pub v_th: f64,
    pub cfg: SurrogateConfig,
    m: Option<ArrayD<f64>>,
    pre: Vec<ArrayD<f64>>, // post-charge potential per step
    carry: Option<ArrayD<f64>>,
    pub time_index: u64,
}

impl SpikingLayer {
    pub fn new(kind: SpikingKind, v_th: f64, cfg: SurrogateConfig) -> Self {
        Self { kind, v_th, cfg, m: None, pre: Vec::new(), carry: None, time_index: 0 }
    }

    /// One time step. Returns (spikes, membrane output for IHF).
    pub fn step(&mut self, x: &ArrayD<f64>) -> (ArrayD<f64>, Option<ArrayD<f64>>) {
        let m = self
            .m
            .get_or_insert_with(|| ArrayD::zeros(x.raw_dim()));
        assert_eq!(m.shape(), x.shape(), "spiking layer shape changed mid-sequence");
        snn::charge(m.as_slice_mut().unwrap(), x.as_slice().unwrap());
        self.pre.push(m.clone());
        let mut spikes = ArrayD::zeros(x.raw_dim());
        {
            let ms = m.as_slice_mut().unwrap();
            let ss = spikes.as_slice_mut().unwrap();
            if self.cfg.relaxed_forward {
                snn::fire_relaxed(ms, self.v_th, self.cfg.slope, ss);
            } else {
                snn::fire_hard(ms, self.v_th, ss);
            }
            snn::soft_reset(ms, ss, self.v_th);
        }
        self.time_index += 1;
        let mem = match self.kind {
            SpikingKind::If => None,
            SpikingKind::Ihf => Some(self.m.as_ref().unwrap().clone()),
        };
        (spikes, mem)
    }

    /// One time step without recording backward caches (inference).
    /// Returns the spike tensor only.
    pub fn step_no_cache(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        self.step_with_membrane_no_cache(x).0
    }

    /// Inference step returning (spikes, membrane output for IHF).
    pub fn step_with_membrane_no_cache(&mut self, x: &ArrayD<f64>) -> (ArrayD<f64>, Option<ArrayD<f64>>) {
        let m = self.m.get_or_insert_with(|| ArrayD::zeros(x.raw_dim()));
        assert_eq!(m.shape(), x.shape(), "spiking layer shape changed mid-sequence");
        snn::charge(m.as_slice_mut().unwrap(), x.as_slice().unwrap());
        let mut spikes = ArrayD::zeros(x.raw_dim());
        {
            let ms = m.as_slice_mut().unwrap();
            let ss = spikes.as_slice_mut().unwrap();
            if self.cfg.relaxed_forward {
                snn::fire_relaxed(ms, self.v_th, self.cfg.slope, ss);
            } else {
                snn::fire_hard(ms, self.v_th, ss);
            }
            snn::soft_reset(ms, ss, self.v_th);
        }
        self.time_index += 1;
        let mem = match self.kind {
            SpikingKind::If => None,
            SpikingKind::Ihf => Some(self.m.as_ref().unwrap().clone()),
        };
        (spikes, mem)
    }

    /// Backward for the step matching the most recent un-popped forward.
    pub fn backward_step(&mut self, g_spike: &ArrayD<f64>, g_mem: Option<&ArrayD<f64>>) -> ArrayD<f64> {
        let pre = self.pre.pop().expect("spiking backward without forward");
        let mut gm_post = match self.carry.take() {
            Some(c) => c,
            None => ArrayD::zeros(pre.raw_dim()),
        };
        if let Some(gm) = g_mem {
            gm_post += gm;
        }
        let mut g_in = ArrayD::zeros(pre.raw_dim());
        {
            let pres = pre.as_slice().unwrap();
            let gss = g_spike.as_slice().unwrap();
            let gms = gm_post.as_slice().unwrap();
            let gis = g_in.as_slice_mut().unwrap();
            for i in 0..pres.len() {
                let sg = snn::surrogate_grad_scalar(pres[i], self.v_th, self.cfg.slope);
                gis[i] = gss[i] * sg + gms[i] * (1.0 - self.v_th * sg);
            }
        }
        self.carry = Some(g_in.clone());
        g_in
    }

    /// Clear membrane state and caches between samples/sequences.
    pub fn reset(&mut self) {
        self.m = None;
        self.pre.clear();
        self.carry = None;
        self.time_index = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        let mut t = ArrayD::zeros(IxDyn(shape));
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut r = rng();
        let mut conv = Conv2d::new(&mut r, 1, 1, 3, 1, 1);
        conv.w.fill(0.0);
        conv.w[[0, 0, 1, 1]] = 1.0;
        conv.b.fill(0.0);
        let x = rand_tensor(&mut r, &[1, 1, 5, 5]);
        let y = conv.forward(&x);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_zero_weights_give_zero_output() {
        let mut r = rng();
        let mut conv = Conv2d::new(&mut r, 2, 3, 3, 1, 1);
        conv.w.fill(0.0);
        conv.b.fill(0.0);
        let x = rand_tensor(&mut r, &[1, 2, 4, 4]);
        let y = conv.forward(&x);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_weight_grad_matches_finite_differences() {
        let mut r = rng();
        let mut conv = Conv2d::new(&mut r, 1, 1, 3, 1, 1);
        let x = rand_tensor(&mut r, &[1, 1, 4, 4]);
        // loss = sum of outputs weighted by a fixed random tensor
        let wsum = rand_tensor(&mut r, &[1, 1, 4, 4]);
        let y = conv.forward(&x);
        let gy = wsum.clone();
        let _ = y;
        let gx = conv.backward(&gy);

        let loss = |conv: &Conv2d, x: &ArrayD<f64>| -> f64 {
            conv.apply(x).iter().zip(wsum.iter()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for idx in 0..conv.w.len() {
            let orig = conv.w.as_slice().unwrap()[idx];
            conv.w.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&conv, &x);
            conv.w.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&conv, &x);
            conv.w.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = conv.gw.as_slice().unwrap()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-6, "weight grad rel err {rel}");
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let lp = loss(&conv, &xp);
            xp.as_slice_mut().unwrap()[idx] -= 2.0 * h;
            let lm = loss(&conv, &xp);
            let fd = (lp - lm) / (2.0 * h);
            let an = gx.as_slice().unwrap()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-6, "input grad rel err {rel}");
        }
    }

    #[test]
    fn bn_is_fixed_point_on_normalized_input() {
        let mut bn = BatchNorm2d::new(1);
        // two samples, zero mean unit variance per channel
        let x = ndarray::arr2(&[[1.0], [-1.0]])
            .into_shape_with_order(IxDyn(&[2, 1, 1, 1]))
            .unwrap();
        let y = bn.forward(&x);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-2); // eps smudges slightly
        }
    }

    #[test]
    fn bn_gamma_zero_outputs_beta() {
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.fill(0.0);
        bn.beta.fill(0.7);
        let mut r = rng();
        let x = rand_tensor(&mut r, &[3, 2, 2, 2]);
        let y = bn.forward(&x);
        assert!(y.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn bn_train_mode_normalizes_batch() {
        let mut bn = BatchNorm2d::new(3);
        let mut r = rng();
        let x = rand_tensor(&mut r, &[8, 3, 4, 4]);
        let y = bn.forward(&x);
        let (nb, c, h, w) = (8, 3, 4, 4);
        let m = (nb * h * w) as f64;
        let ys = y.as_slice().unwrap();
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for n in 0..nb {
                for i in 0..h * w {
                    let v = ys[(n * c + ch) * h * w + i];
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / m;
            let var = sq / m - mean * mean;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn bn_backward_matches_finite_differences() {
        let mut bn = BatchNorm2d::new(2);
        let mut r = rng();
        let x = rand_tensor(&mut r, &[4, 2, 2, 2]);
        let wsum = rand_tensor(&mut r, &[4, 2, 2, 2]);
        let _y = bn.forward(&x);
        let gx = bn.backward(&wsum);

        let loss = |bn: &mut BatchNorm2d, x: &ArrayD<f64>| -> f64 {
            let y = bn.forward(x);
            bn.clear_cache();
            y.iter().zip(wsum.iter()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        // batch stats depend on x, so perturb inputs only
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            let lp = loss(&mut bn, &xp);
            xp.as_slice_mut().unwrap()[idx] -= 2.0 * h;
            let lm = loss(&mut bn, &xp);
            let fd = (lp - lm) / (2.0 * h);
            let an = gx.as_slice().unwrap()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            assert!(rel < 1e-4, "bn input grad rel err {rel}");
        }
    }

    #[test]
    fn bn_rejects_batch_of_one_in_train_mode() {
        let mut bn = BatchNorm2d::new(1);
        let x = ArrayD::zeros(IxDyn(&[1, 1, 2, 2]));
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| bn.forward(&x)));
        assert!(res.is_err());
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut pool = MaxPool2d::default();
        let x = ndarray::arr1(&[1.0, 2.0, 3.0, 4.0])
            .into_shape_with_order(IxDyn(&[1, 1, 2, 2]))
            .unwrap();
        let y = pool.forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        let gy = ArrayD::ones(IxDyn(&[1, 1, 1, 1]));
        let gx = pool.backward(&gy);
        assert_eq!(gx[[0, 0, 1, 1]], 1.0);
        assert_eq!(gx.sum(), 1.0);
    }

    #[test]
    fn spiking_layer_soft_reset_conservation() {
        // m_after = m_before + I - S * v_th, elementwise, for a single step
        let mut layer = SpikingLayer::new(SpikingKind::Ihf, 1.0, SurrogateConfig::default());
        let mut r = rng();
        let x = rand_tensor(&mut r, &[1, 2, 3, 3]).mapv(|v| v * 2.0);
        let (s, m) = layer.step(&x);
        let m = m.unwrap();
        for i in 0..x.len() {
            let before = 0.0;
            let expect = before + x.as_slice().unwrap()[i] - s.as_slice().unwrap()[i] * 1.0;
            assert!((m.as_slice().unwrap()[i] - expect).abs() < 1e-12);
        }
    }
}
