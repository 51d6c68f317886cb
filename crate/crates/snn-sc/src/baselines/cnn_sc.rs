//! CNN-based semantic communication baseline.
//!
//! Same channel plan as the spiking module (c -> c1 -> c2 and back), but with
//! ReLU/sigmoid activations and a single analog pass instead of T time steps.
//! The sigmoid bottleneck is quantized to n bits per value, serialized
//! MSB-first, sent through the digital channel, and dequantized on the other
//! side. Backward treats quantization and channel as identity maps
//! (straight-through estimator).

use ndarray::ArrayD;
use rand::Rng;

use super::quant::{self, QuantConfig};
use crate::channel::Channel;
use crate::error::Result;
use crate::nn::layers::{BatchNorm2d, Conv2d, Relu, Sigmoid};
use crate::nn::model::Geometry;
use crate::nn::param::{join, ParamRef, Parameterized};

#[derive(Clone)]
pub struct CnnScModel {
    pub geom: Geometry,
    pub quant: QuantConfig,
    enc_conv1: Conv2d,
    enc_bn1: BatchNorm2d,
    enc_relu: Relu,
    enc_conv2: Conv2d,
    enc_bn2: BatchNorm2d,
    enc_sig: Sigmoid,
    dec_conv1: Conv2d,
    dec_bn1: BatchNorm2d,
    dec_relu: Relu,
    dec_conv2: Conv2d,
    dec_bn2: BatchNorm2d,
    dec_sig: Sigmoid,
}

impl CnnScModel {
    /// `geom.time_steps` is reused as the quantization bit depth so that the
    /// bit budget matches the spiking module at T = n.
    pub fn new(rng: &mut impl Rng, geom: Geometry) -> Result<Self> {
        geom.validate()?;
        Ok(Self {
            geom,
            quant: QuantConfig::new(geom.time_steps as u32),
            enc_conv1: Conv2d::new(rng, geom.c, geom.c1, 3, 1, 1),
            enc_bn1: BatchNorm2d::new(geom.c1),
            enc_relu: Relu::default(),
            enc_conv2: Conv2d::new(rng, geom.c1, geom.c2, 3, 1, 1),
            enc_bn2: BatchNorm2d::new(geom.c2),
            enc_sig: Sigmoid::default(),
            dec_conv1: Conv2d::new(rng, geom.c2, geom.c1, 3, 1, 1),
            dec_bn1: BatchNorm2d::new(geom.c1),
            dec_relu: Relu::default(),
            dec_conv2: Conv2d::new(rng, geom.c1, geom.c, 3, 1, 1),
            dec_bn2: BatchNorm2d::new(geom.c),
            dec_sig: Sigmoid::default(),
        })
    }

    pub fn bits_per_inference(&self) -> usize {
        self.geom.bits_per_step() * self.quant.n as usize
    }

    pub fn set_training(&mut self, training: bool) {
        for bn in [
            &mut self.enc_bn1,
            &mut self.enc_bn2,
            &mut self.dec_bn1,
            &mut self.dec_bn2,
        ] {
            bn.training = training;
        }
    }

    pub fn clear_caches(&mut self) {
        self.enc_conv1.clear_cache();
        self.enc_bn1.clear_cache();
        self.enc_relu.clear_cache();
        self.enc_conv2.clear_cache();
        self.enc_bn2.clear_cache();
        self.enc_sig.clear_cache();
        self.dec_conv1.clear_cache();
        self.dec_bn1.clear_cache();
        self.dec_relu.clear_cache();
        self.dec_conv2.clear_cache();
        self.dec_bn2.clear_cache();
        self.dec_sig.clear_cache();
    }

    /// Quantize, serialize, transmit, dequantize. With no channel this is a
    /// pure quantization roundtrip (values snap to the n-bit lattice).
    fn cross_channel(&self, x: &ArrayD<f64>, channel: Option<&mut Channel>) -> ArrayD<f64> {
        let bits = quant::tensor_to_bits(x, self.quant);
        let bits = match channel {
            Some(ch) => ch.transmit_bits(&bits),
            None => bits,
        };
        quant::bits_to_tensor(&bits, self.quant, x.shape())
    }

    pub fn forward_train(
        &mut self,
        f: &ArrayD<f64>,
        channel: Option<&mut Channel>,
    ) -> Result<ArrayD<f64>> {
        self.clear_caches();
        let a = self.enc_conv1.forward(f);
        let a = self.enc_bn1.forward(&a);
        let a = self.enc_relu.forward(&a);
        let a = self.enc_conv2.forward(&a);
        let a = self.enc_bn2.forward(&a);
        let x = self.enc_sig.forward(&a);
        let xbar = self.cross_channel(&x, channel);
        let a = self.dec_conv1.forward(&xbar);
        let a = self.dec_bn1.forward(&a);
        let a = self.dec_relu.forward(&a);
        let a = self.dec_conv2.forward(&a);
        let a = self.dec_bn2.forward(&a);
        Ok(self.dec_sig.forward(&a))
    }

    /// Straight-through backward: the decoder-input gradient passes to the
    /// encoder output unchanged. Returns the gradient of the input feature.
    pub fn backward_train(&mut self, g_fp: &ArrayD<f64>) -> ArrayD<f64> {
        let g = self.dec_sig.backward(g_fp);
        let g = self.dec_bn2.backward(&g);
        let g = self.dec_conv2.backward(&g);
        let g = self.dec_relu.backward(&g);
        let g = self.dec_bn1.backward(&g);
        let g = self.dec_conv1.backward(&g);
        let g = self.enc_sig.backward(&g);
        let g = self.enc_bn2.backward(&g);
        let g = self.enc_conv2.backward(&g);
        let g = self.enc_relu.backward(&g);
        let g = self.enc_bn1.backward(&g);
        self.enc_conv1.backward(&g)
    }

    pub fn forward_infer(
        &mut self,
        f: &ArrayD<f64>,
        channel: Option<&mut Channel>,
    ) -> Result<ArrayD<f64>> {
        let a = self.enc_conv1.apply(f);
        let a = self.enc_bn1.forward_eval(&a);
        let a = self.enc_relu.apply(&a);
        let a = self.enc_conv2.apply(&a);
        let a = self.enc_bn2.forward_eval(&a);
        let x = self.enc_sig.apply(&a);
        let xbar = self.cross_channel(&x, channel);
        let a = self.dec_conv1.apply(&xbar);
        let a = self.dec_bn1.forward_eval(&a);
        let a = self.dec_relu.apply(&a);
        let a = self.dec_conv2.apply(&a);
        let a = self.dec_bn2.forward_eval(&a);
        Ok(self.dec_sig.apply(&a))
    }
}

impl Parameterized for CnnScModel {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.enc_conv1.visit_params(&join(prefix, "encoder.conv1"), out);
        self.enc_bn1.visit_params(&join(prefix, "encoder.bn1"), out);
        self.enc_conv2.visit_params(&join(prefix, "encoder.conv2"), out);
        self.enc_bn2.visit_params(&join(prefix, "encoder.bn2"), out);
        self.dec_conv1.visit_params(&join(prefix, "decoder.conv1"), out);
        self.dec_bn1.visit_params(&join(prefix, "decoder.bn1"), out);
        self.dec_conv2.visit_params(&join(prefix, "decoder.conv2"), out);
        self.dec_bn2.visit_params(&join(prefix, "decoder.bn2"), out);
    }
}
