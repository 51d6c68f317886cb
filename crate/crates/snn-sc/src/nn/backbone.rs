//! Desk-scale split classifier: four conv layers and a linear head.
//! The split point sits after layer 2 (edge) / before layer 3 (cloud), so
//! the feature crossing the channel has shape (feat_c, img/4, img/4).

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::layers::{Conv2d, Linear, MaxPool2d, Relu};
use super::param::{join, ParamRef, Parameterized};
use crate::error::{Error, Result};

#[derive(Clone)]
pub struct Backbone {
    pub in_channels: usize,
    pub img: usize,
    pub classes: usize,
    pub feat_c: usize,
    conv1: Conv2d,
    relu1: Relu,
    pool1: MaxPool2d,
    conv2: Conv2d,
    relu2: Relu,
    pool2: MaxPool2d,
    conv3: Conv2d,
    relu3: Relu,
    pool3: MaxPool2d,
    conv4: Conv2d,
    relu4: Relu,
    fc: Linear,
}

impl Backbone {
    pub fn new(rng: &mut impl Rng, in_channels: usize, img: usize, classes: usize, feat_c: usize) -> Result<Self> {
        if !img.is_multiple_of(8) {
            return Err(Error::Geometry(format!("image size {img} must be divisible by 8")));
        }
        let q = img / 8;
        Ok(Self {
            in_channels,
            img,
            classes,
            feat_c,
            conv1: Conv2d::new(rng, in_channels, feat_c / 4, 3, 1, 1),
            relu1: Relu::default(),
            pool1: MaxPool2d::default(),
            conv2: Conv2d::new(rng, feat_c / 4, feat_c, 3, 1, 1),
            relu2: Relu::default(),
            pool2: MaxPool2d::default(),
            conv3: Conv2d::new(rng, feat_c, feat_c, 3, 1, 1),
            relu3: Relu::default(),
            pool3: MaxPool2d::default(),
            conv4: Conv2d::new(rng, feat_c, feat_c, 3, 1, 1),
            relu4: Relu::default(),
            fc: Linear::new(rng, feat_c * q * q, classes),
        })
    }

    /// Feature shape at the split point: (feat_c, img/4, img/4).
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        (self.feat_c, self.img / 4, self.img / 4)
    }

    pub fn forward_front(&mut self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let a = self.conv1.forward(x);
        let a = self.relu1.forward(&a);
        let a = self.pool1.forward(&a);
        let a = self.conv2.forward(&a);
        let a = self.relu2.forward(&a);
        self.pool2.forward(&a)
    }

    pub fn apply_front(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let a = self.conv1.apply(x);
        let a = self.relu1.apply(&a);
        let a = self.pool1.apply(&a);
        let a = self.conv2.apply(&a);
        let a = self.relu2.apply(&a);
        self.pool2.apply(&a)
    }

    pub fn forward_tail(&mut self, f: &ArrayD<f64>) -> ArrayD<f64> {
        let a = self.conv3.forward(f);
        let a = self.relu3.forward(&a);
        let a = self.pool3.forward(&a);
        let a = self.conv4.forward(&a);
        let a = self.relu4.forward(&a);
        let n = a.shape()[0];
        let d = a.len() / n;
        let flat = a.into_shape_with_order(IxDyn(&[n, d])).unwrap();
        self.fc.forward(&flat)
    }

    pub fn apply_tail(&self, f: &ArrayD<f64>) -> ArrayD<f64> {
        let a = self.conv3.apply(f);
        let a = self.relu3.apply(&a);
        let a = self.pool3.apply(&a);
        let a = self.conv4.apply(&a);
        let a = self.relu4.apply(&a);
        let n = a.shape()[0];
        let d = a.len() / n;
        let flat = a.into_shape_with_order(IxDyn(&[n, d])).unwrap();
        self.fc.apply(&flat)
    }

    /// Backward through the cloud half. Returns the gradient at the split.
    pub fn backward_tail(&mut self, g_logits: &ArrayD<f64>) -> ArrayD<f64> {
        let g = self.fc.backward(g_logits);
        let n = g.shape()[0];
        let q = self.img / 8;
        let g = g
            .into_shape_with_order(IxDyn(&[n, self.feat_c, q, q]))
            .unwrap();
        let g = self.relu4.backward(&g);
        let g = self.conv4.backward(&g);
        let g = self.pool3.backward(&g);
        let g = self.relu3.backward(&g);
        self.conv3.backward(&g)
    }

    /// Backward through the edge half, consuming the split-point gradient.
    pub fn backward_front(&mut self, g_f: &ArrayD<f64>) {
        let g = self.pool2.backward(g_f);
        let g = self.relu2.backward(&g);
        let g = self.conv2.backward(&g);
        let g = self.pool1.backward(&g);
        let g = self.relu1.backward(&g);
        let _ = self.conv1.backward(&g);
    }

    /// Drop any recorded forward caches (e.g. after a no-grad forward).
    pub fn clear_caches(&mut self) {
        for conv in [&mut self.conv1, &mut self.conv2, &mut self.conv3, &mut self.conv4] {
            conv.clear_cache();
        }
        for relu in [&mut self.relu1, &mut self.relu2, &mut self.relu3, &mut self.relu4] {
            relu.clear_cache();
        }
        for pool in [&mut self.pool1, &mut self.pool2, &mut self.pool3] {
            pool.clear_cache();
        }
        self.fc.clear_cache();
    }
}

impl Parameterized for Backbone {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv1.visit_params(&join(prefix, "conv1"), out);
        self.conv2.visit_params(&join(prefix, "conv2"), out);
        self.conv3.visit_params(&join(prefix, "conv3"), out);
        self.conv4.visit_params(&join(prefix, "conv4"), out);
        self.fc.visit_params(&join(prefix, "fc"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_through_the_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bb = Backbone::new(&mut rng, 3, 16, 10, 64).unwrap();
        let x = ArrayD::zeros(IxDyn(&[2, 3, 16, 16]));
        let f = bb.apply_front(&x);
        assert_eq!(f.shape(), [2, 64, 4, 4]);
        let logits = bb.apply_tail(&f);
        assert_eq!(logits.shape(), [2, 10]);
        bb.clear_caches();
    }
}
