//! The spiking semantic-communication module: encoder, reconstructor and
//! converter, unrolled over T time steps with parameters shared across steps.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::layers::{BatchNorm2d, Conv2d, SpikingKind, SpikingLayer};
use super::param::{join, ParamRef, Parameterized};
use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::snn::{self, SurrogateConfig};

/// Channel/spatial plan of the module. Spatial dims are unchanged by the
/// encoder and reconstructor; only channel counts shrink and grow back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub c: usize,
    pub c1: usize,
    pub c2: usize,
    pub h: usize,
    pub w: usize,
    pub time_steps: usize,
}

impl Geometry {
    /// Default channel plan: c -> c/8 -> c/64.
    pub fn plan(c: usize, h: usize, w: usize, time_steps: usize) -> Self {
        Self {
            c,
            c1: (c / 8).max(1),
            c2: (c / 64).max(1),
            h,
            w,
            time_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, d) = (
            self.c * self.h * self.w,
            self.c1 * self.h * self.w,
            self.c2 * self.h * self.w,
        );
        if !(a > b && b > d) {
            return Err(Error::Geometry(format!(
                "compression ordering violated: {a} > {b} > {d} required"
            )));
        }
        if self.time_steps == 0 {
            return Err(Error::Geometry("time_steps must be positive".into()));
        }
        Ok(())
    }

    /// Bits crossing the channel per time step.
    pub fn bits_per_step(&self) -> usize {
        self.c2 * self.h * self.w
    }

    /// Bits crossing the channel per inference.
    pub fn bits_per_inference(&self) -> usize {
        self.bits_per_step() * self.time_steps
    }

    /// (f32 bits of the original feature) / (transmitted bits).
    pub fn compression_ratio(&self) -> f64 {
        (self.c * self.h * self.w * 32) as f64 / self.bits_per_inference() as f64
    }
}

/// Which outputs of the reconstructor's final neuron feed the converter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronVariant {
    /// Spike and membrane outputs (2T converter inputs).
    Ihf,
    /// Spike output only (T converter inputs).
    IfOnly,
    /// Membrane output only (T converter inputs).
    MembraneOnly,
}

impl NeuronVariant {
    pub fn planes_per_step(&self) -> usize {
        match self {
            NeuronVariant::Ihf => 2,
            _ => 1,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            NeuronVariant::Ihf => "ihf",
            NeuronVariant::IfOnly => "if",
            NeuronVariant::MembraneOnly => "ihfm",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "ihf" => Ok(Self::Ihf),
            "if" => Ok(Self::IfOnly),
            "ihfm" => Ok(Self::MembraneOnly),
            other => Err(Error::Config(format!("unknown neuron variant '{other}'"))),
        }
    }
}

/// Shared elementwise fusion of the reconstructor's time-step outputs:
/// one affine map from the stacked per-position values to a scalar,
/// followed by a sigmoid. Weights are shared across all (c, y, x) positions.
#[derive(Clone)]
pub struct Converter {
    pub w: ArrayD<f64>, // (in_planes,)
    pub b: ArrayD<f64>, // (1,)
    pub gw: ArrayD<f64>,
    pub gb: ArrayD<f64>,
    cache: Option<(Vec<ArrayD<f64>>, ArrayD<f64>)>,
}

impl Converter {
    pub fn new(rng: &mut impl Rng, in_planes: usize) -> Self {
        let limit = (6.0 / in_planes as f64).sqrt();
        let mut w = ArrayD::zeros(IxDyn(&[in_planes]));
        for v in w.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
        Self {
            gw: ArrayD::zeros(w.raw_dim()),
            w,
            b: ArrayD::zeros(IxDyn(&[1])),
            gb: ArrayD::zeros(IxDyn(&[1])),
            cache: None,
        }
    }

    pub fn in_planes(&self) -> usize {
        self.w.len()
    }

    pub fn apply(&self, planes: &[ArrayD<f64>]) -> Result<ArrayD<f64>> {
        if planes.len() != self.w.len() {
            return Err(Error::InvalidArgument(format!(
                "converter expects {} planes, got {}",
                self.w.len(),
                planes.len()
            )));
        }
        let mut pre = ArrayD::from_elem(planes[0].raw_dim(), self.b[[0]]);
        for (j, plane) in planes.iter().enumerate() {
            let wj = self.w[[j]];
            pre.zip_mut_with(plane, |a, &p| *a += wj * p);
        }
        Ok(pre.mapv(snn::sigmoid))
    }

    pub fn forward(&mut self, planes: Vec<ArrayD<f64>>) -> Result<ArrayD<f64>> {
        let y = self.apply(&planes)?;
        self.cache = Some((planes, y.clone()));
        Ok(y)
    }

    pub fn backward(&mut self, gy: &ArrayD<f64>) -> Vec<ArrayD<f64>> {
        let (planes, y) = self.cache.take().expect("converter backward without forward");
        let gpre = gy * &y.mapv(|v| v * (1.0 - v));
        self.gb[[0]] += gpre.sum();
        let mut gplanes = Vec::with_capacity(planes.len());
        for (j, plane) in planes.iter().enumerate() {
            self.gw[[j]] += (&gpre * plane).sum();
            gplanes.push(&gpre * self.w[[j]]);
        }
        gplanes
    }
}

impl Parameterized for Converter {
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

/// Encoder (two Conv-BN-IF blocks), reconstructor (Conv-BN-IF then
/// Conv-BN-IHF), and converter, with parameters shared across time steps.
#[derive(Clone)]
pub struct SnnScModel {
    pub geom: Geometry,
    pub variant: NeuronVariant,
    pub enc_conv1: Conv2d,
    pub enc_bn1: BatchNorm2d,
    pub enc_if1: SpikingLayer,
    pub enc_conv2: Conv2d,
    pub enc_bn2: BatchNorm2d,
    pub enc_if2: SpikingLayer,
    pub rec_conv1: Conv2d,
    pub rec_bn1: BatchNorm2d,
    pub rec_if1: SpikingLayer,
    pub rec_conv2: Conv2d,
    pub rec_bn2: BatchNorm2d,
    pub rec_out: SpikingLayer,
    pub converter: Converter,
}

impl SnnScModel {
    pub fn new(rng: &mut impl Rng, geom: Geometry, variant: NeuronVariant) -> Result<Self> {
        geom.validate()?;
        let cfg = SurrogateConfig::default();
        let out_kind = match variant {
            NeuronVariant::IfOnly => SpikingKind::If,
            _ => SpikingKind::Ihf,
        };
        Ok(Self {
            geom,
            variant,
            enc_conv1: Conv2d::new(rng, geom.c, geom.c1, 3, 1, 1),
            enc_bn1: BatchNorm2d::new(geom.c1),
            enc_if1: SpikingLayer::new(SpikingKind::If, 1.0, cfg),
            enc_conv2: Conv2d::new(rng, geom.c1, geom.c2, 3, 1, 1),
            enc_bn2: BatchNorm2d::new(geom.c2),
            enc_if2: SpikingLayer::new(SpikingKind::If, 1.0, cfg),
            rec_conv1: Conv2d::new(rng, geom.c2, geom.c1, 3, 1, 1),
            rec_bn1: BatchNorm2d::new(geom.c1),
            rec_if1: SpikingLayer::new(SpikingKind::If, 1.0, cfg),
            rec_conv2: Conv2d::new(rng, geom.c1, geom.c, 3, 1, 1),
            rec_bn2: BatchNorm2d::new(geom.c),
            rec_out: SpikingLayer::new(out_kind, 1.0, cfg),
            converter: Converter::new(rng, geom.time_steps * variant.planes_per_step()),
        })
    }

    pub fn set_training(&mut self, training: bool) {
        for bn in [
            &mut self.enc_bn1,
            &mut self.enc_bn2,
            &mut self.rec_bn1,
            &mut self.rec_bn2,
        ] {
            bn.training = training;
        }
    }

    /// Toggle relaxed-forward (smooth firing) on all spiking layers.
    pub fn set_relaxed(&mut self, relaxed: bool) {
        for layer in [
            &mut self.enc_if1,
            &mut self.enc_if2,
            &mut self.rec_if1,
            &mut self.rec_out,
        ] {
            layer.cfg.relaxed_forward = relaxed;
        }
    }

    /// Clear membrane state and all per-step caches between samples.
    pub fn reset_sequence(&mut self) {
        for layer in [
            &mut self.enc_if1,
            &mut self.enc_if2,
            &mut self.rec_if1,
            &mut self.rec_out,
        ] {
            layer.reset();
        }
        for conv in [
            &mut self.enc_conv1,
            &mut self.enc_conv2,
            &mut self.rec_conv1,
            &mut self.rec_conv2,
        ] {
            conv.clear_cache();
        }
        for bn in [
            &mut self.enc_bn1,
            &mut self.enc_bn2,
            &mut self.rec_bn1,
            &mut self.rec_bn2,
        ] {
            bn.clear_cache();
        }
        self.converter.cache = None;
    }

    fn check_input(&self, f: &ArrayD<f64>) -> Result<()> {
        let s = f.shape();
        if s.len() != 4 || s[1] != self.geom.c || s[2] != self.geom.h || s[3] != self.geom.w {
            return Err(Error::ShapeMismatch {
                expected: vec![0, self.geom.c, self.geom.h, self.geom.w],
                got: s.to_vec(),
            });
        }
        Ok(())
    }

    /// One encoder time step, recording caches for backward.
    pub fn encode_step_train(&mut self, f: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.check_input(f)?;
        let a = self.enc_conv1.forward(f);
        let a = self.enc_bn1.forward(&a);
        let (s1, _) = self.enc_if1.step(&a);
        let a = self.enc_conv2.forward(&s1);
        let a = self.enc_bn2.forward(&a);
        let (z, _) = self.enc_if2.step(&a);
        Ok(z)
    }

    /// One encoder time step, inference path (no caches recorded).
    pub fn encode_step_infer(&mut self, f: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        self.check_input(f)?;
        let a = self.enc_conv1.apply(f);
        let a = self.enc_bn1.forward_eval(&a);
        let s1 = self.enc_if1.step_no_cache(&a);
        let a = self.enc_conv2.apply(&s1);
        let a = self.enc_bn2.forward_eval(&a);
        Ok(self.enc_if2.step_no_cache(&a))
    }

    pub fn reconstruct_step_train(&mut self, z_hat: &ArrayD<f64>) -> (ArrayD<f64>, Option<ArrayD<f64>>) {
        let a = self.rec_conv1.forward(z_hat);
        let a = self.rec_bn1.forward(&a);
        let (r1, _) = self.rec_if1.step(&a);
        let a = self.rec_conv2.forward(&r1);
        let a = self.rec_bn2.forward(&a);
        self.rec_out.step(&a)
    }

    pub fn reconstruct_step_infer(&mut self, z_hat: &ArrayD<f64>) -> (ArrayD<f64>, Option<ArrayD<f64>>) {
        let a = self.rec_conv1.apply(z_hat);
        let a = self.rec_bn1.forward_eval(&a);
        let r1 = self.rec_if1.step_no_cache(&a);
        let a = self.rec_conv2.apply(&r1);
        let a = self.rec_bn2.forward_eval(&a);
        self.rec_out.step_with_membrane_no_cache(&a)
    }

    /// Converter input planes for one step, in transmission order.
    pub fn planes_for_step(
        &self,
        spikes: ArrayD<f64>,
        membrane: Option<ArrayD<f64>>,
    ) -> Vec<ArrayD<f64>> {
        match self.variant {
            NeuronVariant::Ihf => vec![spikes, membrane.expect("IHF variant needs membrane")],
            NeuronVariant::IfOnly => vec![spikes],
            NeuronVariant::MembraneOnly => vec![membrane.expect("membrane variant needs membrane")],
        }
    }

    /// Full training forward over T steps. Returns the reconstructed feature
    /// and the pre-channel encoder outputs of every step (for the entropy
    /// regularizer).
    pub fn forward_train(
        &mut self,
        f: &ArrayD<f64>,
        mut channel: Option<&mut Channel>,
    ) -> Result<(ArrayD<f64>, Vec<ArrayD<f64>>)> {
        self.reset_sequence();
        let mut planes = Vec::with_capacity(self.converter.in_planes());
        let mut zs = Vec::with_capacity(self.geom.time_steps);
        for _ in 0..self.geom.time_steps {
            let z = self.encode_step_train(f)?;
            zs.push(z.clone());
            let z_hat = match channel.as_deref_mut() {
                Some(ch) => ch.transmit_array(&z),
                None => z,
            };
            let (s, m) = self.reconstruct_step_train(&z_hat);
            planes.extend(self.planes_for_step(s, m));
        }
        let fp = self.converter.forward(planes)?;
        Ok((fp, zs))
    }

    /// Backward through the whole module. `entropy_bit_grad` is the constant
    /// gradient contribution of the entropy penalty to every transmitted bit
    /// (straight-through on the batch frequency estimate); the digital
    /// channel itself is an identity map in backward. Returns the gradient
    /// with respect to the input feature, summed over time steps.
    pub fn backward_train(&mut self, g_fp: &ArrayD<f64>, entropy_bit_grad: f64) -> ArrayD<f64> {
        let gplanes = self.converter.backward(g_fp);
        let per = self.variant.planes_per_step();
        let mut g_f: Option<ArrayD<f64>> = None;
        for t in (0..self.geom.time_steps).rev() {
            let (g_s, g_m): (ArrayD<f64>, Option<&ArrayD<f64>>) = match self.variant {
                NeuronVariant::Ihf => (gplanes[per * t].clone(), Some(&gplanes[per * t + 1])),
                NeuronVariant::IfOnly => (gplanes[t].clone(), None),
                NeuronVariant::MembraneOnly => {
                    (ArrayD::zeros(gplanes[t].raw_dim()), Some(&gplanes[t]))
                }
            };
            let g = self.rec_out.backward_step(&g_s, g_m);
            let g = self.rec_bn2.backward(&g);
            let g = self.rec_conv2.backward(&g);
            let g = self.rec_if1.backward_step(&g, None);
            let g = self.rec_bn1.backward(&g);
            let mut g = self.rec_conv1.backward(&g);
            // channel identity in backward; entropy penalty adds a constant
            g.mapv_inplace(|v| v + entropy_bit_grad);
            let g = self.enc_if2.backward_step(&g, None);
            let g = self.enc_bn2.backward(&g);
            let g = self.enc_conv2.backward(&g);
            let g = self.enc_if1.backward_step(&g, None);
            let g = self.enc_bn1.backward(&g);
            let g = self.enc_conv1.backward(&g);
            match &mut g_f {
                Some(acc) => *acc += &g,
                None => g_f = Some(g),
            }
        }
        g_f.expect("time_steps >= 1")
    }

    /// Inference forward: hard spikes, eval-mode batch norm, no caches.
    pub fn forward_infer(
        &mut self,
        f: &ArrayD<f64>,
        mut channel: Option<&mut Channel>,
    ) -> Result<ArrayD<f64>> {
        self.reset_sequence();
        let mut planes = Vec::with_capacity(self.converter.in_planes());
        for _ in 0..self.geom.time_steps {
            let z = self.encode_step_infer(f)?;
            let z_hat = match channel.as_deref_mut() {
                Some(ch) => ch.transmit_array(&z),
                None => z,
            };
            let (s, m) = self.reconstruct_step_infer(&z_hat);
            planes.extend(self.planes_for_step(s, m));
        }
        self.converter.apply(&planes)
    }
}

impl Parameterized for SnnScModel {
    fn visit_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.enc_conv1.visit_params(&join(prefix, "encoder.conv1"), out);
        self.enc_bn1.visit_params(&join(prefix, "encoder.bn1"), out);
        self.enc_conv2.visit_params(&join(prefix, "encoder.conv2"), out);
        self.enc_bn2.visit_params(&join(prefix, "encoder.bn2"), out);
        self.rec_conv1.visit_params(&join(prefix, "reconstructor.conv1"), out);
        self.rec_bn1.visit_params(&join(prefix, "reconstructor.bn1"), out);
        self.rec_conv2.visit_params(&join(prefix, "reconstructor.conv2"), out);
        self.rec_bn2.visit_params(&join(prefix, "reconstructor.bn2"), out);
        self.converter.visit_params(&join(prefix, "converter"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_plan_matches_table_geometry() {
        let g = Geometry::plan(2048, 4, 4, 4);
        assert_eq!((g.c1, g.c2), (256, 32));
        assert_eq!(g.bits_per_step(), 512);
    }

    #[test]
    fn compression_ordering_is_enforced() {
        let g = Geometry { c: 4, c1: 4, c2: 2, h: 2, w: 2, time_steps: 2 };
        assert!(g.validate().is_err());
        let g = Geometry { c: 16, c1: 4, c2: 2, h: 2, w: 2, time_steps: 2 };
        assert!(g.validate().is_ok());
    }

    #[test]
    fn compression_ratio_default_geometry() {
        // c -> c/64 channels, 1 bit per spike vs 32-bit floats
        let g = Geometry::plan(64, 4, 4, 4);
        assert_eq!(g.bits_per_inference(), 64);
        assert!((g.compression_ratio() - 512.0).abs() < 1e-12);
    }

    fn tiny_model(variant: NeuronVariant) -> SnnScModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geom = Geometry { c: 16, c1: 4, c2: 2, h: 2, w: 2, time_steps: 2 };
        SnnScModel::new(&mut rng, geom, variant).unwrap()
    }

    fn rand_feature(rng: &mut ChaCha8Rng, n: usize, g: &Geometry) -> ArrayD<f64> {
        let mut f = ArrayD::zeros(IxDyn(&[n, g.c, g.h, g.w]));
        for v in f.iter_mut() {
            *v = rng.gen_range(0.0..1.5);
        }
        f
    }

    #[test]
    fn encoder_output_is_binary_and_right_shape() {
        let mut model = tiny_model(NeuronVariant::Ihf);
        model.set_training(false);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = rand_feature(&mut rng, 2, &model.geom.clone());
        model.reset_sequence();
        let z = model.encode_step_infer(&f).unwrap();
        assert_eq!(z.shape(), [2, 2, 2, 2]);
        assert!(z.iter().all(|&b| b == 0.0 || b == 1.0));
    }

    #[test]
    fn zero_input_with_zero_bn_shift_gives_zero_spikes_at_t1() {
        let mut model = tiny_model(NeuronVariant::Ihf);
        model.set_training(false);
        // eval BN with zero running mean, unit var, gamma 1, beta 0 maps 0 -> 0
        let f = ArrayD::zeros(IxDyn(&[1, 16, 2, 2]));
        model.reset_sequence();
        let z = model.encode_step_infer(&f).unwrap();
        assert!(z.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn reconstructor_output_shapes_match_feature() {
        let mut model = tiny_model(NeuronVariant::Ihf);
        model.set_training(false);
        model.reset_sequence();
        let z = ArrayD::zeros(IxDyn(&[1, 2, 2, 2]));
        let (s, m) = model.reconstruct_step_infer(&z);
        assert_eq!(s.shape(), [1, 16, 2, 2]);
        assert_eq!(m.unwrap().shape(), [1, 16, 2, 2]);
        assert!(s.iter().all(|&b| b == 0.0 || b == 1.0));
    }

    #[test]
    fn converter_all_zero_weights_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Converter::new(&mut rng, 4);
        conv.w.fill(0.0);
        conv.b.fill(0.0);
        let planes: Vec<ArrayD<f64>> =
            (0..4).map(|_| ArrayD::ones(IxDyn(&[1, 2, 2, 2]))).collect();
        let y = conv.apply(&planes).unwrap();
        assert!(y.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn converter_single_step_logistic_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Converter::new(&mut rng, 2);
        conv.w[[0]] = 1.0;
        conv.w[[1]] = 0.0;
        conv.b.fill(0.0);
        let s = ArrayD::ones(IxDyn(&[1, 1, 1, 1]));
        let m = ArrayD::zeros(IxDyn(&[1, 1, 1, 1]));
        let y = conv.apply(&[s, m]).unwrap();
        assert!((y[[0, 0, 0, 0]] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn converter_rejects_wrong_plane_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Converter::new(&mut rng, 4);
        let planes: Vec<ArrayD<f64>> =
            (0..3).map(|_| ArrayD::ones(IxDyn(&[1, 1, 1, 1]))).collect();
        assert!(conv.apply(&planes).is_err());
    }

    #[test]
    fn output_range_is_open_unit_interval() {
        let mut model = tiny_model(NeuronVariant::Ihf);
        model.set_training(false);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = rand_feature(&mut rng, 2, &model.geom.clone());
        let fp = model.forward_infer(&f, None).unwrap();
        assert!(fp.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn replayed_inference_is_deterministic() {
        let mut model = tiny_model(NeuronVariant::Ihf);
        model.set_training(false);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = rand_feature(&mut rng, 1, &model.geom.clone());
        let a = model.forward_infer(&f, None).unwrap();
        let b = model.forward_infer(&f, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parameters_are_shared_across_time_steps() {
        let mut model = tiny_model(NeuronVariant::Ihf);
        model.set_training(false);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = rand_feature(&mut rng, 1, &model.geom.clone());
        let before: Vec<ArrayD<f64>> = {
            let mut ps = Vec::new();
            model.visit_params("", &mut ps);
            ps.iter().map(|p| p.value.clone()).collect()
        };
        let _ = model.forward_infer(&f, None).unwrap();
        let mut ps = Vec::new();
        model.visit_params("", &mut ps);
        for (a, p) in before.iter().zip(ps.iter()) {
            assert_eq!(a, p.value);
        }
    }
}
