//! Uniform n-bit quantization of sigmoid-bounded values:
//! q = round(x * (2^n - 1)), x_bar = q / (2^n - 1).

use ndarray::ArrayD;

/// Bits per quantized value.
#[derive(Debug, Clone, Copy)]
pub struct QuantConfig {
    pub n: u32,
}

impl QuantConfig {
    pub fn new(n: u32) -> Self {
        assert!(n >= 1, "need at least one bit per value");
        Self { n }
    }

    pub fn levels(&self) -> u32 {
        (1u32 << self.n) - 1
    }
}

/// Quantize a value in [0, 1]; out-of-range inputs are clamped.
/// Rounding is half away from zero.
pub fn quantize(x: f64, cfg: QuantConfig) -> u32 {
    let x = x.clamp(0.0, 1.0);
    (x * cfg.levels() as f64).round() as u32
}

pub fn dequantize(q: u32, cfg: QuantConfig) -> f64 {
    q as f64 / cfg.levels() as f64
}

/// MSB-first bit serialization of one quantized value.
pub fn value_to_bits(q: u32, cfg: QuantConfig, out: &mut Vec<bool>) {
    for i in (0..cfg.n).rev() {
        out.push((q >> i) & 1 == 1);
    }
}

pub fn bits_to_value(bits: &[bool], cfg: QuantConfig) -> u32 {
    debug_assert_eq!(bits.len(), cfg.n as usize);
    bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32)
}

/// Serialize an entire tensor, MSB-first per value, row-major order.
pub fn tensor_to_bits(x: &ArrayD<f64>, cfg: QuantConfig) -> Vec<bool> {
    let mut bits = Vec::with_capacity(x.len() * cfg.n as usize);
    for &v in x.iter() {
        value_to_bits(quantize(v, cfg), cfg, &mut bits);
    }
    bits
}

pub fn bits_to_tensor(bits: &[bool], cfg: QuantConfig, shape: &[usize]) -> ArrayD<f64> {
    let n = cfg.n as usize;
    let vals: Vec<f64> = bits
        .chunks_exact(n)
        .map(|c| dequantize(bits_to_value(c, cfg), cfg))
        .collect();
    ArrayD::from_shape_vec(ndarray::IxDyn(shape), vals).expect("bit count matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints() {
        let cfg = QuantConfig::new(4);
        assert_eq!(quantize(0.0, cfg), 0);
        assert_eq!(quantize(1.0, cfg), 15);
    }

    #[test]
    fn midpoint_rounds_half_away_from_zero() {
        let cfg = QuantConfig::new(8);
        let q = quantize(0.5, cfg);
        assert_eq!(q, 128); // round(127.5) = 128
        assert!((dequantize(q, cfg) - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_clamped() {
        let cfg = QuantConfig::new(4);
        assert_eq!(quantize(-0.3, cfg), 0);
        assert_eq!(quantize(1.7, cfg), 15);
    }

    #[test]
    fn msb_flip_moves_half_range_lsb_one_level() {
        let cfg = QuantConfig::new(4);
        let mut bits = Vec::new();
        value_to_bits(0b0110, cfg, &mut bits);
        let mut msb = bits.clone();
        msb[0] = !msb[0];
        let mut lsb = bits.clone();
        lsb[3] = !lsb[3];
        let base = bits_to_value(&bits, cfg);
        assert_eq!(bits_to_value(&msb, cfg).abs_diff(base), 8);
        assert_eq!(bits_to_value(&lsb, cfg).abs_diff(base), 1);
    }

    proptest! {
        #[test]
        fn roundtrip_error_bound(x in 0.0f64..=1.0, n in 1u32..=8) {
            let cfg = QuantConfig::new(n);
            let xbar = dequantize(quantize(x, cfg), cfg);
            let bound = 1.0 / (2.0 * cfg.levels() as f64);
            prop_assert!((xbar - x).abs() <= bound + 1e-12);
        }

        #[test]
        fn quantize_is_idempotent_on_lattice(q in 0u32..16) {
            let cfg = QuantConfig::new(4);
            let x = dequantize(q, cfg);
            prop_assert_eq!(quantize(x, cfg), q);
        }
    }
}
