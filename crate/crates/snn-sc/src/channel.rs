//! Digital channel models (binary symmetric, binary erasure) and bit
//! packing for transmission.
//!
//! Channel noise is generated by a seeded ChaCha8 stream, so realizations
//! are bit-exact across runs and platforms. A channel instance owns its
//! generator; concurrent channels need distinct instances. In
//! backpropagation the channel is an identity map, which is why no backward
//! method exists here.

use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::snn::SpikeTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Bsc,
    Bec,
}

impl ChannelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ChannelKind::Bsc => "bsc",
            ChannelKind::Bec => "bec",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "bsc" => Ok(Self::Bsc),
            "bec" => Ok(Self::Bec),
            other => Err(Error::Config(format!("unknown channel kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    /// Bit error rate (BSC) or bit erasure rate (BEC).
    pub p: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(kind: ChannelKind, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("p = {p} outside [0, 1]")));
        }
        Ok(Self { kind, p, seed })
    }
}

/// A live channel with its own noise generator.
pub struct Channel {
    pub cfg: ChannelConfig,
    rng: ChaCha8Rng,
}

impl Channel {
    pub fn new(cfg: ChannelConfig) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(cfg.seed), cfg }
    }

    /// Transmit one bit through the channel.
    fn transmit_bit(&mut self, bit: bool) -> bool {
        match self.cfg.kind {
            ChannelKind::Bsc => {
                if self.rng.gen_bool(self.cfg.p) {
                    !bit
                } else {
                    bit
                }
            }
            ChannelKind::Bec => {
                if self.rng.gen_bool(self.cfg.p) {
                    // erased: the receiver fills with a fair coin
                    self.rng.gen_bool(0.5)
                } else {
                    bit
                }
            }
        }
    }

    /// Transmit a binary f64 tensor elementwise in row-major order.
    pub fn transmit_array(&mut self, bits: &ArrayD<f64>) -> ArrayD<f64> {
        if self.cfg.p == 0.0 {
            return bits.clone();
        }
        debug_assert!(bits.iter().all(|&b| b == 0.0 || b == 1.0));
        bits.mapv(|b| if self.transmit_bit(b != 0.0) { 1.0 } else { 0.0 })
    }

    /// Transmit a raw bit stream (used by the separate-coding baseline).
    pub fn transmit_bits(&mut self, bits: &[bool]) -> Vec<bool> {
        bits.iter().map(|&b| self.transmit_bit(b)).collect()
    }

    pub fn transmit(&mut self, bits: &SpikeTensor) -> SpikeTensor {
        SpikeTensor::from_binary_unchecked(
            bits.bits()
                .mapv(|b| if self.transmit_bit(b != 0.0) { 1.0 } else { 0.0 }),
        )
    }
}

/// Transmit through a BSC; `cfg.kind` must be `Bsc`.
pub fn bsc_transmit(bits: &SpikeTensor, cfg: ChannelConfig) -> SpikeTensor {
    assert_eq!(cfg.kind, ChannelKind::Bsc);
    Channel::new(cfg).transmit(bits)
}

/// Transmit through a BEC; erased positions are refilled with a fair coin
/// at the receiver, so the reconstructor never sees an erasure symbol.
pub fn bec_transmit(bits: &SpikeTensor, cfg: ChannelConfig) -> SpikeTensor {
    assert_eq!(cfg.kind, ChannelKind::Bec);
    Channel::new(cfg).transmit(bits)
}

/// Packed bit sequence. Padding bits beyond `bit_len` are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitBuffer {
    pub bytes: Vec<u8>,
    pub bit_len: usize,
}

impl BitBuffer {
    pub fn from_bits(bits: impl Iterator<Item = bool>, bit_len_hint: usize) -> Self {
        let mut bytes = vec![0u8; bit_len_hint.div_ceil(8)];
        let mut n = 0;
        for (k, bit) in bits.enumerate() {
            if k >= bytes.len() * 8 {
                bytes.push(0);
            }
            if bit {
                bytes[k / 8] |= 1 << (k % 8);
            }
            n = k + 1;
        }
        Self { bytes, bit_len: n }
    }

    pub fn bit(&self, k: usize) -> bool {
        (self.bytes[k / 8] >> (k % 8)) & 1 == 1
    }

    pub fn iter_bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.bit_len).map(|k| self.bit(k))
    }
}

/// LSB-first packing: tensor element k (row-major c,h,w order) maps to bit
/// (k mod 8) of byte floor(k/8).
pub fn pack_bits(bits: &SpikeTensor) -> BitBuffer {
    BitBuffer::from_bits(bits.iter_bits(), bits.len())
}

pub fn unpack_bits(buf: &BitBuffer, shape: (usize, usize, usize)) -> Result<SpikeTensor> {
    let n = shape.0 * shape.1 * shape.2;
    if buf.bit_len != n {
        return Err(Error::InvalidArgument(format!(
            "bit_len {} does not match shape {shape:?} ({n} bits)",
            buf.bit_len
        )));
    }
    let data: Vec<f64> = buf.iter_bits().map(|b| if b { 1.0 } else { 0.0 }).collect();
    let arr = ndarray::Array3::from_shape_vec(shape, data).unwrap();
    Ok(SpikeTensor::from_binary_unchecked(arr))
}

/// Pack a plain bool slice (used by the separate-coding baseline).
pub fn pack_bool_slice(bits: &[bool]) -> BitBuffer {
    BitBuffer::from_bits(bits.iter().copied(), bits.len())
}
