//! Convolutional encoder and hard-decision Viterbi decoder.
//!
//! The encoder shifts message bits through a K-stage register and emits one
//! parity bit per generator polynomial, so the rate is 1/n_generators. The
//! message is terminated with K-1 zero tail bits, which lets the decoder
//! anchor the trellis at the zero state on both ends.

use crate::error::{Error, Result};

/// Rate-1/n convolutional code with octal-specified generator taps.
/// Default: rate 1/3, constraint length 7, generators (133, 171, 165).
#[derive(Debug, Clone)]
pub struct ConvCode {
    pub constraint_length: usize,
    pub generators: Vec<u32>,
}

impl Default for ConvCode {
    fn default() -> Self {
        Self { constraint_length: 7, generators: vec![0o133, 0o171, 0o165] }
    }
}

impl ConvCode {
    pub fn new(constraint_length: usize, generators: Vec<u32>) -> Result<Self> {
        if !(2..=16).contains(&constraint_length) {
            return Err(Error::InvalidArgument("constraint length out of range".into()));
        }
        if generators.is_empty() || generators.contains(&0) {
            return Err(Error::InvalidArgument("generators must be nonzero".into()));
        }
        Ok(Self { constraint_length, generators })
    }

    pub fn rate_denominator(&self) -> usize {
        self.generators.len()
    }

    fn num_states(&self) -> usize {
        1 << (self.constraint_length - 1)
    }

    /// Output bits for one trellis transition from `state` on `bit`.
    fn branch_output(&self, state: u32, bit: bool) -> u32 {
        let reg = (state << 1) | bit as u32; // K bits, newest in the LSB
        let mut out = 0;
        for (j, &g) in self.generators.iter().enumerate() {
            out |= ((reg & g).count_ones() & 1) << j;
        }
        out
    }

    fn next_state(&self, state: u32, bit: bool) -> u32 {
        let mask = (self.num_states() - 1) as u32;
        ((state << 1) | bit as u32) & mask
    }

    /// Encode with K-1 zero tail bits. Codeword length is
    /// (msg_len + K - 1) * n_generators.
    pub fn encode(&self, message: &[bool]) -> Vec<bool> {
        let n = self.rate_denominator();
        let tail = self.constraint_length - 1;
        let mut out = Vec::with_capacity((message.len() + tail) * n);
        let mut state = 0u32;
        for &bit in message.iter().chain(std::iter::repeat_n(&false, tail)) {
            let o = self.branch_output(state, bit);
            for j in 0..n {
                out.push((o >> j) & 1 == 1);
            }
            state = self.next_state(state, bit);
        }
        out
    }

    /// Hard-decision maximum-likelihood decoding over the trellis.
    /// Returns the message without the tail bits.
    pub fn viterbi_decode(&self, received: &[bool]) -> Result<Vec<bool>> {
        let n = self.rate_denominator();
        let tail = self.constraint_length - 1;
        if !received.len().is_multiple_of(n) || received.len() / n < tail {
            return Err(Error::InvalidArgument("truncated codeword".into()));
        }
        let steps = received.len() / n;
        let msg_len = steps - tail;
        let ns = self.num_states();

        const INF: u32 = u32::MAX / 2;
        let mut metric = vec![INF; ns];
        metric[0] = 0; // encoder starts at the zero state
        // per step, per state: (input bit, predecessor state) of the survivor
        let mut decisions: Vec<Vec<(bool, u16)>> = Vec::with_capacity(steps);
        let mut next = vec![INF; ns];

        for step in 0..steps {
            let mut rx = 0u32;
            for j in 0..n {
                rx |= (received[step * n + j] as u32) << j;
            }
            next.fill(INF);
            let mut dec = vec![(false, 0u16); ns];
            for (state, &m) in metric.iter().enumerate() {
                if m >= INF {
                    continue;
                }
                for bit in [false, true] {
                    // tail steps only admit zero inputs
                    if step >= msg_len && bit {
                        continue;
                    }
                    let out = self.branch_output(state as u32, bit);
                    let cost = (out ^ rx).count_ones();
                    let to = self.next_state(state as u32, bit) as usize;
                    if m + cost < next[to] {
                        next[to] = m + cost;
                        dec[to] = (bit, state as u16);
                    }
                }
            }
            decisions.push(dec);
            std::mem::swap(&mut metric, &mut next);
        }

        // traceback from the zero state (tail forces it)
        let mut state = 0usize;
        let mut bits = vec![false; steps];
        for step in (0..steps).rev() {
            let (bit, pred) = decisions[step][state];
            bits[step] = bit;
            state = pred as usize;
        }
        bits.truncate(msg_len);
        Ok(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_zero_message_encodes_to_all_zero() {
        let code = ConvCode::default();
        let cw = code.encode(&[false; 32]);
        assert!(cw.iter().all(|&b| !b));
        assert_eq!(cw.len(), (32 + 6) * 3);
    }

    #[test]
    fn noiseless_roundtrip_many_messages() {
        let code = ConvCode::default();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let len = rng.gen_range(1..80);
            let msg: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
            let cw = code.encode(&msg);
            assert_eq!(code.viterbi_decode(&cw).unwrap(), msg);
        }
    }

    #[test]
    fn single_bit_errors_always_corrected() {
        let code = ConvCode::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let msg: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.5)).collect();
        let cw = code.encode(&msg);
        for i in 0..cw.len() {
            let mut bad = cw.clone();
            bad[i] = !bad[i];
            assert_eq!(code.viterbi_decode(&bad).unwrap(), msg, "flip at {i}");
        }
    }

    #[test]
    fn truncated_codeword_rejected() {
        let code = ConvCode::default();
        let cw = code.encode(&[true; 8]);
        assert!(code.viterbi_decode(&cw[..cw.len() - 1]).is_err());
        assert!(code.viterbi_decode(&cw[..3]).is_err());
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(ConvCode::new(1, vec![0o7]).is_err());
        assert!(ConvCode::new(7, vec![]).is_err());
        assert!(ConvCode::new(7, vec![0]).is_err());
    }

    proptest! {
        #[test]
        fn code_is_linear(seed in 0u64..500) {
            let code = ConvCode::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = 40;
            let a: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
            let b: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.5)).collect();
            let ab: Vec<bool> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
            let ca = code.encode(&a);
            let cb = code.encode(&b);
            let cab = code.encode(&ab);
            let xor: Vec<bool> = ca.iter().zip(&cb).map(|(x, y)| x ^ y).collect();
            prop_assert_eq!(cab, xor);
        }
    }
}
