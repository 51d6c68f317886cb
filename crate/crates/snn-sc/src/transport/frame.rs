//! Wire format for the edge/cloud link.
//!
//! Every frame is a fixed 22-byte header, a payload, and a CRC32 over both:
//!
//! ```text
//! magic "SNSC" (4) | version (1) | msg_type (1) | session (4)
//! | time_step (2) | shape c,h,w (3 x 2) | payload_bit_len (4)
//! | payload (ceil(bit_len / 8)) | crc32 (4)
//! ```
//!
//! All integers are little-endian. The payload of a `Spikes` frame is a
//! packed bit vector; `payload_bit_len` counts bits so the receiver can strip
//! byte padding. Other message types carry byte payloads and set the bit
//! length to a multiple of eight.

use std::io::{Read, Write};

use crate::channel::BitBuffer;
use crate::error::{Error, Result};
use crate::nn::model::Geometry;

pub const MAGIC: [u8; 4] = *b"SNSC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
/// Upper bound on payload size accepted from the wire.
pub const MAX_PAYLOAD_BYTES: usize = 1 << 22;

/// CRC-32/ISO-HDLC (the common reflected 0xEDB88320 polynomial).
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsgType {
    Hello = 0,
    Spikes = 1,
    Result = 2,
    Error = 3,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Self::Hello),
            1 => Ok(Self::Spikes),
            2 => Ok(Self::Result),
            3 => Ok(Self::Error),
            other => Err(Error::Protocol(format!("unknown message type {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session: u32,
    pub time_step: u16,
    pub shape: [u16; 3],
    pub payload_bit_len: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    fn with_bytes(msg_type: MsgType, session: u32, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            session,
            time_step: 0,
            shape: [0; 3],
            payload_bit_len: (payload.len() * 8) as u32,
            payload,
        }
    }

    /// Session-opening frame: channel geometry plus the class count, each as
    /// a little-endian u16.
    pub fn hello(session: u32, geom: &Geometry, classes: usize) -> Self {
        let fields = [
            geom.c, geom.c1, geom.c2, geom.h, geom.w, geom.time_steps, classes,
        ];
        let mut payload = Vec::with_capacity(fields.len() * 2);
        for f in fields {
            payload.extend_from_slice(&(f as u16).to_le_bytes());
        }
        Self::with_bytes(MsgType::Hello, session, payload)
    }

    pub fn hello_fields(&self) -> Result<(Geometry, usize)> {
        if self.msg_type != MsgType::Hello || self.payload.len() != 14 {
            return Err(Error::Protocol("malformed hello payload".into()));
        }
        let u = |i: usize| u16::from_le_bytes([self.payload[2 * i], self.payload[2 * i + 1]]) as usize;
        let geom = Geometry {
            c: u(0),
            c1: u(1),
            c2: u(2),
            h: u(3),
            w: u(4),
            time_steps: u(5),
        };
        Ok((geom, u(6)))
    }

    /// One time step of encoder output, packed bits.
    pub fn spikes(session: u32, time_step: u16, shape: [u16; 3], bits: &BitBuffer) -> Self {
        Self {
            msg_type: MsgType::Spikes,
            session,
            time_step,
            shape,
            payload_bit_len: bits.bit_len as u32,
            payload: bits.bytes.clone(),
        }
    }

    pub fn spike_bits(&self) -> Result<BitBuffer> {
        if self.msg_type != MsgType::Spikes {
            return Err(Error::Protocol("expected spikes frame".into()));
        }
        let expect = self.shape.iter().map(|&d| d as usize).product::<usize>();
        if self.payload_bit_len as usize != expect {
            return Err(Error::Protocol(format!(
                "spikes bit length {} does not match shape {:?}",
                self.payload_bit_len, self.shape
            )));
        }
        let bit_len = self.payload_bit_len as usize;
        let mut bytes = self.payload.clone();
        // a misbehaving peer may set padding bits; force the invariant
        if !bit_len.is_multiple_of(8) {
            if let Some(last) = bytes.last_mut() {
                *last &= (1u8 << (bit_len % 8)) - 1;
            }
        }
        Ok(BitBuffer { bytes, bit_len })
    }

    /// Classification result: predicted label (u16) then one f64 logit per
    /// class, all little-endian.
    pub fn result(session: u32, label: u16, logits: &[f64]) -> Self {
        let mut payload = Vec::with_capacity(2 + 8 * logits.len());
        payload.extend_from_slice(&label.to_le_bytes());
        for &v in logits {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        Self::with_bytes(MsgType::Result, session, payload)
    }

    pub fn result_fields(&self) -> Result<(u16, Vec<f64>)> {
        if self.msg_type != MsgType::Result
            || self.payload.len() < 2
            || !(self.payload.len() - 2).is_multiple_of(8)
        {
            return Err(Error::Protocol("malformed result payload".into()));
        }
        let label = u16::from_le_bytes([self.payload[0], self.payload[1]]);
        let logits = self.payload[2..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((label, logits))
    }

    pub fn error(session: u32, message: &str) -> Self {
        Self::with_bytes(MsgType::Error, session, message.as_bytes().to_vec())
    }

    pub fn error_message(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5] = self.msg_type as u8;
        h[6..10].copy_from_slice(&self.session.to_le_bytes());
        h[10..12].copy_from_slice(&self.time_step.to_le_bytes());
        for (i, d) in self.shape.iter().enumerate() {
            h[12 + 2 * i..14 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[18..22].copy_from_slice(&self.payload_bit_len.to_le_bytes());
        h
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len() + 4
    }

    fn truncation(e: std::io::Error) -> Error {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Protocol("truncated frame".into())
        } else {
            Error::Io(e)
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        debug_assert_eq!(
            self.payload.len(),
            (self.payload_bit_len as usize).div_ceil(8),
            "payload length inconsistent with bit length"
        );
        let header = self.header_bytes();
        let mut all = Vec::with_capacity(HEADER_LEN + self.payload.len());
        all.extend_from_slice(&header);
        all.extend_from_slice(&self.payload);
        let crc = crc32(&all);
        w.write_all(&all)?;
        w.write_all(&crc.to_le_bytes())?;
        Ok(())
    }

    /// Read one frame. A clean end-of-stream before any byte arrives is
    /// reported as an `Io` error; anything else that goes wrong mid-frame
    /// (including truncation) is a `Protocol` error, so callers can tell a
    /// closed peer from a misbehaving one.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header[..1])?;
        r.read_exact(&mut header[1..])
            .map_err(Self::truncation)?;
        if header[..4] != MAGIC {
            return Err(Error::Protocol("bad magic".into()));
        }
        if header[4] != VERSION {
            return Err(Error::Protocol(format!("unsupported version {}", header[4])));
        }
        let msg_type = MsgType::from_u8(header[5])?;
        let session = u32::from_le_bytes(header[6..10].try_into().unwrap());
        let time_step = u16::from_le_bytes(header[10..12].try_into().unwrap());
        let shape = [
            u16::from_le_bytes(header[12..14].try_into().unwrap()),
            u16::from_le_bytes(header[14..16].try_into().unwrap()),
            u16::from_le_bytes(header[16..18].try_into().unwrap()),
        ];
        let payload_bit_len = u32::from_le_bytes(header[18..22].try_into().unwrap());
        let payload_len = (payload_bit_len as usize).div_ceil(8);
        if payload_len > MAX_PAYLOAD_BYTES {
            return Err(Error::Protocol(format!("payload too large: {payload_len} bytes")));
        }
        let mut payload = vec![0u8; payload_len];
        r.read_exact(&mut payload).map_err(Self::truncation)?;
        let mut crc_bytes = [0u8; 4];
        r.read_exact(&mut crc_bytes).map_err(Self::truncation)?;
        let mut all = Vec::with_capacity(HEADER_LEN + payload_len);
        all.extend_from_slice(&header);
        all.extend_from_slice(&payload);
        if crc32(&all) != u32::from_le_bytes(crc_bytes) {
            return Err(Error::Protocol("crc mismatch".into()));
        }
        Ok(Self {
            msg_type,
            session,
            time_step,
            shape,
            payload_bit_len,
            payload,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::pack_bool_slice;

    #[test]
    fn crc32_check_value() {
        assert_eq!(crc32(b"123456789"), 0xcbf43926);
        assert_eq!(crc32(b""), 0);
    }

    #[test]
    fn spikes_frame_length() {
        // 32 channels x 4 x 4 = 512 bits = 64 payload bytes
        let bits = pack_bool_slice(&vec![true; 512]);
        let frame = Frame::spikes(1, 0, [32, 4, 4], &bits);
        assert_eq!(frame.encoded_len(), 22 + 64 + 4);
    }

    #[test]
    fn roundtrip_all_message_types() {
        let geom = Geometry::plan(64, 4, 4, 4);
        let bits = pack_bool_slice(&[true, false, true, true, false]);
        let frames = [
            Frame::hello(7, &geom, 10),
            Frame::spikes(7, 3, [1, 1, 5], &bits),
            Frame::result(7, 4, &[0.25, -1.5, 3.0]),
            Frame::error(7, "nope"),
        ];
        for frame in frames {
            let mut buf = Vec::new();
            frame.write_to(&mut buf).unwrap();
            assert_eq!(buf.len(), frame.encoded_len());
            let back = Frame::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back, frame);
        }
    }

    #[test]
    fn hello_fields_roundtrip() {
        let geom = Geometry { c: 64, c1: 8, c2: 1, h: 4, w: 4, time_steps: 4 };
        let frame = Frame::hello(9, &geom, 10);
        let (back, classes) = frame.hello_fields().unwrap();
        assert_eq!(back, geom);
        assert_eq!(classes, 10);
    }

    #[test]
    fn result_fields_roundtrip() {
        let frame = Frame::result(2, 3, &[1.0, f64::MIN_POSITIVE, -0.0]);
        let (label, logits) = frame.result_fields().unwrap();
        assert_eq!(label, 3);
        assert_eq!(logits, vec![1.0, f64::MIN_POSITIVE, -0.0]);
    }

    #[test]
    fn corrupted_byte_fails_crc() {
        let frame = Frame::error(1, "hello");
        let mut buf = Vec::new();
        frame.write_to(&mut buf).unwrap();
        for i in 0..buf.len() {
            let mut bad = buf.clone();
            bad[i] ^= 0x40;
            let r = Frame::read_from(&mut bad.as_slice());
            assert!(r.is_err(), "corruption at byte {i} went unnoticed");
        }
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let frame = Frame::result(1, 0, &[0.5]);
        let mut buf = Vec::new();
        frame.write_to(&mut buf).unwrap();
        for cut in [0, 5, HEADER_LEN, buf.len() - 1] {
            assert!(Frame::read_from(&mut &buf[..cut]).is_err());
        }
    }

    #[test]
    fn oversized_bit_length_rejected_before_allocation() {
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(&MAGIC);
        header[4] = VERSION;
        header[5] = 1;
        header[18..22].copy_from_slice(&u32::MAX.to_le_bytes());
        let r = Frame::read_from(&mut header.as_slice());
        assert!(matches!(r, Err(Error::Protocol(_))));
    }

    #[test]
    fn spike_bits_validates_shape() {
        let bits = pack_bool_slice(&[true; 8]);
        let frame = Frame::spikes(1, 0, [2, 2, 2], &bits);
        assert_eq!(frame.spike_bits().unwrap().bit_len, 8);
        let bad = Frame::spikes(1, 0, [3, 2, 2], &bits);
        assert!(bad.spike_bits().is_err());
    }
}
