//! Edge-side TCP client: runs the spiking encoder locally and streams one
//! frame of packed spikes per time step. Only bits ever cross the wire in
//! the edge-to-cloud direction.

use std::net::{TcpStream, ToSocketAddrs};

use ndarray::ArrayD;

use super::frame::{Frame, MsgType};
use crate::channel::BitBuffer;
use crate::error::{Error, Result};
use crate::nn::backbone::Backbone;
use crate::nn::model::SnnScModel;

pub struct EdgeClient {
    stream: TcpStream,
}

/// Classify one input image through the split pipeline: run the backbone
/// front and the spiking encoder locally, stream the spikes, return the
/// cloud's verdict. One connection per inference.
pub fn edge_run(
    addr: impl ToSocketAddrs,
    session: u32,
    bb: &Backbone,
    model: &mut SnnScModel,
    image: &ArrayD<f64>,
) -> Result<(u16, Vec<f64>)> {
    let f = bb.apply_front(image);
    EdgeClient::connect(addr)?.infer(session, model, &f, bb.classes)
}

impl EdgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    /// Run one split inference: encode `f` (a single split-point feature,
    /// shape (1, c, h, w)) over all time steps, stream the spikes, and wait
    /// for the cloud's classification. Consumes the client; a session is
    /// exactly one inference.
    pub fn infer(
        mut self,
        session: u32,
        model: &mut SnnScModel,
        f: &ArrayD<f64>,
        classes: usize,
    ) -> Result<(u16, Vec<f64>)> {
        let geom = model.geom;
        if f.shape().first() != Some(&1) {
            return Err(Error::InvalidArgument(
                "split inference streams one sample at a time".into(),
            ));
        }
        Frame::hello(session, &geom, classes).write_to(&mut self.stream)?;
        model.reset_sequence();
        let shape = [geom.c2 as u16, geom.h as u16, geom.w as u16];
        for t in 0..geom.time_steps {
            let z = model.encode_step_infer(f)?;
            let bits = BitBuffer::from_bits(z.iter().map(|&b| b != 0.0), z.len());
            Frame::spikes(session, t as u16, shape, &bits).write_to(&mut self.stream)?;
        }
        let reply = Frame::read_from(&mut self.stream)?;
        match reply.msg_type {
            MsgType::Result => {
                if reply.session != session {
                    return Err(Error::Protocol(format!(
                        "result for session {} while expecting {session}",
                        reply.session
                    )));
                }
                reply.result_fields()
            }
            MsgType::Error => Err(Error::Protocol(format!(
                "cloud rejected the request: {}",
                reply.error_message()
            ))),
            other => Err(Error::Protocol(format!("unexpected reply {other:?}"))),
        }
    }
}
