//! Cloud-side TCP server.
//!
//! One session is one connection: a `Hello` frame, `time_steps` `Spikes`
//! frames, a single `Result` reply, then the connection closes. Channel
//! noise is injected here, on the receive side, from a generator seeded by
//! the session id, so a given (seed, session) pair reproduces the same noise
//! pattern as an in-process run.
//!
//! Loaded parameters are read-only; each session works on its own clone of
//! the reconstructor, so concurrent sessions never share membrane state.

use std::io::{ErrorKind, Read};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use ndarray::ArrayD;

use super::frame::{Frame, MsgType};
use crate::channel::{unpack_bits, Channel, ChannelConfig, ChannelKind};
use crate::error::{Error, Result};
use crate::nn::backbone::Backbone;
use crate::nn::model::SnnScModel;

/// The noise generator a given session sees, on either side of the wire.
/// Returns `None` for a noiseless link.
pub fn session_channel(
    kind: ChannelKind,
    p: f64,
    base_seed: u64,
    session: u32,
) -> Option<Channel> {
    if p == 0.0 {
        return None;
    }
    let cfg = ChannelConfig::new(kind, p, base_seed ^ session as u64)
        .expect("p validated by caller");
    Some(Channel::new(cfg))
}

/// Everything the cloud side needs to finish an inference. Immutable after
/// construction.
pub struct CloudState {
    model: SnnScModel,
    backbone: Backbone,
    pub kind: ChannelKind,
    pub p: f64,
    pub base_seed: u64,
}

impl CloudState {
    pub fn new(
        mut model: SnnScModel,
        backbone: Backbone,
        kind: ChannelKind,
        p: f64,
        base_seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("p = {p} outside [0, 1]")));
        }
        model.set_training(false);
        model.reset_sequence();
        Ok(Self { model, backbone, kind, p, base_seed })
    }
}

pub struct CloudServer {
    listener: TcpListener,
    state: Arc<CloudState>,
}

impl CloudServer {
    pub fn bind(addr: impl ToSocketAddrs, state: CloudState) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            state: Arc::new(state),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accept sessions until the process exits, one thread each.
    pub fn serve_forever(&self) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let state = Arc::clone(&self.state);
            thread::spawn(move || handle_session(stream, &state));
        }
        Ok(())
    }

    /// Run the accept loop on a background thread and return the address.
    pub fn spawn(self) -> Result<SocketAddr> {
        let addr = self.local_addr()?;
        thread::spawn(move || {
            let _ = self.serve_forever();
        });
        Ok(addr)
    }
}

/// Serve exactly one inference, then drop the connection. Malformed input
/// never panics; it is answered with an `Error` frame where possible.
fn handle_session(mut stream: TcpStream, state: &CloudState) {
    let hello = match Frame::read_from(&mut stream) {
        Ok(f) => f,
        // peer connected and went away without sending anything
        Err(Error::Io(e)) if e.kind() == ErrorKind::UnexpectedEof => return,
        Err(e) => {
            refuse(&mut stream, 0, &e);
            return;
        }
    };
    if let Err(e) = serve_inference(&mut stream, state, &hello) {
        refuse(&mut stream, hello.session, &e);
    }
}

/// Reply with an `Error` frame and close gracefully: half-close the write
/// side, then consume whatever the peer still has in flight. Closing with
/// unread bytes would trigger a TCP reset that can destroy the refusal
/// before the peer reads it.
fn refuse(stream: &mut TcpStream, session: u32, e: &Error) {
    let _ = Frame::error(session, &e.to_string()).write_to(stream);
    let _ = stream.shutdown(Shutdown::Write);
    let _ = stream.set_read_timeout(Some(std::time::Duration::from_secs(5)));
    let mut sink = [0u8; 4096];
    while matches!(stream.read(&mut sink), Ok(n) if n > 0) {}
}

fn serve_inference(stream: &mut TcpStream, state: &CloudState, hello: &Frame) -> Result<()> {
    let (geom, classes) = hello.hello_fields()?;
    let session = hello.session;
    if geom != state.model.geom {
        return Err(Error::Protocol(format!(
            "geometry mismatch: peer announced {geom:?}"
        )));
    }
    if classes != state.backbone.classes {
        return Err(Error::Protocol(format!(
            "class count mismatch: peer announced {classes}"
        )));
    }

    // session-local reconstructor state; shared parameters are never written
    let mut model = state.model.clone();
    let mut channel = session_channel(state.kind, state.p, state.base_seed, session);
    let expected_shape = [geom.c2 as u16, geom.h as u16, geom.w as u16];
    let mut planes = Vec::with_capacity(geom.time_steps * 2);
    for t in 0..geom.time_steps {
        let frame = Frame::read_from(stream)?;
        if frame.msg_type != MsgType::Spikes {
            return Err(Error::Protocol(format!(
                "expected spikes frame, got {:?}",
                frame.msg_type
            )));
        }
        if frame.session != session || frame.time_step as usize != t {
            return Err(Error::Protocol(format!(
                "out-of-order frame: session {} step {}",
                frame.session, frame.time_step
            )));
        }
        if frame.shape != expected_shape {
            return Err(Error::Protocol(format!(
                "spike shape {:?} does not match geometry",
                frame.shape
            )));
        }
        let bits = frame.spike_bits()?;
        let spikes = unpack_bits(&bits, (geom.c2, geom.h, geom.w))?;
        let z: ArrayD<f64> = spikes
            .into_inner()
            .into_dyn()
            .into_shape_with_order(ndarray::IxDyn(&[1, geom.c2, geom.h, geom.w]))
            .expect("unpacked spikes match geometry");
        let z_hat = match channel.as_mut() {
            Some(ch) => ch.transmit_array(&z),
            None => z,
        };
        let (s, m) = model.reconstruct_step_infer(&z_hat);
        planes.extend(model.planes_for_step(s, m));
    }
    let fp = model.converter.apply(&planes)?;
    let logits = state.backbone.apply_tail(&fp);
    let row: Vec<f64> = logits.iter().copied().collect();
    let label = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
        .map(|(i, _)| i as u16)
        .unwrap_or(0);
    Frame::result(session, label, &row).write_to(stream)
}
