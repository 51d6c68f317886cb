//! Split inference over TCP: the edge half sends one frame of packed spikes
//! per time step, the cloud half injects channel noise, reconstructs the
//! feature and returns the classification result.

pub mod client;
pub mod frame;
pub mod server;

pub use client::{edge_run, EdgeClient};
pub use server::{session_channel, CloudServer, CloudState};
