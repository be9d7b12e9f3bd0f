//! Request/reply transport abstraction shared by the network clients
//! (scanners, brute-force drivers, property readers). One implementation
//! runs inside the deterministic simulation; the companion crate adds an
//! OS datagram socket implementation behind the same trait.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::sim::{open, seal, SimError, Simulation, DEFAULT_LINK_LATENCY_US};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportError {
    Io(String),
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Io(s) => write!(f, "transport: {}", s),
        }
    }
}

impl core::error::Error for TransportError {}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportReply {
    pub bytes: Vec<u8>,
    pub rtt_us: u64,
}

/// One request/reply exchange with a remote endpoint. `Ok(None)` is
/// silence until the timeout.
pub trait Transport {
    fn exchange(
        &mut self,
        endpoint: &str,
        request: &[u8],
        timeout_us: u64,
    ) -> Result<Option<TransportReply>, TransportError>;
}

/// Deterministic in-memory transport; endpoints are simulation endpoint
/// ids. Probing an id that does not exist consumes the timeout silently.
pub struct SimTransport<'a> {
    sim: &'a mut Simulation,
    scratch: String,
}

impl<'a> SimTransport<'a> {
    pub fn new(sim: &'a mut Simulation, scratch: &str) -> Result<Self, SimError> {
        if !sim.has_endpoint(scratch) {
            sim.register_endpoint(scratch)?;
        }
        Ok(SimTransport { sim, scratch: scratch.to_string() })
    }

    pub fn sim(&mut self) -> &mut Simulation {
        self.sim
    }

    pub fn scratch(&self) -> &str {
        &self.scratch
    }
}

impl Transport for SimTransport<'_> {
    fn exchange(
        &mut self,
        endpoint: &str,
        request: &[u8],
        timeout_us: u64,
    ) -> Result<Option<TransportReply>, TransportError> {
        let wrap = |e: SimError| TransportError::Io(e.to_string());
        self.sim.drain_inbox(&self.scratch);
        let t0 = self.sim.now_us();
        if self.sim.has_endpoint(endpoint) {
            self.sim
                .schedule(DEFAULT_LINK_LATENCY_US, endpoint, &seal(&self.scratch, request))
                .map_err(wrap)?;
        }
        self.sim.run_until(t0 + timeout_us).map_err(wrap)?;
        let inbox = self.sim.drain_inbox(&self.scratch);
        Ok(inbox.into_iter().next().map(|(at, datagram)| {
            let bytes = match open(&datagram) {
                Some((_, payload)) => payload.to_vec(),
                None => datagram,
            };
            TransportReply { bytes, rtt_us: at - t0 }
        }))
    }
}
