//! Deterministic discrete-event scheduler and virtual message transport.
//!
//! Every simulated ecosystem in this crate runs on [`Simulation`]: a
//! single-threaded event loop with a virtual microsecond clock, named
//! endpoints, and seeded RNG streams. For a fixed (scenario, master seed)
//! pair the full dispatch log is bit-identical across runs and platforms.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use crate::util::{fnv1a64, to_hex};

/// Default one-way latency applied by transports that do not configure
/// their own, in microseconds.
pub const DEFAULT_LINK_LATENCY_US: u64 = 1_000;

/// Deterministic RNG stream derived from a master seed and a stream name.
///
/// The generator is SplitMix64 (fixed-width integer arithmetic only), so the
/// sequence for a given (master seed, name) is identical on every platform.
/// Floating-point draws are built from integer draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

fn splitmix_scramble(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    /// Derive a stream from `(master_seed, name)`. Distinct names give
    /// independent sequences; drawing from one stream never advances another.
    pub fn derive(master_seed: u64, name: &str) -> Self {
        let tag = fnv1a64(name.as_bytes());
        RngStream {
            state: splitmix_scramble(master_seed ^ tag.rotate_left(17)),
        }
    }

    /// Next raw 64-bit value.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        splitmix_scramble(self.state)
    }

    /// Uniform draw in `[0, bound)`. `bound` must be at least 1.
    ///
    /// Uses modulo rejection so the result is exactly uniform: values below
    /// `2^64 mod bound` are discarded, leaving a whole number of residue
    /// classes.
    pub fn draw(&mut self, bound: u64) -> Result<u64, SimError> {
        if bound == 0 {
            return Err(SimError::ZeroBound);
        }
        // 2^64 mod bound, computed in 64-bit arithmetic
        let reject_below = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= reject_below {
                return Ok(x % bound);
            }
        }
    }

    /// Uniform draw in `[0.0, 1.0)` from the top 53 bits of an integer draw.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Handle returned by [`Simulation::schedule`]; allows cancellation while the
/// event is still pending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventHandle(u64);

/// One delivered event, as recorded in the dispatch log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchRecord {
    pub time_us: u64,
    pub seq: u64,
    pub endpoint: String,
    pub payload: Vec<u8>,
}

/// Errors from the scheduler and RNG plumbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    EndpointNotFound(String),
    DuplicateEndpoint(String),
    /// `run_until` or `schedule` asked for a time before the current clock.
    PastTime { now_us: u64, requested_us: u64 },
    /// A handler reported an unrecoverable fault; the run was aborted.
    HandlerFault { endpoint: String, detail: String },
    ZeroBound,
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::EndpointNotFound(id) => write!(f, "endpoint not found: {id}"),
            SimError::DuplicateEndpoint(id) => write!(f, "endpoint already registered: {id}"),
            SimError::PastTime { now_us, requested_us } => {
                write!(f, "requested time {requested_us}us is before clock {now_us}us")
            }
            SimError::HandlerFault { endpoint, detail } => {
                write!(f, "handler fault at endpoint {endpoint}: {detail}")
            }
            SimError::ZeroBound => write!(f, "rng draw bound must be >= 1"),
        }
    }
}

impl core::error::Error for SimError {}

/// Fault raised by an endpoint handler to abort the run.
#[derive(Debug, Clone)]
pub struct HandlerFault(pub String);

/// Reaction of an endpoint to a delivered payload. Handlers may schedule
/// further sends through the context.
pub type Handler = Box<dyn FnMut(&mut SimCtx<'_>, &[u8]) -> Result<(), HandlerFault>>;

struct QueuedEvent {
    fire_at: u64,
    seq: u64,
    target: String,
    payload: Vec<u8>,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

#[derive(Default)]
struct Endpoint {
    inbox: VecDeque<(u64, Vec<u8>)>,
    handler: Option<Handler>,
}

/// Single-threaded discrete-event simulation.
pub struct Simulation {
    clock_us: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    pending: BTreeSet<u64>,
    cancelled: BTreeSet<u64>,
    endpoints: BTreeMap<String, Endpoint>,
    streams: BTreeMap<String, RngStream>,
    master_seed: u64,
    log: Vec<DispatchRecord>,
}

impl Simulation {
    pub fn new(master_seed: u64) -> Self {
        Simulation {
            clock_us: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: BTreeSet::new(),
            cancelled: BTreeSet::new(),
            endpoints: BTreeMap::new(),
            streams: BTreeMap::new(),
            master_seed,
            log: Vec::new(),
        }
    }

    /// Current virtual time in microseconds since simulation start.
    pub fn now_us(&self) -> u64 {
        self.clock_us
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Register a passive endpoint (inbox only, no handler).
    pub fn register_endpoint(&mut self, id: &str) -> Result<(), SimError> {
        if self.endpoints.contains_key(id) {
            return Err(SimError::DuplicateEndpoint(id.to_owned()));
        }
        self.endpoints.insert(id.to_owned(), Endpoint::default());
        Ok(())
    }

    /// Register an endpoint with a reaction handler.
    pub fn register_actor(&mut self, id: &str, handler: Handler) -> Result<(), SimError> {
        if self.endpoints.contains_key(id) {
            return Err(SimError::DuplicateEndpoint(id.to_owned()));
        }
        self.endpoints.insert(
            id.to_owned(),
            Endpoint {
                inbox: VecDeque::new(),
                handler: Some(handler),
            },
        );
        Ok(())
    }

    pub fn has_endpoint(&self, id: &str) -> bool {
        self.endpoints.contains_key(id)
    }

    /// Enqueue a payload for delivery to `target` after `delay_us`.
    pub fn schedule(
        &mut self,
        delay_us: u64,
        target: &str,
        payload: &[u8],
    ) -> Result<EventHandle, SimError> {
        if !self.endpoints.contains_key(target) {
            return Err(SimError::EndpointNotFound(target.to_owned()));
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.insert(seq);
        self.queue.push(Reverse(QueuedEvent {
            fire_at: self.clock_us + delay_us,
            seq,
            target: target.to_owned(),
            payload: payload.to_vec(),
        }));
        Ok(EventHandle(seq))
    }

    /// Cancel a pending event. Returns true if the event had not yet been
    /// dispatched (it never will be now), false otherwise.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.pending.remove(&handle.0) {
            self.cancelled.insert(handle.0);
            true
        } else {
            false
        }
    }

    /// Number of scheduled events that have not been dispatched or cancelled.
    pub fn pending_events(&self) -> usize {
        self.pending.len()
    }

    /// Dispatch every event with `fire_at <= t_end_us` in (fire_at, seq)
    /// order, then set the clock to `t_end_us`. Returns the dispatch count.
    pub fn run_until(&mut self, t_end_us: u64) -> Result<u64, SimError> {
        if t_end_us < self.clock_us {
            return Err(SimError::PastTime {
                now_us: self.clock_us,
                requested_us: t_end_us,
            });
        }
        let mut dispatched = 0u64;
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.fire_at > t_end_us {
                break;
            }
            let Reverse(ev) = self.queue.pop().expect("peeked head");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            self.pending.remove(&ev.seq);
            self.clock_us = ev.fire_at;
            self.log.push(DispatchRecord {
                time_us: ev.fire_at,
                seq: ev.seq,
                endpoint: ev.target.clone(),
                payload: ev.payload.clone(),
            });
            dispatched += 1;

            let ep = self
                .endpoints
                .get_mut(&ev.target)
                .expect("target checked at schedule time");
            ep.inbox.push_back((ev.fire_at, ev.payload.clone()));
            // Detach the handler while it runs so it can borrow the sim.
            let mut handler = ep.handler.take();
            let result = match handler.as_mut() {
                Some(h) => {
                    let mut ctx = SimCtx {
                        sim: self,
                        self_id: &ev.target,
                    };
                    h(&mut ctx, &ev.payload)
                }
                None => Ok(()),
            };
            if let Some(h) = handler {
                if let Some(ep) = self.endpoints.get_mut(&ev.target) {
                    ep.handler = Some(h);
                }
            }
            if let Err(HandlerFault(detail)) = result {
                return Err(SimError::HandlerFault {
                    endpoint: ev.target,
                    detail,
                });
            }
        }
        self.clock_us = t_end_us;
        Ok(dispatched)
    }

    /// Drain everything received by `id` so far.
    pub fn drain_inbox(&mut self, id: &str) -> Vec<(u64, Vec<u8>)> {
        match self.endpoints.get_mut(id) {
            Some(ep) => ep.inbox.drain(..).collect(),
            None => Vec::new(),
        }
    }

    /// Received payloads of `id` without consuming them.
    pub fn inbox(&mut self, id: &str) -> &[(u64, Vec<u8>)] {
        match self.endpoints.get_mut(id) {
            Some(ep) => ep.inbox.make_contiguous(),
            None => &[],
        }
    }

    /// Uniform integer draw from the named stream, lazily derived from the
    /// master seed on first use.
    pub fn rng_draw(&mut self, stream: &str, bound: u64) -> Result<u64, SimError> {
        let master = self.master_seed;
        self.streams
            .entry(stream.to_owned())
            .or_insert_with(|| RngStream::derive(master, stream))
            .draw(bound)
    }

    /// Uniform `[0, 1)` draw from the named stream.
    pub fn rng_f64(&mut self, stream: &str) -> f64 {
        let master = self.master_seed;
        self.streams
            .entry(stream.to_owned())
            .or_insert_with(|| RngStream::derive(master, stream))
            .next_f64()
    }

    pub fn dispatch_log(&self) -> &[DispatchRecord] {
        &self.log
    }

    /// Dispatch log as text: one line per dispatch,
    /// `time_us<TAB>seq<TAB>endpoint<TAB>hex(payload)`, LF endings.
    pub fn export_dispatch_log(&self) -> String {
        let mut out = String::new();
        for rec in &self.log {
            out.push_str(&alloc::format!(
                "{}\t{}\t{}\t{}\n",
                rec.time_us,
                rec.seq,
                rec.endpoint,
                to_hex(&rec.payload)
            ));
        }
        out
    }

    /// FNV-1a digest of the exported dispatch log; equal digests mean
    /// byte-identical runs.
    pub fn dispatch_log_hash(&self) -> u64 {
        fnv1a64(self.export_dispatch_log().as_bytes())
    }
}

/// Mutable view of the simulation handed to a handler while it reacts to a
/// payload.
pub struct SimCtx<'a> {
    sim: &'a mut Simulation,
    self_id: &'a str,
}

impl SimCtx<'_> {
    pub fn now_us(&self) -> u64 {
        self.sim.clock_us
    }

    /// Id of the endpoint whose handler is running.
    pub fn self_id(&self) -> &str {
        self.self_id
    }

    pub fn send_after(
        &mut self,
        delay_us: u64,
        target: &str,
        payload: &[u8],
    ) -> Result<EventHandle, SimError> {
        self.sim.schedule(delay_us, target, payload)
    }

    pub fn rng_draw(&mut self, stream: &str, bound: u64) -> Result<u64, SimError> {
        self.sim.rng_draw(stream, bound)
    }

    pub fn rng_f64(&mut self, stream: &str) -> f64 {
        self.sim.rng_f64(stream)
    }
}

/// Frame a payload with its source endpoint id: `[len u8][from][payload]`.
///
/// The simulated transport delivers bare byte strings; request/reply
/// protocols need the sender address the way a UDP header would carry it.
pub fn seal(from: &str, payload: &[u8]) -> Vec<u8> {
    debug_assert!(from.len() <= 255);
    let mut out = Vec::with_capacity(1 + from.len() + payload.len());
    out.push(from.len() as u8);
    out.extend_from_slice(from.as_bytes());
    out.extend_from_slice(payload);
    out
}

/// Inverse of [`seal`]. Returns None on malformed input.
pub fn open(datagram: &[u8]) -> Option<(&str, &[u8])> {
    let (&len, rest) = datagram.split_first()?;
    let len = len as usize;
    if rest.len() < len {
        return None;
    }
    let (from, payload) = rest.split_at(len);
    Some((core::str::from_utf8(from).ok()?, payload))
}
