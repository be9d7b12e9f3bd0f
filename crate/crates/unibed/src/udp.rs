//! Datagram-socket transport for probing real devices. Two guard rails
//! are not optional: every target must sit inside an explicit allowlist,
//! and sends share a global rate limit, 10 probes per second unless the
//! operator raises it. The tool demonstrates protocol weaknesses; it must
//! not behave like an indiscriminate scanner.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use unibed_core::bacnet::{scan_host, DeviceProbe};
use unibed_core::xport::{Transport, TransportError, TransportReply};

pub const DEFAULT_PROBES_PER_SECOND: f64 = 10.0;

#[derive(Debug)]
pub enum ScanSetupError {
    /// CLI-level mistake: bad target syntax, empty allowlist, target
    /// outside the allowlist.
    Config(String),
    /// Socket-level failure.
    Transport(String),
}

impl fmt::Display for ScanSetupError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScanSetupError::Config(e) => write!(f, "{}", e),
            ScanSetupError::Transport(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for ScanSetupError {}

#[derive(Clone, Debug, PartialEq, Eq)]
enum AllowEntry {
    V4Net { net: u32, prefix: u8 },
    Exact(IpAddr),
}

/// Explicit set of addresses the transport may contact. There is no
/// implicit "allow everything" form.
#[derive(Clone, Debug, Default)]
pub struct Allowlist {
    entries: Vec<AllowEntry>,
}

impl Allowlist {
    /// Entries are IPv4/IPv6 literals or IPv4 CIDR blocks like
    /// `192.168.4.0/24`.
    pub fn parse(items: &[String]) -> Result<Self, String> {
        let mut entries = Vec::new();
        for item in items {
            let item = item.trim();
            if let Some((addr, prefix)) = item.split_once('/') {
                let ip: Ipv4Addr = addr
                    .parse()
                    .map_err(|_| format!("bad allowlist network {:?}", item))?;
                let prefix: u8 = prefix
                    .parse()
                    .map_err(|_| format!("bad allowlist prefix {:?}", item))?;
                if prefix > 32 {
                    return Err(format!("allowlist prefix {:?} exceeds 32", item));
                }
                let mask = if prefix == 0 { 0 } else { u32::MAX << (32 - prefix) };
                entries.push(AllowEntry::V4Net { net: u32::from(ip) & mask, prefix });
            } else {
                let ip: IpAddr = item.parse().map_err(|_| format!("bad allowlist address {:?}", item))?;
                entries.push(AllowEntry::Exact(ip));
            }
        }
        Ok(Allowlist { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn permits(&self, ip: &IpAddr) -> bool {
        self.entries.iter().any(|e| match e {
            AllowEntry::Exact(a) => a == ip,
            AllowEntry::V4Net { net, prefix } => match ip {
                IpAddr::V4(v4) => {
                    let mask = if *prefix == 0 { 0 } else { u32::MAX << (32 - prefix) };
                    u32::from(*v4) & mask == *net
                }
                IpAddr::V6(_) => false,
            },
        })
    }
}

/// Global send pacing shared by every worker: each acquire claims the
/// next slot on a fixed grid, so the aggregate rate never exceeds the
/// configured probes per second no matter how many sockets are open.
pub struct RateLimiter {
    gap: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    pub fn new(probes_per_second: f64) -> Self {
        let pps = if probes_per_second.is_finite() && probes_per_second > 0.0 {
            probes_per_second
        } else {
            DEFAULT_PROBES_PER_SECOND
        };
        RateLimiter {
            gap: Duration::from_secs_f64(1.0 / pps),
            next_slot: Mutex::new(Instant::now()),
        }
    }

    /// Blocks until this caller's slot arrives.
    pub fn acquire(&self) {
        let slot = {
            let mut next = self.next_slot.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = if *next > now { *next } else { now };
            *next = slot + self.gap;
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

/// Transport over one OS datagram socket. Endpoint syntax is `ip:port`.
pub struct UdpTransport {
    socket: UdpSocket,
    allow: Arc<Allowlist>,
    rate: Arc<RateLimiter>,
}

impl UdpTransport {
    pub fn open(allow: Arc<Allowlist>, rate: Arc<RateLimiter>) -> Result<Self, TransportError> {
        let socket = UdpSocket::bind(("0.0.0.0", 0)).map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(UdpTransport { socket, allow, rate })
    }
}

pub fn parse_endpoint(endpoint: &str) -> Result<SocketAddr, TransportError> {
    endpoint
        .parse()
        .map_err(|_| TransportError::Io(format!("endpoint {:?} is not ip:port", endpoint)))
}

impl Transport for UdpTransport {
    fn exchange(
        &mut self,
        endpoint: &str,
        request: &[u8],
        timeout_us: u64,
    ) -> Result<Option<TransportReply>, TransportError> {
        let addr = parse_endpoint(endpoint)?;
        if !self.allow.permits(&addr.ip()) {
            return Err(TransportError::Io(format!("{} is not in the allowlist", addr.ip())));
        }
        self.rate.acquire();
        let start = Instant::now();
        self.socket
            .send_to(request, addr)
            .map_err(|e| TransportError::Io(format!("send to {}: {}", addr, e)))?;
        let deadline = start + Duration::from_micros(timeout_us);
        let mut buf = [0u8; 2048];
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            self.socket
                .set_read_timeout(Some(deadline - now))
                .map_err(|e| TransportError::Io(e.to_string()))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, from)) if from == addr => {
                    return Ok(Some(TransportReply {
                        bytes: buf[..n].to_vec(),
                        rtt_us: start.elapsed().as_micros() as u64,
                    }));
                }
                // Datagram from some other host: keep waiting.
                Ok(_) => continue,
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    return Ok(None);
                }
                Err(e) => return Err(TransportError::Io(format!("recv from {}: {}", addr, e))),
            }
        }
    }
}

/// Probes every target over real sockets with a bounded worker pool.
/// All targets are vetted against the allowlist before the first packet
/// leaves; results come back in input order.
pub fn scan_targets(
    targets: &[String],
    allow: Arc<Allowlist>,
    rate: Arc<RateLimiter>,
    timeout_us: u64,
    workers: usize,
) -> Result<Vec<DeviceProbe>, ScanSetupError> {
    if allow.is_empty() {
        return Err(ScanSetupError::Config(
            "refusing to scan: pass --allow with every address or network this probe may touch".into(),
        ));
    }
    for t in targets {
        let addr = parse_endpoint(t).map_err(|e| ScanSetupError::Config(e.to_string()))?;
        if !allow.permits(&addr.ip()) {
            return Err(ScanSetupError::Config(format!(
                "target {} is outside the allowlist",
                addr
            )));
        }
    }

    let workers = workers.clamp(1, 32).min(targets.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<DeviceProbe, String>>>> =
        targets.iter().map(|_| Mutex::new(None)).collect();

    thread::scope(|scope| {
        for _ in 0..workers {
            let next = &next;
            let results = &results;
            let allow = Arc::clone(&allow);
            let rate = Arc::clone(&rate);
            scope.spawn(move || {
                let mut transport = match UdpTransport::open(allow, rate) {
                    Ok(t) => t,
                    Err(e) => {
                        // Park the failure in every slot this worker
                        // would have owned.
                        loop {
                            let i = next.fetch_add(1, Ordering::SeqCst);
                            if i >= targets.len() {
                                return;
                            }
                            *results[i].lock().expect("slot poisoned") = Some(Err(e.to_string()));
                        }
                    }
                };
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= targets.len() {
                        return;
                    }
                    let outcome = scan_host(&mut transport, &targets[i], timeout_us)
                        .map_err(|e| e.to_string());
                    *results[i].lock().expect("slot poisoned") = Some(outcome);
                }
            });
        }
    });

    let mut probes = Vec::with_capacity(targets.len());
    for slot in results {
        match slot.into_inner().expect("slot poisoned") {
            Some(Ok(p)) => probes.push(p),
            Some(Err(e)) => return Err(ScanSetupError::Transport(e)),
            None => return Err(ScanSetupError::Transport("probe never ran".into())),
        }
    }
    Ok(probes)
}
