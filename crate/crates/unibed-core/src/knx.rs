//! Twisted-pair fieldbus telegram codec, two-byte float codec, and a
//! simulated shared-medium bus with dump export.
//!
//! The frame profile is fixed for this testbed and documented bit-exactly:
//! control octet (default 0xBC), 16-bit source and destination, an octet
//! holding address-type flag, hop count and length nibble, a TPCI/APCI pair,
//! up to 14 payload octets, and a ones'-complement XOR checksum. Only the
//! three group-value services are recognized.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::rc::Rc;
use core::cell::RefCell;

use crate::sim::{HandlerFault, SimCtx, SimError, Simulation, DEFAULT_LINK_LATENCY_US};
use crate::util::to_hex;

/// Smallest well-formed frame: header, APDU pair, checksum, no payload.
pub const MIN_FRAME_LEN: usize = 9;
/// Largest well-formed frame: 14 payload octets.
pub const MAX_FRAME_LEN: usize = 23;
/// Payload capacity of one telegram.
pub const MAX_PAYLOAD_LEN: usize = 14;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KnxError {
    PayloadTooLong { len: usize },
    TooShort { len: usize },
    BadChecksum { expected: u8, got: u8 },
    BadLengthNibble { declared: u8, actual_payload: usize },
    BadAddressType,
    UnknownApci { word: u16 },
    BadAddress(String),
    AddrOutOfRange { field: &'static str, value: u16 },
    ValueOutOfRange,
    DuplicateDevice(String),
    EndpointMissing(String),
    AlreadySplit,
    UnknownDevice(String),
    Sim(SimError),
}

impl fmt::Display for KnxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnxError::PayloadTooLong { len } => write!(f, "payload {} exceeds {} bytes", len, MAX_PAYLOAD_LEN),
            KnxError::TooShort { len } => write!(f, "frame of {} bytes is shorter than {}", len, MIN_FRAME_LEN),
            KnxError::BadChecksum { expected, got } => {
                write!(f, "checksum {:02X} does not match computed {:02X}", got, expected)
            }
            KnxError::BadLengthNibble { declared, actual_payload } => write!(
                f,
                "length nibble {} disagrees with payload of {} bytes",
                declared, actual_payload
            ),
            KnxError::BadAddressType => write!(f, "destination address-type flag is not group"),
            KnxError::UnknownApci { word } => write!(f, "unknown APCI {:#05X}", word),
            KnxError::BadAddress(s) => write!(f, "malformed address {:?}", s),
            KnxError::AddrOutOfRange { field, value } => write!(f, "address field {} out of range: {}", field, value),
            KnxError::ValueOutOfRange => write!(f, "value not representable as two-byte float"),
            KnxError::DuplicateDevice(d) => write!(f, "device {} already attached", d),
            KnxError::EndpointMissing(e) => write!(f, "endpoint {} is not registered", e),
            KnxError::AlreadySplit => write!(f, "bus is already split"),
            KnxError::UnknownDevice(d) => write!(f, "device {} is not attached", d),
            KnxError::Sim(e) => write!(f, "scheduler: {}", e),
        }
    }
}

impl core::error::Error for KnxError {}

impl From<SimError> for KnxError {
    fn from(e: SimError) -> Self {
        KnxError::Sim(e)
    }
}

/// Device address, printed `area.line.device`. Packs to 16 bits as
/// area(4) | line(4) | device(8), big-endian on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct IndividualAddress {
    pub area: u8,
    pub line: u8,
    pub device: u8,
}

impl IndividualAddress {
    pub fn new(area: u8, line: u8, device: u8) -> Result<Self, KnxError> {
        if area > 15 {
            return Err(KnxError::AddrOutOfRange { field: "area", value: area as u16 });
        }
        if line > 15 {
            return Err(KnxError::AddrOutOfRange { field: "line", value: line as u16 });
        }
        Ok(IndividualAddress { area, line, device })
    }

    pub fn raw(self) -> u16 {
        ((self.area as u16) << 12) | ((self.line as u16) << 8) | self.device as u16
    }

    pub fn from_raw(raw: u16) -> Self {
        IndividualAddress { area: (raw >> 12) as u8, line: ((raw >> 8) & 0x0F) as u8, device: raw as u8 }
    }
}

impl fmt::Display for IndividualAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.area, self.line, self.device)
    }
}

impl core::str::FromStr for IndividualAddress {
    type Err = KnxError;

    fn from_str(s: &str) -> Result<Self, KnxError> {
        let bad = || KnxError::BadAddress(s.to_string());
        let mut it = s.split('.');
        let area = it.next().and_then(|p| p.parse::<u8>().ok()).ok_or_else(bad)?;
        let line = it.next().and_then(|p| p.parse::<u8>().ok()).ok_or_else(bad)?;
        let device = it.next().and_then(|p| p.parse::<u8>().ok()).ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        IndividualAddress::new(area, line, device).map_err(|_| bad())
    }
}

/// Group address, printed `main/middle/sub`. Packs to 16 bits as
/// main(5) | middle(3) | sub(8).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupAddress {
    pub main: u8,
    pub middle: u8,
    pub sub: u8,
}

impl GroupAddress {
    pub fn new(main: u8, middle: u8, sub: u8) -> Result<Self, KnxError> {
        if main > 31 {
            return Err(KnxError::AddrOutOfRange { field: "main", value: main as u16 });
        }
        if middle > 7 {
            return Err(KnxError::AddrOutOfRange { field: "middle", value: middle as u16 });
        }
        Ok(GroupAddress { main, middle, sub })
    }

    pub fn raw(self) -> u16 {
        ((self.main as u16) << 11) | ((self.middle as u16) << 8) | self.sub as u16
    }

    pub fn from_raw(raw: u16) -> Self {
        GroupAddress { main: (raw >> 11) as u8, middle: ((raw >> 8) & 0x07) as u8, sub: raw as u8 }
    }
}

impl fmt::Display for GroupAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.main, self.middle, self.sub)
    }
}

impl core::str::FromStr for GroupAddress {
    type Err = KnxError;

    fn from_str(s: &str) -> Result<Self, KnxError> {
        let bad = || KnxError::BadAddress(s.to_string());
        let mut it = s.split('/');
        let main = it.next().and_then(|p| p.parse::<u8>().ok()).ok_or_else(bad)?;
        let middle = it.next().and_then(|p| p.parse::<u8>().ok()).ok_or_else(bad)?;
        let sub = it.next().and_then(|p| p.parse::<u8>().ok()).ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        GroupAddress::new(main, middle, sub).map_err(|_| bad())
    }
}

/// Application services carried by the testbed profile. The 10-bit service
/// word is split across the two APDU octets on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Apci {
    GroupValueRead,
    GroupValueResponse,
    GroupValueWrite,
}

impl Apci {
    pub fn word(self) -> u16 {
        match self {
            Apci::GroupValueRead => 0x000,
            Apci::GroupValueResponse => 0x040,
            Apci::GroupValueWrite => 0x080,
        }
    }

    pub fn from_word(word: u16) -> Result<Self, KnxError> {
        match word {
            0x000 => Ok(Apci::GroupValueRead),
            0x040 => Ok(Apci::GroupValueResponse),
            0x080 => Ok(Apci::GroupValueWrite),
            other => Err(KnxError::UnknownApci { word: other }),
        }
    }
}

impl fmt::Display for Apci {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Apci::GroupValueRead => "GroupValueRead",
            Apci::GroupValueResponse => "GroupValueResponse",
            Apci::GroupValueWrite => "GroupValueWrite",
        };
        f.write_str(name)
    }
}

/// Default control octet: standard frame, repeat flag set, normal priority.
pub const CONTROL_DEFAULT: u8 = 0xBC;
/// Default hop count.
pub const HOP_DEFAULT: u8 = 6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Telegram {
    pub control: u8,
    pub source: IndividualAddress,
    pub dest: GroupAddress,
    /// 0..=7.
    pub hop_count: u8,
    pub apci: Apci,
    /// 0..=14 bytes; empty for GroupValueRead.
    pub payload: Vec<u8>,
}

impl Telegram {
    pub fn read(source: IndividualAddress, dest: GroupAddress) -> Self {
        Telegram {
            control: CONTROL_DEFAULT,
            source,
            dest,
            hop_count: HOP_DEFAULT,
            apci: Apci::GroupValueRead,
            payload: Vec::new(),
        }
    }

    pub fn response(source: IndividualAddress, dest: GroupAddress, payload: Vec<u8>) -> Result<Self, KnxError> {
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(KnxError::PayloadTooLong { len: payload.len() });
        }
        Ok(Telegram {
            control: CONTROL_DEFAULT,
            source,
            dest,
            hop_count: HOP_DEFAULT,
            apci: Apci::GroupValueResponse,
            payload,
        })
    }

    pub fn write(source: IndividualAddress, dest: GroupAddress, payload: Vec<u8>) -> Result<Self, KnxError> {
        if payload.len() > MAX_PAYLOAD_LEN {
            return Err(KnxError::PayloadTooLong { len: payload.len() });
        }
        Ok(Telegram {
            control: CONTROL_DEFAULT,
            source,
            dest,
            hop_count: HOP_DEFAULT,
            apci: Apci::GroupValueWrite,
            payload,
        })
    }
}

/// Serializes a telegram. The checksum octet is the bitwise complement of
/// the XOR of all preceding octets, so XOR over the whole frame is 0xFF.
pub fn encode_telegram(t: &Telegram) -> Result<Vec<u8>, KnxError> {
    if t.payload.len() > MAX_PAYLOAD_LEN {
        return Err(KnxError::PayloadTooLong { len: t.payload.len() });
    }
    let mut out = Vec::with_capacity(MIN_FRAME_LEN + t.payload.len());
    out.push(t.control);
    out.extend_from_slice(&t.source.raw().to_be_bytes());
    out.extend_from_slice(&t.dest.raw().to_be_bytes());
    out.push(0x80 | ((t.hop_count & 0x07) << 4) | (t.payload.len() as u8 + 1));
    let word = t.apci.word();
    out.push((word >> 8) as u8 & 0x03);
    out.push(word as u8);
    out.extend_from_slice(&t.payload);
    let mut x = 0u8;
    for b in &out {
        x ^= b;
    }
    out.push(!x);
    Ok(out)
}

/// Parses a frame, naming the first violated constraint. Total over
/// arbitrary input; this is the fuzz target.
pub fn decode_telegram(frame: &[u8]) -> Result<Telegram, KnxError> {
    if frame.len() < MIN_FRAME_LEN {
        return Err(KnxError::TooShort { len: frame.len() });
    }
    let mut x = 0u8;
    for b in &frame[..frame.len() - 1] {
        x ^= b;
    }
    let expected = !x;
    let got = frame[frame.len() - 1];
    if expected != got {
        return Err(KnxError::BadChecksum { expected, got });
    }
    let declared = frame[5] & 0x0F;
    let actual_payload = frame.len() - MIN_FRAME_LEN;
    if declared as usize != actual_payload + 1 {
        return Err(KnxError::BadLengthNibble { declared, actual_payload });
    }
    if frame[5] & 0x80 == 0 {
        return Err(KnxError::BadAddressType);
    }
    let word = ((frame[6] as u16) << 8) | frame[7] as u16;
    if word & 0xFC00 != 0 {
        return Err(KnxError::UnknownApci { word });
    }
    let apci = Apci::from_word(word & 0x03FF)?;
    Ok(Telegram {
        control: frame[0],
        source: IndividualAddress::from_raw(u16::from_be_bytes([frame[1], frame[2]])),
        dest: GroupAddress::from_raw(u16::from_be_bytes([frame[3], frame[4]])),
        hop_count: (frame[5] >> 4) & 0x07,
        apci,
        payload: frame[8..frame.len() - 1].to_vec(),
    })
}

/// Two-byte float, format S(1) E(4) M(11): value = 0.01 * m * 2^e with m a
/// 12-bit two's-complement mantissa in [-2048, 2047]. The encoder picks the
/// smallest exponent that fits, which also minimizes quantization error,
/// and rounds halves away from zero.
pub fn encode_dpt9(value: f64) -> Result<[u8; 2], KnxError> {
    for e in 0u8..=15 {
        let step = (1u32 << e) as f64;
        let scaled = value * 100.0 / step;
        let m = round_half_away(scaled);
        if (-2048..=2047).contains(&m) {
            let m12 = (m as i16 as u16) & 0x0FFF;
            let b0 = ((m12 >> 4) as u8 & 0x80) | (e << 3) | ((m12 >> 8) as u8 & 0x07);
            return Ok([b0, m12 as u8]);
        }
    }
    Err(KnxError::ValueOutOfRange)
}

/// Inverse of [`encode_dpt9`]; total over all 65536 bit patterns.
pub fn decode_dpt9(raw: [u8; 2]) -> f64 {
    let e = (raw[0] >> 3) & 0x0F;
    let m12 = (((raw[0] & 0x80) as u16) << 4) | (((raw[0] & 0x07) as u16) << 8) | raw[1] as u16;
    let m = if m12 & 0x800 != 0 { m12 as i32 - 4096 } else { m12 as i32 };
    0.01 * m as f64 * (1u32 << e) as f64
}

fn round_half_away(x: f64) -> i64 {
    if x >= 0.0 {
        libm::floor(x + 0.5) as i64
    } else {
        libm::ceil(x - 0.5) as i64
    }
}

/// One observed frame on the shared medium.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DumpRecord {
    pub time_us: u64,
    /// 0 before a split; 0 or 1 afterwards.
    pub segment: u8,
    pub bytes: Vec<u8>,
    pub well_formed: bool,
}

struct DeviceSlot {
    endpoint: String,
    segment: u8,
}

struct SplitState {
    tap_a: String,
    tap_b: String,
}

struct BusInner {
    devices: BTreeMap<u16, DeviceSlot>,
    endpoints: BTreeSet<String>,
    split: Option<SplitState>,
    dump: Vec<DumpRecord>,
}

#[derive(Clone, Copy)]
enum Ingress {
    /// Frame submitted by an attached device; segment follows the source.
    Medium,
    /// Frame injected on an explicit segment by a tap.
    Inject(u8),
}

impl BusInner {
    fn on_frame(inner: &Rc<RefCell<BusInner>>, ctx: &mut SimCtx<'_>, frame: &[u8], ingress: Ingress) -> Result<(), HandlerFault> {
        let targets = {
            let mut b = inner.borrow_mut();
            let (segment, exclude) = match ingress {
                Ingress::Medium => {
                    let src = if frame.len() >= 3 {
                        Some(u16::from_be_bytes([frame[1], frame[2]]))
                    } else {
                        None
                    };
                    match src.and_then(|s| b.devices.get(&s)) {
                        Some(slot) => (slot.segment, Some(slot.endpoint.clone())),
                        None => (0, None),
                    }
                }
                Ingress::Inject(seg) => (seg, None),
            };
            b.dump.push(DumpRecord {
                time_us: ctx.now_us(),
                segment,
                bytes: frame.to_vec(),
                well_formed: decode_telegram(frame).is_ok(),
            });
            let mut targets: Vec<String> = b
                .devices
                .values()
                .filter(|s| s.segment == segment)
                .map(|s| s.endpoint.clone())
                .filter(|e| Some(e) != exclude.as_ref())
                .collect();
            if let (Ingress::Medium, Some(sp)) = (ingress, b.split.as_ref()) {
                targets.push(if segment == 0 { sp.tap_a.clone() } else { sp.tap_b.clone() });
            }
            targets
        };
        for ep in targets {
            ctx.send_after(DEFAULT_LINK_LATENCY_US, &ep, frame)
                .map_err(|e| HandlerFault(format!("bus delivery to {}: {}", ep, e)))?;
        }
        Ok(())
    }
}

/// Shared-medium broadcast bus. Every frame submitted to the ingress
/// endpoint is delivered to all attached devices on the source's segment
/// except the sender, and appended to the dump.
pub struct KnxBus {
    name: String,
    inner: Rc<RefCell<BusInner>>,
}

impl KnxBus {
    pub fn new(sim: &mut Simulation, name: &str) -> Result<Self, KnxError> {
        let inner = Rc::new(RefCell::new(BusInner {
            devices: BTreeMap::new(),
            endpoints: BTreeSet::new(),
            split: None,
            dump: Vec::new(),
        }));
        let h = Rc::clone(&inner);
        sim.register_actor(
            name,
            Box::new(move |ctx, frame| BusInner::on_frame(&h, ctx, frame, Ingress::Medium)),
        )?;
        Ok(KnxBus { name: name.to_string(), inner })
    }

    /// Endpoint devices submit frames to.
    pub fn ingress(&self) -> &str {
        &self.name
    }

    /// Tap-side ingress delivering onto segment 0. Exists after `split`.
    pub fn inject_endpoint_a(&self) -> String {
        format!("{}/inject/a", self.name)
    }

    /// Tap-side ingress delivering onto segment 1. Exists after `split`.
    pub fn inject_endpoint_b(&self) -> String {
        format!("{}/inject/b", self.name)
    }

    /// Registers a device for delivery. The endpoint must already exist.
    pub fn attach(&self, sim: &Simulation, addr: IndividualAddress, endpoint: &str) -> Result<(), KnxError> {
        if !sim.has_endpoint(endpoint) {
            return Err(KnxError::EndpointMissing(endpoint.to_string()));
        }
        let mut b = self.inner.borrow_mut();
        if b.devices.contains_key(&addr.raw()) {
            return Err(KnxError::DuplicateDevice(format!("{}", addr)));
        }
        if !b.endpoints.insert(endpoint.to_string()) {
            return Err(KnxError::DuplicateDevice(endpoint.to_string()));
        }
        b.devices.insert(addr.raw(), DeviceSlot { endpoint: endpoint.to_string(), segment: 0 });
        Ok(())
    }

    /// Submits a frame to the medium at the current virtual time.
    pub fn send(&self, sim: &mut Simulation, frame: &[u8]) -> Result<(), KnxError> {
        sim.schedule(0, &self.name, frame)?;
        Ok(())
    }

    /// Cuts the medium into two segments. Devices listed in `segment_b`
    /// move to segment 1; the rest stay on segment 0. Cross-segment traffic
    /// then flows only through the tap endpoints, which receive every frame
    /// on their segment and may inject on the opposite one.
    pub fn split(
        &self,
        sim: &mut Simulation,
        segment_b: &[IndividualAddress],
        tap_a: &str,
        tap_b: &str,
    ) -> Result<(), KnxError> {
        if !sim.has_endpoint(tap_a) {
            return Err(KnxError::EndpointMissing(tap_a.to_string()));
        }
        if !sim.has_endpoint(tap_b) {
            return Err(KnxError::EndpointMissing(tap_b.to_string()));
        }
        {
            let mut b = self.inner.borrow_mut();
            if b.split.is_some() {
                return Err(KnxError::AlreadySplit);
            }
            for a in segment_b {
                if !b.devices.contains_key(&a.raw()) {
                    return Err(KnxError::UnknownDevice(format!("{}", a)));
                }
            }
            for a in segment_b {
                b.devices.get_mut(&a.raw()).expect("checked above").segment = 1;
            }
            b.split = Some(SplitState { tap_a: tap_a.to_string(), tap_b: tap_b.to_string() });
        }
        for (seg, name) in [(0u8, self.inject_endpoint_a()), (1u8, self.inject_endpoint_b())] {
            let h = Rc::clone(&self.inner);
            sim.register_actor(
                &name,
                Box::new(move |ctx, frame| BusInner::on_frame(&h, ctx, frame, Ingress::Inject(seg))),
            )?;
        }
        Ok(())
    }

    pub fn dump(&self) -> Vec<DumpRecord> {
        self.inner.borrow().dump.clone()
    }

    /// One record per line: `timestamp_us<TAB>uppercase-hex`, LF endings.
    pub fn dump_export(&self) -> String {
        let mut out = String::new();
        for r in self.inner.borrow().dump.iter() {
            out.push_str(&format!("{}\t{}\n", r.time_us, to_hex(&r.bytes)));
        }
        out
    }
}
