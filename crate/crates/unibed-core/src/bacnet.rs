//! Building-automation datagram codec (Who-Is, I-Am, ReadProperty,
//! WriteProperty), a simulated controller with an object table, and the
//! scanning, enumeration and write client operations.
//!
//! The wire profile is fixed and bit-exact for this testbed: BVLC header
//! `81 <fn> <len u16 BE>` where the declared length always equals the full
//! frame length, NPDU `01 00`, unconfirmed requests `10 <svc>`, confirmed
//! requests `00 05 <invoke> <svc>` with a fixed max-APDU octet, ComplexAck
//! `30`, SimpleAck `20`, Error `50 <invoke> <svc> 91 <code>`. No
//! segmentation and a single priority; character strings always use the
//! extended-length form `75 <len> 00 <utf8>`.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use crate::sim::{open, seal, SimError, Simulation, DEFAULT_LINK_LATENCY_US};
pub use crate::xport::{SimTransport, Transport, TransportError, TransportReply};

pub const OBJECT_TYPE_ANALOG_INPUT: u16 = 0;
pub const OBJECT_TYPE_ANALOG_OUTPUT: u16 = 1;
pub const OBJECT_TYPE_DEVICE: u16 = 8;

pub const PROP_OBJECT_LIST: u8 = 76;
pub const PROP_OBJECT_NAME: u8 = 77;
pub const PROP_PRESENT_VALUE: u8 = 85;

pub const ERR_UNKNOWN_OBJECT: u8 = 31;
pub const ERR_UNKNOWN_PROPERTY: u8 = 32;
pub const ERR_WRITE_ACCESS_DENIED: u8 = 40;

/// Default datagram port in socket mode.
pub const BACNET_PORT: u16 = 47_808;

pub fn error_code_name(code: u8) -> &'static str {
    match code {
        ERR_UNKNOWN_OBJECT => "unknown-object",
        ERR_UNKNOWN_PROPERTY => "unknown-property",
        ERR_WRITE_ACCESS_DENIED => "write-access-denied",
        _ => "vendor-specific",
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BacnetError {
    Truncated { need: usize, have: usize },
    BadMagic(u8),
    UnknownBvlcFunction(u8),
    LengthMismatch { declared: usize, actual: usize },
    BadNpdu(u8, u8),
    UnknownApduType(u8),
    UnknownService(u8),
    BadTag { expected: u8, got: u8 },
    BadValueTag(u8),
    BadSegmentation(u8),
    BadCharString,
    TrailingBytes(usize),
    NameTooLong(usize),
    OidOutOfRange { object_type: u16, instance: u32 },
    DuplicateObject(ObjectId),
}

impl fmt::Display for BacnetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BacnetError::Truncated { need, have } => write!(f, "need {} bytes, have {}", need, have),
            BacnetError::BadMagic(b) => write!(f, "first octet {:02X} is not 81", b),
            BacnetError::UnknownBvlcFunction(b) => write!(f, "unknown BVLC function {:02X}", b),
            BacnetError::LengthMismatch { declared, actual } => {
                write!(f, "declared length {} but frame is {} bytes", declared, actual)
            }
            BacnetError::BadNpdu(a, b) => write!(f, "NPDU {:02X} {:02X} is not 01 00", a, b),
            BacnetError::UnknownApduType(b) => write!(f, "unknown APDU type {:02X}", b),
            BacnetError::UnknownService(b) => write!(f, "unknown service {:02X}", b),
            BacnetError::BadTag { expected, got } => {
                write!(f, "expected tag {:02X}, got {:02X}", expected, got)
            }
            BacnetError::BadValueTag(b) => write!(f, "unsupported value tag {:02X}", b),
            BacnetError::BadSegmentation(b) => write!(f, "segmentation {} out of range", b),
            BacnetError::BadCharString => write!(f, "character string is not charset 0 utf-8"),
            BacnetError::TrailingBytes(n) => write!(f, "{} bytes after the APDU", n),
            BacnetError::NameTooLong(n) => write!(f, "name of {} bytes exceeds 254", n),
            BacnetError::OidOutOfRange { object_type, instance } => {
                write!(f, "object id {}:{} out of range", object_type, instance)
            }
            BacnetError::DuplicateObject(oid) => write!(f, "object {} already in table", oid),
        }
    }
}

impl core::error::Error for BacnetError {}

/// 10-bit object type plus 22-bit instance, packed big-endian on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ObjectId {
    pub object_type: u16,
    pub instance: u32,
}

impl ObjectId {
    pub fn new(object_type: u16, instance: u32) -> Result<Self, BacnetError> {
        if object_type > 1023 || instance > 4_194_302 {
            return Err(BacnetError::OidOutOfRange { object_type, instance });
        }
        Ok(ObjectId { object_type, instance })
    }

    pub fn device(instance: u32) -> Self {
        ObjectId { object_type: OBJECT_TYPE_DEVICE, instance }
    }

    pub fn analog_input(instance: u32) -> Self {
        ObjectId { object_type: OBJECT_TYPE_ANALOG_INPUT, instance }
    }

    pub fn analog_output(instance: u32) -> Self {
        ObjectId { object_type: OBJECT_TYPE_ANALOG_OUTPUT, instance }
    }

    pub fn raw(self) -> u32 {
        ((self.object_type as u32) << 22) | self.instance
    }

    pub fn from_raw(raw: u32) -> Self {
        ObjectId { object_type: (raw >> 22) as u16, instance: raw & 0x003F_FFFF }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.object_type, self.instance)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BvlcFunction {
    Unicast,
    Broadcast,
}

impl BvlcFunction {
    fn byte(self) -> u8 {
        match self {
            BvlcFunction::Unicast => 0x0A,
            BvlcFunction::Broadcast => 0x0B,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segmentation {
    Both,
    Transmit,
    Receive,
    NoSegmentation,
}

impl Segmentation {
    fn byte(self) -> u8 {
        match self {
            Segmentation::Both => 0,
            Segmentation::Transmit => 1,
            Segmentation::Receive => 2,
            Segmentation::NoSegmentation => 3,
        }
    }

    fn from_byte(b: u8) -> Result<Self, BacnetError> {
        match b {
            0 => Ok(Segmentation::Both),
            1 => Ok(Segmentation::Transmit),
            2 => Ok(Segmentation::Receive),
            3 => Ok(Segmentation::NoSegmentation),
            other => Err(BacnetError::BadSegmentation(other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PropertyValue {
    Real(f32),
    CharString(String),
    ObjectList(Vec<ObjectId>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Apdu {
    WhoIs,
    IAm { device: ObjectId, max_apdu: u16, segmentation: Segmentation, vendor: u8 },
    ReadProperty { invoke_id: u8, oid: ObjectId, property: u8 },
    ReadPropertyAck { invoke_id: u8, oid: ObjectId, property: u8, value: PropertyValue },
    WriteProperty { invoke_id: u8, oid: ObjectId, property: u8, value: f32 },
    SimpleAck { invoke_id: u8, service: u8 },
    Error { invoke_id: u8, service: u8, code: u8 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacnetMessage {
    pub bvlc_function: BvlcFunction,
    pub apdu: Apdu,
}

const SVC_WHO_IS: u8 = 0x08;
const SVC_I_AM: u8 = 0x00;
const SVC_READ_PROPERTY: u8 = 0x0C;
const SVC_WRITE_PROPERTY: u8 = 0x0F;

fn push_value(out: &mut Vec<u8>, value: &PropertyValue) -> Result<(), BacnetError> {
    match value {
        PropertyValue::Real(v) => {
            out.push(0x44);
            out.extend_from_slice(&v.to_be_bytes());
        }
        PropertyValue::CharString(s) => {
            if s.len() > 254 {
                return Err(BacnetError::NameTooLong(s.len()));
            }
            out.push(0x75);
            out.push(s.len() as u8 + 1);
            out.push(0x00);
            out.extend_from_slice(s.as_bytes());
        }
        PropertyValue::ObjectList(oids) => {
            for oid in oids {
                out.push(0xC4);
                out.extend_from_slice(&oid.raw().to_be_bytes());
            }
        }
    }
    Ok(())
}

pub fn encode_bacnet(m: &BacnetMessage) -> Result<Vec<u8>, BacnetError> {
    let mut out = Vec::with_capacity(32);
    out.extend_from_slice(&[0x81, m.bvlc_function.byte(), 0x00, 0x00, 0x01, 0x00]);
    match &m.apdu {
        Apdu::WhoIs => out.extend_from_slice(&[0x10, SVC_WHO_IS]),
        Apdu::IAm { device, max_apdu, segmentation, vendor } => {
            out.extend_from_slice(&[0x10, SVC_I_AM, 0xC4]);
            out.extend_from_slice(&device.raw().to_be_bytes());
            out.push(0x22);
            out.extend_from_slice(&max_apdu.to_be_bytes());
            out.extend_from_slice(&[0x91, segmentation.byte(), 0x21, *vendor]);
        }
        Apdu::ReadProperty { invoke_id, oid, property } => {
            out.extend_from_slice(&[0x00, 0x05, *invoke_id, SVC_READ_PROPERTY, 0x0C]);
            out.extend_from_slice(&oid.raw().to_be_bytes());
            out.extend_from_slice(&[0x19, *property]);
        }
        Apdu::ReadPropertyAck { invoke_id, oid, property, value } => {
            out.extend_from_slice(&[0x30, *invoke_id, SVC_READ_PROPERTY, 0x0C]);
            out.extend_from_slice(&oid.raw().to_be_bytes());
            out.extend_from_slice(&[0x19, *property, 0x3E]);
            push_value(&mut out, value)?;
            out.push(0x3F);
        }
        Apdu::WriteProperty { invoke_id, oid, property, value } => {
            out.extend_from_slice(&[0x00, 0x05, *invoke_id, SVC_WRITE_PROPERTY, 0x0C]);
            out.extend_from_slice(&oid.raw().to_be_bytes());
            out.extend_from_slice(&[0x19, *property, 0x3E, 0x44]);
            out.extend_from_slice(&value.to_be_bytes());
            out.push(0x3F);
        }
        Apdu::SimpleAck { invoke_id, service } => {
            out.extend_from_slice(&[0x20, *invoke_id, *service]);
        }
        Apdu::Error { invoke_id, service, code } => {
            out.extend_from_slice(&[0x50, *invoke_id, *service, 0x91, *code]);
        }
    }
    let len = out.len() as u16;
    out[2..4].copy_from_slice(&len.to_be_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BacnetError> {
        if self.pos + n > self.buf.len() {
            return Err(BacnetError::Truncated { need: self.pos + n, have: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, BacnetError> {
        Ok(self.take(1)?[0])
    }

    fn expect(&mut self, tag: u8) -> Result<(), BacnetError> {
        let got = self.u8()?;
        if got != tag {
            return Err(BacnetError::BadTag { expected: tag, got });
        }
        Ok(())
    }

    fn u16_be(&mut self) -> Result<u16, BacnetError> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }

    fn u32_be(&mut self) -> Result<u32, BacnetError> {
        let s = self.take(4)?;
        Ok(u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn peek(&self) -> Option<u8> {
        self.buf.get(self.pos).copied()
    }

    fn done(&self) -> Result<(), BacnetError> {
        if self.remaining() != 0 {
            return Err(BacnetError::TrailingBytes(self.remaining()));
        }
        Ok(())
    }
}

fn read_oid(r: &mut Reader<'_>) -> Result<ObjectId, BacnetError> {
    Ok(ObjectId::from_raw(r.u32_be()?))
}

fn read_value(r: &mut Reader<'_>) -> Result<PropertyValue, BacnetError> {
    match r.peek() {
        Some(0x44) => {
            r.expect(0x44)?;
            let s = r.take(4)?;
            Ok(PropertyValue::Real(f32::from_be_bytes([s[0], s[1], s[2], s[3]])))
        }
        Some(0x75) => {
            r.expect(0x75)?;
            let len = r.u8()? as usize;
            if len == 0 {
                return Err(BacnetError::BadCharString);
            }
            let body = r.take(len)?;
            if body[0] != 0x00 {
                return Err(BacnetError::BadCharString);
            }
            let s = core::str::from_utf8(&body[1..]).map_err(|_| BacnetError::BadCharString)?;
            Ok(PropertyValue::CharString(s.to_string()))
        }
        Some(0xC4) => {
            let mut oids = Vec::new();
            while r.peek() == Some(0xC4) {
                r.expect(0xC4)?;
                oids.push(read_oid(r)?);
            }
            Ok(PropertyValue::ObjectList(oids))
        }
        Some(other) => Err(BacnetError::BadValueTag(other)),
        None => Err(BacnetError::Truncated { need: 1, have: 0 }),
    }
}

/// Total over arbitrary input; never faults. Round-trips with
/// [`encode_bacnet`] on every valid message.
pub fn decode_bacnet(frame: &[u8]) -> Result<BacnetMessage, BacnetError> {
    let mut r = Reader { buf: frame, pos: 0 };
    let magic = r.u8()?;
    if magic != 0x81 {
        return Err(BacnetError::BadMagic(magic));
    }
    let bvlc_function = match r.u8()? {
        0x0A => BvlcFunction::Unicast,
        0x0B => BvlcFunction::Broadcast,
        other => return Err(BacnetError::UnknownBvlcFunction(other)),
    };
    let declared = r.u16_be()? as usize;
    if declared != frame.len() {
        return Err(BacnetError::LengthMismatch { declared, actual: frame.len() });
    }
    let (n0, n1) = (r.u8()?, r.u8()?);
    if (n0, n1) != (0x01, 0x00) {
        return Err(BacnetError::BadNpdu(n0, n1));
    }
    let apdu = match r.u8()? {
        0x10 => match r.u8()? {
            SVC_WHO_IS => Apdu::WhoIs,
            SVC_I_AM => {
                r.expect(0xC4)?;
                let device = read_oid(&mut r)?;
                r.expect(0x22)?;
                let max_apdu = r.u16_be()?;
                r.expect(0x91)?;
                let segmentation = Segmentation::from_byte(r.u8()?)?;
                r.expect(0x21)?;
                let vendor = r.u8()?;
                Apdu::IAm { device, max_apdu, segmentation, vendor }
            }
            other => return Err(BacnetError::UnknownService(other)),
        },
        0x00 => {
            r.expect(0x05)?;
            let invoke_id = r.u8()?;
            match r.u8()? {
                SVC_READ_PROPERTY => {
                    r.expect(0x0C)?;
                    let oid = read_oid(&mut r)?;
                    r.expect(0x19)?;
                    let property = r.u8()?;
                    Apdu::ReadProperty { invoke_id, oid, property }
                }
                SVC_WRITE_PROPERTY => {
                    r.expect(0x0C)?;
                    let oid = read_oid(&mut r)?;
                    r.expect(0x19)?;
                    let property = r.u8()?;
                    r.expect(0x3E)?;
                    r.expect(0x44)?;
                    let s = r.take(4)?;
                    let value = f32::from_be_bytes([s[0], s[1], s[2], s[3]]);
                    r.expect(0x3F)?;
                    Apdu::WriteProperty { invoke_id, oid, property, value }
                }
                other => return Err(BacnetError::UnknownService(other)),
            }
        }
        0x30 => {
            let invoke_id = r.u8()?;
            let service = r.u8()?;
            if service != SVC_READ_PROPERTY {
                return Err(BacnetError::UnknownService(service));
            }
            r.expect(0x0C)?;
            let oid = read_oid(&mut r)?;
            r.expect(0x19)?;
            let property = r.u8()?;
            r.expect(0x3E)?;
            let value = read_value(&mut r)?;
            r.expect(0x3F)?;
            Apdu::ReadPropertyAck { invoke_id, oid, property, value }
        }
        0x20 => Apdu::SimpleAck { invoke_id: r.u8()?, service: r.u8()? },
        0x50 => {
            let invoke_id = r.u8()?;
            let service = r.u8()?;
            r.expect(0x91)?;
            let code = r.u8()?;
            Apdu::Error { invoke_id, service, code }
        }
        other => return Err(BacnetError::UnknownApduType(other)),
    };
    r.done()?;
    Ok(BacnetMessage { bvlc_function, apdu })
}

/// One row of a device's object table.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectEntry {
    pub name: String,
    /// None for objects without one (the device object itself).
    pub present_value: Option<f32>,
    pub writable: bool,
}

type ActuatorHook = Box<dyn FnMut(ObjectId, f32)>;

/// In-memory controller: a device object plus an object table. Replies are
/// pure functions of (request, table state); a write to a writable
/// analog-output also fires the actuator hook.
pub struct SimulatedBacnetDevice {
    device: ObjectId,
    vendor: u8,
    objects: BTreeMap<u32, ObjectEntry>,
    hook: Option<ActuatorHook>,
}

impl SimulatedBacnetDevice {
    pub fn new(instance: u32, name: &str, vendor: u8) -> Self {
        let device = ObjectId::device(instance);
        let mut objects = BTreeMap::new();
        objects.insert(
            device.raw(),
            ObjectEntry { name: name.to_string(), present_value: None, writable: false },
        );
        SimulatedBacnetDevice { device, vendor, objects, hook: None }
    }

    pub fn device_id(&self) -> ObjectId {
        self.device
    }

    pub fn add_object(
        &mut self,
        oid: ObjectId,
        name: &str,
        present_value: f32,
        writable: bool,
    ) -> Result<(), BacnetError> {
        if self.objects.contains_key(&oid.raw()) {
            return Err(BacnetError::DuplicateObject(oid));
        }
        self.objects.insert(
            oid.raw(),
            ObjectEntry { name: name.to_string(), present_value: Some(present_value), writable },
        );
        Ok(())
    }

    pub fn set_actuator_hook(&mut self, hook: ActuatorHook) {
        self.hook = Some(hook);
    }

    pub fn object(&self, oid: ObjectId) -> Option<&ObjectEntry> {
        self.objects.get(&oid.raw())
    }

    /// Table keys in ascending packed order; this is also the object-list
    /// property of the device object.
    pub fn object_list(&self) -> Vec<ObjectId> {
        self.objects.keys().map(|k| ObjectId::from_raw(*k)).collect()
    }

    /// Computes the reply for one request frame. Undecodable input and
    /// non-request traffic are ignored.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Option<Vec<u8>> {
        let msg = decode_bacnet(frame).ok()?;
        let reply = |apdu: Apdu, function: BvlcFunction| {
            Some(encode_bacnet(&BacnetMessage { bvlc_function: function, apdu }).expect("reply encodes"))
        };
        match msg.apdu {
            Apdu::WhoIs => reply(
                Apdu::IAm {
                    device: self.device,
                    max_apdu: 1024,
                    segmentation: Segmentation::NoSegmentation,
                    vendor: self.vendor,
                },
                BvlcFunction::Broadcast,
            ),
            Apdu::ReadProperty { invoke_id, oid, property } => {
                let err = |code: u8| Apdu::Error { invoke_id, service: SVC_READ_PROPERTY, code };
                let apdu = match self.objects.get(&oid.raw()) {
                    None => err(ERR_UNKNOWN_OBJECT),
                    Some(entry) => {
                        let value = match property {
                            PROP_OBJECT_LIST if oid == self.device => {
                                Some(PropertyValue::ObjectList(self.object_list()))
                            }
                            PROP_OBJECT_NAME => Some(PropertyValue::CharString(entry.name.clone())),
                            PROP_PRESENT_VALUE => entry.present_value.map(PropertyValue::Real),
                            _ => None,
                        };
                        match value {
                            Some(value) => Apdu::ReadPropertyAck { invoke_id, oid, property, value },
                            None => err(ERR_UNKNOWN_PROPERTY),
                        }
                    }
                };
                reply(apdu, BvlcFunction::Unicast)
            }
            Apdu::WriteProperty { invoke_id, oid, property, value } => {
                let err = |code: u8| Apdu::Error { invoke_id, service: SVC_WRITE_PROPERTY, code };
                let apdu = match self.objects.get_mut(&oid.raw()) {
                    None => err(ERR_UNKNOWN_OBJECT),
                    Some(_) if property != PROP_PRESENT_VALUE => err(ERR_UNKNOWN_PROPERTY),
                    Some(entry) if !entry.writable => err(ERR_WRITE_ACCESS_DENIED),
                    Some(entry) => {
                        entry.present_value = Some(value);
                        if let Some(hook) = self.hook.as_mut() {
                            hook(oid, value);
                        }
                        Apdu::SimpleAck { invoke_id, service: SVC_WRITE_PROPERTY }
                    }
                };
                reply(apdu, BvlcFunction::Unicast)
            }
            _ => None,
        }
    }
}

/// Registers the device as a simulation actor on `endpoint`. Requests must
/// be sealed with the caller's endpoint; replies come back sealed likewise.
pub fn register_sim_device(
    sim: &mut Simulation,
    endpoint: &str,
    device: SimulatedBacnetDevice,
) -> Result<Rc<RefCell<SimulatedBacnetDevice>>, SimError> {
    let dev = Rc::new(RefCell::new(device));
    let handle = Rc::clone(&dev);
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            if let Some((from, payload)) = open(datagram) {
                let from = from.to_string();
                if let Some(reply) = handle.borrow_mut().handle_frame(payload) {
                    let sealed = seal(ctx.self_id(), &reply);
                    ctx.send_after(DEFAULT_LINK_LATENCY_US, &from, &sealed)
                        .map_err(|e| crate::sim::HandlerFault(format!("reply: {}", e)))?;
                }
            }
            Ok(())
        }),
    )?;
    Ok(dev)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    BacnetDevice,
    NoResponse,
    NonBacnet,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::BacnetDevice => "bacnet_device",
            Verdict::NoResponse => "no_response",
            Verdict::NonBacnet => "non_bacnet",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceProbe {
    pub endpoint: String,
    pub verdict: Verdict,
    pub device_id: Option<ObjectId>,
    pub vendor: Option<u8>,
    pub rtt_us: u64,
}

/// Sends a Who-Is and judges the reply. Only a syntactically valid I-Am
/// yields `BacnetDevice`; anything else that answers is `NonBacnet`.
pub fn scan_host<T: Transport>(
    transport: &mut T,
    endpoint: &str,
    timeout_us: u64,
) -> Result<DeviceProbe, TransportError> {
    let request = encode_bacnet(&BacnetMessage { bvlc_function: BvlcFunction::Broadcast, apdu: Apdu::WhoIs })
        .expect("who-is encodes");
    let probe = match transport.exchange(endpoint, &request, timeout_us)? {
        None => DeviceProbe {
            endpoint: endpoint.to_string(),
            verdict: Verdict::NoResponse,
            device_id: None,
            vendor: None,
            rtt_us: timeout_us,
        },
        Some(reply) => match decode_bacnet(&reply.bytes) {
            Ok(BacnetMessage { apdu: Apdu::IAm { device, vendor, .. }, .. }) => DeviceProbe {
                endpoint: endpoint.to_string(),
                verdict: Verdict::BacnetDevice,
                device_id: Some(device),
                vendor: Some(vendor),
                rtt_us: reply.rtt_us,
            },
            _ => DeviceProbe {
                endpoint: endpoint.to_string(),
                verdict: Verdict::NonBacnet,
                device_id: None,
                vendor: None,
                rtt_us: reply.rtt_us,
            },
        },
    };
    Ok(probe)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ClientError {
    Transport(TransportError),
    Timeout,
    Rejected { code: u8 },
    Protocol(String),
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientError::Transport(e) => write!(f, "{}", e),
            ClientError::Timeout => write!(f, "no reply before timeout"),
            ClientError::Rejected { code } => write!(f, "device error {} ({})", code, error_code_name(*code)),
            ClientError::Protocol(s) => write!(f, "unexpected reply: {}", s),
        }
    }
}

impl core::error::Error for ClientError {}

impl From<TransportError> for ClientError {
    fn from(e: TransportError) -> Self {
        ClientError::Transport(e)
    }
}

pub fn read_property<T: Transport>(
    transport: &mut T,
    endpoint: &str,
    oid: ObjectId,
    property: u8,
    invoke_id: u8,
    timeout_us: u64,
) -> Result<PropertyValue, ClientError> {
    let request = encode_bacnet(&BacnetMessage {
        bvlc_function: BvlcFunction::Unicast,
        apdu: Apdu::ReadProperty { invoke_id, oid, property },
    })
    .expect("read-property encodes");
    let reply = transport.exchange(endpoint, &request, timeout_us)?.ok_or(ClientError::Timeout)?;
    match decode_bacnet(&reply.bytes) {
        Ok(BacnetMessage { apdu: Apdu::ReadPropertyAck { invoke_id: ack_id, value, .. }, .. }) => {
            if ack_id != invoke_id {
                return Err(ClientError::Protocol(format!(
                    "invoke id {} does not match request {}",
                    ack_id, invoke_id
                )));
            }
            Ok(value)
        }
        Ok(BacnetMessage { apdu: Apdu::Error { code, .. }, .. }) => Err(ClientError::Rejected { code }),
        Ok(other) => Err(ClientError::Protocol(format!("{:?}", other.apdu))),
        Err(e) => Err(ClientError::Protocol(e.to_string())),
    }
}

/// One enumerated object: per-property failures are recorded in `errors`
/// and leave the other columns intact.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRow {
    pub oid: ObjectId,
    pub name: Option<String>,
    pub present_value: Option<f32>,
    pub errors: Vec<String>,
}

/// Reads the device's object list, then each object's name and present
/// value. Row order equals the device's table order.
pub fn enumerate_objects<T: Transport>(
    transport: &mut T,
    endpoint: &str,
    device: ObjectId,
    timeout_us: u64,
) -> Result<Vec<ObjectRow>, ClientError> {
    let list = match read_property(transport, endpoint, device, PROP_OBJECT_LIST, 1, timeout_us)? {
        PropertyValue::ObjectList(oids) => oids,
        other => return Err(ClientError::Protocol(format!("object-list came back as {:?}", other))),
    };
    let mut rows = Vec::with_capacity(list.len());
    let mut invoke_id: u8 = 1;
    for oid in list {
        let mut row = ObjectRow { oid, name: None, present_value: None, errors: Vec::new() };
        invoke_id = invoke_id.wrapping_add(1);
        match read_property(transport, endpoint, oid, PROP_OBJECT_NAME, invoke_id, timeout_us) {
            Ok(PropertyValue::CharString(s)) => row.name = Some(s),
            Ok(other) => row.errors.push(format!("object-name: unexpected {:?}", other)),
            Err(ClientError::Rejected { code }) => {
                row.errors.push(format!("object-name: {}", error_code_name(code)))
            }
            Err(e) => return Err(e),
        }
        invoke_id = invoke_id.wrapping_add(1);
        match read_property(transport, endpoint, oid, PROP_PRESENT_VALUE, invoke_id, timeout_us) {
            Ok(PropertyValue::Real(v)) => row.present_value = Some(v),
            Ok(other) => row.errors.push(format!("present-value: unexpected {:?}", other)),
            Err(ClientError::Rejected { code }) => {
                row.errors.push(format!("present-value: {}", error_code_name(code)))
            }
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes a present value and waits for the SimpleAck.
pub fn write_present_value<T: Transport>(
    transport: &mut T,
    endpoint: &str,
    oid: ObjectId,
    value: f32,
    timeout_us: u64,
) -> Result<(), ClientError> {
    let invoke_id = 1;
    let request = encode_bacnet(&BacnetMessage {
        bvlc_function: BvlcFunction::Unicast,
        apdu: Apdu::WriteProperty { invoke_id, oid, property: PROP_PRESENT_VALUE, value },
    })
    .expect("write-property encodes");
    let reply = transport.exchange(endpoint, &request, timeout_us)?.ok_or(ClientError::Timeout)?;
    match decode_bacnet(&reply.bytes) {
        Ok(BacnetMessage { apdu: Apdu::SimpleAck { invoke_id: ack_id, .. }, .. }) if ack_id == invoke_id => Ok(()),
        Ok(BacnetMessage { apdu: Apdu::Error { code, .. }, .. }) => Err(ClientError::Rejected { code }),
        Ok(other) => Err(ClientError::Protocol(format!("{:?}", other.apdu))),
        Err(e) => Err(ClientError::Protocol(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStream;
    use std::vec;

    #[test]
    fn who_is_golden() {
        let m = BacnetMessage { bvlc_function: BvlcFunction::Broadcast, apdu: Apdu::WhoIs };
        let frame = encode_bacnet(&m).unwrap();
        assert_eq!(frame, vec![0x81, 0x0B, 0x00, 0x08, 0x01, 0x00, 0x10, 0x08]);
        assert_eq!(decode_bacnet(&frame).unwrap(), m);
    }

    #[test]
    fn i_am_golden() {
        let m = BacnetMessage {
            bvlc_function: BvlcFunction::Broadcast,
            apdu: Apdu::IAm {
                device: ObjectId::device(102),
                max_apdu: 1024,
                segmentation: Segmentation::NoSegmentation,
                vendor: 7,
            },
        };
        let frame = encode_bacnet(&m).unwrap();
        // 20 bytes on the wire, so the BVLC length octets say 0x0014.
        assert_eq!(
            frame,
            vec![
                0x81, 0x0B, 0x00, 0x14, 0x01, 0x00, 0x10, 0x00, 0xC4, 0x02, 0x00, 0x00, 0x66,
                0x22, 0x04, 0x00, 0x91, 0x03, 0x21, 0x07
            ]
        );
        assert_eq!(ObjectId::device(102).raw(), 0x0200_0066);
        assert_eq!(decode_bacnet(&frame).unwrap(), m);
    }

    #[test]
    fn truncated_i_am_is_length_mismatch() {
        let mut frame = encode_bacnet(&BacnetMessage {
            bvlc_function: BvlcFunction::Broadcast,
            apdu: Apdu::IAm {
                device: ObjectId::device(102),
                max_apdu: 1024,
                segmentation: Segmentation::NoSegmentation,
                vendor: 7,
            },
        })
        .unwrap();
        frame.pop();
        assert_eq!(
            decode_bacnet(&frame),
            Err(BacnetError::LengthMismatch { declared: 20, actual: 19 })
        );
    }

    fn sample_messages() -> Vec<BacnetMessage> {
        vec![
            BacnetMessage { bvlc_function: BvlcFunction::Broadcast, apdu: Apdu::WhoIs },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::ReadProperty { invoke_id: 3, oid: ObjectId::device(102), property: 76 },
            },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::ReadPropertyAck {
                    invoke_id: 3,
                    oid: ObjectId::device(102),
                    property: 76,
                    value: PropertyValue::ObjectList(vec![
                        ObjectId::analog_input(1),
                        ObjectId::analog_output(3),
                        ObjectId::device(102),
                    ]),
                },
            },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::ReadPropertyAck {
                    invoke_id: 4,
                    oid: ObjectId::analog_input(1),
                    property: 77,
                    value: PropertyValue::CharString("temp".to_string()),
                },
            },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::ReadPropertyAck {
                    invoke_id: 5,
                    oid: ObjectId::analog_input(1),
                    property: 85,
                    value: PropertyValue::Real(21.5),
                },
            },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::WriteProperty {
                    invoke_id: 9,
                    oid: ObjectId::analog_output(3),
                    property: 85,
                    value: 45.0,
                },
            },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::SimpleAck { invoke_id: 9, service: 0x0F },
            },
            BacnetMessage {
                bvlc_function: BvlcFunction::Unicast,
                apdu: Apdu::Error { invoke_id: 9, service: 0x0F, code: ERR_WRITE_ACCESS_DENIED },
            },
        ]
    }

    #[test]
    fn round_trip_and_length_field_on_every_variant() {
        for m in sample_messages() {
            let frame = encode_bacnet(&m).unwrap();
            let declared = u16::from_be_bytes([frame[2], frame[3]]) as usize;
            assert_eq!(declared, frame.len(), "{:?}", m);
            assert_eq!(decode_bacnet(&frame).unwrap(), m, "{:?}", m);
        }
    }

    #[test]
    fn decoder_is_total_on_arbitrary_input() {
        let mut rng = RngStream::derive(77, "bacnet-totality");
        for _ in 0..20_000 {
            let len = rng.draw(300).unwrap() as usize;
            let mut buf = Vec::with_capacity(len);
            for _ in 0..len {
                buf.push(rng.draw(256).unwrap() as u8);
            }
            let _ = decode_bacnet(&buf);
        }
        // Mutations of valid frames hit the deeper parse paths.
        let samples = sample_messages();
        for _ in 0..20_000 {
            let m = &samples[rng.draw(samples.len() as u64).unwrap() as usize];
            let mut frame = encode_bacnet(m).unwrap();
            let i = rng.draw(frame.len() as u64).unwrap() as usize;
            frame[i] ^= 1 << rng.draw(8).unwrap();
            let _ = decode_bacnet(&frame);
        }
    }

    #[test]
    fn decode_rejections_are_structured() {
        assert_eq!(decode_bacnet(&[0x7F, 0x0A, 0, 4]), Err(BacnetError::BadMagic(0x7F)));
        assert_eq!(decode_bacnet(&[0x81, 0x0C, 0, 4]), Err(BacnetError::UnknownBvlcFunction(0x0C)));
        assert_eq!(
            decode_bacnet(&[0x81, 0x0A, 0x00, 0x09, 0x01, 0x00, 0x10, 0x08]),
            Err(BacnetError::LengthMismatch { declared: 9, actual: 8 })
        );
        assert_eq!(
            decode_bacnet(&[0x81, 0x0A, 0x00, 0x08, 0x01, 0x00, 0x10, 0x55]),
            Err(BacnetError::UnknownService(0x55))
        );
        assert_eq!(decode_bacnet(&[]), Err(BacnetError::Truncated { need: 1, have: 0 }));
    }

    fn demo_device() -> SimulatedBacnetDevice {
        let mut dev = SimulatedBacnetDevice::new(102, "hvac-controller", 7);
        dev.add_object(ObjectId::analog_input(1), "temp", 21.5, false).unwrap();
        dev.add_object(ObjectId::analog_output(3), "damper", 10.0, true).unwrap();
        dev
    }

    fn rig() -> Simulation {
        let mut sim = Simulation::new(21);
        register_sim_device(&mut sim, "controller", demo_device()).unwrap();
        sim
    }

    #[test]
    fn scan_finds_the_simulated_device() {
        let mut sim = rig();
        let mut t = SimTransport::new(&mut sim, "scanner").unwrap();
        let probe = scan_host(&mut t, "controller", 1_000_000).unwrap();
        assert_eq!(probe.verdict, Verdict::BacnetDevice);
        assert_eq!(probe.device_id, Some(ObjectId::device(102)));
        assert_eq!(probe.vendor, Some(7));
        assert_eq!(probe.rtt_us, 2 * DEFAULT_LINK_LATENCY_US);
    }

    #[test]
    fn scan_of_nothing_times_out() {
        let mut sim = Simulation::new(21);
        let mut t = SimTransport::new(&mut sim, "scanner").unwrap();
        let probe = scan_host(&mut t, "10.0.0.99", 500_000).unwrap();
        assert_eq!(probe.verdict, Verdict::NoResponse);
        assert_eq!(probe.device_id, None);
        assert_eq!(probe.rtt_us, 500_000);
        assert_eq!(sim.now_us(), 500_000);
    }

    #[test]
    fn scanner_never_believes_random_bytes() {
        for seed in 0..50u64 {
            let mut sim = Simulation::new(seed);
            let mut rng = RngStream::derive(seed, "noise-responder");
            let n = rng.draw(64).unwrap() as usize + 1;
            let mut noise = Vec::with_capacity(n);
            for _ in 0..n {
                noise.push(rng.draw(256).unwrap() as u8);
            }
            let reply = noise.clone();
            sim.register_actor(
                "mystery",
                Box::new(move |ctx, datagram| {
                    if let Some((from, _)) = open(datagram) {
                        let from = from.to_string();
                        let sealed = seal(ctx.self_id(), &reply);
                        let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &from, &sealed);
                    }
                    Ok(())
                }),
            )
            .unwrap();
            let mut t = SimTransport::new(&mut sim, "scanner").unwrap();
            let probe = scan_host(&mut t, "mystery", 1_000_000).unwrap();
            assert_ne!(probe.verdict, Verdict::BacnetDevice, "noise {:?}", noise);
            assert_eq!(probe.device_id, None);
        }
    }

    #[test]
    fn scan_line_protocol_speaker_is_non_bacnet() {
        let mut sim = Simulation::new(3);
        sim.register_actor(
            "plug-server",
            Box::new(move |ctx, datagram| {
                if let Some((from, _)) = open(datagram) {
                    let from = from.to_string();
                    let sealed = seal(ctx.self_id(), b"5000");
                    let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &from, &sealed);
                }
                Ok(())
            }),
        )
        .unwrap();
        let mut t = SimTransport::new(&mut sim, "scanner").unwrap();
        assert_eq!(scan_host(&mut t, "plug-server", 1_000_000).unwrap().verdict, Verdict::NonBacnet);
    }

    #[test]
    fn enumerate_lists_table_in_order_with_fault_isolation() {
        let mut sim = rig();
        let mut t = SimTransport::new(&mut sim, "scanner").unwrap();
        let rows = enumerate_objects(&mut t, "controller", ObjectId::device(102), 1_000_000).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].oid, ObjectId::analog_input(1));
        assert_eq!(rows[0].name.as_deref(), Some("temp"));
        assert_eq!(rows[0].present_value, Some(21.5));
        assert!(rows[0].errors.is_empty());
        assert_eq!(rows[1].oid, ObjectId::analog_output(3));
        assert_eq!(rows[1].present_value, Some(10.0));
        // The device object has no present value; the failure is recorded
        // and the name still comes through.
        assert_eq!(rows[2].oid, ObjectId::device(102));
        assert_eq!(rows[2].name.as_deref(), Some("hvac-controller"));
        assert_eq!(rows[2].present_value, None);
        assert_eq!(rows[2].errors, vec!["present-value: unknown-property".to_string()]);
    }

    #[test]
    fn enumerate_empty_table_yields_device_only() {
        let mut sim = Simulation::new(4);
        register_sim_device(&mut sim, "bare", SimulatedBacnetDevice::new(9, "bare", 1)).unwrap();
        let mut t = SimTransport::new(&mut sim, "scanner").unwrap();
        let rows = enumerate_objects(&mut t, "bare", ObjectId::device(9), 1_000_000).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].oid, ObjectId::device(9));
    }

    #[test]
    fn write_fires_hook_and_reads_back() {
        let mut sim = Simulation::new(5);
        let observed = Rc::new(RefCell::new(Vec::new()));
        let mut dev = demo_device();
        let sink = Rc::clone(&observed);
        dev.set_actuator_hook(Box::new(move |oid, v| sink.borrow_mut().push((oid, v))));
        let dev = register_sim_device(&mut sim, "controller", dev).unwrap();
        let mut t = SimTransport::new(&mut sim, "op").unwrap();

        write_present_value(&mut t, "controller", ObjectId::analog_output(3), 45.0, 1_000_000).unwrap();
        assert_eq!(*observed.borrow(), vec![(ObjectId::analog_output(3), 45.0)]);
        assert_eq!(dev.borrow().object(ObjectId::analog_output(3)).unwrap().present_value, Some(45.0));

        match read_property(&mut t, "controller", ObjectId::analog_output(3), PROP_PRESENT_VALUE, 7, 1_000_000)
            .unwrap()
        {
            PropertyValue::Real(v) => assert_eq!(v, 45.0),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn write_rejections() {
        let mut sim = rig();
        let mut t = SimTransport::new(&mut sim, "op").unwrap();
        assert_eq!(
            write_present_value(&mut t, "controller", ObjectId::analog_input(1), 1.0, 1_000_000),
            Err(ClientError::Rejected { code: ERR_WRITE_ACCESS_DENIED })
        );
        assert_eq!(
            write_present_value(&mut t, "controller", ObjectId::analog_output(99), 1.0, 1_000_000),
            Err(ClientError::Rejected { code: ERR_UNKNOWN_OBJECT })
        );
    }

    #[test]
    fn object_id_bounds() {
        assert!(ObjectId::new(1023, 4_194_302).is_ok());
        assert!(ObjectId::new(1024, 0).is_err());
        assert!(ObjectId::new(0, 4_194_303).is_err());
        let oid = ObjectId::new(8, 102).unwrap();
        assert_eq!(ObjectId::from_raw(oid.raw()), oid);
    }
}
