//! Cloud-relayed smart-plug ecosystem: plugs register sessions with a
//! relay server, an app authenticates and switches them through it, and
//! three attack drivers exercise the weak spots: MAC-window scanning,
//! password brute force, and session displacement (device spoofing).
//!
//! Wire profile: line-oriented text frames over the simulated reliable
//! transport. Requests `REG <mac>`, `AUTH <mac> <hex>`, `CMD <mac> ON|OFF`,
//! `HEARTBEAT <mac>`; plug-side replies `AUTHOK <mac>`, `ACK <mac> ON|OFF`;
//! server-issued `KICK <mac>` and the numeric reply codes `1070` (auth
//! accepted) and `5000` (offline or unknown). Passwords travel obfuscated
//! by a per-byte left rotation, hex-encoded.
//!
//! The server is a dumb relay: it never sees a cleartext password and
//! forwards AUTH frames to whichever endpoint currently holds the MAC's
//! session. That is the spoofing lever: a fake registration receives the
//! app's credentials.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::str::FromStr;

use crate::sim::{open, seal, SimError, Simulation, DEFAULT_LINK_LATENCY_US};
use crate::util::{from_hex, to_hex};
use crate::xport::{Transport, TransportError};

pub const CODE_AUTH_OK: u16 = 1070;
pub const CODE_OFFLINE: u16 = 5000;

/// Default wait before a displaced plug tries to register again.
pub const DEFAULT_LOCKOUT_US: u64 = 60_000_000;
pub const DEFAULT_HEARTBEAT_US: u64 = 30_000_000;
pub const DEFAULT_APP_RETRY_US: u64 = 5_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlugError {
    BadMac(String),
    BadLine(String),
    SuffixOutOfRange { start: u32, count: u32 },
    EmptyDictionary,
    NotRegistered(MacAddress),
    AuthRejected(u16),
    AuthSilence,
    CommandNotAcked(String),
    Transport(TransportError),
    Sim(SimError),
}

impl fmt::Display for PlugError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlugError::BadMac(s) => write!(f, "bad mac address {:?}", s),
            PlugError::BadLine(s) => write!(f, "unparseable frame {:?}", s),
            PlugError::SuffixOutOfRange { start, count } => {
                write!(f, "suffix window {}+{} exceeds 24 bits", start, count)
            }
            PlugError::EmptyDictionary => write!(f, "password dictionary is empty"),
            PlugError::NotRegistered(mac) => write!(f, "{} has no relay session", mac),
            PlugError::AuthRejected(code) => write!(f, "auth answered with code {}", code),
            PlugError::AuthSilence => write!(f, "auth went unanswered"),
            PlugError::CommandNotAcked(s) => write!(f, "command not acknowledged: {}", s),
            PlugError::Transport(e) => write!(f, "{}", e),
            PlugError::Sim(e) => write!(f, "{}", e),
        }
    }
}

impl core::error::Error for PlugError {}

impl From<TransportError> for PlugError {
    fn from(e: TransportError) -> Self {
        PlugError::Transport(e)
    }
}

impl From<SimError> for PlugError {
    fn from(e: SimError) -> Self {
        PlugError::Sim(e)
    }
}

/// Six bytes, first three the vendor OUI. Canonical text form is
/// uppercase colon-separated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub fn oui(&self) -> [u8; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    /// Builds OUI:suffix with the suffix in the low 24 bits.
    pub fn from_oui_suffix(oui: [u8; 3], suffix: u32) -> Result<Self, PlugError> {
        if suffix > 0x00FF_FFFF {
            return Err(PlugError::SuffixOutOfRange { start: suffix, count: 0 });
        }
        Ok(MacAddress([
            oui[0],
            oui[1],
            oui[2],
            (suffix >> 16) as u8,
            (suffix >> 8) as u8,
            suffix as u8,
        ]))
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            self.0[0], self.0[1], self.0[2], self.0[3], self.0[4], self.0[5]
        )
    }
}

impl FromStr for MacAddress {
    type Err = PlugError;

    fn from_str(s: &str) -> Result<Self, PlugError> {
        let mut bytes = [0u8; 6];
        let mut parts = s.split(':');
        for b in bytes.iter_mut() {
            let part = parts.next().ok_or_else(|| PlugError::BadMac(s.to_string()))?;
            if part.len() != 2 {
                return Err(PlugError::BadMac(s.to_string()));
            }
            *b = u8::from_str_radix(part, 16).map_err(|_| PlugError::BadMac(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(PlugError::BadMac(s.to_string()));
        }
        Ok(MacAddress(bytes))
    }
}

/// Per-byte left rotation by three bits. [`deobfuscate`] is its inverse;
/// both are bijections on byte strings.
pub fn obfuscate(data: &[u8]) -> Vec<u8> {
    data.iter().map(|b| b.rotate_left(3)).collect()
}

pub fn deobfuscate(data: &[u8]) -> Vec<u8> {
    data.iter().map(|b| b.rotate_right(3)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlugMsg {
    Reg(MacAddress),
    Auth(MacAddress, Vec<u8>),
    Cmd(MacAddress, bool),
    Heartbeat(MacAddress),
    AuthOk(MacAddress),
    Ack(MacAddress, bool),
    Kick(MacAddress),
    Code(u16),
}

pub fn format_line(msg: &PlugMsg) -> String {
    match msg {
        PlugMsg::Reg(mac) => format!("REG {}", mac),
        PlugMsg::Auth(mac, obf) if obf.is_empty() => format!("AUTH {}", mac),
        PlugMsg::Auth(mac, obf) => format!("AUTH {} {}", mac, to_hex(obf)),
        PlugMsg::Cmd(mac, on) => format!("CMD {} {}", mac, if *on { "ON" } else { "OFF" }),
        PlugMsg::Heartbeat(mac) => format!("HEARTBEAT {}", mac),
        PlugMsg::AuthOk(mac) => format!("AUTHOK {}", mac),
        PlugMsg::Ack(mac, on) => format!("ACK {} {}", mac, if *on { "ON" } else { "OFF" }),
        PlugMsg::Kick(mac) => format!("KICK {}", mac),
        PlugMsg::Code(code) => format!("{}", code),
    }
}

pub fn parse_line(line: &str) -> Result<PlugMsg, PlugError> {
    let bad = || PlugError::BadLine(line.to_string());
    let parts: Vec<&str> = line.split_whitespace().collect();
    let mac = |s: &str| MacAddress::from_str(s);
    let state = |s: &str| match s {
        "ON" => Ok(true),
        "OFF" => Ok(false),
        _ => Err(bad()),
    };
    match parts.as_slice() {
        [code] if code.chars().all(|c| c.is_ascii_digit()) => {
            Ok(PlugMsg::Code(code.parse().map_err(|_| bad())?))
        }
        ["REG", m] => Ok(PlugMsg::Reg(mac(m)?)),
        ["AUTH", m] => Ok(PlugMsg::Auth(mac(m)?, Vec::new())),
        ["AUTH", m, hex] => Ok(PlugMsg::Auth(mac(m)?, from_hex(hex).ok_or_else(bad)?)),
        ["CMD", m, s] => Ok(PlugMsg::Cmd(mac(m)?, state(s)?)),
        ["HEARTBEAT", m] => Ok(PlugMsg::Heartbeat(mac(m)?)),
        ["AUTHOK", m] => Ok(PlugMsg::AuthOk(mac(m)?)),
        ["ACK", m, s] => Ok(PlugMsg::Ack(mac(m)?, state(s)?)),
        ["KICK", m] => Ok(PlugMsg::Kick(mac(m)?)),
        _ => Err(bad()),
    }
}

/// Relay state: sessions, in-flight auth/command correlation, and which
/// clients have authenticated against the current session. Malformed
/// input yields no output at all.
#[derive(Debug, Default)]
pub struct RelayServer {
    sessions: BTreeMap<MacAddress, String>,
    pending_auth: BTreeMap<MacAddress, String>,
    pending_cmd: BTreeMap<MacAddress, String>,
    authorized: BTreeSet<(String, MacAddress)>,
    last_heartbeat_us: BTreeMap<MacAddress, u64>,
}

impl RelayServer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session_of(&self, mac: MacAddress) -> Option<&str> {
        self.sessions.get(&mac).map(String::as_str)
    }

    pub fn sessions(&self) -> &BTreeMap<MacAddress, String> {
        &self.sessions
    }

    pub fn is_authorized(&self, client: &str, mac: MacAddress) -> bool {
        self.authorized.contains(&(client.to_string(), mac))
    }

    pub fn last_heartbeat_us(&self, mac: MacAddress) -> Option<u64> {
        self.last_heartbeat_us.get(&mac).copied()
    }

    /// Routes one inbound frame; returns (target endpoint, line) pairs.
    pub fn handle(&mut self, now_us: u64, sender: &str, line: &str) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let msg = match parse_line(line) {
            Ok(m) => m,
            Err(_) => return out,
        };
        match msg {
            PlugMsg::Reg(mac) => {
                let old = self.sessions.insert(mac, sender.to_string());
                if let Some(old) = old {
                    if old != sender {
                        out.push((old, format_line(&PlugMsg::Kick(mac))));
                    }
                }
                // A new session invalidates every prior authentication.
                self.authorized.retain(|(_, m)| *m != mac);
                self.pending_auth.remove(&mac);
                self.pending_cmd.remove(&mac);
            }
            PlugMsg::Auth(mac, _) => match self.sessions.get(&mac) {
                None => out.push((sender.to_string(), format_line(&PlugMsg::Code(CODE_OFFLINE)))),
                Some(session) => {
                    self.pending_auth.insert(mac, sender.to_string());
                    out.push((session.clone(), line.to_string()));
                }
            },
            PlugMsg::AuthOk(mac) => {
                if self.sessions.get(&mac).map(String::as_str) == Some(sender) {
                    if let Some(client) = self.pending_auth.remove(&mac) {
                        self.authorized.insert((client.clone(), mac));
                        out.push((client, format_line(&PlugMsg::Code(CODE_AUTH_OK))));
                    }
                }
            }
            PlugMsg::Cmd(mac, _) => {
                if !self.authorized.contains(&(sender.to_string(), mac)) {
                    return out;
                }
                match self.sessions.get(&mac) {
                    None => out.push((sender.to_string(), format_line(&PlugMsg::Code(CODE_OFFLINE)))),
                    Some(session) => {
                        self.pending_cmd.insert(mac, sender.to_string());
                        out.push((session.clone(), line.to_string()));
                    }
                }
            }
            PlugMsg::Ack(mac, on) => {
                if self.sessions.get(&mac).map(String::as_str) == Some(sender) {
                    if let Some(client) = self.pending_cmd.remove(&mac) {
                        out.push((client, format_line(&PlugMsg::Ack(mac, on))));
                    }
                }
            }
            PlugMsg::Heartbeat(mac) => {
                if self.sessions.get(&mac).map(String::as_str) == Some(sender) {
                    self.last_heartbeat_us.insert(mac, now_us);
                }
            }
            PlugMsg::Kick(_) | PlugMsg::Code(_) => {}
        }
        out
    }
}

/// Installs the relay as a simulation actor. Frames must arrive sealed;
/// outputs are sealed from the server endpoint.
pub fn register_relay_server(
    sim: &mut Simulation,
    endpoint: &str,
) -> Result<Rc<RefCell<RelayServer>>, SimError> {
    let server = Rc::new(RefCell::new(RelayServer::new()));
    let state = Rc::clone(&server);
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            if let Some((from, payload)) = open(datagram) {
                let from = from.to_string();
                if let Ok(line) = core::str::from_utf8(payload) {
                    let routed = state.borrow_mut().handle(ctx.now_us(), &from, line);
                    for (target, reply) in routed {
                        let sealed = seal(ctx.self_id(), reply.as_bytes());
                        // Vanished clients are silently dropped.
                        let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &target, &sealed);
                    }
                }
            }
            Ok(())
        }),
    )?;
    Ok(server)
}

/// One plug: holds its own password, verifies relayed AUTH frames, obeys
/// relayed commands, and re-registers after a displacement lockout.
#[derive(Clone, Debug)]
pub struct PlugDevice {
    pub mac: MacAddress,
    pub password: String,
    pub switch_on: bool,
    pub session_active: bool,
    pub lockout_us: u64,
    pub heartbeat_us: u64,
    pub auto_register: bool,
    pub auth_frames_seen: u32,
}

impl PlugDevice {
    pub fn new(mac: MacAddress, password: &str) -> Self {
        PlugDevice {
            mac,
            password: password.to_string(),
            switch_on: false,
            session_active: false,
            lockout_us: DEFAULT_LOCKOUT_US,
            heartbeat_us: DEFAULT_HEARTBEAT_US,
            auto_register: true,
            auth_frames_seen: 0,
        }
    }
}

const TIMER_BOOT: &[u8] = b"BOOT";
const TIMER_REREG: &[u8] = b"REREG";
const TIMER_HEARTBEAT: &[u8] = b"HB";

fn is_timer(from: &str, payload: &[u8], opcode: &[u8]) -> bool {
    from.is_empty() && payload == opcode
}

/// Installs a plug actor. It registers at boot (unless configured not
/// to), answers relayed AUTH frames only when the password matches, and
/// schedules its own re-registration after a kick.
pub fn register_plug_actor(
    sim: &mut Simulation,
    endpoint: &str,
    server_endpoint: &str,
    device: PlugDevice,
) -> Result<Rc<RefCell<PlugDevice>>, SimError> {
    let plug = Rc::new(RefCell::new(device));
    let state = Rc::clone(&plug);
    let server = server_endpoint.to_string();
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            let Some((from, payload)) = open(datagram) else { return Ok(()) };
            let from = from.to_string();
            let mut dev = state.borrow_mut();
            let send = |ctx: &mut crate::sim::SimCtx<'_>, msg: &PlugMsg| {
                let sealed = seal(ctx.self_id(), format_line(msg).as_bytes());
                let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &server, &sealed);
            };
            if is_timer(&from, payload, TIMER_BOOT) || is_timer(&from, payload, TIMER_REREG) {
                send(ctx, &PlugMsg::Reg(dev.mac));
                dev.session_active = true;
                let hb = dev.heartbeat_us;
                let _ = ctx.send_after(hb, ctx.self_id().to_string().as_str(), &seal("", TIMER_HEARTBEAT));
                return Ok(());
            }
            if is_timer(&from, payload, TIMER_HEARTBEAT) {
                if dev.session_active {
                    send(ctx, &PlugMsg::Heartbeat(dev.mac));
                    let hb = dev.heartbeat_us;
                    let _ = ctx.send_after(hb, ctx.self_id().to_string().as_str(), &seal("", TIMER_HEARTBEAT));
                }
                return Ok(());
            }
            if from != server {
                return Ok(());
            }
            let Ok(line) = core::str::from_utf8(payload) else { return Ok(()) };
            match parse_line(line) {
                Ok(PlugMsg::Auth(mac, obf)) if mac == dev.mac => {
                    dev.auth_frames_seen += 1;
                    if deobfuscate(&obf) == dev.password.as_bytes() {
                        send(ctx, &PlugMsg::AuthOk(mac));
                    }
                }
                Ok(PlugMsg::Cmd(mac, on)) if mac == dev.mac => {
                    dev.switch_on = on;
                    send(ctx, &PlugMsg::Ack(mac, on));
                }
                Ok(PlugMsg::Kick(mac)) if mac == dev.mac => {
                    dev.session_active = false;
                    let lockout = dev.lockout_us;
                    let _ = ctx.send_after(lockout, ctx.self_id().to_string().as_str(), &seal("", TIMER_REREG));
                }
                _ => {}
            }
            Ok(())
        }),
    )?;
    if plug.borrow().auto_register {
        sim.schedule(0, endpoint, &seal("", TIMER_BOOT))?;
    }
    Ok(plug)
}

/// App-side bookkeeping for the scripted client.
#[derive(Clone, Debug)]
pub struct AppClient {
    pub mac: MacAddress,
    pub password: String,
    pub want_on: bool,
    pub acked: bool,
    pub auth_attempts: u32,
    pub retry_us: u64,
}

impl AppClient {
    pub fn new(mac: MacAddress, password: &str, want_on: bool) -> Self {
        AppClient {
            mac,
            password: password.to_string(),
            want_on,
            acked: false,
            auth_attempts: 0,
            retry_us: DEFAULT_APP_RETRY_US,
        }
    }
}

/// Installs the app actor: it authenticates, retries on silence until the
/// switch command is acknowledged, then goes quiet.
pub fn register_app_actor(
    sim: &mut Simulation,
    endpoint: &str,
    server_endpoint: &str,
    client: AppClient,
) -> Result<Rc<RefCell<AppClient>>, SimError> {
    let app = Rc::new(RefCell::new(client));
    let state = Rc::clone(&app);
    let server = server_endpoint.to_string();
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            let Some((from, payload)) = open(datagram) else { return Ok(()) };
            let from = from.to_string();
            let mut cl = state.borrow_mut();
            let send = |ctx: &mut crate::sim::SimCtx<'_>, msg: &PlugMsg| {
                let sealed = seal(ctx.self_id(), format_line(msg).as_bytes());
                let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &server, &sealed);
            };
            if is_timer(&from, payload, TIMER_BOOT) || is_timer(&from, payload, TIMER_REREG) {
                if !cl.acked {
                    cl.auth_attempts += 1;
                    let obf = obfuscate(cl.password.as_bytes());
                    send(ctx, &PlugMsg::Auth(cl.mac, obf));
                    let retry = cl.retry_us;
                    let _ = ctx.send_after(retry, ctx.self_id().to_string().as_str(), &seal("", TIMER_REREG));
                }
                return Ok(());
            }
            if from != server {
                return Ok(());
            }
            let Ok(line) = core::str::from_utf8(payload) else { return Ok(()) };
            match parse_line(line) {
                Ok(PlugMsg::Code(CODE_AUTH_OK)) => {
                    let want = cl.want_on;
                    send(ctx, &PlugMsg::Cmd(cl.mac, want));
                }
                Ok(PlugMsg::Ack(mac, on)) if mac == cl.mac && on == cl.want_on => {
                    cl.acked = true;
                }
                _ => {}
            }
            Ok(())
        }),
    )?;
    sim.schedule(0, endpoint, &seal("", TIMER_BOOT))?;
    Ok(app)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanVerdict {
    Online,
    OfflineOrAbsent,
    ExistsWrongPassword,
}

impl fmt::Display for ScanVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScanVerdict::Online => "online",
            ScanVerdict::OfflineOrAbsent => "offline_or_absent",
            ScanVerdict::ExistsWrongPassword => "exists_wrong_password",
        };
        f.write_str(s)
    }
}

/// Walks a MAC suffix window, sending one AUTH per candidate with the
/// guessed password. `1070` means online and password known; `5000` means
/// offline or absent; silence means a plug exists but rejected the guess.
pub fn attack_scan<T: Transport>(
    transport: &mut T,
    server_endpoint: &str,
    oui: [u8; 3],
    suffix_start: u32,
    suffix_count: u32,
    guess: &str,
    timeout_us: u64,
) -> Result<Vec<(MacAddress, ScanVerdict)>, PlugError> {
    if suffix_count > 1 << 24
        || u64::from(suffix_start) + u64::from(suffix_count) > 1 << 24
    {
        return Err(PlugError::SuffixOutOfRange { start: suffix_start, count: suffix_count });
    }
    let mut verdicts = Vec::with_capacity(suffix_count as usize);
    for suffix in suffix_start..suffix_start + suffix_count {
        let mac = MacAddress::from_oui_suffix(oui, suffix)?;
        let line = format_line(&PlugMsg::Auth(mac, obfuscate(guess.as_bytes())));
        let verdict = match transport.exchange(server_endpoint, line.as_bytes(), timeout_us)? {
            None => ScanVerdict::ExistsWrongPassword,
            Some(reply) => match reply.bytes.as_slice() {
                b"1070" => ScanVerdict::Online,
                b"5000" => ScanVerdict::OfflineOrAbsent,
                other => {
                    return Err(PlugError::CommandNotAcked(
                        String::from_utf8_lossy(other).to_string(),
                    ))
                }
            },
        };
        verdicts.push((mac, verdict));
    }
    Ok(verdicts)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BruteforceOutcome {
    Found { password: String, attempts: u32 },
    Exhausted { attempts: u32 },
    PlugOffline { attempts: u32 },
}

/// Tries dictionary entries in order until one authenticates. A `5000`
/// reply aborts immediately: the target is offline or absent, so no guess
/// can ever land.
pub fn attack_bruteforce<T: Transport>(
    transport: &mut T,
    server_endpoint: &str,
    mac: MacAddress,
    dictionary: &[&str],
    timeout_us: u64,
) -> Result<BruteforceOutcome, PlugError> {
    if dictionary.is_empty() {
        return Err(PlugError::EmptyDictionary);
    }
    let mut attempts = 0;
    for guess in dictionary {
        attempts += 1;
        let line = format_line(&PlugMsg::Auth(mac, obfuscate(guess.as_bytes())));
        match transport.exchange(server_endpoint, line.as_bytes(), timeout_us)? {
            Some(reply) if reply.bytes == b"1070" => {
                return Ok(BruteforceOutcome::Found { password: guess.to_string(), attempts })
            }
            Some(reply) if reply.bytes == b"5000" => {
                return Ok(BruteforceOutcome::PlugOffline { attempts })
            }
            _ => {}
        }
    }
    Ok(BruteforceOutcome::Exhausted { attempts })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpoofEvent {
    SessionHijacked,
    PasswordCaptured,
    SessionLost,
}

/// Progression of one spoofing run, updated by the fake-plug actor.
#[derive(Clone, Debug)]
pub struct SpoofState {
    pub victim: MacAddress,
    pub fake_session_active: bool,
    pub captured_password: Option<String>,
    pub lockout_until_us: u64,
    pub events: Vec<(u64, SpoofEvent)>,
}

impl SpoofState {
    pub fn lockout_remaining_us(&self, now_us: u64) -> u64 {
        self.lockout_until_us.saturating_sub(now_us)
    }
}

/// Registers a fake plug over the victim's MAC. The displaced victim goes
/// silent for its lockout; meanwhile every AUTH the app sends is relayed
/// here and recorded. The fake stays silent, so the app keeps retrying.
///
/// `victim_lockout_us` is scenario bookkeeping for the report; the
/// victim's own timer is authoritative.
pub fn attack_spoof(
    sim: &mut Simulation,
    server: &Rc<RefCell<RelayServer>>,
    server_endpoint: &str,
    fake_endpoint: &str,
    victim: MacAddress,
    victim_lockout_us: u64,
) -> Result<Rc<RefCell<SpoofState>>, PlugError> {
    if server.borrow().session_of(victim).is_none() {
        return Err(PlugError::NotRegistered(victim));
    }
    let reg_sent_at = sim.now_us();
    let state = Rc::new(RefCell::new(SpoofState {
        victim,
        fake_session_active: false,
        captured_password: None,
        // Estimate: REG one hop out, KICK one hop back.
        lockout_until_us: reg_sent_at + 2 * DEFAULT_LINK_LATENCY_US + victim_lockout_us,
        events: Vec::new(),
    }));
    let shared = Rc::clone(&state);
    let server_ep = server_endpoint.to_string();
    sim.register_actor(
        fake_endpoint,
        Box::new(move |ctx, datagram| {
            let Some((from, payload)) = open(datagram) else { return Ok(()) };
            let from = from.to_string();
            let mut st = shared.borrow_mut();
            if is_timer(&from, payload, TIMER_BOOT) {
                let sealed = seal(ctx.self_id(), format_line(&PlugMsg::Reg(st.victim)).as_bytes());
                let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &server_ep, &sealed);
                st.fake_session_active = true;
                let now = ctx.now_us();
                st.events.push((now, SpoofEvent::SessionHijacked));
                return Ok(());
            }
            if from != server_ep {
                return Ok(());
            }
            let Ok(line) = core::str::from_utf8(payload) else { return Ok(()) };
            match parse_line(line) {
                Ok(PlugMsg::Auth(mac, obf)) if mac == st.victim => {
                    if st.captured_password.is_none() {
                        if let Ok(pw) = String::from_utf8(deobfuscate(&obf)) {
                            st.captured_password = Some(pw);
                            let now = ctx.now_us();
                            st.events.push((now, SpoofEvent::PasswordCaptured));
                        }
                    }
                }
                Ok(PlugMsg::Kick(mac)) if mac == st.victim => {
                    st.fake_session_active = false;
                    let now = ctx.now_us();
                    st.events.push((now, SpoofEvent::SessionLost));
                }
                _ => {}
            }
            Ok(())
        }),
    )?;
    sim.schedule(0, fake_endpoint, &seal("", TIMER_BOOT))?;
    Ok(state)
}

/// Authenticates with `password`, then issues the switch command and
/// waits for the acknowledgement.
pub fn send_authenticated_command<T: Transport>(
    transport: &mut T,
    server_endpoint: &str,
    mac: MacAddress,
    password: &str,
    on: bool,
    timeout_us: u64,
) -> Result<(), PlugError> {
    let auth = format_line(&PlugMsg::Auth(mac, obfuscate(password.as_bytes())));
    match transport.exchange(server_endpoint, auth.as_bytes(), timeout_us)? {
        None => return Err(PlugError::AuthSilence),
        Some(reply) if reply.bytes == b"1070" => {}
        Some(reply) if reply.bytes == b"5000" => return Err(PlugError::AuthRejected(CODE_OFFLINE)),
        Some(reply) => {
            return Err(PlugError::CommandNotAcked(String::from_utf8_lossy(&reply.bytes).to_string()))
        }
    }
    let cmd = format_line(&PlugMsg::Cmd(mac, on));
    let expect = format_line(&PlugMsg::Ack(mac, on));
    match transport.exchange(server_endpoint, cmd.as_bytes(), timeout_us)? {
        Some(reply) if reply.bytes == expect.as_bytes() => Ok(()),
        Some(reply) => {
            Err(PlugError::CommandNotAcked(String::from_utf8_lossy(&reply.bytes).to_string()))
        }
        None => Err(PlugError::CommandNotAcked("silence".to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStream;
    use crate::xport::SimTransport;
    use std::vec;

    const OUI: [u8; 3] = [0x28, 0x6C, 0x07];

    fn mac(suffix: u32) -> MacAddress {
        MacAddress::from_oui_suffix(OUI, suffix).unwrap()
    }

    #[test]
    fn mac_text_round_trip() {
        let m = MacAddress([0x28, 0x6C, 0x07, 0x00, 0x12, 0xAB]);
        assert_eq!(m.to_string(), "28:6C:07:00:12:AB");
        assert_eq!("28:6c:07:00:12:ab".parse::<MacAddress>().unwrap(), m);
        assert!("28:6C:07:00:12".parse::<MacAddress>().is_err());
        assert!("28:6C:07:00:12:AB:FF".parse::<MacAddress>().is_err());
        assert!("g8:6C:07:00:12:AB".parse::<MacAddress>().is_err());
        assert_eq!(m.oui(), OUI);
    }

    #[test]
    fn obfuscation_golden() {
        assert_eq!(obfuscate(b"1234"), vec![0x89, 0x91, 0x99, 0xA1]);
        assert_eq!(obfuscate(b""), Vec::<u8>::new());
        assert_eq!(deobfuscate(&[0x89, 0x91, 0x99, 0xA1]), b"1234");
    }

    #[test]
    fn obfuscation_is_a_bijection() {
        let mut seen = [false; 256];
        for b in 0..=255u8 {
            let o = obfuscate(&[b])[0];
            assert!(!seen[o as usize]);
            seen[o as usize] = true;
        }
        let mut rng = RngStream::derive(11, "obf-inverse");
        for _ in 0..10_000 {
            let n = rng.draw(32).unwrap() as usize;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(rng.draw(256).unwrap() as u8);
            }
            assert_eq!(deobfuscate(&obfuscate(&data)), data);
        }
    }

    #[test]
    fn line_codec_round_trip() {
        let msgs = vec![
            PlugMsg::Reg(mac(1)),
            PlugMsg::Auth(mac(1), obfuscate(b"1234")),
            PlugMsg::Auth(mac(1), Vec::new()),
            PlugMsg::Cmd(mac(1), true),
            PlugMsg::Cmd(mac(1), false),
            PlugMsg::Heartbeat(mac(1)),
            PlugMsg::AuthOk(mac(1)),
            PlugMsg::Ack(mac(1), true),
            PlugMsg::Kick(mac(1)),
            PlugMsg::Code(1070),
            PlugMsg::Code(5000),
        ];
        for m in msgs {
            assert_eq!(parse_line(&format_line(&m)).unwrap(), m, "{:?}", m);
        }
        for bad in ["", "REG", "REG nope", "CMD 28:6C:07:00:00:01 BLINK", "AUTH x y z", "99999"] {
            assert!(parse_line(bad).is_err(), "{:?}", bad);
        }
    }

    struct Rig {
        sim: Simulation,
        server: Rc<RefCell<RelayServer>>,
        plugs: Vec<Rc<RefCell<PlugDevice>>>,
    }

    fn rig(seed: u64, plugs: &[(u32, &str, bool)]) -> Rig {
        let mut sim = Simulation::new(seed);
        let server = register_relay_server(&mut sim, "cloud").unwrap();
        let mut handles = Vec::new();
        for (i, (suffix, password, auto)) in plugs.iter().enumerate() {
            let mut dev = PlugDevice::new(mac(*suffix), password);
            dev.auto_register = *auto;
            let ep = format!("plug/{}", i);
            handles.push(register_plug_actor(&mut sim, &ep, "cloud", dev).unwrap());
        }
        sim.run_until(10_000).unwrap();
        Rig { sim, server, plugs: handles }
    }

    #[test]
    fn auth_response_table_is_exhaustive() {
        // Four cells: (online, offline) x (correct, wrong), plus a MAC
        // that was never provisioned at all.
        let mut r = rig(1, &[(1, "1234", true), (2, "1234", false)]);
        let mut t = SimTransport::new(&mut r.sim, "app").unwrap();
        let timeout = 1_000_000;

        let probe = |t: &mut SimTransport<'_>, m: MacAddress, pw: &str| {
            let line = format_line(&PlugMsg::Auth(m, obfuscate(pw.as_bytes())));
            t.exchange("cloud", line.as_bytes(), timeout).unwrap().map(|r| r.bytes)
        };

        assert_eq!(probe(&mut t, mac(1), "1234"), Some(b"1070".to_vec()));
        assert_eq!(probe(&mut t, mac(1), "0000"), None);
        assert_eq!(probe(&mut t, mac(2), "1234"), Some(b"5000".to_vec()));
        assert_eq!(probe(&mut t, mac(2), "0000"), Some(b"5000".to_vec()));
        assert_eq!(probe(&mut t, mac(77), "1234"), Some(b"5000".to_vec()));
    }

    #[test]
    fn reg_rebind_displaces_and_kicks() {
        let mut sim = Simulation::new(2);
        let server = register_relay_server(&mut sim, "cloud").unwrap();
        let real = register_plug_actor(&mut sim, "plug/real", "cloud", PlugDevice::new(mac(1), "1234")).unwrap();
        sim.run_until(10_000).unwrap();
        assert_eq!(server.borrow().session_of(mac(1)), Some("plug/real"));
        assert!(real.borrow().session_active);

        let fake = register_plug_actor(&mut sim, "plug/fake", "cloud", PlugDevice::new(mac(1), "9999")).unwrap();
        sim.run_until(20_000).unwrap();
        assert_eq!(server.borrow().session_of(mac(1)), Some("plug/fake"));
        assert!(!real.borrow().session_active);
        assert!(fake.borrow().session_active);
        assert_eq!(server.borrow().sessions().len(), 1);
    }

    #[test]
    fn authenticated_command_switches_plug() {
        let mut r = rig(3, &[(1, "1234", true)]);
        let mut t = SimTransport::new(&mut r.sim, "app").unwrap();
        send_authenticated_command(&mut t, "cloud", mac(1), "1234", true, 1_000_000).unwrap();
        assert!(r.plugs[0].borrow().switch_on);
        send_authenticated_command(&mut t, "cloud", mac(1), "1234", false, 1_000_000).unwrap();
        assert!(!r.plugs[0].borrow().switch_on);
    }

    #[test]
    fn command_without_auth_is_ignored() {
        let mut r = rig(4, &[(1, "1234", true)]);
        let mut t = SimTransport::new(&mut r.sim, "app").unwrap();
        let line = format_line(&PlugMsg::Cmd(mac(1), true));
        assert_eq!(t.exchange("cloud", line.as_bytes(), 500_000).unwrap(), None);
        assert!(!r.plugs[0].borrow().switch_on);
    }

    #[test]
    fn heartbeat_refreshes_last_seen() {
        let mut r = rig(5, &[(1, "1234", true)]);
        r.sim.run_until(DEFAULT_HEARTBEAT_US + 20_000).unwrap();
        let seen = r.server.borrow().last_heartbeat_us(mac(1)).unwrap();
        assert!(seen >= DEFAULT_HEARTBEAT_US);
    }

    #[test]
    fn scan_finds_exactly_the_online_plugs() {
        let mut r = rig(6, &[(10, "1234", true), (77, "1234", true), (200, "1234", true)]);
        let mut t = SimTransport::new(&mut r.sim, "scanner").unwrap();
        let verdicts = attack_scan(&mut t, "cloud", OUI, 0, 256, "1234", 100_000).unwrap();
        assert_eq!(verdicts.len(), 256);
        let online: Vec<MacAddress> = verdicts
            .iter()
            .filter(|(_, v)| *v == ScanVerdict::Online)
            .map(|(m, _)| *m)
            .collect();
        assert_eq!(online, vec![mac(10), mac(77), mac(200)]);
        assert!(verdicts
            .iter()
            .filter(|(m, _)| !online.contains(m))
            .all(|(_, v)| *v == ScanVerdict::OfflineOrAbsent));
    }

    #[test]
    fn scan_empty_window_is_all_offline() {
        let mut r = rig(7, &[]);
        let mut t = SimTransport::new(&mut r.sim, "scanner").unwrap();
        let verdicts = attack_scan(&mut t, "cloud", OUI, 1000, 16, "1234", 100_000).unwrap();
        assert!(verdicts.iter().all(|(_, v)| *v == ScanVerdict::OfflineOrAbsent));
    }

    #[test]
    fn scan_flags_strong_password_as_wrong_guess() {
        let mut r = rig(8, &[(5, "1234", true), (6, "correct horse", true)]);
        let mut t = SimTransport::new(&mut r.sim, "scanner").unwrap();
        let verdicts = attack_scan(&mut t, "cloud", OUI, 5, 2, "1234", 100_000).unwrap();
        assert_eq!(verdicts[0].1, ScanVerdict::Online);
        assert_eq!(verdicts[1].1, ScanVerdict::ExistsWrongPassword);
    }

    #[test]
    fn scan_window_bounds_are_enforced() {
        let mut r = rig(9, &[]);
        let mut t = SimTransport::new(&mut r.sim, "scanner").unwrap();
        assert!(matches!(
            attack_scan(&mut t, "cloud", OUI, 0x00FF_FFFF, 2, "1234", 1_000),
            Err(PlugError::SuffixOutOfRange { .. })
        ));
    }

    #[test]
    fn scan_soundness_no_false_positives() {
        // Random plug population with random passwords; an online verdict
        // must always correspond to a real plug using the guessed password.
        let mut rng = RngStream::derive(99, "scan-soundness");
        for round in 0..5u64 {
            let mut plugs = Vec::new();
            let mut used = BTreeSet::new();
            for _ in 0..8 {
                let suffix = rng.draw(64).unwrap() as u32;
                if !used.insert(suffix) {
                    continue;
                }
                let pw = if rng.draw(2).unwrap() == 0 {
                    "1234".to_string()
                } else {
                    format!("{:04}", rng.draw(10_000).unwrap())
                };
                plugs.push((suffix, pw));
            }
            let spec: Vec<(u32, &str, bool)> =
                plugs.iter().map(|(s, p)| (*s, p.as_str(), true)).collect();
            let mut r = rig(100 + round, &spec);
            let mut t = SimTransport::new(&mut r.sim, "scanner").unwrap();
            let verdicts = attack_scan(&mut t, "cloud", OUI, 0, 64, "1234", 50_000).unwrap();
            for (m, v) in verdicts {
                let actual = plugs.iter().find(|(s, _)| mac(*s) == m);
                match v {
                    ScanVerdict::Online => {
                        assert_eq!(actual.map(|(_, p)| p.as_str()), Some("1234"), "{}", m)
                    }
                    ScanVerdict::ExistsWrongPassword => {
                        assert!(actual.is_some_and(|(_, p)| p != "1234"), "{}", m)
                    }
                    ScanVerdict::OfflineOrAbsent => assert!(actual.is_none(), "{}", m),
                }
            }
        }
    }

    #[test]
    fn bruteforce_finds_on_third_attempt() {
        let mut r = rig(10, &[(1, "1234", true)]);
        let mut t = SimTransport::new(&mut r.sim, "attacker").unwrap();
        let out = attack_bruteforce(&mut t, "cloud", mac(1), &["0000", "1111", "1234"], 100_000).unwrap();
        assert_eq!(out, BruteforceOutcome::Found { password: "1234".to_string(), attempts: 3 });
    }

    #[test]
    fn bruteforce_exhausts_quiet_dictionary() {
        let mut r = rig(11, &[(1, "1234", true)]);
        let mut t = SimTransport::new(&mut r.sim, "attacker").unwrap();
        let out = attack_bruteforce(&mut t, "cloud", mac(1), &["0000", "1111"], 100_000).unwrap();
        assert_eq!(out, BruteforceOutcome::Exhausted { attempts: 2 });
    }

    #[test]
    fn bruteforce_aborts_on_offline_plug() {
        let mut r = rig(12, &[]);
        let mut t = SimTransport::new(&mut r.sim, "attacker").unwrap();
        let out = attack_bruteforce(&mut t, "cloud", mac(1), &["0000", "1111"], 100_000).unwrap();
        assert_eq!(out, BruteforceOutcome::PlugOffline { attempts: 1 });
        assert!(attack_bruteforce(&mut t, "cloud", mac(1), &[], 100_000).is_err());
    }

    #[test]
    fn bruteforce_full_pin_space_always_lands() {
        let mut rng = RngStream::derive(13, "pin-pick");
        let pin = format!("{:04}", rng.draw(10_000).unwrap());
        let mut r = rig(13, &[(1, pin.as_str(), true)]);
        let mut t = SimTransport::new(&mut r.sim, "attacker").unwrap();
        let dict: Vec<String> = (0..10_000).map(|n| format!("{:04}", n)).collect();
        let refs: Vec<&str> = dict.iter().map(String::as_str).collect();
        match attack_bruteforce(&mut t, "cloud", mac(1), &refs, 20_000).unwrap() {
            BruteforceOutcome::Found { password, attempts } => {
                assert_eq!(password, pin);
                assert!(attempts <= 10_000);
            }
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn spoof_requires_a_registered_victim() {
        let mut sim = Simulation::new(14);
        let server = register_relay_server(&mut sim, "cloud").unwrap();
        let err = attack_spoof(&mut sim, &server, "cloud", "fake", mac(1), DEFAULT_LOCKOUT_US).err();
        assert_eq!(err, Some(PlugError::NotRegistered(mac(1))));
    }

    #[test]
    fn spoof_without_app_traffic_captures_nothing() {
        let mut sim = Simulation::new(15);
        let server = register_relay_server(&mut sim, "cloud").unwrap();
        register_plug_actor(&mut sim, "plug/real", "cloud", PlugDevice::new(mac(1), "1234")).unwrap();
        sim.run_until(10_000).unwrap();
        let spoof = attack_spoof(&mut sim, &server, "cloud", "plug/fake", mac(1), DEFAULT_LOCKOUT_US).unwrap();
        sim.run_until(30_000_000).unwrap();
        let st = spoof.borrow();
        assert!(st.captured_password.is_none());
        assert!(st.fake_session_active);
        assert_eq!(st.events.iter().map(|(_, e)| *e).collect::<Vec<_>>(), vec![SpoofEvent::SessionHijacked]);
    }

    #[test]
    fn spoof_end_to_end_captures_and_controls() {
        let mut sim = Simulation::new(16);
        let server = register_relay_server(&mut sim, "cloud").unwrap();
        let real = register_plug_actor(&mut sim, "plug/real", "cloud", PlugDevice::new(mac(1), "1234")).unwrap();
        sim.run_until(2_000_000).unwrap();

        // Hijack before the app ever talks.
        let spoof = attack_spoof(&mut sim, &server, "cloud", "plug/fake", mac(1), DEFAULT_LOCKOUT_US).unwrap();
        sim.run_until(3_000_000).unwrap();
        assert_eq!(server.borrow().session_of(mac(1)), Some("plug/fake"));
        assert!(!real.borrow().session_active);

        // The app starts trying to switch its plug on and keeps retrying.
        let app = register_app_actor(&mut sim, "app", "cloud", AppClient::new(mac(1), "1234", true)).unwrap();
        sim.run_until(10_000_000).unwrap();
        {
            let st = spoof.borrow();
            assert_eq!(st.captured_password.as_deref(), Some("1234"));
            assert!(st.lockout_remaining_us(sim.now_us()) > 0);
            assert!(!app.borrow().acked);
        }

        // Victim re-registers once its lockout expires and displaces the
        // fake; the app's next retry then lands on the real plug.
        sim.run_until(75_000_000).unwrap();
        assert_eq!(server.borrow().session_of(mac(1)), Some("plug/real"));
        {
            let st = spoof.borrow();
            assert!(!st.fake_session_active);
            assert_eq!(
                st.events.iter().map(|(_, e)| *e).collect::<Vec<_>>(),
                vec![SpoofEvent::SessionHijacked, SpoofEvent::PasswordCaptured, SpoofEvent::SessionLost]
            );
            assert_eq!(st.lockout_remaining_us(sim.now_us()), 0);
        }
        assert!(app.borrow().acked);
        assert!(real.borrow().switch_on);

        // The captured password now controls the real plug.
        let captured = spoof.borrow().captured_password.clone().unwrap();
        let mut t = SimTransport::new(&mut sim, "attacker").unwrap();
        send_authenticated_command(&mut t, "cloud", mac(1), &captured, false, 1_000_000).unwrap();
        assert!(!real.borrow().switch_on);
    }

    #[test]
    fn session_uniqueness_survives_message_soup() {
        let mut server = RelayServer::new();
        let mut rng = RngStream::derive(17, "soup");
        let lines = [
            "REG", "AUTH", "CMD", "HEARTBEAT", "AUTHOK", "ACK", "KICK",
        ];
        for step in 0..10_000u64 {
            let mac = mac(rng.draw(8).unwrap() as u32);
            let sender = format!("ep/{}", rng.draw(5).unwrap());
            let kind = lines[rng.draw(lines.len() as u64).unwrap() as usize];
            let line = match kind {
                "AUTH" => format!("AUTH {} 899199A1", mac),
                "CMD" => format!("CMD {} {}", mac, if rng.draw(2).unwrap() == 0 { "ON" } else { "OFF" }),
                "ACK" => format!("ACK {} ON", mac),
                other => format!("{} {}", other, mac),
            };
            server.handle(step, &sender, &line);
            server.handle(step, &sender, "not a frame at all");
        }
        // Structural uniqueness plus: authorizations only reference live
        // sessions.
        let sessions = server.sessions().clone();
        assert!(sessions.len() <= 8);
        for mac in sessions.keys() {
            assert!(server.session_of(*mac).is_some());
        }
    }
}
