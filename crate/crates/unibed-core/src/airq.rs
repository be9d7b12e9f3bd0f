//! Crowd-sourced air-quality network: sensor nodes post PM2.5 readings to
//! an ingestion server keyed only by MAC address, a map snapshot averages
//! them over a trailing window, and an injector demonstrates how a forged
//! MAC pollutes the published average.
//!
//! Wire profile: one text line per report,
//! `POST /update id=<MAC>&pm25=<1dp>&ts=<seconds>`, unencrypted and
//! unsigned. The server acks `200 OK` and answers `400 BAD` to anything
//! it drops.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::plug::MacAddress;
use crate::sim::{open, seal, SimError, Simulation, DEFAULT_LINK_LATENCY_US};

pub const DEFAULT_REPORT_INTERVAL_S: u64 = 60;
pub const DEFAULT_WINDOW_S: u64 = 3_600;

#[derive(Clone, Debug, PartialEq)]
pub enum AirqError {
    BadReport(String),
    NonPositiveWindow,
    Sim(SimError),
}

impl fmt::Display for AirqError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AirqError::BadReport(line) => write!(f, "unparseable report {:?}", line),
            AirqError::NonPositiveWindow => write!(f, "window must be positive"),
            AirqError::Sim(e) => write!(f, "{}", e),
        }
    }
}

impl core::error::Error for AirqError {}

impl From<SimError> for AirqError {
    fn from(e: SimError) -> Self {
        AirqError::Sim(e)
    }
}

/// Ground-truth PM2.5 generator for one sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pm25Process {
    Constant { value: f64 },
    /// `base` plus uniform noise in [-amplitude, amplitude), clamped at 0.
    Noisy { base: f64, amplitude: f64 },
    /// Cycles through the trace, one entry per report.
    Trace { values: Vec<f64> },
}

impl Pm25Process {
    /// `noise` must lie in [-1, 1); only `Noisy` consumes it.
    pub fn sample(&self, k: u64, noise: f64) -> f64 {
        let v = match self {
            Pm25Process::Constant { value } => *value,
            Pm25Process::Noisy { base, amplitude } => base + amplitude * noise,
            Pm25Process::Trace { values } => {
                if values.is_empty() {
                    0.0
                } else {
                    values[(k % values.len() as u64) as usize]
                }
            }
        };
        if v < 0.0 {
            0.0
        } else {
            v
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AqDevice {
    pub mac: MacAddress,
    pub lat: f64,
    pub lon: f64,
    pub process: Pm25Process,
    pub interval_s: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AqReport {
    pub mac: MacAddress,
    pub pm25: f64,
    pub ts_s: u64,
}

/// Readings travel with one decimal place, like the original web API.
pub fn format_report(r: &AqReport) -> String {
    format!("POST /update id={}&pm25={:.1}&ts={}", r.mac, r.pm25, r.ts_s)
}

pub fn parse_report(line: &str) -> Result<AqReport, AirqError> {
    let bad = || AirqError::BadReport(line.to_string());
    let query = line.strip_prefix("POST /update ").ok_or_else(bad)?;
    let mut mac = None;
    let mut pm25 = None;
    let mut ts = None;
    for pair in query.split('&') {
        let (key, value) = pair.split_once('=').ok_or_else(bad)?;
        match key {
            "id" if mac.is_none() => mac = Some(MacAddress::from_str(value).map_err(|_| bad())?),
            "pm25" if pm25.is_none() => {
                let v: f64 = value.parse().map_err(|_| bad())?;
                if !v.is_finite() || v < 0.0 {
                    return Err(bad());
                }
                pm25 = Some(v);
            }
            "ts" if ts.is_none() => ts = Some(value.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    Ok(AqReport {
        mac: mac.ok_or_else(bad)?,
        pm25: pm25.ok_or_else(bad)?,
        ts_s: ts.ok_or_else(bad)?,
    })
}

#[derive(Clone, Debug, Default)]
struct DeviceState {
    location: Option<(f64, f64)>,
    /// (ts_s, pm25), chronological by arrival; pruned to the server window.
    reports: VecDeque<(u64, f64)>,
}

/// Pure fold over the ingest sequence: no clock, no randomness. Identity
/// is the report's MAC and nothing else, so unknown MACs are registered
/// on first sight.
#[derive(Clone, Debug)]
pub struct IngestServer {
    window_s: u64,
    devices: BTreeMap<MacAddress, DeviceState>,
    dropped: u64,
    last_ts: u64,
}

impl IngestServer {
    pub fn new(window_s: u64) -> Result<Self, AirqError> {
        if window_s == 0 {
            return Err(AirqError::NonPositiveWindow);
        }
        Ok(IngestServer { window_s, devices: BTreeMap::new(), dropped: 0, last_ts: 0 })
    }

    pub fn window_s(&self) -> u64 {
        self.window_s
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Attaches map coordinates to a MAC (registering it if new).
    pub fn provision(&mut self, mac: MacAddress, lat: f64, lon: f64) {
        self.devices.entry(mac).or_default().location = Some((lat, lon));
    }

    pub fn ingest(&mut self, report: AqReport) {
        self.last_ts = self.last_ts.max(report.ts_s);
        let state = self.devices.entry(report.mac).or_default();
        state.reports.push_back((report.ts_s, report.pm25));
        let horizon = self.last_ts.saturating_sub(self.window_s);
        while state.reports.front().is_some_and(|(ts, _)| *ts < horizon) {
            state.reports.pop_front();
        }
    }

    /// Returns true when the line was accepted; malformed lines only bump
    /// the drop counter.
    pub fn ingest_line(&mut self, line: &str) -> bool {
        match parse_report(line) {
            Ok(report) => {
                self.ingest(report);
                true
            }
            Err(_) => {
                self.dropped += 1;
                false
            }
        }
    }

    /// Averages reports with timestamp in [now-window, now]. Devices with
    /// nothing in the window keep their row, flagged by count 0.
    pub fn snapshot(&self, now_s: u64, window_s: u64) -> Result<MapSnapshot, AirqError> {
        if window_s == 0 {
            return Err(AirqError::NonPositiveWindow);
        }
        let from = now_s.saturating_sub(window_s);
        let mut cells = Vec::with_capacity(self.devices.len());
        for (mac, state) in &self.devices {
            let mut sum = 0.0;
            let mut count: u32 = 0;
            for (ts, pm25) in &state.reports {
                if *ts >= from && *ts <= now_s {
                    sum += pm25;
                    count += 1;
                }
            }
            cells.push(MapCell {
                mac: mac.to_string(),
                lat: state.location.map(|(lat, _)| lat),
                lon: state.location.map(|(_, lon)| lon),
                avg_pm25: if count > 0 { Some(sum / f64::from(count)) } else { None },
                report_count: count,
            });
        }
        Ok(MapSnapshot { now_s, window_s, cells })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub mac: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub avg_pm25: Option<f64>,
    pub report_count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub now_s: u64,
    pub window_s: u64,
    pub cells: Vec<MapCell>,
}

/// Fixed display scale for the dot map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AqiBand {
    Green,
    Yellow,
    Orange,
    Red,
}

impl AqiBand {
    pub fn css_color(self) -> &'static str {
        match self {
            AqiBand::Green => "#2e7d32",
            AqiBand::Yellow => "#f9a825",
            AqiBand::Orange => "#ef6c00",
            AqiBand::Red => "#c62828",
        }
    }
}

pub fn pm25_band(avg: f64) -> AqiBand {
    if avg <= 12.0 {
        AqiBand::Green
    } else if avg <= 35.4 {
        AqiBand::Yellow
    } else if avg <= 150.0 {
        AqiBand::Orange
    } else {
        AqiBand::Red
    }
}

const TIMER_TICK: &[u8] = b"TICK";

fn is_tick(from: &str, payload: &[u8]) -> bool {
    from.is_empty() && payload == TIMER_TICK
}

/// Installs the ingestion actor. Lines arrive sealed; each is acked with
/// `200 OK` or `400 BAD`.
pub fn register_aq_server(
    sim: &mut Simulation,
    endpoint: &str,
    window_s: u64,
) -> Result<Rc<RefCell<IngestServer>>, AirqError> {
    let server = Rc::new(RefCell::new(IngestServer::new(window_s)?));
    let state = Rc::clone(&server);
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            if let Some((from, payload)) = open(datagram) {
                let from = from.to_string();
                if let Ok(line) = core::str::from_utf8(payload) {
                    let ok = state.borrow_mut().ingest_line(line);
                    let ack: &[u8] = if ok { b"200 OK" } else { b"400 BAD" };
                    let sealed = seal(ctx.self_id(), ack);
                    let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &from, &sealed);
                }
            }
            Ok(())
        }),
    )?;
    Ok(server)
}

/// Installs a sensor actor that posts one report every interval. Noise
/// for the `Noisy` process comes from the endpoint-named RNG stream.
pub fn register_aq_device(
    sim: &mut Simulation,
    endpoint: &str,
    server_endpoint: &str,
    device: AqDevice,
) -> Result<(), AirqError> {
    let server = server_endpoint.to_string();
    let stream = endpoint.to_string();
    let mut k: u64 = 0;
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            let Some((from, payload)) = open(datagram) else { return Ok(()) };
            if !is_tick(from, payload) {
                return Ok(());
            }
            let noise = 2.0 * ctx.rng_f64(&stream) - 1.0;
            let report = AqReport {
                mac: device.mac,
                pm25: device.process.sample(k, noise),
                ts_s: ctx.now_us() / 1_000_000,
            };
            k += 1;
            let sealed = seal(ctx.self_id(), format_report(&report).as_bytes());
            let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &server, &sealed);
            let interval = device.interval_s * 1_000_000;
            let _ = ctx.send_after(interval, ctx.self_id().to_string().as_str(), &seal("", TIMER_TICK));
            Ok(())
        }),
    )?;
    sim.schedule(0, endpoint, &seal("", TIMER_TICK))?;
    Ok(())
}

/// Outcome bookkeeping for one pollution run.
#[derive(Clone, Debug, PartialEq)]
pub struct PolluteReport {
    pub victim: MacAddress,
    pub fake_pm25: f64,
    pub frames_planned: u64,
    pub frames_sent: u64,
}

/// Starts an injector that forges the victim's MAC, emitting `fake_pm25`
/// at `rate_hz` for `duration_s`. No credential is needed anywhere: the
/// MAC is the whole identity.
pub fn attack_pollute(
    sim: &mut Simulation,
    endpoint: &str,
    server_endpoint: &str,
    victim: MacAddress,
    fake_pm25: f64,
    rate_hz: f64,
    duration_s: u64,
) -> Result<Rc<RefCell<PolluteReport>>, AirqError> {
    let frames_planned = if rate_hz > 0.0 { (duration_s as f64 * rate_hz) as u64 } else { 0 };
    let report = Rc::new(RefCell::new(PolluteReport {
        victim,
        fake_pm25,
        frames_planned,
        frames_sent: 0,
    }));
    let state = Rc::clone(&report);
    let server = server_endpoint.to_string();
    let period_us = if rate_hz > 0.0 { (1_000_000.0 / rate_hz) as u64 } else { 0 };
    sim.register_actor(
        endpoint,
        Box::new(move |ctx, datagram| {
            let Some((from, payload)) = open(datagram) else { return Ok(()) };
            if !is_tick(from, payload) {
                return Ok(());
            }
            let mut st = state.borrow_mut();
            if st.frames_sent >= st.frames_planned {
                return Ok(());
            }
            let forged = AqReport {
                mac: st.victim,
                pm25: st.fake_pm25,
                ts_s: ctx.now_us() / 1_000_000,
            };
            let sealed = seal(ctx.self_id(), format_report(&forged).as_bytes());
            let _ = ctx.send_after(DEFAULT_LINK_LATENCY_US, &server, &sealed);
            st.frames_sent += 1;
            if st.frames_sent < st.frames_planned {
                let _ = ctx.send_after(period_us, ctx.self_id().to_string().as_str(), &seal("", TIMER_TICK));
            }
            Ok(())
        }),
    )?;
    if frames_planned > 0 {
        sim.schedule(0, endpoint, &seal("", TIMER_TICK))?;
    }
    Ok(report)
}
