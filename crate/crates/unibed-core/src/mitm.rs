//! Man-in-the-middle harness for the simulated fieldbus: cut the bus into
//! two segments, bridge them with a tap pair, and rewrite temperature
//! telegrams in flight.
//!
//! The policy is applied to traffic flowing from the sensor segment toward
//! the controller segment; the reverse direction always passes through.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use crate::knx::{
    decode_dpt9, decode_telegram, encode_dpt9, encode_telegram, Apci, GroupAddress, IndividualAddress,
    KnxBus, KnxError, Telegram,
};
use crate::sim::{HandlerFault, SimError, Simulation};
use crate::topo::{IoClass, Topology};
use crate::util::to_hex;

/// One simulation tick per direction; the bridge between the taps is
/// abstracted away.
pub const FORWARD_LATENCY_US: u64 = 1_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MitmError {
    LinkMissing(String),
    NotKnxLink { link: String, io_class: IoClass },
    CutDoesNotPartition(String),
    PayloadNotTwoBytes { len: usize },
    Knx(KnxError),
    Sim(SimError),
}

impl fmt::Display for MitmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MitmError::LinkMissing(id) => write!(f, "link {:?} not in topology", id),
            MitmError::NotKnxLink { link, io_class } => {
                write!(f, "link {:?} is {}, tap requires a knx link", link, io_class)
            }
            MitmError::CutDoesNotPartition(id) => {
                write!(f, "cutting link {:?} leaves the graph connected", id)
            }
            MitmError::PayloadNotTwoBytes { len } => {
                write!(f, "temperature rewrite needs a 2-byte payload, got {}", len)
            }
            MitmError::Knx(e) => write!(f, "{}", e),
            MitmError::Sim(e) => write!(f, "{}", e),
        }
    }
}

impl core::error::Error for MitmError {}

impl From<KnxError> for MitmError {
    fn from(e: KnxError) -> Self {
        MitmError::Knx(e)
    }
}

impl From<SimError> for MitmError {
    fn from(e: SimError) -> Self {
        MitmError::Sim(e)
    }
}

/// Predicate over telegram headers; `None` fields match anything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TelegramMatch {
    pub source: Option<IndividualAddress>,
    pub dest: Option<GroupAddress>,
    pub apci: Option<Apci>,
}

impl TelegramMatch {
    pub fn any() -> Self {
        TelegramMatch::default()
    }

    pub fn matches(&self, t: &Telegram) -> bool {
        self.source.map_or(true, |s| s == t.source)
            && self.dest.map_or(true, |d| d == t.dest)
            && self.apci.map_or(true, |a| a == t.apci)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyMode {
    Passthrough,
    Bias,
    Drop,
    /// Retransmits the previously seen matching telegram instead of the new
    /// arrival (one-sample staleness); the first match passes unchanged.
    /// Extension beyond the passthrough/bias/drop set.
    ReplayLast,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InjectionPolicy {
    pub mode: PolicyMode,
    /// Used in bias mode only.
    pub bias_celsius: f64,
    pub matcher: TelegramMatch,
}

impl InjectionPolicy {
    pub fn passthrough() -> Self {
        InjectionPolicy { mode: PolicyMode::Passthrough, bias_celsius: 0.0, matcher: TelegramMatch::any() }
    }

    pub fn bias(bias_celsius: f64, matcher: TelegramMatch) -> Self {
        InjectionPolicy { mode: PolicyMode::Bias, bias_celsius, matcher }
    }

    pub fn drop_all() -> Self {
        InjectionPolicy { mode: PolicyMode::Drop, bias_celsius: 0.0, matcher: TelegramMatch::any() }
    }
}

/// Returns a copy of `t` carrying `decode(payload) + bias`, re-encoded and
/// re-checksummed on the next encode. All other fields are preserved.
pub fn rewrite_temperature(t: &Telegram, bias_celsius: f64) -> Result<Telegram, MitmError> {
    if t.payload.len() != 2 {
        return Err(MitmError::PayloadNotTwoBytes { len: t.payload.len() });
    }
    let old = decode_dpt9([t.payload[0], t.payload[1]]);
    let raw = encode_dpt9(old + bias_celsius)?;
    let mut out = t.clone();
    out.payload = raw.to_vec();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    SensorToController,
    ControllerToSensor,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::SensorToController => f.write_str("sensor->controller"),
            Direction::ControllerToSensor => f.write_str("controller->sensor"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwardRecord {
    pub time_us: u64,
    pub direction: Direction,
    pub original: Vec<u8>,
    /// None when the policy dropped the telegram.
    pub forwarded: Option<Vec<u8>>,
    /// pass, bias, drop, replay or skip.
    pub note: &'static str,
}

struct TapState {
    policy: InjectionPolicy,
    last_matching: Option<Vec<u8>>,
    log: Vec<ForwardRecord>,
}

/// The installed tap pair. Endpoint `a` listens on the sensor segment and
/// applies the policy toward the controller segment; endpoint `b` passes
/// the reverse direction through. Every arrival is forwarded at most once
/// and never duplicated.
pub struct TapPair {
    state: Rc<RefCell<TapState>>,
    tap_a: String,
    tap_b: String,
}

impl TapPair {
    /// Splits `bus` and bridges the two segments. `segment_b` lists the
    /// devices on the controller side; tap endpoints are registered as
    /// `<bus>/tap/a` and `<bus>/tap/b`.
    pub fn install(
        sim: &mut Simulation,
        bus: &KnxBus,
        segment_b: &[IndividualAddress],
        policy: InjectionPolicy,
    ) -> Result<TapPair, MitmError> {
        let state = Rc::new(RefCell::new(TapState { policy, last_matching: None, log: Vec::new() }));
        let tap_a = format!("{}/tap/a", bus.ingress());
        let tap_b = format!("{}/tap/b", bus.ingress());

        let st = Rc::clone(&state);
        let inject_b = bus.inject_endpoint_b();
        sim.register_actor(
            &tap_a,
            Box::new(move |ctx, frame| {
                let (out, note) = {
                    let mut s = st.borrow_mut();
                    apply_policy(&mut s, frame)
                };
                let forwarded = match out {
                    Some(bytes) => {
                        ctx.send_after(FORWARD_LATENCY_US, &inject_b, &bytes)
                            .map_err(|e| HandlerFault(format!("tap forward: {}", e)))?;
                        Some(bytes)
                    }
                    None => None,
                };
                st.borrow_mut().log.push(ForwardRecord {
                    time_us: ctx.now_us(),
                    direction: Direction::SensorToController,
                    original: frame.to_vec(),
                    forwarded,
                    note,
                });
                Ok(())
            }),
        )?;

        let st = Rc::clone(&state);
        let inject_a = bus.inject_endpoint_a();
        sim.register_actor(
            &tap_b,
            Box::new(move |ctx, frame| {
                ctx.send_after(FORWARD_LATENCY_US, &inject_a, frame)
                    .map_err(|e| HandlerFault(format!("tap forward: {}", e)))?;
                st.borrow_mut().log.push(ForwardRecord {
                    time_us: ctx.now_us(),
                    direction: Direction::ControllerToSensor,
                    original: frame.to_vec(),
                    forwarded: Some(frame.to_vec()),
                    note: "pass",
                });
                Ok(())
            }),
        )?;

        bus.split(sim, segment_b, &tap_a, &tap_b)?;
        Ok(TapPair { state, tap_a, tap_b })
    }

    pub fn tap_a_endpoint(&self) -> &str {
        &self.tap_a
    }

    pub fn tap_b_endpoint(&self) -> &str {
        &self.tap_b
    }

    pub fn forward_log(&self) -> Vec<ForwardRecord> {
        self.state.borrow().log.clone()
    }

    /// One line per forwarded frame:
    /// `timestamp_us<TAB>direction<TAB>uppercase-hex`, LF endings. Dropped
    /// arrivals leave no line.
    pub fn export_forward_log(&self) -> String {
        let mut out = String::new();
        for r in self.state.borrow().log.iter() {
            if let Some(bytes) = &r.forwarded {
                out.push_str(&format!("{}\t{}\t{}\n", r.time_us, r.direction, to_hex(bytes)));
            }
        }
        out
    }
}

fn apply_policy(s: &mut TapState, frame: &[u8]) -> (Option<Vec<u8>>, &'static str) {
    let t = match decode_telegram(frame) {
        Ok(t) => t,
        // Not dissectable, so not matchable; carry it across untouched.
        Err(_) => return (Some(frame.to_vec()), "skip"),
    };
    if !s.policy.matcher.matches(&t) {
        return (Some(frame.to_vec()), "pass");
    }
    match s.policy.mode {
        PolicyMode::Passthrough => (Some(frame.to_vec()), "pass"),
        PolicyMode::Drop => (None, "drop"),
        PolicyMode::Bias => {
            let biasable = matches!(t.apci, Apci::GroupValueWrite | Apci::GroupValueResponse)
                && t.payload.len() == 2;
            if !biasable {
                return (Some(frame.to_vec()), "skip");
            }
            match rewrite_temperature(&t, s.policy.bias_celsius)
                .and_then(|m| encode_telegram(&m).map_err(MitmError::from))
            {
                Ok(bytes) => (Some(bytes), "bias"),
                Err(_) => (Some(frame.to_vec()), "skip"),
            }
        }
        PolicyMode::ReplayLast => {
            let out = s.last_matching.clone().unwrap_or_else(|| frame.to_vec());
            s.last_matching = Some(frame.to_vec());
            (Some(out), "replay")
        }
    }
}

/// Topology-aware installation: validates that `cut_link` is a knx link,
/// derives each bus device's segment from its side of the cut, and installs
/// the tap pair. `device_map` ties topology node ids to bus addresses; the
/// side containing the link's `a` endpoint becomes the sensor segment.
pub fn deploy_tap(
    sim: &mut Simulation,
    bus: &KnxBus,
    topology: &Topology,
    cut_link: &str,
    device_map: &BTreeMap<String, IndividualAddress>,
    policy: InjectionPolicy,
) -> Result<TapPair, MitmError> {
    let link = topology.link(cut_link).ok_or_else(|| MitmError::LinkMissing(cut_link.to_string()))?;
    if link.io_class != IoClass::Knx {
        return Err(MitmError::NotKnxLink { link: cut_link.to_string(), io_class: link.io_class });
    }
    let (side_a, side_b) = topology
        .sides_of_cut(cut_link)
        .map_err(|_| MitmError::LinkMissing(cut_link.to_string()))?;
    if side_a.intersection(&side_b).next().is_some() {
        return Err(MitmError::CutDoesNotPartition(cut_link.to_string()));
    }
    let segment_b: Vec<IndividualAddress> = device_map
        .iter()
        .filter(|(node, _)| side_b.contains(*node))
        .map(|(_, addr)| *addr)
        .collect();
    TapPair::install(sim, bus, &segment_b, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topo::{Link, Node, NodeKind};
    use std::vec;
    use std::vec::Vec;

    fn addr(s: &str) -> IndividualAddress {
        s.parse().unwrap()
    }

    fn group(s: &str) -> GroupAddress {
        s.parse().unwrap()
    }

    fn temp_frame(src: &str, celsius: f64) -> Vec<u8> {
        let t = Telegram::write(addr(src), group("2/1/0"), encode_dpt9(celsius).unwrap().to_vec()).unwrap();
        encode_telegram(&t).unwrap()
    }

    /// Sensor on segment a, controller on segment b, tap installed.
    fn rig(policy: InjectionPolicy) -> (Simulation, KnxBus, TapPair) {
        let mut sim = Simulation::new(11);
        let bus = KnxBus::new(&mut sim, "bus").unwrap();
        for ep in ["sensor", "sensor2", "controller"] {
            sim.register_endpoint(ep).unwrap();
        }
        bus.attach(&sim, addr("1.1.10"), "sensor").unwrap();
        bus.attach(&sim, addr("1.1.11"), "sensor2").unwrap();
        bus.attach(&sim, addr("1.1.20"), "controller").unwrap();
        let tap = TapPair::install(&mut sim, &bus, &[addr("1.1.20")], policy).unwrap();
        (sim, bus, tap)
    }

    #[test]
    fn passthrough_preserves_frames_and_shifts_timestamps() {
        let (mut sim, bus, tap) = rig(InjectionPolicy::passthrough());
        for k in 1..=5u64 {
            sim.run_until(k * 60_000_000).unwrap();
            bus.send(&mut sim, &temp_frame("1.1.10", 20.0 + k as f64)).unwrap();
        }
        sim.run_until(400_000_000).unwrap();
        let dump = bus.dump();
        let seg0: Vec<_> = dump.iter().filter(|r| r.segment == 0).collect();
        let seg1: Vec<_> = dump.iter().filter(|r| r.segment == 1).collect();
        assert_eq!(seg0.len(), 5);
        assert_eq!(seg1.len(), 5);
        for (x, y) in seg0.iter().zip(seg1.iter()) {
            assert_eq!(x.bytes, y.bytes);
            assert_eq!(y.time_us - x.time_us, 2 * FORWARD_LATENCY_US);
        }
        let received = sim.drain_inbox("controller");
        assert_eq!(received.len(), 5);
        assert_eq!(tap.forward_log().len(), 5);
    }

    #[test]
    fn drop_policy_starves_the_controller() {
        let (mut sim, bus, tap) = rig(InjectionPolicy::drop_all());
        for k in 1..=3u64 {
            sim.run_until(k * 1_000_000).unwrap();
            bus.send(&mut sim, &temp_frame("1.1.10", 21.0)).unwrap();
        }
        sim.run_until(10_000_000).unwrap();
        assert_eq!(sim.drain_inbox("controller").len(), 0);
        assert!(tap.forward_log().iter().all(|r| r.forwarded.is_none() && r.note == "drop"));
        assert_eq!(tap.export_forward_log(), "");
    }

    #[test]
    fn bias_rewrites_only_the_matched_source() {
        let matcher = TelegramMatch { source: Some(addr("1.1.10")), ..TelegramMatch::any() };
        let (mut sim, bus, tap) = rig(InjectionPolicy::bias(2.0, matcher));
        sim.run_until(1_000_000).unwrap();
        bus.send(&mut sim, &temp_frame("1.1.10", 21.0)).unwrap();
        sim.run_until(2_000_000).unwrap();
        bus.send(&mut sim, &temp_frame("1.1.11", 21.0)).unwrap();
        sim.run_until(10_000_000).unwrap();

        let received = sim.drain_inbox("controller");
        assert_eq!(received.len(), 2);
        let first = decode_telegram(&received[0].1).unwrap();
        assert_eq!(first.source, addr("1.1.10"));
        assert_eq!(first.payload, vec![0x0C, 0x7E]);
        assert_eq!(decode_dpt9([first.payload[0], first.payload[1]]), 23.0);
        assert_eq!(received[1].1, temp_frame("1.1.11", 21.0));
        for (_, frame) in &received {
            assert!(decode_telegram(frame).is_ok());
            assert_eq!(frame.iter().fold(0u8, |a, b| a ^ b), 0xFF);
        }
        let notes: Vec<&str> = tap.forward_log().iter().map(|r| r.note).collect();
        assert_eq!(notes, vec!["bias", "pass"]);
    }

    #[test]
    fn rewrite_goldens_and_errors() {
        let t = Telegram::write(addr("1.1.10"), group("2/1/0"), vec![0x0C, 0x1A]).unwrap();
        let up = rewrite_temperature(&t, 2.0).unwrap();
        assert_eq!(up.payload, vec![0x0C, 0x7E]);
        assert_eq!(up.source, t.source);
        assert_eq!(up.dest, t.dest);
        assert!(decode_telegram(&encode_telegram(&up).unwrap()).is_ok());

        let same = rewrite_temperature(&t, 0.0).unwrap();
        assert_eq!(encode_telegram(&same).unwrap(), encode_telegram(&t).unwrap());

        let short = Telegram::write(addr("1.1.10"), group("2/1/0"), vec![0x01]).unwrap();
        assert_eq!(rewrite_temperature(&short, 1.0), Err(MitmError::PayloadNotTwoBytes { len: 1 }));
    }

    #[test]
    fn bias_additivity_within_quantization() {
        let mut rng = crate::sim::RngStream::derive(3, "bias-prop");
        for _ in 0..500 {
            let v = (rng.next_f64() - 0.5) * 80.0;
            let bias = (rng.next_f64() - 0.5) * 10.0;
            let t = Telegram::write(addr("1.1.10"), group("2/1/0"), encode_dpt9(v).unwrap().to_vec()).unwrap();
            let out = rewrite_temperature(&t, bias).unwrap();
            let e = (out.payload[0] >> 3) & 0x0F;
            let sensed = decode_dpt9([out.payload[0], out.payload[1]]);
            let stored = decode_dpt9([t.payload[0], t.payload[1]]);
            let step = 0.01 * (1u32 << e) as f64;
            assert!(
                libm::fabs(sensed - (stored + bias)) <= step / 2.0 + 1e-9,
                "v={} bias={} sensed={}",
                v,
                bias,
                sensed
            );
        }
    }

    #[test]
    fn replay_last_is_one_sample_stale() {
        let (mut sim, bus, _tap) = rig(InjectionPolicy {
            mode: PolicyMode::ReplayLast,
            bias_celsius: 0.0,
            matcher: TelegramMatch::any(),
        });
        for (k, v) in [21.0, 22.0, 23.0].iter().enumerate() {
            sim.run_until((k as u64 + 1) * 1_000_000).unwrap();
            bus.send(&mut sim, &temp_frame("1.1.10", *v)).unwrap();
        }
        sim.run_until(10_000_000).unwrap();
        let got: Vec<f64> = sim
            .drain_inbox("controller")
            .iter()
            .map(|(_, f)| {
                let t = decode_telegram(f).unwrap();
                decode_dpt9([t.payload[0], t.payload[1]])
            })
            .collect();
        assert_eq!(got, vec![21.0, 21.0, 22.0]);
    }

    #[test]
    fn matched_but_unsuitable_payload_passes_with_skip() {
        let (mut sim, bus, tap) = rig(InjectionPolicy::bias(3.0, TelegramMatch::any()));
        let odd = Telegram::write(addr("1.1.10"), group("2/1/0"), vec![0x01]).unwrap();
        bus.send(&mut sim, &encode_telegram(&odd).unwrap()).unwrap();
        sim.run_until(10_000_000).unwrap();
        let received = sim.drain_inbox("controller");
        assert_eq!(received.len(), 1);
        assert_eq!(received[0].1, encode_telegram(&odd).unwrap());
        assert_eq!(tap.forward_log()[0].note, "skip");
    }

    #[test]
    fn reverse_direction_always_passes_through() {
        let (mut sim, bus, tap) = rig(InjectionPolicy::drop_all());
        let read = Telegram::read(addr("1.1.20"), group("2/1/0"));
        bus.send(&mut sim, &encode_telegram(&read).unwrap()).unwrap();
        sim.run_until(10_000_000).unwrap();
        let got = sim.drain_inbox("sensor");
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].1, encode_telegram(&read).unwrap());
        let log = tap.forward_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].direction, Direction::ControllerToSensor);
    }

    #[test]
    fn forward_log_export_format() {
        let (mut sim, bus, tap) = rig(InjectionPolicy::passthrough());
        sim.run_until(500).unwrap();
        bus.send(&mut sim, &temp_frame("1.1.10", 21.0)).unwrap();
        sim.run_until(10_000).unwrap();
        assert_eq!(
            tap.export_forward_log(),
            "1500\tsensor->controller\tBC110A1100E300800C1A3C\n"
        );
    }

    fn bus_topology() -> (Topology, BTreeMap<String, IndividualAddress>) {
        let mut t = Topology::default();
        t.nodes = vec![
            Node::new("sensor", NodeKind::Sensor),
            Node::new("controller", NodeKind::Controller),
        ];
        t.links = vec![Link::new("seg", "sensor", "controller", IoClass::Knx)];
        let mut map = BTreeMap::new();
        map.insert("sensor".to_string(), addr("1.1.10"));
        map.insert("controller".to_string(), addr("1.1.20"));
        (t, map)
    }

    #[test]
    fn deploy_tap_validates_link_class_and_splits_by_side() {
        let (topo, map) = bus_topology();
        let mut sim = Simulation::new(2);
        let bus = KnxBus::new(&mut sim, "bus").unwrap();
        sim.register_endpoint("sensor").unwrap();
        sim.register_endpoint("controller").unwrap();
        bus.attach(&sim, addr("1.1.10"), "sensor").unwrap();
        bus.attach(&sim, addr("1.1.20"), "controller").unwrap();
        deploy_tap(&mut sim, &bus, &topo, "seg", &map, InjectionPolicy::passthrough()).unwrap();

        bus.send(&mut sim, &temp_frame("1.1.10", 21.0)).unwrap();
        sim.run_until(10_000).unwrap();
        // Delivered across the cut through the tap, so two dump records.
        assert_eq!(bus.dump().len(), 2);
        assert_eq!(sim.drain_inbox("controller").len(), 1);
    }

    #[test]
    fn deploy_tap_rejects_wrong_link_class() {
        let (mut topo, map) = bus_topology();
        topo.links[0].io_class = IoClass::Ethernet;
        let mut sim = Simulation::new(2);
        let bus = KnxBus::new(&mut sim, "bus").unwrap();
        assert_eq!(
            deploy_tap(&mut sim, &bus, &topo, "seg", &map, InjectionPolicy::passthrough()).err(),
            Some(MitmError::NotKnxLink { link: "seg".to_string(), io_class: IoClass::Ethernet })
        );
        assert!(matches!(
            deploy_tap(&mut sim, &bus, &topo, "ghost", &map, InjectionPolicy::passthrough()).err(),
            Some(MitmError::LinkMissing(_))
        ));
    }
}
