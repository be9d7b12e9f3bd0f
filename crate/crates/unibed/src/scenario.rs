//! Scenario file schema and validation. A scenario is a TOML document
//! naming the actors present at time zero, a time-ordered attack script,
//! the assertions checked after the run, and which artifacts to emit.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unibed_core::airq::Pm25Process;
use unibed_core::topo::Topology;

#[derive(Debug)]
pub enum ScenarioError {
    Io(String),
    Parse(String),
    /// Section name plus what failed to resolve.
    Invalid { section: String, problem: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io(e) => write!(f, "cannot read scenario: {}", e),
            ScenarioError::Parse(e) => write!(f, "scenario does not parse: {}", e),
            ScenarioError::Invalid { section, problem } => {
                write!(f, "invalid scenario ({}): {}", section, problem)
            }
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActorSpec {
    AqServer {
        id: String,
        window_s: u64,
        /// Provisioned sensors: mac -> [lat, lon].
        #[serde(default)]
        provision: Vec<AqProvision>,
    },
    AqDevice {
        id: String,
        server: String,
        mac: String,
        lat: f64,
        lon: f64,
        interval_s: u64,
        process: Pm25Process,
    },
    PlugRelay {
        id: String,
    },
    Plug {
        id: String,
        server: String,
        mac: String,
        password: String,
        #[serde(default)]
        lockout_s: Option<u64>,
        #[serde(default)]
        heartbeat_s: Option<u64>,
    },
    KnxBus {
        id: String,
    },
    /// Bus device that broadcasts a DPT 9.001 group write on a fixed
    /// period. The value follows a triangle wave so consecutive frames
    /// differ without any platform-dependent math.
    KnxSensor {
        id: String,
        bus: String,
        addr: String,
        group: String,
        base_c: f64,
        #[serde(default)]
        amplitude_c: f64,
        #[serde(default)]
        wave_period_s: Option<u64>,
        period_s: u64,
    },
    /// Passive bus endpoint whose received frames become an artifact.
    KnxMonitor {
        id: String,
        bus: String,
        addr: String,
    },
    BacnetDevice {
        id: String,
        instance: u32,
        name: String,
        vendor: u8,
        #[serde(default)]
        objects: Vec<BacnetObjectSpec>,
    },
}

impl ActorSpec {
    pub fn id(&self) -> &str {
        match self {
            ActorSpec::AqServer { id, .. }
            | ActorSpec::AqDevice { id, .. }
            | ActorSpec::PlugRelay { id }
            | ActorSpec::Plug { id, .. }
            | ActorSpec::KnxBus { id }
            | ActorSpec::KnxSensor { id, .. }
            | ActorSpec::KnxMonitor { id, .. }
            | ActorSpec::BacnetDevice { id, .. } => id,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AqProvision {
    pub mac: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BacnetObjectSpec {
    /// "analog_input" or "analog_output".
    pub object: String,
    pub instance: u32,
    pub name: String,
    #[serde(default)]
    pub present_value: f32,
    #[serde(default)]
    pub writable: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionSpec {
    /// Forge reports under the victim's sensor identity.
    Pollute {
        at_s: f64,
        attacker: String,
        server: String,
        victim_mac: String,
        fake_pm25: f64,
        rate_hz: f64,
        duration_s: u64,
        report: String,
    },
    /// Freeze the ingest server's map view into an artifact.
    Snapshot {
        at_s: f64,
        server: String,
        label: String,
        now_s: u64,
        window_s: u64,
    },
    /// Probe a MAC suffix range with one password guess.
    ScanPlugs {
        at_s: f64,
        server: String,
        oui: String,
        suffix_start: u32,
        suffix_count: u32,
        guess: String,
        #[serde(default)]
        timeout_ms: Option<u64>,
        report: String,
    },
    /// Dictionary attack against one plug's password.
    Bruteforce {
        at_s: f64,
        server: String,
        mac: String,
        /// Explicit candidate list, or the builtin "digits4" sweep.
        #[serde(default)]
        dictionary: Vec<String>,
        #[serde(default)]
        dictionary_digits4: bool,
        #[serde(default)]
        timeout_ms: Option<u64>,
        report: String,
    },
    /// Register a fake plug over the victim's MAC and harvest what the
    /// relay forwards to it.
    Spoof {
        at_s: f64,
        fake: String,
        server: String,
        victim_mac: String,
        #[serde(default)]
        lockout_s: Option<u64>,
        report: String,
    },
    /// Start an app client that authenticates and issues one switch
    /// command, retrying until acknowledged.
    StartApp {
        at_s: f64,
        id: String,
        server: String,
        mac: String,
        password: String,
        want_on: bool,
    },
    /// Authenticate with the password captured by an earlier spoof and
    /// send one switch command.
    CommandWithCaptured {
        at_s: f64,
        server: String,
        spoof_report: String,
        mac: String,
        on: bool,
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
    /// Split a bus at a topology link and bridge it with a policy tap.
    InstallTap {
        at_s: f64,
        bus: String,
        cut_link: String,
        policy: TapPolicySpec,
        report: String,
    },
    /// Send one telegram onto a bus.
    KnxSend {
        at_s: f64,
        bus: String,
        frame: KnxFrameSpec,
    },
    /// Thermostat energy sweep over a bias grid; emits a curve.
    BiasSweep {
        at_s: f64,
        biases: Vec<f64>,
        curve: String,
    },
    /// Probe endpoints for discovery responses.
    BacnetScan {
        at_s: f64,
        targets: Vec<String>,
        #[serde(default)]
        timeout_ms: Option<u64>,
        report: String,
    },
    /// Walk a device's object list reading names and present-values.
    BacnetEnumerate {
        at_s: f64,
        endpoint: String,
        device_instance: u32,
        #[serde(default)]
        timeout_ms: Option<u64>,
        report: String,
    },
    /// Write an analog present-value, then read it back.
    BacnetWrite {
        at_s: f64,
        endpoint: String,
        object: String,
        instance: u32,
        value: f32,
        #[serde(default)]
        timeout_ms: Option<u64>,
        report: String,
    },
    /// Mutation campaign against one decoder.
    Fuzz {
        at_s: f64,
        target: String,
        executions: u64,
        report: String,
    },
}

impl ActionSpec {
    pub fn at_s(&self) -> f64 {
        match self {
            ActionSpec::Pollute { at_s, .. }
            | ActionSpec::Snapshot { at_s, .. }
            | ActionSpec::ScanPlugs { at_s, .. }
            | ActionSpec::Bruteforce { at_s, .. }
            | ActionSpec::Spoof { at_s, .. }
            | ActionSpec::StartApp { at_s, .. }
            | ActionSpec::CommandWithCaptured { at_s, .. }
            | ActionSpec::InstallTap { at_s, .. }
            | ActionSpec::KnxSend { at_s, .. }
            | ActionSpec::BiasSweep { at_s, .. }
            | ActionSpec::BacnetScan { at_s, .. }
            | ActionSpec::BacnetEnumerate { at_s, .. }
            | ActionSpec::BacnetWrite { at_s, .. }
            | ActionSpec::Fuzz { at_s, .. } => *at_s,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TapPolicySpec {
    /// "passthrough", "bias" or "drop".
    pub mode: String,
    #[serde(default)]
    pub bias_c: Option<f64>,
    /// Only telegrams from this source are rewritten; empty matches all.
    #[serde(default)]
    pub match_source: Option<String>,
    #[serde(default)]
    pub match_group: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KnxFrameSpec {
    /// "write", "read" or "response".
    pub kind: String,
    pub source: String,
    pub group: String,
    #[serde(default)]
    pub value_c: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum AssertSpec {
    SnapshotAvg {
        label: String,
        mac: String,
        #[serde(default)]
        below: Option<f64>,
        #[serde(default)]
        above: Option<f64>,
    },
    SnapshotCount {
        label: String,
        mac: String,
        equals: u32,
    },
    ScanVerdict {
        report: String,
        mac: String,
        /// "online", "offline_or_absent" or "exists_wrong_password".
        equals: String,
    },
    ScanCounts {
        report: String,
        online: u64,
        offline_or_absent: u64,
        exists_wrong_password: u64,
    },
    BruteforceFound {
        report: String,
        password: String,
        attempts: u64,
    },
    SpoofCaptured {
        report: String,
        equals: String,
    },
    PlugOn {
        actor: String,
        equals: bool,
    },
    AppAcked {
        actor: String,
        equals: bool,
    },
    CurveZeroAtZero {
        curve: String,
    },
    CurveNondecreasing {
        curve: String,
        column: String,
    },
    KnxDumpDecodable {
        bus: String,
        min_frames: u64,
    },
    TapBias {
        report: String,
        bias_c: f64,
        tol_c: f64,
        min_frames: u64,
    },
    TapPassthroughIdentical {
        report: String,
        min_frames: u64,
    },
    BacnetVerdict {
        report: String,
        endpoint: String,
        /// "bacnet_device", "no_response" or "non_bacnet".
        equals: String,
    },
    BacnetReadback {
        report: String,
        equals: f32,
    },
    BacnetObjectCount {
        report: String,
        equals: u64,
    },
    FuzzFaults {
        report: String,
        equals: u64,
    },
    PolluteSent {
        report: String,
        equals: u64,
    },
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dispatch_log: bool,
    /// Also convert each bus dump to a capture file with the private
    /// link type 147.
    #[serde(default)]
    pub pcap: bool,
    /// Render an SVG next to every curve with a known header.
    #[serde(default)]
    pub plots: bool,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Master seed; every run derives all randomness from it.
    pub seed: u64,
    pub duration_s: u64,
    #[serde(default)]
    pub topology: Option<Topology>,
    /// Topology node id -> bus individual address, for tap deployment.
    #[serde(default)]
    pub device_map: std::collections::BTreeMap<String, String>,
    #[serde(default)]
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub script: Vec<ActionSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default)]
    pub assertions: Vec<AssertSpec>,
}

pub struct LoadedScenario {
    pub scenario: Scenario,
    /// Raw file bytes, hashed into the run manifest.
    pub raw: Vec<u8>,
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let raw = fs::read(path).map_err(|e| ScenarioError::Io(format!("{}: {}", path.display(), e)))?;
    let text = std::str::from_utf8(&raw)
        .map_err(|_| ScenarioError::Parse("scenario file is not UTF-8".into()))?;
    let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    validate(&scenario)?;
    Ok(LoadedScenario { scenario, raw })
}

fn invalid(section: &str, problem: String) -> ScenarioError {
    ScenarioError::Invalid { section: section.into(), problem }
}

/// Structural checks: unique actor ids, script references resolving to
/// actors of the right kind, topology references resolving, assertion
/// references resolving to script outputs.
pub fn validate(s: &Scenario) -> Result<(), ScenarioError> {
    if s.name.is_empty() {
        return Err(invalid("name", "empty scenario name".into()));
    }
    if s.duration_s == 0 {
        return Err(invalid("duration_s", "duration must be positive".into()));
    }

    let mut ids = BTreeSet::new();
    for a in &s.actors {
        if !ids.insert(a.id().to_string()) {
            return Err(invalid("actors", format!("duplicate actor id {:?}", a.id())));
        }
    }
    let kind_of = |id: &str| s.actors.iter().find(|a| a.id() == id);
    let expect_kind = |section: &str, id: &str, want: &str| -> Result<(), ScenarioError> {
        match kind_of(id) {
            None => Err(invalid(section, format!("unknown actor {:?}", id))),
            Some(a) => {
                let ok = matches!(
                    (a, want),
                    (ActorSpec::AqServer { .. }, "aq_server")
                        | (ActorSpec::PlugRelay { .. }, "plug_relay")
                        | (ActorSpec::KnxBus { .. }, "knx_bus")
                        | (ActorSpec::BacnetDevice { .. }, "bacnet_device")
                        | (ActorSpec::Plug { .. }, "plug")
                );
                if ok {
                    Ok(())
                } else {
                    Err(invalid(section, format!("actor {:?} is not a {}", id, want)))
                }
            }
        }
    };

    for a in &s.actors {
        match a {
            ActorSpec::AqDevice { id, server, mac, interval_s, .. } => {
                expect_kind("actors", server, "aq_server")?;
                parse_mac("actors", id, mac)?;
                if *interval_s == 0 {
                    return Err(invalid("actors", format!("{}: zero interval", id)));
                }
            }
            ActorSpec::AqServer { id, window_s, provision, .. } => {
                if *window_s == 0 {
                    return Err(invalid("actors", format!("{}: zero window", id)));
                }
                for p in provision {
                    parse_mac("actors", id, &p.mac)?;
                }
            }
            ActorSpec::Plug { id, server, mac, .. } => {
                expect_kind("actors", server, "plug_relay")?;
                parse_mac("actors", id, mac)?;
            }
            ActorSpec::KnxSensor { id, bus, addr, group, period_s, .. } => {
                expect_kind("actors", bus, "knx_bus")?;
                parse_knx_addr("actors", id, addr)?;
                parse_knx_group("actors", id, group)?;
                if *period_s == 0 {
                    return Err(invalid("actors", format!("{}: zero period", id)));
                }
            }
            ActorSpec::KnxMonitor { id, bus, addr } => {
                expect_kind("actors", bus, "knx_bus")?;
                parse_knx_addr("actors", id, addr)?;
            }
            ActorSpec::BacnetDevice { id, instance, objects, .. } => {
                if *instance > 4_194_302 {
                    return Err(invalid("actors", format!("{}: device instance too large", id)));
                }
                for o in objects {
                    if o.object != "analog_input" && o.object != "analog_output" {
                        return Err(invalid(
                            "actors",
                            format!("{}: unsupported object class {:?}", id, o.object),
                        ));
                    }
                }
            }
            ActorSpec::PlugRelay { .. } | ActorSpec::KnxBus { .. } => {}
        }
    }

    let mut reports = BTreeSet::new();
    let mut curves = BTreeSet::new();
    let mut snapshots = BTreeSet::new();
    let mut started_apps = BTreeSet::new();
    for (i, act) in s.script.iter().enumerate() {
        let sec = format!("script[{}]", i);
        if !act.at_s().is_finite() || act.at_s() < 0.0 {
            return Err(invalid(&sec, "at_s must be finite and non-negative".into()));
        }
        match act {
            ActionSpec::Pollute { server, victim_mac, attacker, report, .. } => {
                expect_kind(&sec, server, "aq_server")?;
                parse_mac(&sec, attacker, victim_mac)?;
                if ids.contains(attacker) {
                    return Err(invalid(&sec, format!("attacker id {:?} collides with an actor", attacker)));
                }
                reports.insert(report.clone());
            }
            ActionSpec::Snapshot { server, label, window_s, .. } => {
                expect_kind(&sec, server, "aq_server")?;
                if *window_s == 0 {
                    return Err(invalid(&sec, "zero snapshot window".into()));
                }
                if !snapshots.insert(label.clone()) {
                    return Err(invalid(&sec, format!("duplicate snapshot label {:?}", label)));
                }
            }
            ActionSpec::ScanPlugs { server, oui, report, suffix_start, suffix_count, .. } => {
                expect_kind(&sec, server, "plug_relay")?;
                parse_oui(&sec, oui)?;
                let end = u64::from(*suffix_start) + u64::from(*suffix_count);
                if end > 1 << 24 {
                    return Err(invalid(&sec, "suffix range exceeds 24 bits".into()));
                }
                reports.insert(report.clone());
            }
            ActionSpec::Bruteforce { server, mac, dictionary, dictionary_digits4, report, .. } => {
                expect_kind(&sec, server, "plug_relay")?;
                parse_mac(&sec, "bruteforce", mac)?;
                if dictionary.is_empty() && !dictionary_digits4 {
                    return Err(invalid(&sec, "empty dictionary".into()));
                }
                reports.insert(report.clone());
            }
            ActionSpec::Spoof { server, victim_mac, fake, report, .. } => {
                expect_kind(&sec, server, "plug_relay")?;
                parse_mac(&sec, fake, victim_mac)?;
                if ids.contains(fake) {
                    return Err(invalid(&sec, format!("fake id {:?} collides with an actor", fake)));
                }
                reports.insert(report.clone());
            }
            ActionSpec::StartApp { id, server, mac, .. } => {
                expect_kind(&sec, server, "plug_relay")?;
                parse_mac(&sec, id, mac)?;
                if ids.contains(id) || !started_apps.insert(id.clone()) {
                    return Err(invalid(&sec, format!("app id {:?} collides", id)));
                }
            }
            ActionSpec::CommandWithCaptured { server, spoof_report, mac, .. } => {
                expect_kind(&sec, server, "plug_relay")?;
                parse_mac(&sec, "command", mac)?;
                if !reports.contains(spoof_report) {
                    return Err(invalid(&sec, format!("no earlier spoof report {:?}", spoof_report)));
                }
            }
            ActionSpec::InstallTap { bus, cut_link, policy, report, .. } => {
                expect_kind(&sec, bus, "knx_bus")?;
                let topo = s
                    .topology
                    .as_ref()
                    .ok_or_else(|| invalid(&sec, "install_tap needs a topology".into()))?;
                if topo.link(cut_link).is_none() {
                    return Err(invalid(&sec, format!("unknown topology link {:?}", cut_link)));
                }
                match policy.mode.as_str() {
                    "passthrough" | "drop" => {}
                    "bias" => {
                        if policy.bias_c.is_none() {
                            return Err(invalid(&sec, "bias policy needs bias_c".into()));
                        }
                    }
                    other => return Err(invalid(&sec, format!("unknown policy mode {:?}", other))),
                }
                if let Some(src) = &policy.match_source {
                    parse_knx_addr(&sec, "policy", src)?;
                }
                if let Some(g) = &policy.match_group {
                    parse_knx_group(&sec, "policy", g)?;
                }
                reports.insert(report.clone());
            }
            ActionSpec::KnxSend { bus, frame, .. } => {
                expect_kind(&sec, bus, "knx_bus")?;
                parse_knx_addr(&sec, "frame", &frame.source)?;
                parse_knx_group(&sec, "frame", &frame.group)?;
                match frame.kind.as_str() {
                    "read" => {}
                    "write" | "response" => {
                        if frame.value_c.is_none() {
                            return Err(invalid(&sec, format!("{} frame needs value_c", frame.kind)));
                        }
                    }
                    other => return Err(invalid(&sec, format!("unknown frame kind {:?}", other))),
                }
            }
            ActionSpec::BiasSweep { biases, curve, .. } => {
                if !biases.contains(&0.0) {
                    return Err(invalid(&sec, "bias grid must contain 0".into()));
                }
                curves.insert(curve.clone());
            }
            ActionSpec::BacnetScan { targets, report, .. } => {
                if targets.is_empty() {
                    return Err(invalid(&sec, "empty target list".into()));
                }
                reports.insert(report.clone());
            }
            ActionSpec::BacnetEnumerate { endpoint, report, .. } => {
                expect_kind(&sec, endpoint, "bacnet_device")?;
                reports.insert(report.clone());
            }
            ActionSpec::BacnetWrite { endpoint, object, report, .. } => {
                expect_kind(&sec, endpoint, "bacnet_device")?;
                if object != "analog_input" && object != "analog_output" {
                    return Err(invalid(&sec, format!("unsupported object class {:?}", object)));
                }
                reports.insert(report.clone());
            }
            ActionSpec::Fuzz { target, executions, report, .. } => {
                if crate::fuzzrt::target_factory(target).is_none() {
                    return Err(invalid(&sec, format!("unknown fuzz target {:?}", target)));
                }
                if *executions == 0 {
                    return Err(invalid(&sec, "zero executions".into()));
                }
                reports.insert(report.clone());
            }
        }
    }

    if let Some(topo) = &s.topology {
        for node in s.device_map.keys() {
            if topo.node(node).is_none() {
                return Err(invalid("device_map", format!("unknown topology node {:?}", node)));
            }
        }
        for (node, addr) in &s.device_map {
            parse_knx_addr("device_map", node, addr)?;
        }
    } else if !s.device_map.is_empty() {
        return Err(invalid("device_map", "device_map without a topology".into()));
    }

    for (i, chk) in s.assertions.iter().enumerate() {
        let sec = format!("assertions[{}]", i);
        let need_report = |r: &String| -> Result<(), ScenarioError> {
            if reports.contains(r) {
                Ok(())
            } else {
                Err(invalid(&sec, format!("no script action produces report {:?}", r)))
            }
        };
        match chk {
            AssertSpec::SnapshotAvg { label, below, above, .. } => {
                if !snapshots.contains(label) {
                    return Err(invalid(&sec, format!("no snapshot labelled {:?}", label)));
                }
                if below.is_none() && above.is_none() {
                    return Err(invalid(&sec, "needs below and/or above".into()));
                }
            }
            AssertSpec::SnapshotCount { label, .. } => {
                if !snapshots.contains(label) {
                    return Err(invalid(&sec, format!("no snapshot labelled {:?}", label)));
                }
            }
            AssertSpec::ScanVerdict { report, equals, .. } => {
                need_report(report)?;
                if !matches!(equals.as_str(), "online" | "offline_or_absent" | "exists_wrong_password") {
                    return Err(invalid(&sec, format!("unknown verdict {:?}", equals)));
                }
            }
            AssertSpec::ScanCounts { report, .. }
            | AssertSpec::BruteforceFound { report, .. }
            | AssertSpec::SpoofCaptured { report, .. }
            | AssertSpec::TapBias { report, .. }
            | AssertSpec::TapPassthroughIdentical { report, .. }
            | AssertSpec::BacnetReadback { report, .. }
            | AssertSpec::BacnetObjectCount { report, .. }
            | AssertSpec::FuzzFaults { report, .. }
            | AssertSpec::PolluteSent { report, .. } => need_report(report)?,
            AssertSpec::BacnetVerdict { report, equals, .. } => {
                need_report(report)?;
                if !matches!(equals.as_str(), "bacnet_device" | "no_response" | "non_bacnet") {
                    return Err(invalid(&sec, format!("unknown verdict {:?}", equals)));
                }
            }
            AssertSpec::PlugOn { actor, .. } => expect_kind(&sec, actor, "plug")?,
            AssertSpec::AppAcked { actor, .. } => {
                if !started_apps.contains(actor) {
                    return Err(invalid(&sec, format!("no start_app action for {:?}", actor)));
                }
            }
            AssertSpec::CurveZeroAtZero { curve } => {
                if !curves.contains(curve) {
                    return Err(invalid(&sec, format!("no script action produces curve {:?}", curve)));
                }
            }
            AssertSpec::CurveNondecreasing { curve, column } => {
                if !curves.contains(curve) {
                    return Err(invalid(&sec, format!("no script action produces curve {:?}", curve)));
                }
                if !matches!(column.as_str(), "energy_kwh" | "extra_kwh" | "duty_cycle") {
                    return Err(invalid(&sec, format!("unknown curve column {:?}", column)));
                }
            }
            AssertSpec::KnxDumpDecodable { bus, .. } => expect_kind(&sec, bus, "knx_bus")?,
        }
    }

    Ok(())
}

pub fn parse_mac(section: &str, who: &str, mac: &str) -> Result<unibed_core::plug::MacAddress, ScenarioError> {
    mac.parse()
        .map_err(|_| invalid(section, format!("{}: bad MAC {:?}", who, mac)))
}

pub fn parse_oui(section: &str, oui: &str) -> Result<[u8; 3], ScenarioError> {
    let full = format!("{}:00:00:00", oui);
    let mac: unibed_core::plug::MacAddress =
        full.parse().map_err(|_| invalid(section, format!("bad OUI {:?}", oui)))?;
    Ok(mac.oui())
}

pub fn parse_knx_addr(
    section: &str,
    who: &str,
    addr: &str,
) -> Result<unibed_core::knx::IndividualAddress, ScenarioError> {
    addr.parse()
        .map_err(|_| invalid(section, format!("{}: bad bus address {:?}", who, addr)))
}

pub fn parse_knx_group(
    section: &str,
    who: &str,
    group: &str,
) -> Result<unibed_core::knx::GroupAddress, ScenarioError> {
    group
        .parse()
        .map_err(|_| invalid(section, format!("{}: bad group address {:?}", who, group)))
}

pub fn parse_object_type(object: &str) -> u16 {
    match object {
        "analog_output" => unibed_core::bacnet::OBJECT_TYPE_ANALOG_OUTPUT,
        _ => unibed_core::bacnet::OBJECT_TYPE_ANALOG_INPUT,
    }
}
