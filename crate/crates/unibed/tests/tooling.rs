//! Host-side tooling tests: plotting, capture conversion, report
//! rendering, socket-scan guard rails, scenario validation, and the CLI
//! exit-code contract.

use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use unibed::artifacts::ArtifactSink;
use unibed::pcap::{dump_text_to_records, records_to_pcap, LINKTYPE_USER0};
use unibed::plot::render_curve_csv;
use unibed::reportmd::{render_report, ReportError};
use unibed::runner::run_loaded;
use unibed::scenario::{load_scenario, validate, Scenario, ScenarioError};
use unibed::udp::{scan_targets, Allowlist, RateLimiter, ScanSetupError};
use unibed::fuzzrt;

const GOLDEN_CSV: &str = include_str!("golden/bias_curve.csv");
const GOLDEN_SVG: &str = include_str!("golden/bias_curve.svg");

#[test]
fn plot_golden_matches() {
    let svg = render_curve_csv(GOLDEN_CSV).unwrap();
    assert_eq!(svg, GOLDEN_SVG, "plot output drifted from the golden file");
}

#[test]
fn plot_is_deterministic() {
    let a = render_curve_csv(GOLDEN_CSV).unwrap();
    let b = render_curve_csv(GOLDEN_CSV).unwrap();
    assert_eq!(a, b);
}

#[test]
fn plot_axis_labels_name_the_quantities() {
    let svg = render_curve_csv(GOLDEN_CSV).unwrap();
    assert!(svg.contains(">bias (°C)<"));
    assert!(svg.contains(">extra energy (kWh)<"));
}

#[test]
fn plot_single_point_renders_one_marker_and_no_line() {
    let csv = "bias_c,energy_kwh,extra_kwh,duty_cycle\n2,118.000000,22.861111,0.421429\n";
    let svg = render_curve_csv(csv).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert_eq!(svg.matches("<polyline").count(), 0);
}

#[test]
fn plot_rejects_unknown_header() {
    assert!(render_curve_csv("x,y\n1,2\n").is_err());
    assert!(render_curve_csv("").is_err());
}

#[test]
fn pcap_header_and_record_layout() {
    let bytes = records_to_pcap(&[(1_500_000, vec![0xAA, 0xBB])]);
    assert_eq!(&bytes[0..4], &0xa1b2_c3d4u32.to_le_bytes());
    assert_eq!(&bytes[4..6], &2u16.to_le_bytes());
    assert_eq!(&bytes[6..8], &4u16.to_le_bytes());
    assert_eq!(&bytes[16..20], &65_535u32.to_le_bytes());
    assert_eq!(&bytes[20..24], &LINKTYPE_USER0.to_le_bytes());
    // First record header: 1 s, 500000 us, both lengths 2.
    assert_eq!(&bytes[24..28], &1u32.to_le_bytes());
    assert_eq!(&bytes[28..32], &500_000u32.to_le_bytes());
    assert_eq!(&bytes[32..36], &2u32.to_le_bytes());
    assert_eq!(&bytes[36..40], &2u32.to_le_bytes());
    assert_eq!(&bytes[40..], &[0xAA, 0xBB]);
}

#[test]
fn pcap_reads_dump_text() {
    let records = dump_text_to_records("1000\tAABB\n2000\tBC\n").unwrap();
    assert_eq!(records, vec![(1000, vec![0xAA, 0xBB]), (2000, vec![0xBC])]);
    assert!(dump_text_to_records("not a record").is_err());
}

#[test]
fn report_requires_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(render_report(dir.path()), Err(ReportError::MissingManifest(_))));
}

#[test]
fn report_marks_missing_sections_absent_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut sink = ArtifactSink::new(dir.path());
    sink.put_text("assertions.json", "[]".to_string());
    sink.flush("bare", 1, "00").unwrap();
    let a = render_report(dir.path()).unwrap();
    let b = render_report(dir.path()).unwrap();
    assert_eq!(a, b, "report must render byte-identically");
    assert!(a.contains("_absent"), "missing artifacts must be marked, got:\n{}", a);
}

#[test]
fn allowlist_parse_and_match() {
    let allow = Allowlist::parse(&[
        "192.168.4.0/24".to_string(),
        "10.0.0.2".to_string(),
        "::1".to_string(),
    ])
    .unwrap();
    assert!(allow.permits(&"192.168.4.17".parse().unwrap()));
    assert!(!allow.permits(&"192.168.5.1".parse().unwrap()));
    assert!(allow.permits(&"10.0.0.2".parse().unwrap()));
    assert!(!allow.permits(&"10.0.0.3".parse().unwrap()));
    assert!(allow.permits(&"::1".parse().unwrap()));
    assert!(Allowlist::parse(&["nonsense".to_string()]).is_err());
    assert!(Allowlist::parse(&["10.0.0.0/33".to_string()]).is_err());
}

#[test]
fn scan_refuses_empty_allowlist() {
    let allow = Arc::new(Allowlist::parse(&[]).unwrap());
    let rate = Arc::new(RateLimiter::new(100.0));
    match scan_targets(&["127.0.0.1:47808".to_string()], allow, rate, 10_000, 2) {
        Err(ScanSetupError::Config(msg)) => assert!(msg.contains("--allow"), "{}", msg),
        other => panic!("expected config refusal, got {:?}", other.map(|v| v.len())),
    }
}

#[test]
fn scan_refuses_target_outside_allowlist() {
    let allow = Arc::new(Allowlist::parse(&["10.9.9.0/24".to_string()]).unwrap());
    let rate = Arc::new(RateLimiter::new(100.0));
    match scan_targets(&["127.0.0.1:47808".to_string()], allow, rate, 10_000, 2) {
        Err(ScanSetupError::Config(msg)) => assert!(msg.contains("allowlist"), "{}", msg),
        other => panic!("expected config refusal, got {:?}", other.map(|v| v.len())),
    }
}

#[test]
fn rate_limiter_paces_sends() {
    let rate = RateLimiter::new(100.0);
    let start = Instant::now();
    for _ in 0..4 {
        rate.acquire();
    }
    // Four slots on a 10 ms grid: at least 30 ms after the first.
    assert!(start.elapsed() >= Duration::from_millis(30));
}

/// One silent port, one canned discovery reply, one garbage reply. The
/// three verdicts must come back in target order.
#[test]
fn udp_loopback_scan_classifies_hosts() {
    const I_AM: [u8; 20] = [
        0x81, 0x0B, 0x00, 0x14, 0x01, 0x00, 0x10, 0x00, 0xC4, 0x02, 0x00, 0x00, 0x66, 0x22,
        0x04, 0x00, 0x91, 0x03, 0x21, 0x07,
    ];
    let silent = UdpSocket::bind("127.0.0.1:0").unwrap();
    let device = UdpSocket::bind("127.0.0.1:0").unwrap();
    let garbage = UdpSocket::bind("127.0.0.1:0").unwrap();
    let targets = vec![
        silent.local_addr().unwrap().to_string(),
        device.local_addr().unwrap().to_string(),
        garbage.local_addr().unwrap().to_string(),
    ];
    let responder = |sock: UdpSocket, reply: Vec<u8>| {
        std::thread::spawn(move || {
            let mut buf = [0u8; 256];
            if let Ok((_, from)) = sock.recv_from(&mut buf) {
                let _ = sock.send_to(&reply, from);
            }
        })
    };
    let h1 = responder(device, I_AM.to_vec());
    let h2 = responder(garbage, b"not a control frame".to_vec());

    let allow = Arc::new(Allowlist::parse(&["127.0.0.1".to_string()]).unwrap());
    let rate = Arc::new(RateLimiter::new(1000.0));
    let probes = scan_targets(&targets, allow, rate, 300_000, 3).unwrap();
    assert_eq!(probes.len(), 3);
    assert_eq!(probes[0].endpoint, targets[0]);
    assert_eq!(probes[0].verdict.to_string(), "no_response");
    assert_eq!(probes[1].verdict.to_string(), "bacnet_device");
    assert_eq!(probes[1].device_id.unwrap().to_string(), "8:102");
    assert_eq!(probes[1].vendor, Some(7));
    assert_eq!(probes[2].verdict.to_string(), "non_bacnet");
    h1.join().unwrap();
    h2.join().unwrap();
}

fn parse_scenario(toml_text: &str) -> Result<(), ScenarioError> {
    let sc: Scenario = toml::from_str(toml_text).map_err(|e| {
        ScenarioError::Parse(e.to_string())
    })?;
    validate(&sc)
}

#[test]
fn validation_rejects_broken_references() {
    let dup = r#"
name = "x"
seed = 1
duration_s = 1
[[actors]]
kind = "plug_relay"
id = "a"
[[actors]]
kind = "knx_bus"
id = "a"
"#;
    assert!(matches!(parse_scenario(dup), Err(ScenarioError::Invalid { .. })));

    let bad_ref = r#"
name = "x"
seed = 1
duration_s = 1
[[script]]
action = "scan_plugs"
at_s = 0.0
server = "nope"
oui = "28:6C:07"
suffix_start = 0
suffix_count = 1
guess = "1"
report = "r"
"#;
    assert!(matches!(parse_scenario(bad_ref), Err(ScenarioError::Invalid { .. })));

    let bad_assert = r#"
name = "x"
seed = 1
duration_s = 1
[[assertions]]
check = "fuzz_faults"
report = "ghost"
equals = 0
"#;
    assert!(matches!(parse_scenario(bad_assert), Err(ScenarioError::Invalid { .. })));

    let map_no_topo = r#"
name = "x"
seed = 1
duration_s = 1
device_map = { n = "1.1.1" }
"#;
    assert!(matches!(parse_scenario(map_no_topo), Err(ScenarioError::Invalid { .. })));

    let bad_target = r#"
name = "x"
seed = 1
duration_s = 1
[[script]]
action = "fuzz"
at_s = 0.0
target = "quic"
executions = 10
report = "r"
"#;
    assert!(matches!(parse_scenario(bad_target), Err(ScenarioError::Invalid { .. })));
}

#[test]
fn validation_reports_the_failing_section() {
    let bad = r#"
name = "x"
seed = 1
duration_s = 1
[[script]]
action = "bias_sweep"
at_s = 0.0
biases = [1.0, 2.0]
curve = "c"
"#;
    match parse_scenario(bad) {
        Err(ScenarioError::Invalid { section, problem }) => {
            assert_eq!(section, "script[0]");
            assert!(problem.contains("0"), "{}", problem);
        }
        other => panic!("expected invalid, got {:?}", other.is_ok()),
    }
}

const FAILING_SCENARIO: &str = r#"
name = "failing"
seed = 9
duration_s = 5

[[actors]]
kind = "knx_bus"
id = "bus"

[[script]]
action = "knx_send"
at_s = 1.0
bus = "bus"
frame = { kind = "write", source = "1.1.2", group = "3/1/5", value_c = 21.0 }

[[assertions]]
check = "knx_dump_decodable"
bus = "bus"
min_frames = 99
"#;

#[test]
fn failed_assertion_is_reported_but_artifacts_still_land() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("failing.toml");
    std::fs::write(&file, FAILING_SCENARIO).unwrap();
    let loaded = load_scenario(&file).unwrap();
    let out = dir.path().join("out");
    let outcome = run_loaded(&loaded, &out, None).unwrap();
    assert!(!outcome.passed);
    assert!(out.join("assertions.json").exists());
    assert!(out.join("run_manifest.json").exists());
}

/// Every bundled scenario must keep producing the pinned manifest. A
/// diff here means an intentional behavior change: rerun the scenario
/// and refresh the file under tests/golden/manifests.
#[test]
fn bundled_scenarios_match_pinned_manifests() {
    let goldens: [(&str, &str); 8] = [
        ("pollute_airmap", include_str!("golden/manifests/pollute_airmap.json")),
        ("scan_plugs", include_str!("golden/manifests/scan_plugs.json")),
        ("bruteforce_plug", include_str!("golden/manifests/bruteforce_plug.json")),
        ("spoof_plug", include_str!("golden/manifests/spoof_plug.json")),
        ("fdi_energy", include_str!("golden/manifests/fdi_energy.json")),
        ("bacnet_enumerate", include_str!("golden/manifests/bacnet_enumerate.json")),
        ("knx_dump", include_str!("golden/manifests/knx_dump.json")),
        ("fuzz_codecs", include_str!("golden/manifests/fuzz_codecs.json")),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (name, golden) in goldens {
        let path = PathBuf::from(repo_scenario(&format!("{}.toml", name)));
        let loaded = load_scenario(&path).unwrap();
        let out = dir.path().join(name);
        let outcome = run_loaded(&loaded, &out, None).unwrap();
        assert!(outcome.passed, "{} has failing assertions", name);
        let manifest = std::fs::read_to_string(out.join("run_manifest.json")).unwrap();
        assert_eq!(manifest, golden, "{} drifted from its pinned manifest", name);
    }
}

#[test]
fn fuzz_report_is_worker_count_invariant() {
    let one = fuzzrt::run_parallel("knx", 10_000, 42, 1).unwrap();
    let seven = fuzzrt::run_parallel("knx", 10_000, 42, 7).unwrap();
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&seven).unwrap()
    );
}

#[test]
fn sentinel_target_faults_quickly() {
    let report = fuzzrt::run_parallel("sentinel", 50_000, 1, 4).unwrap();
    assert!(report.fault_count() > 0, "sentinel bug never tripped in 50k executions");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unibed"))
}

fn repo_scenario(name: &str) -> String {
    // Tests run with the package directory as cwd.
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn cli_exit_codes_follow_the_contract() {
    let ok = bin().args(["validate", &repo_scenario("knx_dump.toml")]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let missing = bin().args(["run", "no/such/file.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("failing.toml");
    std::fs::write(&file, FAILING_SCENARIO).unwrap();
    let failing = bin()
        .args(["run", file.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(failing.status.code(), Some(3), "{}", String::from_utf8_lossy(&failing.stdout));
    let stdout = String::from_utf8_lossy(&failing.stdout);
    assert!(stdout.contains("[FAIL]"), "{}", stdout);

    let no_allow = bin()
        .args(["scan-bacnet", "--targets", "127.0.0.1:47808"])
        .output()
        .unwrap();
    assert_eq!(no_allow.status.code(), Some(2));
}

#[test]
fn cli_env_overrides_seed_and_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env-out");
    let run = bin()
        .args(["run", &repo_scenario("knx_dump.toml")])
        .env("UNIBED_SEED", "77")
        .env("UNIBED_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let manifest = std::fs::read_to_string(out.join("run_manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 77"), "{}", manifest);

    // An explicit flag takes precedence over the environment.
    let out2 = dir.path().join("flag-out");
    let run2 = bin()
        .args(["run", &repo_scenario("knx_dump.toml"), "--seed", "5"])
        .env("UNIBED_SEED", "77")
        .arg("--out")
        .arg(&out2)
        .output()
        .unwrap();
    assert_eq!(run2.status.code(), Some(0));
    let manifest2 = std::fs::read_to_string(out2.join("run_manifest.json")).unwrap();
    assert!(manifest2.contains("\"seed\": 5"), "{}", manifest2);
}
