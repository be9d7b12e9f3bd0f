//! Single binary entry point. Exit codes: 0 success, 2 configuration
//! error, 3 scripted assertion failed, 4 transport error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use unibed::artifacts::sha256_hex;
use unibed::runner::run_loaded;
use unibed::scenario::load_scenario;
use unibed::udp::{Allowlist, RateLimiter, ScanSetupError, DEFAULT_PROBES_PER_SECOND};
use unibed::{fuzzrt, plot, reportmd, udp};

const EXIT_CONFIG: u8 = 2;
const EXIT_ASSERTION: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;

#[derive(Parser)]
#[command(name = "unibed", version, about = "Deterministic IoT security testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config and emit its artifact directory.
    Run {
        /// Path to the scenario TOML.
        scenario: PathBuf,
        /// Output directory (default runs/<scenario-name>, env UNIBED_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario seed (env UNIBED_SEED).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a scenario config without running it.
    Validate {
        scenario: PathBuf,
    },
    /// Render a curve CSV to a deterministic SVG plot.
    Plot {
        csv: PathBuf,
        /// Output file (default: CSV path with .svg extension).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Render a run's artifact directory to a markdown report.
    Report {
        dir: PathBuf,
        /// Output file (default: <dir>/report.md).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a fuzz campaign against one of the bundled decoders.
    Fuzz {
        /// Target name: knx, bacnet, plug, airq, or sentinel.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 100_000)]
        executions: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe real hosts for building-automation control services over UDP.
    ScanBacnet {
        /// Comma-separated ip:port targets.
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<String>,
        /// Address or CIDR the scan may touch. Repeatable. No default:
        /// scanning refuses to start without an explicit allowlist.
        #[arg(long)]
        allow: Vec<String>,
        /// Probe rate cap shared across all workers.
        #[arg(long, default_value_t = DEFAULT_PROBES_PER_SECOND)]
        rate: f64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 1000)]
        timeout_ms: u64,
        /// Emit machine-readable JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out, seed } => cmd_run(scenario, out, seed),
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Plot { csv, out } => cmd_plot(csv, out),
        Command::Report { dir, out } => cmd_report(dir, out),
        Command::Fuzz { target, executions, seed, workers, out } => {
            cmd_fuzz(target, executions, seed, workers, out)
        }
        Command::ScanBacnet { targets, allow, rate, workers, timeout_ms, json } => {
            cmd_scan_bacnet(targets, allow, rate, workers, timeout_ms, json)
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("UNIBED_SEED").ok().and_then(|v| v.parse().ok())
}

fn env_out() -> Option<PathBuf> {
    std::env::var("UNIBED_OUT").ok().map(PathBuf::from)
}

fn cmd_run(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let loaded = match load_scenario(&path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    // Precedence: flag, then environment, then the scenario's own seed.
    let seed_override = seed.or_else(env_seed);
    let out_dir = out
        .or_else(env_out)
        .unwrap_or_else(|| PathBuf::from("runs").join(&loaded.scenario.name));
    match run_loaded(&loaded, &out_dir, seed_override) {
        Ok(outcome) => {
            for a in &outcome.assertions {
                let tag = if a.pass { "[PASS]" } else { "[FAIL]" };
                println!("{} {}: {}", tag, a.check, a.detail);
            }
            println!(
                "run {} complete: {} artifacts in {}",
                outcome.manifest.scenario,
                outcome.manifest.artifacts.len(),
                out_dir.display()
            );
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_ASSERTION)
            }
        }
        Err(e) => {
            eprintln!("run error: {}", e);
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_validate(path: PathBuf) -> ExitCode {
    match load_scenario(&path) {
        Ok(loaded) => {
            println!(
                "ok: scenario {:?}, seed {}, {} actors, {} actions, {} checks, config sha256 {}",
                loaded.scenario.name,
                loaded.scenario.seed,
                loaded.scenario.actors.len(),
                loaded.scenario.script.len(),
                loaded.scenario.assertions.len(),
                sha256_hex(&loaded.raw)
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("config error: {}", e);
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_plot(csv: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let text = match std::fs::read_to_string(&csv) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("config error: cannot read {}: {}", csv.display(), e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let svg = match plot::render_curve_csv(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("config error: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = out.unwrap_or_else(|| csv.with_extension("svg"));
    if let Err(e) = std::fs::write(&out, svg) {
        eprintln!("config error: cannot write {}: {}", out.display(), e);
        return ExitCode::from(EXIT_CONFIG);
    }
    println!("wrote {}", out.display());
    ExitCode::SUCCESS
}

fn cmd_report(dir: PathBuf, out: Option<PathBuf>) -> ExitCode {
    match reportmd::render_report(&dir) {
        Ok(md) => {
            let out = out.unwrap_or_else(|| dir.join("report.md"));
            if let Err(e) = std::fs::write(&out, md) {
                eprintln!("config error: cannot write {}: {}", out.display(), e);
                return ExitCode::from(EXIT_CONFIG);
            }
            println!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("config error: {}", e);
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_fuzz(target: String, executions: u64, seed: u64, workers: usize, out: Option<PathBuf>) -> ExitCode {
    let report = match fuzzrt::run_parallel(&target, executions, seed, workers) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, json + "\n") {
                eprintln!("config error: cannot write {}: {}", path.display(), e);
                return ExitCode::from(EXIT_CONFIG);
            }
            println!(
                "fuzz {}: {} executions, {} faults, report at {}",
                report.target,
                report.executions,
                report.fault_count(),
                path.display()
            );
        }
        None => println!("{}", json),
    }
    if report.fault_count() > 0 {
        ExitCode::from(EXIT_ASSERTION)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_scan_bacnet(
    targets: Vec<String>,
    allow: Vec<String>,
    rate: f64,
    workers: usize,
    timeout_ms: u64,
    json: bool,
) -> ExitCode {
    let allow = match Allowlist::parse(&allow) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("config error: {}", e);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let limiter = Arc::new(RateLimiter::new(rate));
    match udp::scan_targets(&targets, Arc::new(allow), limiter, timeout_ms * 1000, workers) {
        Ok(probes) => {
            if json {
                let rows: Vec<serde_json::Value> = probes
                    .iter()
                    .map(|p| {
                        serde_json::json!({
                            "endpoint": p.endpoint,
                            "verdict": p.verdict.to_string(),
                            "device_id": p.device_id.map(|d| d.to_string()),
                            "vendor": p.vendor,
                            "rtt_us": p.rtt_us,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
            } else {
                for p in &probes {
                    let id = p
                        .device_id
                        .map(|d| d.to_string())
                        .unwrap_or_else(|| "-".into());
                    let vendor = p.vendor.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                    println!(
                        "{}\t{}\tdevice={}\tvendor={}\trtt_us={}",
                        p.endpoint, p.verdict, id, vendor, p.rtt_us
                    );
                }
            }
            ExitCode::SUCCESS
        }
        Err(ScanSetupError::Config(e)) => {
            eprintln!("config error: {}", e);
            ExitCode::from(EXIT_CONFIG)
        }
        Err(ScanSetupError::Transport(e)) => {
            eprintln!("transport error: {}", e);
            ExitCode::from(EXIT_TRANSPORT)
        }
    }
}
