//! Host-side companion to `unibed-core`: scenario configs, the
//! deterministic runner, artifact and report emission, plotting, fuzz
//! orchestration, and the socket transport for probing real devices.

pub mod artifacts;
pub mod fuzzrt;
pub mod pcap;
pub mod plot;
pub mod reportmd;
pub mod runner;
pub mod scenario;
pub mod udp;
