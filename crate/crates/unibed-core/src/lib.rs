//! Core of the unibed testbed: a deterministic discrete-event simulator,
//! building-automation protocol codecs (KNX TP1 profile, BACnet/IP subset),
//! simulated device ecosystems (air-quality reporting, cloud-relayed smart
//! plugs, KNX buses), attack drivers (data pollution, scanning, brute force,
//! spoofing, man-in-the-middle false data injection), an HVAC thermal/energy
//! model, a mutation fuzzer, and a six-factor risk assessment engine.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! in-memory state, so the same scenarios replay bit-identically anywhere.
//! File formats, sockets, and the CLI live in the companion `unibed` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod airq;
pub mod bacnet;
pub mod fuzz;
pub mod hvac;
pub mod knx;
pub mod mitm;
pub mod plug;
pub mod risk;
pub mod sim;
pub mod topo;
pub mod xport;

pub mod util;

pub use sim::{RngStream, Simulation};
