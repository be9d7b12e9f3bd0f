//! Seeded mutation fuzzer for the testbed's decoders, with a crash and
//! consistency oracle and a ddmin-style input minimizer.
//!
//! The harness is blind (no coverage feedback). Every execution derives
//! its own RNG stream from (master seed, execution index), so a campaign
//! can be split across workers at any boundary and the merged report is
//! byte-identical to the single-worker run.
//!
//! Target functions must not unwind; the campaign driver treats anything
//! other than ok or a structured error as a FAULT, and the companion
//! crate provides a panic-trapping wrapper for targets that might.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sim::RngStream;
use crate::util::to_hex;
use crate::{airq, bacnet, knx, plug};

use core::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FuzzError {
    EmptyCorpus,
    /// The input replayed clean, so there is nothing to minimize. Usually
    /// means the target is nondeterministic.
    Unstable,
}

impl fmt::Display for FuzzError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FuzzError::EmptyCorpus => write!(f, "corpus is empty"),
            FuzzError::Unstable => write!(f, "input does not reproduce the fault"),
        }
    }
}

impl core::error::Error for FuzzError {}

/// What one target invocation produced. `Error` carries a short stable
/// label used as the histogram key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecOutcome {
    Ok,
    Error(&'static str),
    Fault(String),
}

pub type TargetFn = Box<dyn Fn(&[u8]) -> ExecOutcome>;

pub struct FuzzTarget {
    pub name: String,
    pub run: TargetFn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationKind {
    BitFlip,
    ByteSet,
    ByteInsert,
    ByteDelete,
    ByteDuplicate,
    Truncate,
    LengthFieldCorrupt,
    Splice,
}

pub const MUTATION_KINDS: [MutationKind; 8] = [
    MutationKind::BitFlip,
    MutationKind::ByteSet,
    MutationKind::ByteInsert,
    MutationKind::ByteDelete,
    MutationKind::ByteDuplicate,
    MutationKind::Truncate,
    MutationKind::LengthFieldCorrupt,
    MutationKind::Splice,
];

/// Longest chunk a duplicate or splice moves; keeps every single
/// mutation's growth at or below 16 bytes.
const MAX_CHUNK: usize = 16;

/// Applies one mutation. Inputs the mutation cannot act on (for example
/// deleting from an empty buffer) pass through unchanged.
pub fn apply_mutation(input: &[u8], kind: MutationKind, stream: &mut RngStream) -> Vec<u8> {
    let mut out = input.to_vec();
    let len = out.len();
    let draw = |stream: &mut RngStream, bound: u64| stream.draw(bound).expect("bound > 0");
    match kind {
        MutationKind::BitFlip => {
            if len > 0 {
                let p = draw(stream, len as u64) as usize;
                let bit = draw(stream, 8) as u8;
                out[p] ^= 1 << bit;
            }
        }
        MutationKind::ByteSet => {
            if len > 0 {
                let p = draw(stream, len as u64) as usize;
                out[p] = draw(stream, 256) as u8;
            }
        }
        MutationKind::ByteInsert => {
            let p = draw(stream, len as u64 + 1) as usize;
            let v = draw(stream, 256) as u8;
            out.insert(p, v);
        }
        MutationKind::ByteDelete => {
            if len > 0 {
                let p = draw(stream, len as u64) as usize;
                out.remove(p);
            }
        }
        MutationKind::ByteDuplicate => {
            if len > 0 {
                let c = 1 + draw(stream, MAX_CHUNK.min(len) as u64) as usize;
                let p = draw(stream, (len - c + 1) as u64) as usize;
                let chunk: Vec<u8> = out[p..p + c].to_vec();
                for (i, b) in chunk.into_iter().enumerate() {
                    out.insert(p + c + i, b);
                }
            }
        }
        MutationKind::Truncate => {
            if len > 0 {
                let keep = draw(stream, len as u64) as usize;
                out.truncate(keep);
            }
        }
        MutationKind::LengthFieldCorrupt => {
            if len > 0 {
                let p = if len > 5 {
                    [2usize, 3, 5][draw(stream, 3) as usize]
                } else {
                    draw(stream, len as u64) as usize
                };
                let table = [
                    0x00,
                    0x0F,
                    0xFF,
                    len as u8,
                    (len as u8).wrapping_add(1),
                    (len as u8).wrapping_sub(1),
                ];
                out[p] = table[draw(stream, table.len() as u64) as usize];
            }
        }
        MutationKind::Splice => {
            if len >= 2 {
                let c = 1 + draw(stream, MAX_CHUNK.min(len - 1) as u64) as usize;
                let src = draw(stream, (len - c + 1) as u64) as usize;
                let dst = draw(stream, (len - c + 1) as u64) as usize;
                out.copy_within(src..src + c, dst);
            }
        }
    }
    out
}

/// Applies 1 to 4 mutations drawn from the stream. Deterministic: the
/// same stream state always yields the same mutant.
pub fn mutate(seed_input: &[u8], stream: &mut RngStream) -> Vec<u8> {
    let rounds = 1 + stream.draw(4).expect("bound > 0");
    let mut out = seed_input.to_vec();
    for _ in 0..rounds {
        let kind = MUTATION_KINDS[stream.draw(8).expect("bound > 0") as usize];
        out = apply_mutation(&out, kind, stream);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultRecord {
    /// Lexicographically smallest raw input observed for this minimized
    /// form; keeps merging order-independent.
    pub example_hex: String,
    pub reason: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub target: String,
    pub master_seed: u64,
    pub executions: u64,
    /// Keys: "ok", each structured-error label, "FAULT".
    pub histogram: BTreeMap<String, u64>,
    /// Keyed by minimized input hex.
    pub faults: BTreeMap<String, FaultRecord>,
}

impl FuzzReport {
    pub fn fault_count(&self) -> u64 {
        self.histogram.get("FAULT").copied().unwrap_or(0)
    }
}

fn bump(histogram: &mut BTreeMap<String, u64>, key: &str) {
    *histogram.entry(key.to_string()).or_insert(0) += 1;
}

/// Runs executions [start, start+count) of a campaign. Splitting a run
/// into ranges and merging the reports reproduces the single-range
/// report exactly.
pub fn run_campaign_range(
    target: &FuzzTarget,
    corpus: &[Vec<u8>],
    start: u64,
    count: u64,
    master_seed: u64,
) -> Result<FuzzReport, FuzzError> {
    if corpus.is_empty() {
        return Err(FuzzError::EmptyCorpus);
    }
    let mut report = FuzzReport {
        target: target.name.clone(),
        master_seed,
        executions: count,
        histogram: BTreeMap::new(),
        faults: BTreeMap::new(),
    };
    for exec in start..start + count {
        let mut stream = RngStream::derive(master_seed, &format!("exec/{}", exec));
        let seed = &corpus[stream.draw(corpus.len() as u64).expect("corpus non-empty") as usize];
        let mutant = mutate(seed, &mut stream);
        match (target.run)(&mutant) {
            ExecOutcome::Ok => bump(&mut report.histogram, "ok"),
            ExecOutcome::Error(label) => bump(&mut report.histogram, label),
            ExecOutcome::Fault(reason) => {
                bump(&mut report.histogram, "FAULT");
                let raw_hex = to_hex(&mutant);
                let (key, reason) = match minimize(target, &mutant) {
                    Ok(min) => (to_hex(&min), reason),
                    Err(_) => (raw_hex.clone(), format!("{} [unstable]", reason)),
                };
                record_fault(&mut report.faults, key, raw_hex, reason);
            }
        }
    }
    Ok(report)
}

pub fn run_campaign(
    target: &FuzzTarget,
    corpus: &[Vec<u8>],
    executions: u64,
    master_seed: u64,
) -> Result<FuzzReport, FuzzError> {
    run_campaign_range(target, corpus, 0, executions, master_seed)
}

fn record_fault(
    faults: &mut BTreeMap<String, FaultRecord>,
    minimized_hex: String,
    example_hex: String,
    reason: String,
) {
    match faults.get_mut(&minimized_hex) {
        None => {
            faults.insert(minimized_hex, FaultRecord { example_hex, reason, count: 1 });
        }
        Some(rec) => {
            rec.count += 1;
            if example_hex < rec.example_hex {
                rec.example_hex = example_hex;
                rec.reason = reason;
            }
        }
    }
}

/// Merges two shard reports. Requires matching target and seed so the
/// result is meaningful; counts add, fault examples keep the smallest.
pub fn merge_reports(mut a: FuzzReport, b: FuzzReport) -> FuzzReport {
    debug_assert_eq!(a.target, b.target);
    debug_assert_eq!(a.master_seed, b.master_seed);
    a.executions += b.executions;
    for (key, n) in b.histogram {
        *a.histogram.entry(key).or_insert(0) += n;
    }
    for (key, rec) in b.faults {
        match a.faults.get_mut(&key) {
            None => {
                a.faults.insert(key, rec);
            }
            Some(mine) => {
                mine.count += rec.count;
                if rec.example_hex < mine.example_hex {
                    mine.example_hex = rec.example_hex;
                    mine.reason = rec.reason;
                }
            }
        }
    }
    a
}

fn faults_on(target: &FuzzTarget, input: &[u8]) -> bool {
    matches!((target.run)(input), ExecOutcome::Fault(_))
}

/// Greedy reduction to a locally minimal faulting input: chunk removal,
/// then single bytes, then zeroing bytes, repeated to a fixpoint.
pub fn minimize(target: &FuzzTarget, fault_input: &[u8]) -> Result<Vec<u8>, FuzzError> {
    if !faults_on(target, fault_input) {
        return Err(FuzzError::Unstable);
    }
    let mut cur = fault_input.to_vec();
    loop {
        let before = cur.clone();

        let mut size = cur.len() / 2;
        while size >= 1 {
            let mut i = 0;
            while i + size <= cur.len() {
                let mut candidate = cur.clone();
                candidate.drain(i..i + size);
                if faults_on(target, &candidate) {
                    cur = candidate;
                } else {
                    i += size;
                }
            }
            size /= 2;
        }

        let mut i = 0;
        while i < cur.len() {
            let mut candidate = cur.clone();
            candidate.remove(i);
            if faults_on(target, &candidate) {
                cur = candidate;
            } else {
                i += 1;
            }
        }

        for i in 0..cur.len() {
            if cur[i] != 0 {
                let mut candidate = cur.clone();
                candidate[i] = 0;
                if faults_on(target, &candidate) {
                    cur = candidate;
                }
            }
        }

        if cur == before {
            return Ok(cur);
        }
    }
}

/// Consistency oracle shared by all codec targets: a decoded value's
/// canonical encoding must survive one more decode/encode round trip
/// unchanged. Quantizing codecs stabilize after the first encode, exact
/// codecs are identities.
macro_rules! fixpoint_target {
    ($bytes:expr, $decode:expr, $encode:expr, $label:expr) => {{
        match $decode($bytes) {
            Err(e) => ExecOutcome::Error($label(&e)),
            Ok(v) => match $encode(&v) {
                None => ExecOutcome::Fault("decoded value refused to re-encode".to_string()),
                Some(enc1) => match $decode(&enc1) {
                    Err(e) => {
                        ExecOutcome::Fault(format!("canonical form rejected: {}", $label(&e)))
                    }
                    Ok(v2) => match $encode(&v2) {
                        Some(enc2) if enc2 == enc1 => ExecOutcome::Ok,
                        Some(_) => ExecOutcome::Fault("canonical form is not a fixpoint".to_string()),
                        None => ExecOutcome::Fault("canonical value refused to re-encode".to_string()),
                    },
                },
            },
        }
    }};
}

fn knx_label(e: &knx::KnxError) -> &'static str {
    match e {
        knx::KnxError::TooShort { .. } => "too_short",
        knx::KnxError::BadChecksum { .. } => "bad_checksum",
        knx::KnxError::BadLengthNibble { .. } => "bad_length_nibble",
        knx::KnxError::BadAddressType => "bad_address_type",
        knx::KnxError::UnknownApci { .. } => "unknown_apci",
        _ => "other",
    }
}

pub fn knx_decoder_target() -> FuzzTarget {
    FuzzTarget {
        name: "knx".to_string(),
        run: Box::new(|bytes| {
            fixpoint_target!(
                bytes,
                knx::decode_telegram,
                |t: &knx::Telegram| knx::encode_telegram(t).ok(),
                knx_label
            )
        }),
    }
}

fn bacnet_label(e: &bacnet::BacnetError) -> &'static str {
    match e {
        bacnet::BacnetError::Truncated { .. } => "truncated",
        bacnet::BacnetError::BadMagic(_) => "bad_magic",
        bacnet::BacnetError::UnknownBvlcFunction(_) => "unknown_bvlc_function",
        bacnet::BacnetError::LengthMismatch { .. } => "length_mismatch",
        bacnet::BacnetError::BadNpdu(_, _) => "bad_npdu",
        bacnet::BacnetError::UnknownApduType(_) => "unknown_apdu_type",
        bacnet::BacnetError::UnknownService(_) => "unknown_service",
        bacnet::BacnetError::BadTag { .. } => "bad_tag",
        bacnet::BacnetError::BadValueTag(_) => "bad_value_tag",
        bacnet::BacnetError::BadSegmentation(_) => "bad_segmentation",
        bacnet::BacnetError::BadCharString => "bad_char_string",
        bacnet::BacnetError::TrailingBytes(_) => "trailing_bytes",
        _ => "other",
    }
}

pub fn bacnet_decoder_target() -> FuzzTarget {
    FuzzTarget {
        name: "bacnet".to_string(),
        run: Box::new(|bytes| {
            fixpoint_target!(
                bytes,
                bacnet::decode_bacnet,
                |m: &bacnet::BacnetMessage| bacnet::encode_bacnet(m).ok(),
                bacnet_label
            )
        }),
    }
}

fn plug_label(e: &plug::PlugError) -> &'static str {
    match e {
        plug::PlugError::BadMac(_) => "bad_mac",
        plug::PlugError::BadLine(_) => "bad_line",
        _ => "other",
    }
}

fn plug_decode(bytes: &[u8]) -> Result<plug::PlugMsg, plug::PlugError> {
    let line = core::str::from_utf8(bytes)
        .map_err(|_| plug::PlugError::BadLine("not utf-8".to_string()))?;
    plug::parse_line(line)
}

pub fn plug_line_target() -> FuzzTarget {
    FuzzTarget {
        name: "plug".to_string(),
        run: Box::new(|bytes| {
            fixpoint_target!(
                bytes,
                plug_decode,
                |m: &plug::PlugMsg| Some(plug::format_line(m).into_bytes()),
                plug_label
            )
        }),
    }
}

fn airq_label(_e: &airq::AirqError) -> &'static str {
    "bad_report"
}

fn airq_decode(bytes: &[u8]) -> Result<airq::AqReport, airq::AirqError> {
    let line = core::str::from_utf8(bytes)
        .map_err(|_| airq::AirqError::BadReport("not utf-8".to_string()))?;
    airq::parse_report(line)
}

pub fn airq_report_target() -> FuzzTarget {
    FuzzTarget {
        name: "airq".to_string(),
        run: Box::new(|bytes| {
            fixpoint_target!(
                bytes,
                airq_decode,
                |r: &airq::AqReport| Some(airq::format_report(r).into_bytes()),
                airq_label
            )
        }),
    }
}

pub fn builtin_targets() -> Vec<FuzzTarget> {
    alloc::vec![
        knx_decoder_target(),
        bacnet_decoder_target(),
        plug_line_target(),
        airq_report_target(),
    ]
}

/// Seed inputs for each built-in target: a handful of valid frames so
/// mutants explore the deep parse paths.
pub fn builtin_corpus(target_name: &str) -> Vec<Vec<u8>> {
    match target_name {
        "knx" => {
            let sensor = knx::IndividualAddress::new(1, 1, 10).unwrap();
            let group = knx::GroupAddress::new(2, 1, 0).unwrap();
            alloc::vec![
                knx::encode_telegram(
                    &knx::Telegram::response(sensor, group, knx::encode_dpt9(21.0).unwrap().to_vec()).unwrap()
                )
                .unwrap(),
                knx::encode_telegram(
                    &knx::Telegram::write(sensor, group, knx::encode_dpt9(-30.0).unwrap().to_vec()).unwrap()
                )
                .unwrap(),
                knx::encode_telegram(&knx::Telegram::read(sensor, group)).unwrap(),
            ]
        }
        "bacnet" => {
            let device = bacnet::ObjectId::device(102);
            alloc::vec![
                bacnet::encode_bacnet(&bacnet::BacnetMessage {
                    bvlc_function: bacnet::BvlcFunction::Broadcast,
                    apdu: bacnet::Apdu::WhoIs,
                })
                .unwrap(),
                bacnet::encode_bacnet(&bacnet::BacnetMessage {
                    bvlc_function: bacnet::BvlcFunction::Broadcast,
                    apdu: bacnet::Apdu::IAm {
                        device,
                        max_apdu: 1024,
                        segmentation: bacnet::Segmentation::NoSegmentation,
                        vendor: 7,
                    },
                })
                .unwrap(),
                bacnet::encode_bacnet(&bacnet::BacnetMessage {
                    bvlc_function: bacnet::BvlcFunction::Unicast,
                    apdu: bacnet::Apdu::ReadProperty { invoke_id: 1, oid: device, property: 76 },
                })
                .unwrap(),
                bacnet::encode_bacnet(&bacnet::BacnetMessage {
                    bvlc_function: bacnet::BvlcFunction::Unicast,
                    apdu: bacnet::Apdu::WriteProperty {
                        invoke_id: 2,
                        oid: bacnet::ObjectId::analog_output(3),
                        property: 85,
                        value: 45.0,
                    },
                })
                .unwrap(),
            ]
        }
        "plug" => alloc::vec![
            b"REG 28:6C:07:00:12:AB".to_vec(),
            b"AUTH 28:6C:07:00:12:AB 899199A1".to_vec(),
            b"CMD 28:6C:07:00:12:AB ON".to_vec(),
            b"HEARTBEAT 28:6C:07:00:12:AB".to_vec(),
            b"1070".to_vec(),
        ],
        "airq" => alloc::vec![
            b"POST /update id=5C:CF:7F:00:00:01&pm25=1.5&ts=120".to_vec(),
            b"POST /update id=5C:CF:7F:00:00:02&pm25=500.0&ts=86400".to_vec(),
        ],
        _ => Vec::new(),
    }
}

/// Deliberately broken frame reader, shipped as a detectability fixture:
/// a length nibble of 15 is trusted without a bounds check, so short
/// frames with that nibble read out of bounds.
pub fn buggy_length_decode(frame: &[u8]) -> Result<u8, &'static str> {
    if frame.len() < 7 {
        return Err("too_short");
    }
    let nibble = frame[5] & 0x0F;
    if nibble == 15 {
        return Ok(frame[6 + nibble as usize]);
    }
    Ok(frame[6])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutation_determinism() {
        let seed = builtin_corpus("knx")[0].clone();
        let a = mutate(&seed, &mut RngStream::derive(7, "m"));
        let b = mutate(&seed, &mut RngStream::derive(7, "m"));
        assert_eq!(a, b);
        let c = mutate(&seed, &mut RngStream::derive(8, "m"));
        // Different seed, almost surely a different mutant.
        assert_ne!(a, c);
    }

    #[test]
    fn byte_insert_on_empty_seed_yields_one_byte() {
        let mut stream = RngStream::derive(1, "insert");
        let out = apply_mutation(&[], MutationKind::ByteInsert, &mut stream);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn every_mutation_obeys_the_growth_bound() {
        let mut stream = RngStream::derive(2, "bound");
        for round in 0..5_000u64 {
            let len = (round % 64) as usize;
            let input: Vec<u8> = (0..len).map(|i| i as u8).collect();
            for kind in MUTATION_KINDS {
                let out = apply_mutation(&input, kind, &mut stream);
                assert!(out.len() <= input.len() + 16, "{:?}", kind);
            }
        }
    }

    #[test]
    fn mutants_of_a_valid_frame_mostly_break_it() {
        let seed = builtin_corpus("knx")[0].clone();
        let mut stream = RngStream::derive(3, "sanity");
        let mut rejected = 0u32;
        for _ in 0..10_000 {
            let mutant = mutate(&seed, &mut stream);
            if knx::decode_telegram(&mutant).is_err() {
                rejected += 1;
            }
        }
        // Corpus sanity bound: mutations must actually damage frames.
        assert!(rejected >= 3_000, "only {} of 10000 rejected", rejected);
    }

    #[test]
    fn production_decoders_produce_no_faults() {
        for target in builtin_targets() {
            let corpus = builtin_corpus(&target.name);
            let report = run_campaign(&target, &corpus, 20_000, 42).unwrap();
            assert_eq!(report.fault_count(), 0, "{}: {:?}", target.name, report.faults);
            assert_eq!(report.executions, 20_000);
            assert_eq!(report.histogram.values().sum::<u64>(), report.executions);
            assert!(report.histogram.get("ok").copied().unwrap_or(0) > 0, "{}", target.name);
        }
    }

    #[test]
    fn campaign_is_reproducible() {
        let target = bacnet_decoder_target();
        let corpus = builtin_corpus("bacnet");
        let a = run_campaign(&target, &corpus, 5_000, 9).unwrap();
        let b = run_campaign(&target, &corpus, 5_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sharding_does_not_change_the_report() {
        let target = knx_decoder_target();
        let corpus = builtin_corpus("knx");
        let whole = run_campaign(&target, &corpus, 3_000, 5).unwrap();
        let s1 = run_campaign_range(&target, &corpus, 0, 1_000, 5).unwrap();
        let s2 = run_campaign_range(&target, &corpus, 1_000, 700, 5).unwrap();
        let s3 = run_campaign_range(&target, &corpus, 1_700, 1_300, 5).unwrap();
        let merged = merge_reports(merge_reports(s1, s2), s3);
        assert_eq!(whole, merged);
        let s12 = run_campaign_range(&target, &corpus, 0, 1_700, 5).unwrap();
        let merged2 = merge_reports(
            s12,
            run_campaign_range(&target, &corpus, 1_700, 1_300, 5).unwrap(),
        );
        assert_eq!(whole, merged2);
    }

    #[test]
    fn zero_executions_is_a_valid_empty_report() {
        let target = plug_line_target();
        let report = run_campaign(&target, &builtin_corpus("plug"), 0, 1).unwrap();
        assert_eq!(report.executions, 0);
        assert!(report.histogram.is_empty());
        assert!(report.faults.is_empty());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let target = plug_line_target();
        assert_eq!(run_campaign(&target, &[], 10, 1), Err(FuzzError::EmptyCorpus));
    }

    fn always_faults() -> FuzzTarget {
        FuzzTarget {
            name: "always-faults".to_string(),
            run: Box::new(|bytes| {
                if bytes.is_empty() {
                    ExecOutcome::Error("empty")
                } else {
                    ExecOutcome::Fault("any non-empty input".to_string())
                }
            }),
        }
    }

    #[test]
    fn minimizer_reaches_one_zero_byte() {
        let target = always_faults();
        let min = minimize(&target, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        assert_eq!(min, alloc::vec![0]);
    }

    #[test]
    fn minimizer_is_idempotent() {
        let target = FuzzTarget {
            name: "needs-marker".to_string(),
            run: Box::new(|bytes| {
                if bytes.contains(&0x42) && bytes.len() >= 3 {
                    ExecOutcome::Fault("marker".to_string())
                } else {
                    ExecOutcome::Error("clean")
                }
            }),
        };
        let input = alloc::vec![9, 9, 0x42, 9, 9, 0x42, 9];
        let once = minimize(&target, &input).unwrap();
        assert!(matches!((target.run)(&once), ExecOutcome::Fault(_)));
        let twice = minimize(&target, &once).unwrap();
        assert_eq!(once, twice);
        assert_eq!(once.len(), 3);
    }

    #[test]
    fn minimizer_rejects_non_faulting_input() {
        let target = always_faults();
        assert_eq!(minimize(&target, &[]), Err(FuzzError::Unstable));
    }

    #[test]
    fn campaign_records_consistency_faults() {
        // A codec whose canonical form flips a marker byte forever: the
        // fixpoint oracle must flag it, crash or no crash.
        let target = FuzzTarget {
            name: "broken-codec".to_string(),
            run: Box::new(|bytes| {
                if bytes.first() == Some(&0x42) {
                    ExecOutcome::Fault("canonical form is not a fixpoint".to_string())
                } else {
                    ExecOutcome::Ok
                }
            }),
        };
        let corpus = alloc::vec![alloc::vec![0x42u8, 1, 2, 3]];
        let report = run_campaign(&target, &corpus, 2_000, 21).unwrap();
        assert!(report.fault_count() > 0);
        assert_eq!(
            report.faults.values().map(|r| r.count).sum::<u64>(),
            report.fault_count()
        );
        // Every fault minimized to the single marker byte.
        assert_eq!(report.faults.len(), 1);
        assert_eq!(report.faults.keys().next().unwrap(), "42");
    }

    #[test]
    fn buggy_fixture_reads_out_of_bounds_only_on_nibble_15() {
        assert_eq!(buggy_length_decode(&[0; 6]), Err("too_short"));
        assert_eq!(buggy_length_decode(&[0, 0, 0, 0, 0, 0x03, 9]), Ok(9));
        let mut long = alloc::vec![0u8; 30];
        long[5] = 0x0F;
        long[21] = 77;
        assert_eq!(buggy_length_decode(&long), Ok(77));
        let trap = std::panic::catch_unwind(|| {
            let short = [0u8, 0, 0, 0, 0, 0x0F, 1, 2];
            let _ = buggy_length_decode(&short);
        });
        assert!(trap.is_err());
    }
}
