//! Campaign runtime around the core fuzzer: panic trapping so decoder
//! targets may not unwind past an execution, a quiet panic hook so a
//! million faulting runs do not spam stderr, and a bounded worker pool
//! whose merged report is byte-identical to a single-threaded run.

use std::cell::Cell;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Once;
use std::thread;

use unibed_core::fuzz::{
    self, builtin_corpus, ExecOutcome, FuzzReport, FuzzTarget,
};

thread_local! {
    static QUIET_PANICS: Cell<bool> = const { Cell::new(false) };
}

static HOOK: Once = Once::new();

/// Chains a filter in front of the current panic hook. Panics raised
/// while a trapped target runs are swallowed; everything else still
/// reaches the previous hook.
pub fn install_quiet_panic_hook() {
    HOOK.call_once(|| {
        let prev = panic::take_hook();
        panic::set_hook(Box::new(move |info| {
            if !QUIET_PANICS.with(|q| q.get()) {
                prev(info);
            }
        }));
    });
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Converts unwinds into `Fault` outcomes. Campaign and minimizer both
/// replay inputs many times, so the wrapper must be re-entrant and quiet.
pub fn trap_panics(target: FuzzTarget) -> FuzzTarget {
    install_quiet_panic_hook();
    let FuzzTarget { name, run } = target;
    FuzzTarget {
        name,
        run: Box::new(move |data| {
            QUIET_PANICS.with(|q| q.set(true));
            let outcome = panic::catch_unwind(AssertUnwindSafe(|| run(data)));
            QUIET_PANICS.with(|q| q.set(false));
            match outcome {
                Ok(o) => o,
                Err(payload) => ExecOutcome::Fault(format!("panic: {}", panic_message(&*payload))),
            }
        }),
    }
}

/// Deliberately broken length-field decoder, shipped so the pipeline's
/// ability to find, trap and minimize a real out-of-bounds fault stays
/// under test.
pub fn sentinel_target() -> FuzzTarget {
    trap_panics(FuzzTarget {
        name: "sentinel".to_string(),
        run: Box::new(|data| match fuzz::buggy_length_decode(data) {
            Ok(_) => ExecOutcome::Ok,
            Err(label) => ExecOutcome::Error(label),
        }),
    })
}

fn sentinel_corpus() -> Vec<Vec<u8>> {
    vec![vec![0x81, 0x0A, 0x00, 0x08, 0x01, 0x00, 0x10, 0x08]]
}

pub const TARGET_NAMES: [&str; 5] = ["knx", "bacnet", "plug", "airq", "sentinel"];

type Factory = fn() -> FuzzTarget;

/// Panic-trapped factory for a named target, or None.
pub fn target_factory(name: &str) -> Option<Factory> {
    match name {
        "knx" => Some(|| trap_panics(fuzz::knx_decoder_target())),
        "bacnet" => Some(|| trap_panics(fuzz::bacnet_decoder_target())),
        "plug" => Some(|| trap_panics(fuzz::plug_line_target())),
        "airq" => Some(|| trap_panics(fuzz::airq_report_target())),
        "sentinel" => Some(sentinel_target),
        _ => None,
    }
}

pub fn corpus_for(name: &str) -> Vec<Vec<u8>> {
    if name == "sentinel" {
        sentinel_corpus()
    } else {
        builtin_corpus(name)
    }
}

/// Runs `executions` mutations split over a bounded worker pool. Every
/// execution derives its own RNG stream from the master seed, so the
/// merged report does not depend on the worker count.
pub fn run_parallel(
    name: &str,
    executions: u64,
    master_seed: u64,
    workers: usize,
) -> Result<FuzzReport, String> {
    let factory = target_factory(name).ok_or_else(|| format!("unknown fuzz target {:?}", name))?;
    let corpus = corpus_for(name);
    let workers = workers.clamp(1, 64).min(executions.max(1) as usize);

    let mut ranges = Vec::with_capacity(workers);
    let per = executions / workers as u64;
    let rem = executions % workers as u64;
    let mut start = 0u64;
    for w in 0..workers as u64 {
        let count = per + if w < rem { 1 } else { 0 };
        if count > 0 {
            ranges.push((start, count));
        }
        start += count;
    }

    let shard_reports: Result<Vec<FuzzReport>, String> = thread::scope(|scope| {
        let mut handles = Vec::with_capacity(ranges.len());
        for (start, count) in &ranges {
            let (start, count) = (*start, *count);
            let corpus = &corpus;
            handles.push(scope.spawn(move || {
                let target = factory();
                fuzz::run_campaign_range(&target, corpus, start, count, master_seed)
                    .map_err(|e| format!("{:?}", e))
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| "fuzz worker panicked".to_string())?)
            .collect()
    });

    let mut merged: Option<FuzzReport> = None;
    for report in shard_reports? {
        merged = Some(match merged {
            None => report,
            Some(acc) => fuzz::merge_reports(acc, report),
        });
    }
    merged.ok_or_else(|| "zero executions".to_string())
}
