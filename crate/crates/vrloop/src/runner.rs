//! Bounded-concurrency execution of seed-isolated work items, plus the
//! trace-file helpers that make runs resumable.
//!
//! The scheduler owns nothing but indices: workers pull the next item off an
//! atomic counter, results flow back over a channel, and the caller's sink
//! runs on the calling thread only — so a JSONL writer in the sink is a
//! single writer without any locking. Because every item derives its
//! randomness from its own (problem, loop) key, outputs are a pure function
//! of config and seed; the concurrency bound changes completion order, never
//! the set of results.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use sha2::{Digest, Sha256};

use crate::error::{Result, VrError};
use crate::jsonl::read_jsonl_or_empty;
use crate::types::{Termination, VRTrace};

/// One item the scheduler could not finish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScheduleReport {
    /// Items actually claimed by workers this invocation.
    pub attempted: usize,
    pub succeeded: usize,
    pub failures: Vec<ScheduleFailure>,
    /// Items left untouched by an early stop.
    pub remaining: usize,
}

impl ScheduleReport {
    pub fn all_succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Run `work` over `items` with at most `in_flight` items active at once.
///
/// `work` runs on worker threads and must be independent per item; `sink`
/// receives every successful result on the calling thread, in completion
/// order. Item failures are recorded and the schedule continues; a sink
/// failure (persistence is broken) aborts. `stop_after` caps how many items
/// this invocation claims, leaving the rest for a resume.
pub fn schedule_loops<T, R>(
    items: &[T],
    in_flight: usize,
    stop_after: Option<usize>,
    work: impl Fn(usize, &T) -> Result<R> + Sync,
    mut sink: impl FnMut(usize, R) -> Result<()>,
) -> Result<ScheduleReport>
where
    T: Sync,
    R: Send,
{
    if in_flight < 1 {
        return Err(VrError::InvalidParameter(
            "in-flight bound must be >= 1".into(),
        ));
    }
    let claimable = stop_after.map_or(items.len(), |s| s.min(items.len()));
    let mut report = ScheduleReport {
        remaining: items.len() - claimable,
        ..ScheduleReport::default()
    };
    if claimable == 0 {
        return Ok(report);
    }

    let next = AtomicUsize::new(0);
    let workers = in_flight.min(claimable);
    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::channel::<(usize, Result<R>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let work = &work;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= claimable {
                    break;
                }
                // A closed channel means the caller is bailing out; stop
                // claiming work.
                if tx.send((i, work(i, &items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (index, result) in rx {
            report.attempted += 1;
            match result {
                Ok(r) => {
                    sink(index, r)?;
                    report.succeeded += 1;
                }
                Err(e) => report.failures.push(ScheduleFailure {
                    index,
                    error: e.to_string(),
                }),
            }
        }
        Ok(())
    })?;
    report.failures.sort_by_key(|f| f.index);
    Ok(report)
}

/// Keys of loops already persisted in a trace file. Error-terminated traces
/// are deliberately absent — a resume runs them again.
pub fn completed_loop_keys(path: &Path) -> Result<BTreeSet<(String, u64)>> {
    let traces: Vec<VRTrace> = read_jsonl_or_empty(path)?;
    Ok(traces
        .into_iter()
        .filter(|t| t.termination != Termination::Error)
        .map(|t| (t.problem_id, t.loop_id))
        .collect())
}

/// Load a trace file keyed by (problem, loop), keeping the last occurrence
/// of each key — a successful re-run supersedes an error-terminated first
/// try. Output is key-ordered, independent of append order.
pub fn load_traces_deduped(path: &Path) -> Result<Vec<VRTrace>> {
    let traces: Vec<VRTrace> = read_jsonl_or_empty(path)?;
    let mut by_key: BTreeMap<(String, u64), VRTrace> = BTreeMap::new();
    for t in traces {
        by_key.insert((t.problem_id.clone(), t.loop_id), t);
    }
    Ok(by_key.into_values().collect())
}

/// Order- and scheduling-independent digest of a trace set: the SHA-256 of
/// the key-sorted serialized traces.
pub fn trace_digest(traces: &[VRTrace]) -> Result<String> {
    let mut sorted: Vec<&VRTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.problem_id, a.loop_id).cmp(&(&b.problem_id, b.loop_id))
    });
    let mut hasher = Sha256::new();
    for t in sorted {
        hasher.update(serde_json::to_string(t)?.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex::encode(hasher.finalize()))
}

/// The (problem, loop) grid minus already-completed keys, problem-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopItem {
    pub problem_index: usize,
    pub loop_id: u64,
}

pub fn pending_loop_items(
    problem_ids: &[String],
    loops_per_problem: u64,
    done: &BTreeSet<(String, u64)>,
) -> Vec<LoopItem> {
    let mut items = Vec::new();
    for (problem_index, id) in problem_ids.iter().enumerate() {
        for loop_id in 0..loops_per_problem {
            if !done.contains(&(id.clone(), loop_id)) {
                items.push(LoopItem {
                    problem_index,
                    loop_id,
                });
            }
        }
    }
    items
}
