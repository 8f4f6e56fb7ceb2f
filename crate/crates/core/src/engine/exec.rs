use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use super::eval::{prepare_bucket, PreparedBucket};
use super::plan::QueryPlan;
use super::result::ResultLine;
use super::store::DataStore;

pub const DEFAULT_BATCH_SIZE: usize = 1000;

/// Entities handed to a pool thread at a time.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    pub batch_size: usize,
    /// Consult import statistics to avoid reading irrelevant imports.
    pub skip: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            batch_size: DEFAULT_BATCH_SIZE,
            skip: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub entities: usize,
    pub lines: usize,
    pub batches: usize,
    pub imports_scanned: usize,
    pub imports_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("execution canceled")]
    Canceled,
    #[error("evaluation failed: {0}")]
    Failed(String),
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic during evaluation".into()
    }
}

/// Evaluates the plan over the given buckets on `pool`. Lines reach `sink`
/// in batches of `batch_size` (the last one may be smaller), in no
/// particular order. A panic while evaluating fails the whole execution.
pub fn execute(
    plan: &QueryPlan,
    store: &DataStore,
    buckets: &[u32],
    pool: &rayon::ThreadPool,
    options: ExecOptions,
    cancel: &AtomicBool,
    sink: &(dyn Fn(Vec<ResultLine>) + Sync),
) -> Result<ExecStats, ExecError> {
    let batch_size = options.batch_size.max(1);
    pool.install(|| {
        let prepared: Vec<PreparedBucket> = catch_unwind(AssertUnwindSafe(|| {
            buckets
                .par_iter()
                .map(|b| prepare_bucket(plan, store.imports(*b), options.skip))
                .collect()
        }))
        .map_err(|p| ExecError::Failed(panic_message(p)))?;

        let tasks: Vec<(usize, &str)> = prepared
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.entities().into_iter().map(move |e| (i, e)))
            .collect();
        let pending: Mutex<Vec<ResultLine>> = Mutex::new(Vec::new());
        let lines = AtomicUsize::new(0);
        let batches = AtomicUsize::new(0);
        let emit = |batch: Vec<ResultLine>| {
            lines.fetch_add(batch.len(), Ordering::Relaxed);
            batches.fetch_add(1, Ordering::Relaxed);
            sink(batch);
        };

        tasks.par_chunks(CHUNK).try_for_each(|chunk| {
            if cancel.load(Ordering::Relaxed) {
                return Err(ExecError::Canceled);
            }
            let produced: Vec<ResultLine> = catch_unwind(AssertUnwindSafe(|| {
                chunk
                    .iter()
                    .flat_map(|(b, entity)| prepared[*b].evaluate(entity))
                    .collect()
            }))
            .map_err(|p| ExecError::Failed(panic_message(p)))?;
            let full: Vec<Vec<ResultLine>> = {
                let mut pending = pending.lock().expect("batch lock");
                pending.extend(produced);
                let mut full = Vec::new();
                while pending.len() >= batch_size {
                    let rest = pending.split_off(batch_size);
                    full.push(std::mem::replace(&mut *pending, rest));
                }
                full
            };
            full.into_iter().for_each(emit);
            Ok(())
        })?;
        if cancel.load(Ordering::Relaxed) {
            return Err(ExecError::Canceled);
        }
        let rest = std::mem::take(&mut *pending.lock().expect("batch lock"));
        if !rest.is_empty() {
            emit(rest);
        }
        Ok(ExecStats {
            entities: tasks.len(),
            lines: lines.load(Ordering::Relaxed),
            batches: batches.load(Ordering::Relaxed),
            imports_scanned: prepared.iter().map(PreparedBucket::scanned_imports).sum(),
            imports_skipped: prepared.iter().map(PreparedBucket::skipped_imports).sum(),
        })
    })
}

/// Single-threaded evaluation of every bucket in the store.
pub fn evaluate_all(plan: &QueryPlan, store: &DataStore, skip: bool) -> Vec<ResultLine> {
    let mut lines = Vec::new();
    for b in store.bucket_ids() {
        let prepared = prepare_bucket(plan, store.imports(b), skip);
        for entity in prepared.entities() {
            lines.extend(prepared.evaluate(entity));
        }
    }
    lines
}
