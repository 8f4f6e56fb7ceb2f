//! Test support: a brute-force reference interpreter and generators for
//! random datasets, concept trees and queries.

pub mod days;
pub mod gen;
pub mod oracle;
pub mod parkinson;

use std::collections::HashMap;
use std::sync::Arc;

use cohort_core::engine::{evaluate_all, plan, DataStore, ResultLine, SavedTable};
use cohort_core::query::parse_query;
use cohort_core::registry::Registry;
use cohort_core::render::sort_lines;
use serde_json::Value as Json;

pub use oracle::{Oracle, RawData, RawTable};

/// Parses, plans and evaluates a query document single-threaded.
pub fn run_engine(
    registry: &Registry,
    store: &DataStore,
    query: &Json,
    saved: &HashMap<String, SavedTable>,
    skip: bool,
) -> cohort_core::Result<Vec<ResultLine>> {
    let query = parse_query(query, registry)?;
    let saved: HashMap<String, Arc<SavedTable>> = saved.iter().map(|(k, v)| (k.clone(), Arc::new(v.clone()))).collect();
    let plan = plan(&query, registry, &saved)?;
    let mut lines = evaluate_all(&plan, store, skip);
    sort_lines(&mut lines);
    Ok(lines)
}

/// Lines in output order, for comparing results as multisets.
pub fn sorted(mut lines: Vec<ResultLine>) -> Vec<ResultLine> {
    sort_lines(&mut lines);
    lines
}

/// Outcome of comparing the engine with the reference interpreter on one
/// random dataset.
#[derive(Debug, Clone, Default)]
pub struct Equivalence {
    pub queries: usize,
    pub lines: usize,
    pub oracle_time: std::time::Duration,
    /// Description of the first disagreement, if any.
    pub mismatch: Option<String>,
}

/// Generates a dataset from `seed` and evaluates `queries` random queries
/// with both the engine (with and without import skipping) and the
/// reference interpreter.
pub fn check_equivalence(seed: u64, queries: usize, max_entities: usize, max_events: usize) -> Equivalence {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = gen::random_dataset(&mut rng, max_entities, max_events);
    let registry = gen::registry(&data);
    let store = gen::store(&data, &registry);
    let saved = gen::saved_tables(&mut rng, &data, 2);
    let mut saved_ids: Vec<String> = saved.keys().cloned().collect();
    saved_ids.sort();
    let generator = gen::QueryGen::new(&data, saved_ids);
    let oracle = Oracle::new(&data, &saved);
    let mut report = Equivalence::default();
    for _ in 0..queries {
        let query = generator.query(&mut rng);
        let started = std::time::Instant::now();
        let expected = sorted(oracle.run(&query));
        report.oracle_time += started.elapsed();
        for skip in [true, false] {
            let actual = match run_engine(&registry, &store, &query, &saved, skip) {
                Ok(lines) => lines,
                Err(e) => {
                    report.mismatch = Some(format!("seed {seed}: engine rejected {query}: {e}"));
                    return report;
                }
            };
            if actual != expected {
                let first = actual
                    .iter()
                    .zip(&expected)
                    .position(|(a, b)| a != b)
                    .unwrap_or(actual.len().min(expected.len()));
                report.mismatch = Some(format!(
                    "seed {seed}, skip {skip}: {} engine lines vs {} expected; first difference at {first}\nquery: {query}\nengine: {:?}\noracle: {:?}",
                    actual.len(),
                    expected.len(),
                    actual.get(first),
                    expected.get(first)
                ));
                return report;
            }
        }
        report.queries += 1;
        report.lines += expected.len();
    }
    report
}
