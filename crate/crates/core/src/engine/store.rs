use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::storage::{compute_statistics, Bucket, ColumnAssignment, ImportStatistics};

/// A bucket together with its load-time concept assignments and statistics.
#[derive(Debug)]
pub struct LoadedImport {
    bucket: Bucket,
    assignments: Vec<ColumnAssignment>,
    stats: ImportStatistics,
}

impl LoadedImport {
    /// Checks the bucket against the dataset schema and precomputes the
    /// assignment of every connector code column reading its table.
    pub fn new(bucket: Bucket, registry: &Registry) -> Result<LoadedImport> {
        let schema = registry
            .table(bucket.table())
            .ok_or_else(|| Error::Id(format!("unknown table '{}'", bucket.table())))?;
        if schema != bucket.schema() {
            return Err(Error::Format(format!(
                "import '{}' was built for a different schema of table '{}'",
                bucket.import_id(),
                bucket.table()
            )));
        }
        if bucket.bucket_count() != registry.dataset().bucket_count {
            return Err(Error::Format(format!(
                "import '{}' uses {} buckets, dataset {}",
                bucket.import_id(),
                bucket.bucket_count(),
                registry.dataset().bucket_count
            )));
        }
        let mut import = LoadedImport {
            bucket,
            assignments: Vec::new(),
            stats: ImportStatistics::default(),
        };
        import.reassign(registry);
        Ok(import)
    }

    /// Recomputes assignments and statistics, e.g. after concepts changed.
    pub fn reassign(&mut self, registry: &Registry) {
        let mut assignments: Vec<ColumnAssignment> = Vec::new();
        for (concept, tree) in registry.concepts().iter().enumerate() {
            for connector in &tree.connectors {
                if connector.table != self.bucket.table() {
                    continue;
                }
                let Some(column) = connector
                    .column
                    .as_deref()
                    .and_then(|c| self.bucket.schema().column_index(c))
                else {
                    continue;
                };
                if assignments.iter().any(|a| a.concept == concept && a.column == column) {
                    continue;
                }
                let dictionary = self.bucket.block(column).dictionary().unwrap_or(&[]);
                assignments.push(ColumnAssignment {
                    concept,
                    tree: tree.clone(),
                    column,
                    assignment: tree.build_assignment(dictionary),
                });
            }
        }
        self.stats = compute_statistics(&self.bucket, &assignments);
        self.assignments = assignments;
    }

    pub fn bucket(&self) -> &Bucket {
        &self.bucket
    }

    pub fn statistics(&self) -> &ImportStatistics {
        &self.stats
    }

    pub fn assignment(&self, concept: usize, column: usize) -> Option<&ColumnAssignment> {
        self.assignments
            .iter()
            .find(|a| a.concept == concept && a.column == column)
    }
}

/// All imports held by one process, grouped by bucket.
#[derive(Debug, Default, Clone)]
pub struct DataStore {
    buckets: BTreeMap<u32, Vec<Arc<LoadedImport>>>,
}

impl DataStore {
    pub fn new() -> Self {
        DataStore::default()
    }

    pub fn add(&mut self, import: LoadedImport) {
        self.buckets
            .entry(import.bucket.bucket_id())
            .or_default()
            .push(Arc::new(import));
    }

    pub fn bucket_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.buckets.keys().copied()
    }

    pub fn imports(&self, bucket: u32) -> &[Arc<LoadedImport>] {
        self.buckets.get(&bucket).map_or(&[], Vec::as_slice)
    }

    pub fn import_count(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn row_count(&self) -> usize {
        self.buckets
            .values()
            .flatten()
            .map(|i| i.bucket.row_count())
            .sum()
    }

    /// Re-derives assignments of every import against a changed registry.
    pub fn reassign(&mut self, registry: &Registry) {
        for imports in self.buckets.values_mut() {
            for import in imports.iter_mut() {
                match Arc::get_mut(import) {
                    Some(i) => i.reassign(registry),
                    None => {
                        let bucket = import.bucket.clone();
                        let mut fresh = LoadedImport {
                            bucket,
                            assignments: Vec::new(),
                            stats: ImportStatistics::default(),
                        };
                        fresh.reassign(registry);
                        *import = Arc::new(fresh);
                    }
                }
            }
        }
    }
}
