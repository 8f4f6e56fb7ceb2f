//! Per-import statistics used to skip imports that cannot contribute.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use crate::concepts::{Assigned, Assignment, ConceptTree};
use crate::types::{ColumnType, DateRange, Day};

use super::bucket::Bucket;
use super::column::{ColumnBlock, Encoding};

/// Statistics of one column block. `min`/`max` are set for numeric and date
/// columns with at least one value; for DATE_RANGE they cover all bounds,
/// with `Day::MIN`/`Day::MAX` standing for open sides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ColumnStats {
    pub min: Option<i64>,
    pub max: Option<i64>,
    pub distinct: u64,
    pub nulls: u64,
}

impl ColumnStats {
    /// Days covered by a date column, `None` when it holds no data.
    pub fn date_span(&self) -> Option<DateRange> {
        match (self.min, self.max) {
            (Some(lo), Some(hi)) => Some(DateRange::from_bounds(lo as Day, hi as Day)),
            _ => None,
        }
    }
}

pub(crate) fn column_statistics(block: &ColumnBlock) -> ColumnStats {
    let rows = 0..block.len();
    let nulls = rows.clone().filter(|&r| !block.is_present(r)).count() as u64;
    let present = || rows.clone().filter(|&r| block.is_present(r));
    match block.encoding() {
        Encoding::BitPacked(_) => {
            let values: Vec<i64> = present().filter_map(|r| block.int_at(r)).collect();
            ColumnStats {
                min: values.iter().min().copied(),
                max: values.iter().max().copied(),
                distinct: values.iter().collect::<HashSet<_>>().len() as u64,
                nulls,
            }
        }
        Encoding::Dict { dictionary, .. } => ColumnStats {
            min: None,
            max: None,
            distinct: dictionary.len() as u64,
            nulls,
        },
        Encoding::Bits(bits) => ColumnStats {
            min: None,
            max: None,
            distinct: present()
                .map(|r| bits.get(r))
                .collect::<HashSet<_>>()
                .len() as u64,
            nulls,
        },
        Encoding::RangePair { .. } => {
            let ranges: Vec<DateRange> = present().filter_map(|r| block.range_at(r)).collect();
            ColumnStats {
                min: ranges.iter().map(|r| r.lo() as i64).min(),
                max: ranges.iter().map(|r| r.hi() as i64).max(),
                distinct: ranges.iter().collect::<HashSet<_>>().len() as u64,
                nulls,
            }
        }
    }
}

/// Concept assignment of one code column of a loaded import.
#[derive(Debug, Clone)]
pub struct ColumnAssignment {
    /// Index of the concept in the registry.
    pub concept: usize,
    pub tree: Arc<ConceptTree>,
    pub column: usize,
    pub assignment: Assignment,
}

/// Concept nodes that at least one row resolves to, as merged pre-order
/// intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNodeSet {
    pub concept: usize,
    pub column: usize,
    pub intervals: Vec<(u32, u32)>,
}

impl ConceptNodeSet {
    /// True iff some present node lies within `[lo, hi]`.
    pub fn intersects(&self, lo: u32, hi: u32) -> bool {
        let i = self.intervals.partition_point(|&(_, end)| end < lo);
        self.intervals.get(i).is_some_and(|&(start, _)| start <= hi)
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportStatistics {
    pub columns: Vec<ColumnStats>,
    pub concepts: Vec<ConceptNodeSet>,
}

impl ImportStatistics {
    pub fn node_set(&self, concept: usize, column: usize) -> Option<&ConceptNodeSet> {
        self.concepts
            .iter()
            .find(|s| s.concept == concept && s.column == column)
    }
}

/// Column statistics plus, for every assigned code column, the set of nodes
/// that any row resolves to. Deferred assignments are resolved per row so
/// the set is never missing a node a query could match.
pub fn compute_statistics(bucket: &Bucket, assignments: &[ColumnAssignment]) -> ImportStatistics {
    let concepts = assignments
        .iter()
        .map(|a| {
            let block = bucket.block(a.column);
            debug_assert_eq!(block.column_type(), ColumnType::String);
            let mut nodes = BTreeSet::new();
            if a.assignment.has_deferred() {
                for row in 0..block.len() {
                    let Some(code) = block.code_at(row) else { continue };
                    match a.assignment.get(code) {
                        Assigned::Node(n) => {
                            nodes.insert(n.0);
                        }
                        Assigned::NoMatch => {}
                        Assigned::Deferred => {
                            let text = &block.dictionary().expect("string block")[code as usize];
                            let aux = |column: &str| {
                                let idx = bucket.schema().column_index(column)?;
                                bucket.block(idx).value_unchecked(row).map(|v| v.to_string())
                            };
                            if let Some(n) = a.tree.resolve_code(text, &aux) {
                                nodes.insert(n.0);
                            }
                        }
                    }
                }
            } else {
                // Every dictionary entry occurs in at least one row.
                for code in 0..a.assignment.len() as u32 {
                    if let Assigned::Node(n) = a.assignment.get(code) {
                        nodes.insert(n.0);
                    }
                }
            }
            let mut intervals: Vec<(u32, u32)> = Vec::new();
            for n in nodes {
                match intervals.last_mut() {
                    Some((_, end)) if *end + 1 == n => *end = n,
                    _ => intervals.push((n, n)),
                }
            }
            ConceptNodeSet {
                concept: a.concept,
                column: a.column,
                intervals,
            }
        })
        .collect();
    ImportStatistics {
        columns: bucket.column_stats().to_vec(),
        concepts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::NoAux;
    use crate::storage::{build_bucket, ColumnDef, EventRow, TableSchema};
    use crate::types::{day_from_ymd, Value};
    use serde_json::json;

    fn schema() -> TableSchema {
        TableSchema::new(
            "t",
            vec![
                ColumnDef::new("code", ColumnType::String),
                ColumnDef::new("date", ColumnType::Date),
            ],
        )
        .unwrap()
    }

    fn tree() -> Arc<ConceptTree> {
        let doc = json!({"name": "icd", "children": [
            {"name": "a", "condition": {"type": "PREFIX", "prefix": "A"}},
            {"name": "g20-g26", "condition": {"type": "PREFIX_RANGE", "min": "G20", "max": "G26"}, "children": [
                {"name": "g20", "condition": {"type": "PREFIX", "prefix": "G20"}, "children": [
                    {"name": "g20_1", "condition": {"type": "PREFIX", "prefix": "G201"}}
                ]}
            ]}
        ]});
        Arc::new(ConceptTree::parse(&doc, "d", &[]).unwrap())
    }

    fn bucket(rows: &[(&str, &str, (i32, u32, u32))]) -> Bucket {
        let rows = rows
            .iter()
            .map(|(e, code, (y, m, d))| {
                EventRow::new(
                    *e,
                    vec![
                        Some(Value::String(code.to_string())),
                        Some(Value::Date(day_from_ymd(*y, *m, *d))),
                    ],
                )
            })
            .collect();
        build_bucket(rows, &schema(), "i", 0, 1).unwrap()
    }

    fn assign(bucket: &Bucket, tree: &Arc<ConceptTree>) -> ColumnAssignment {
        ColumnAssignment {
            concept: 0,
            tree: tree.clone(),
            column: 0,
            assignment: tree.build_assignment(bucket.block(0).dictionary().unwrap()),
        }
    }

    #[test]
    fn date_min_max() {
        let b = bucket(&[("p", "G2090", (2015, 2, 5)), ("p", "G2000", (2015, 12, 4)), ("q", "A00", (2015, 6, 1))]);
        let stats = compute_statistics(&b, &[]);
        assert_eq!(stats.columns[1].min, Some(day_from_ymd(2015, 2, 5) as i64));
        assert_eq!(stats.columns[1].max, Some(day_from_ymd(2015, 12, 4) as i64));
        assert_eq!(stats.columns[0].distinct, 3);
    }

    #[test]
    fn node_set_within_subtree_and_sound() {
        let t = tree();
        let b = bucket(&[("p", "G2090", (2015, 1, 1)), ("q", "G2011", (2015, 1, 2)), ("q", "G201", (2015, 1, 3))]);
        let a = assign(&b, &t);
        let stats = compute_statistics(&b, std::slice::from_ref(&a));
        let set = &stats.concepts[0];
        let (lo, hi) = t.interval(t.node_by_path("g20-g26.g20").unwrap()).unwrap();
        for &(s, e) in &set.intervals {
            assert!(lo <= s && e <= hi);
        }
        // every row's resolved node is in the set
        for row in 0..b.row_count() {
            let code = b.block(0).read_value(row).unwrap().unwrap().to_string();
            let n = t.resolve_code(&code, &NoAux).unwrap();
            assert!(set.intersects(n.0, n.0));
        }
        let a_node = t.node_by_path("a").unwrap();
        assert!(!set.intersects(a_node.0, a_node.0));
    }

    #[test]
    fn empty_bucket_has_no_data() {
        let t = tree();
        let b = bucket(&[]);
        let a = assign(&b, &t);
        let stats = compute_statistics(&b, &[a]);
        assert!(stats.concepts[0].is_empty());
        assert_eq!(stats.columns[1].date_span(), None);
    }
}
