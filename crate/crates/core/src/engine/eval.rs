use std::collections::HashSet;
use std::sync::Arc;

use crate::concepts::Assigned;
use crate::storage::{Encoding, ImportStatistics};
use crate::types::{quarters_of_range, DateRange, Value};

use super::dateset::{DateSet, Mask};
use super::plan::{AggFilter, EventFilter, PlanNode, QueryPlan, Scan, SelectSpec};
use super::result::{ResultLine, SelectValue};
use super::store::LoadedImport;

const NO: u8 = 0;
const YES: u8 = 1;
const DEFER: u8 = 2;

/// Whether any event of an import with these statistics could match the
/// scan. Unknown statistics never rule an import out.
fn scan_may_match(stats: &ImportStatistics, scan: &Scan) -> bool {
    if !scan.all_nodes {
        if let Some(set) = scan
            .code_column
            .and_then(|c| stats.node_set(scan.concept, c))
        {
            if !scan.intervals.iter().any(|&(lo, hi)| set.intersects(lo, hi)) {
                return false;
            }
        }
    }
    match scan.mask {
        Mask::All => true,
        Mask::Empty => false,
        Mask::Range(m) => stats
            .columns
            .get(scan.validity)
            .map(|c| c.date_span().is_some_and(|span| span.intersects(&m)))
            .unwrap_or(true),
    }
}

/// True only if no event of the import can contribute to the plan: no scan
/// reads its table, or for every scan the requested concept nodes are absent
/// or the validity dates lie outside the scan's date restriction.
pub fn can_skip(stats: &ImportStatistics, table: &str, plan: &QueryPlan) -> bool {
    plan.scans
        .iter()
        .filter(|s| s.table == table)
        .all(|s| !scan_may_match(stats, s))
}

struct PreparedScan {
    /// Per dictionary code of the code column; `None` when every event
    /// matches the requested nodes.
    codes: Option<Vec<u8>>,
    /// Per event filter: selected dictionary codes of SELECT filters over
    /// dictionary-encoded columns.
    key_codes: Vec<Option<Vec<bool>>>,
}

struct PreparedImport {
    import: Arc<LoadedImport>,
    scans: Vec<Option<PreparedScan>>,
    /// Column carrying the query's secondary id, if this table is scanned.
    secondary: Option<usize>,
}

/// A plan bound to the imports of one bucket.
pub struct PreparedBucket<'p> {
    plan: &'p QueryPlan,
    imports: Vec<PreparedImport>,
}

impl PreparedBucket<'_> {
    pub fn scanned_imports(&self) -> usize {
        self.imports
            .iter()
            .filter(|i| i.scans.iter().any(Option::is_some))
            .count()
    }

    pub fn skipped_imports(&self) -> usize {
        self.imports.len() - self.scanned_imports()
    }
}

fn prepare_scan(import: &LoadedImport, scan: &Scan) -> PreparedScan {
    let bucket = import.bucket();
    let codes = match (scan.all_nodes, scan.code_column) {
        (true, _) | (false, None) => None,
        (false, Some(column)) => {
            let built;
            let assignment = match import.assignment(scan.concept, column) {
                Some(a) => &a.assignment,
                None => {
                    built = scan
                        .tree
                        .build_assignment(bucket.block(column).dictionary().unwrap_or(&[]));
                    &built
                }
            };
            Some(
                (0..assignment.len() as u32)
                    .map(|code| match assignment.get(code) {
                        Assigned::NoMatch => NO,
                        Assigned::Node(n) => scan.node_matches(n) as u8,
                        Assigned::Deferred => DEFER,
                    })
                    .collect(),
            )
        }
    };
    let key_codes = scan
        .event_filters
        .iter()
        .map(|f| match f {
            EventFilter::Keys { column, keys } => match bucket.block(*column).encoding() {
                Encoding::Dict { dictionary, .. } => {
                    Some(dictionary.iter().map(|s| keys.contains(s)).collect())
                }
                _ => None,
            },
            EventFilter::Range { .. } => None,
        })
        .collect();
    PreparedScan { codes, key_codes }
}

/// Binds a plan to a bucket's imports. With `skip`, imports whose
/// statistics rule out every scan are not read.
pub fn prepare_bucket<'p>(plan: &'p QueryPlan, imports: &[Arc<LoadedImport>], skip: bool) -> PreparedBucket<'p> {
    let imports = imports
        .iter()
        .map(|import| {
            let table = import.bucket().table();
            let scans = plan
                .scans
                .iter()
                .map(|s| {
                    (s.table == table && (!skip || scan_may_match(import.statistics(), s)))
                        .then(|| prepare_scan(import, s))
                })
                .collect();
            let secondary = plan
                .scans
                .iter()
                .find(|s| s.table == table)
                .and_then(|s| s.secondary_column);
            PreparedImport {
                import: import.clone(),
                scans,
                secondary,
            }
        })
        .collect();
    PreparedBucket { plan, imports }
}

/// Events one scan matched for one entity and group, with the derived
/// satisfaction and dates.
struct ScanOutcome {
    matched: Vec<(usize, usize)>,
    satisfied: bool,
    dates: DateSet,
}

fn within(n: u64, min: u64, max: Option<u64>) -> bool {
    n >= min && max.is_none_or(|m| n <= m)
}

impl PreparedBucket<'_> {
    /// Entities to evaluate: those with events in an import that is read, or
    /// every entity of the bucket when the plan can hold without events.
    pub fn entities(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.imports {
            if !self.plan.needs_all_entities && p.scans.iter().all(Option::is_none) {
                continue;
            }
            for span in p.import.bucket().entities() {
                if seen.insert(span.entity.as_str()) {
                    out.push(span.entity.as_str());
                }
            }
        }
        out
    }

    fn groups(&self, entity: &str) -> Vec<Option<String>> {
        let mut groups: Vec<Option<String>> = Vec::new();
        for p in &self.imports {
            let Some(column) = p.secondary else { continue };
            let bucket = p.import.bucket();
            let Some(rows) = bucket.rows_of(entity) else { continue };
            let block = bucket.block(column);
            for row in rows {
                let value = block.value_unchecked(row).map(|v| v.to_string());
                if !groups.contains(&value) {
                    groups.push(value);
                }
            }
        }
        if groups.is_empty() {
            groups.push(None);
        }
        groups.sort_by(|a, b| match (a, b) {
            (Some(x), Some(y)) => x.cmp(y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        groups
    }

    fn scan(&self, index: usize, entity: &str, group: Option<&Option<String>>) -> ScanOutcome {
        let scan = &self.plan.scans[index];
        let mut matched = Vec::new();
        for (ordinal, p) in self.imports.iter().enumerate() {
            let Some(prepared) = &p.scans[index] else { continue };
            let bucket = p.import.bucket();
            let Some(rows) = bucket.rows_of(entity) else { continue };
            'rows: for row in rows {
                if let (Some(group), Some(column)) = (group, scan.secondary_column) {
                    let value = bucket.block(column).value_unchecked(row).map(|v| v.to_string());
                    if value != *group {
                        continue;
                    }
                }
                if let (Some(codes), Some(column)) = (&prepared.codes, scan.code_column) {
                    let block = bucket.block(column);
                    let Some(code) = block.code_at(row) else { continue };
                    match codes[code as usize] {
                        NO => continue,
                        YES => {}
                        _ => {
                            let text = &block.dictionary().expect("code column is a string column")[code as usize];
                            let schema = bucket.schema();
                            let aux = |name: &str| {
                                schema
                                    .column_index(name)
                                    .and_then(|i| bucket.block(i).value_unchecked(row))
                                    .map(|v| v.to_string())
                            };
                            match scan.tree.resolve_code(text, &aux) {
                                Some(n) if scan.node_matches(n) => {}
                                _ => continue,
                            }
                        }
                    }
                }
                for (f, filter) in scan.event_filters.iter().enumerate() {
                    let pass = match filter {
                        EventFilter::Keys { column, keys } => {
                            let block = bucket.block(*column);
                            match &prepared.key_codes[f] {
                                Some(selected) => block.code_at(row).is_some_and(|c| selected[c as usize]),
                                None => block
                                    .value_unchecked(row)
                                    .is_some_and(|v| keys.contains(&v.to_string())),
                            }
                        }
                        EventFilter::Range {
                            column,
                            factor,
                            min,
                            max,
                        } => bucket.block(*column).int_at(row).is_some_and(|v| {
                            let v = v as i128 * factor;
                            min.is_none_or(|m| v >= m) && max.is_none_or(|m| v <= m)
                        }),
                    };
                    if !pass {
                        continue 'rows;
                    }
                }
                if !scan.mask.admits(bucket.block(scan.validity).range_at(row)) {
                    continue;
                }
                matched.push((ordinal, row));
            }
        }

        let satisfied = !matched.is_empty()
            && scan.agg_filters.iter().all(|f| match f {
                AggFilter::Count {
                    column,
                    distinct,
                    min,
                    max,
                } => within(self.count(&matched, *column, *distinct), *min, *max),
                AggFilter::Quarters { column, min, max } => {
                    within(self.quarters(&matched, *column), *min, *max)
                }
            });
        let dates = if satisfied {
            self.validity(&matched, scan)
        } else {
            DateSet::new()
        };
        ScanOutcome {
            matched,
            satisfied,
            dates,
        }
    }

    fn values<'a>(&'a self, matched: &'a [(usize, usize)], column: usize) -> impl Iterator<Item = Value> + 'a {
        matched.iter().filter_map(move |&(i, row)| {
            self.imports[i].import.bucket().block(column).value_unchecked(row)
        })
    }

    fn count(&self, matched: &[(usize, usize)], column: usize, distinct: bool) -> u64 {
        if distinct {
            self.values(matched, column).collect::<HashSet<_>>().len() as u64
        } else {
            self.values(matched, column).count() as u64
        }
    }

    fn quarters(&self, matched: &[(usize, usize)], column: usize) -> u64 {
        let mut quarters = HashSet::new();
        for &(i, row) in matched {
            if let Some(r) = self.imports[i].import.bucket().block(column).range_at(row) {
                quarters.extend(quarters_of_range(&r));
            }
        }
        quarters.len() as u64
    }

    fn validity(&self, matched: &[(usize, usize)], scan: &Scan) -> DateSet {
        matched
            .iter()
            .filter_map(|&(i, row)| {
                let r: DateRange = self.imports[i].import.bucket().block(scan.validity).range_at(row)?;
                scan.mask.clip(r)
            })
            .collect()
    }

    fn select(&self, outcome: &ScanOutcome, scan: &Scan, spec: &SelectSpec) -> SelectValue {
        let matched = &outcome.matched;
        if matched.is_empty() {
            return match spec {
                SelectSpec::Exists => SelectValue::Boolean(false),
                _ => SelectValue::Null,
            };
        }
        match spec {
            SelectSpec::Distinct { column } => {
                let mut seen = HashSet::new();
                let items: Vec<String> = self
                    .values(matched, *column)
                    .map(|v| v.to_string())
                    .filter(|s| seen.insert(s.clone()))
                    .collect();
                if items.is_empty() {
                    SelectValue::Null
                } else {
                    SelectValue::List(items)
                }
            }
            SelectSpec::Count { column: None, .. } => SelectValue::Integer(matched.len() as i64),
            SelectSpec::Count {
                column: Some(column),
                distinct,
            } => SelectValue::Integer(self.count(matched, *column, *distinct) as i64),
            SelectSpec::Quarters { column } => SelectValue::Integer(self.quarters(matched, *column) as i64),
            SelectSpec::Sum { column, column_type } => {
                let mut values = self.values(matched, *column).filter_map(|v| v.as_scaled()).peekable();
                if values.peek().is_none() {
                    SelectValue::Null
                } else {
                    SelectValue::Number {
                        value: values.map(i128::from).sum(),
                        column_type: *column_type,
                    }
                }
            }
            SelectSpec::EventDates => {
                let dates = self.validity(matched, scan);
                if dates.is_empty() {
                    SelectValue::Null
                } else {
                    SelectValue::Dates(dates)
                }
            }
            SelectSpec::Exists => SelectValue::Boolean(true),
        }
    }

    fn node(&self, node: &PlanNode, outcomes: &[ScanOutcome], entity: &str) -> (bool, DateSet) {
        match node {
            PlanNode::Concept(scans) => {
                let mut satisfied = false;
                let mut dates = DateSet::new();
                for s in scans {
                    let o = &outcomes[*s];
                    if o.satisfied {
                        satisfied = true;
                        dates = dates.union(&o.dates);
                    }
                }
                (satisfied, dates)
            }
            PlanNode::And(children) => {
                let mut dates: Option<DateSet> = None;
                let mut satisfied = true;
                for c in children {
                    let (s, d) = self.node(c, outcomes, entity);
                    satisfied &= s;
                    dates = Some(match dates {
                        None => d,
                        Some(acc) => acc.intersect(&d),
                    });
                }
                if satisfied {
                    (true, dates.unwrap_or_default())
                } else {
                    (false, DateSet::new())
                }
            }
            PlanNode::Or(children) => {
                let mut satisfied = false;
                let mut dates = DateSet::new();
                for c in children {
                    let (s, d) = self.node(c, outcomes, entity);
                    if s {
                        satisfied = true;
                        dates = dates.union(&d);
                    }
                }
                (satisfied, dates)
            }
            PlanNode::Not { child, mask } => {
                let (s, _) = self.node(child, outcomes, entity);
                if s {
                    (false, DateSet::new())
                } else {
                    (true, mask.as_set())
                }
            }
            PlanNode::Restrict { mask, child } => {
                let (s, d) = self.node(child, outcomes, entity);
                (s, mask.apply(&d))
            }
            PlanNode::Saved { table, mask } => match self.plan.saved[*table].get(entity) {
                Some(dates) => (true, mask.apply(dates)),
                None => (false, DateSet::new()),
            },
        }
    }

    /// Evaluates one entity; one line per satisfied secondary-id group (one
    /// line at most without a secondary id).
    pub fn evaluate(&self, entity: &str) -> Vec<ResultLine> {
        let grouped = self.plan.secondary_id.is_some();
        let groups = if grouped { self.groups(entity) } else { vec![None] };
        let mut lines = Vec::new();
        for group in groups {
            let filter = grouped.then_some(&group);
            let outcomes: Vec<ScanOutcome> = (0..self.plan.scans.len())
                .map(|i| self.scan(i, entity, filter))
                .collect();
            let (satisfied, dates) = self.node(&self.plan.root, &outcomes, entity);
            if !satisfied {
                continue;
            }
            let values = self
                .plan
                .outputs
                .iter()
                .map(|&(s, select)| {
                    let scan = &self.plan.scans[s];
                    self.select(&outcomes[s], scan, &scan.selects[select])
                })
                .collect();
            lines.push(ResultLine {
                entity: entity.to_string(),
                secondary: group,
                dates,
                values,
            });
        }
        lines
    }
}
