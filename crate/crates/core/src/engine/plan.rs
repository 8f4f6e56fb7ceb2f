use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use crate::concepts::{ConceptTree, NodeId};
use crate::error::{Error, Result};
use crate::query::{result_header, FilterKind, FilterValue, Query, QueryNode, SelectKind, REAL_SCALE};
use crate::registry::Registry;
use crate::types::ColumnType;

use super::dateset::Mask;
use super::result::SavedTable;

#[derive(Debug, Clone)]
pub(crate) enum EventFilter {
    Keys {
        column: usize,
        keys: HashSet<String>,
    },
    /// Bounds scaled by 10^REAL_SCALE; column values are rescaled by `factor`.
    Range {
        column: usize,
        factor: i128,
        min: Option<i128>,
        max: Option<i128>,
    },
}

#[derive(Debug, Clone)]
pub(crate) enum AggFilter {
    Count {
        column: usize,
        distinct: bool,
        min: u64,
        max: Option<u64>,
    },
    Quarters {
        column: usize,
        min: u64,
        max: Option<u64>,
    },
}

#[derive(Debug, Clone)]
pub(crate) enum SelectSpec {
    Distinct { column: usize },
    Count { column: Option<usize>, distinct: bool },
    Quarters { column: usize },
    Sum { column: usize, column_type: ColumnType },
    EventDates,
    Exists,
}

/// One (concept element, table) pair: which events it reads and what it
/// computes over them.
#[derive(Debug, Clone)]
pub(crate) struct Scan {
    pub concept: usize,
    pub tree: Arc<ConceptTree>,
    pub table: String,
    pub code_column: Option<usize>,
    /// Merged DFS intervals of the requested nodes.
    pub intervals: Vec<(u32, u32)>,
    /// The concept root was requested: every event of the table matches.
    pub all_nodes: bool,
    pub validity: usize,
    pub mask: Mask,
    pub secondary_column: Option<usize>,
    pub event_filters: Vec<EventFilter>,
    pub agg_filters: Vec<AggFilter>,
    pub selects: Vec<SelectSpec>,
}

impl Scan {
    pub fn node_matches(&self, node: NodeId) -> bool {
        let i = self.intervals.partition_point(|&(_, hi)| hi < node.0);
        self.intervals.get(i).is_some_and(|&(lo, _)| lo <= node.0)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum PlanNode {
    Concept(Vec<usize>),
    And(Vec<PlanNode>),
    Or(Vec<PlanNode>),
    Not { child: Box<PlanNode>, mask: Mask },
    Restrict { mask: Mask, child: Box<PlanNode> },
    Saved { table: usize, mask: Mask },
}

/// A validated query translated against the registry, independent of the
/// data a worker holds.
#[derive(Debug, Clone)]
pub struct QueryPlan {
    pub(crate) root: PlanNode,
    pub(crate) scans: Vec<Scan>,
    /// (scan, select) per output column, in header order.
    pub(crate) outputs: Vec<(usize, usize)>,
    pub(crate) secondary_id: Option<String>,
    pub(crate) saved: Vec<Arc<SavedTable>>,
    /// Entities without any event may satisfy the query.
    pub(crate) needs_all_entities: bool,
    header: Vec<String>,
}

impl QueryPlan {
    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn scan_count(&self) -> usize {
        self.scans.len()
    }

    /// Tables read by at least one scan.
    pub fn tables(&self) -> HashSet<&str> {
        self.scans.iter().map(|s| s.table.as_str()).collect()
    }

    /// DFS intervals requested from a concept, for inspection.
    pub fn intervals(&self, scan: usize) -> &[(u32, u32)] {
        &self.scans[scan].intervals
    }

    pub fn needs_all_entities(&self) -> bool {
        self.needs_all_entities
    }
}

/// Kleene truth value used to decide whether an entity without events can
/// satisfy the plan.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Tri {
    False,
    True,
    Unknown,
}

fn without_events(node: &PlanNode) -> Tri {
    match node {
        PlanNode::Concept(_) => Tri::False,
        PlanNode::Saved { .. } => Tri::Unknown,
        PlanNode::Restrict { child, .. } => without_events(child),
        PlanNode::Not { child, .. } => match without_events(child) {
            Tri::False => Tri::True,
            Tri::True => Tri::False,
            Tri::Unknown => Tri::Unknown,
        },
        PlanNode::And(children) => {
            let values: Vec<Tri> = children.iter().map(without_events).collect();
            if values.contains(&Tri::False) {
                Tri::False
            } else if values.iter().all(|v| *v == Tri::True) {
                Tri::True
            } else {
                Tri::Unknown
            }
        }
        PlanNode::Or(children) => {
            let values: Vec<Tri> = children.iter().map(without_events).collect();
            if values.contains(&Tri::True) {
                Tri::True
            } else if values.iter().all(|v| *v == Tri::False) {
                Tri::False
            } else {
                Tri::Unknown
            }
        }
    }
}

struct Planner<'a> {
    registry: &'a Registry,
    saved_source: &'a HashMap<String, Arc<SavedTable>>,
    scans: Vec<Scan>,
    outputs: Vec<(usize, usize)>,
    saved: Vec<Arc<SavedTable>>,
    saved_index: HashMap<String, usize>,
    secondary_id: Option<&'a str>,
}

fn merge_intervals(mut intervals: Vec<(u32, u32)>) -> Vec<(u32, u32)> {
    intervals.sort_unstable();
    let mut out: Vec<(u32, u32)> = Vec::new();
    for (lo, hi) in intervals {
        match out.last_mut() {
            Some(last) if lo <= last.1.saturating_add(1) => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out
}

impl Planner<'_> {
    fn node(&mut self, node: &QueryNode, mask: Mask) -> Result<PlanNode> {
        Ok(match node {
            QueryNode::Concept(c) => {
                let tree = self.registry.concept(c.concept).clone();
                let intervals = merge_intervals(
                    c.ids
                        .iter()
                        .map(|id| tree.interval(*id))
                        .collect::<Result<Vec<_>>>()?,
                );
                let all_nodes = c.ids.contains(&NodeId::ROOT);
                let mut scan_ids = Vec::new();
                for t in &c.tables {
                    let connector = self.registry.connector(t.connector);
                    let schema = self
                        .registry
                        .table(&connector.table)
                        .ok_or_else(|| Error::Plan(format!("table '{}' is not registered", connector.table)))?;
                    let column = |name: &str| {
                        schema
                            .column_index(name)
                            .ok_or_else(|| Error::Plan(format!("column '{name}' missing from '{}'", schema.name)))
                    };
                    let validity = column(&connector.validity_dates[t.date_column].column)?;
                    let mut event_filters = Vec::new();
                    let mut agg_filters = Vec::new();
                    for f in &t.filters {
                        let def = &connector.filters[f.filter];
                        match (&def.kind, &f.value) {
                            (FilterKind::Select { column: c, .. }, FilterValue::Keys(keys)) => {
                                event_filters.push(EventFilter::Keys {
                                    column: column(c)?,
                                    keys: keys.iter().cloned().collect(),
                                })
                            }
                            (FilterKind::Range { column: c }, FilterValue::Real { min, max }) => {
                                let index = column(c)?;
                                let scale = schema.columns[index].column_type.scale();
                                event_filters.push(EventFilter::Range {
                                    column: index,
                                    factor: 10i128.pow(REAL_SCALE - scale),
                                    min: *min,
                                    max: *max,
                                })
                            }
                            (FilterKind::Count { column: c, distinct }, FilterValue::Count { min, max }) => {
                                agg_filters.push(AggFilter::Count {
                                    column: column(c)?,
                                    distinct: *distinct,
                                    min: min.unwrap_or(0),
                                    max: *max,
                                })
                            }
                            (FilterKind::CountQuarters { column: c }, FilterValue::Count { min, max }) => {
                                agg_filters.push(AggFilter::Quarters {
                                    column: match c {
                                        Some(c) => column(c)?,
                                        None => validity,
                                    },
                                    min: min.unwrap_or(0),
                                    max: *max,
                                })
                            }
                            _ => {
                                return Err(Error::Plan(format!(
                                    "value of filter '{}' does not match its type",
                                    def.name
                                )))
                            }
                        }
                    }
                    let selects = connector
                        .selects
                        .iter()
                        .map(|s| {
                            Ok(match &s.kind {
                                SelectKind::Distinct { column: c } => SelectSpec::Distinct { column: column(c)? },
                                SelectKind::Count { column: c, distinct } => SelectSpec::Count {
                                    column: c.as_deref().map(column).transpose()?,
                                    distinct: *distinct,
                                },
                                SelectKind::CountQuarters { column: c } => SelectSpec::Quarters {
                                    column: match c {
                                        Some(c) => column(c)?,
                                        None => validity,
                                    },
                                },
                                SelectKind::Sum { column: c } => {
                                    let index = column(c)?;
                                    SelectSpec::Sum {
                                        column: index,
                                        column_type: schema.columns[index].column_type,
                                    }
                                }
                                SelectKind::EventDates => SelectSpec::EventDates,
                                SelectKind::Exists => SelectSpec::Exists,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let secondary_column = self.secondary_id.and_then(|id| schema.secondary_column(id));
                    let code_column = connector.column.as_deref().map(column).transpose()?;
                    let scan = self.scans.len();
                    for s in &t.selects {
                        self.outputs.push((scan, *s));
                    }
                    self.scans.push(Scan {
                        concept: c.concept,
                        tree: tree.clone(),
                        table: connector.table.clone(),
                        code_column,
                        intervals: intervals.clone(),
                        all_nodes,
                        validity,
                        mask,
                        secondary_column,
                        event_filters,
                        agg_filters,
                        selects,
                    });
                    scan_ids.push(scan);
                }
                PlanNode::Concept(scan_ids)
            }
            QueryNode::And(children) => PlanNode::And(
                children
                    .iter()
                    .map(|c| self.node(c, mask))
                    .collect::<Result<_>>()?,
            ),
            QueryNode::Or(children) => PlanNode::Or(
                children
                    .iter()
                    .map(|c| self.node(c, mask))
                    .collect::<Result<_>>()?,
            ),
            QueryNode::Negation(child) => PlanNode::Not {
                child: Box::new(self.node(child, mask)?),
                mask,
            },
            QueryNode::DateRestriction { range, child } => {
                let inner = mask.restrict(*range);
                PlanNode::Restrict {
                    mask: inner,
                    child: Box::new(self.node(child, inner)?),
                }
            }
            QueryNode::SavedQuery { execution } => {
                let table = match self.saved_index.get(execution) {
                    Some(i) => *i,
                    None => {
                        let table = self.saved_source.get(execution).ok_or_else(|| {
                            Error::Plan(format!("saved query '{execution}' has no finished result"))
                        })?;
                        self.saved.push(table.clone());
                        self.saved_index.insert(execution.clone(), self.saved.len() - 1);
                        self.saved.len() - 1
                    }
                };
                PlanNode::Saved { table, mask }
            }
        })
    }
}

/// Translates a validated query. `saved` provides the result tables of
/// referenced saved queries.
pub fn plan(query: &Query, registry: &Registry, saved: &HashMap<String, Arc<SavedTable>>) -> Result<QueryPlan> {
    let mut planner = Planner {
        registry,
        saved_source: saved,
        scans: Vec::new(),
        outputs: Vec::new(),
        saved: Vec::new(),
        saved_index: HashMap::new(),
        secondary_id: query.secondary_id.as_deref(),
    };
    let root = planner.node(&query.root, Mask::All)?;
    let needs_all_entities = without_events(&root) != Tri::False;
    Ok(QueryPlan {
        needs_all_entities,
        root,
        scans: planner.scans,
        outputs: planner.outputs,
        secondary_id: query.secondary_id.clone(),
        saved: planner.saved,
        header: result_header(query, registry),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse_query;
    use serde_json::json;

    #[test]
    fn merges_intervals() {
        assert_eq!(merge_intervals(vec![(5, 9), (0, 3), (4, 4), (7, 8), (12, 12)]), vec![(0, 9), (12, 12)]);
    }

    fn registry() -> Registry {
        crate::query::ast_test_registry()
    }

    #[test]
    fn code3_plan() {
        let r = registry();
        let doc = crate::query::ast_test_code3();
        let q = parse_query(&doc, &r).unwrap();
        let p = plan(&q, &r, &HashMap::new()).unwrap();
        assert_eq!(p.scans.len(), 1);
        let g20 = r.resolve_node("dataset.icd.g00-g99.g20-g26.g20").unwrap().1;
        assert_eq!(p.scans[0].intervals, vec![r.concept(0).interval(g20).unwrap()]);
        assert!(matches!(&p.scans[0].event_filters[..], [EventFilter::Keys { .. }]));
        assert!(!p.needs_all_entities);
    }

    #[test]
    fn negation_and_restriction_masks() {
        let r = registry();
        let concept = crate::query::ast_test_code3()["root"].clone();
        let doc = json!({"type": "CONCEPT_QUERY", "root": {"type": "DATE_RESTRICTION",
            "dateRange": {"min": "2015-01-01", "max": "2015-12-31"},
            "child": {"type": "OR", "children": [
                {"type": "NEGATION", "child": concept},
                {"type": "DATE_RESTRICTION", "dateRange": {"min": "2015-06-01", "max": "2016-06-30"}, "child": concept}
            ]}}});
        let q = parse_query(&doc, &r).unwrap();
        let p = plan(&q, &r, &HashMap::new()).unwrap();
        assert!(p.needs_all_entities);
        assert_eq!(p.scans[0].mask.clone(), Mask::Range(crate::types::DateRange::closed(16436, 16800)));
        let Mask::Range(inner) = p.scans[1].mask else { panic!("restricted") };
        assert_eq!(inner.to_string(), "2015-06-01/2015-12-31");
    }

    #[test]
    fn missing_saved_query_is_a_plan_error() {
        let r = registry();
        let doc = json!({"type": "CONCEPT_QUERY", "root": {"type": "SAVED_QUERY", "query": "e1"}});
        let q = parse_query(&doc, &r).unwrap();
        assert!(matches!(plan(&q, &r, &HashMap::new()), Err(Error::Plan(_))));
        let mut saved = HashMap::new();
        saved.insert("e1".to_string(), Arc::new(SavedTable::new()));
        assert!(plan(&q, &r, &saved).unwrap().needs_all_entities);
    }
}
