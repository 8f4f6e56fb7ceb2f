use std::collections::HashSet;

use serde_json::{json, Map, Value as Json};

use crate::concepts::NodeId;
use crate::error::{Error, Result};
use crate::registry::{ConnectorRef, Registry};
use crate::types::{format_day, format_fixed, parse_fixed, parse_iso_day, DateRange};

use super::defs::FilterKind;

/// Fixed-point scale of RANGE filter bounds. Column values of any numeric
/// type are compared exactly after rescaling to it.
pub const REAL_SCALE: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterValue {
    /// SELECT: the event's value must be one of these keys.
    Keys(Vec<String>),
    /// COUNT and COUNT_QUARTERS bounds, inclusive.
    Count { min: Option<u64>, max: Option<u64> },
    /// RANGE bounds, inclusive, scaled by 10^[`REAL_SCALE`].
    Real { min: Option<i128>, max: Option<i128> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterEntry {
    /// Index into the connector's filters.
    pub filter: usize,
    pub value: FilterValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableElement {
    pub connector: ConnectorRef,
    /// Index into the connector's validity dates.
    pub date_column: usize,
    pub filters: Vec<FilterEntry>,
    /// Indices into the connector's selects, in requested order.
    pub selects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptElement {
    pub concept: usize,
    pub ids: Vec<NodeId>,
    pub label: Option<String>,
    pub tables: Vec<TableElement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryNode {
    Concept(ConceptElement),
    And(Vec<QueryNode>),
    Or(Vec<QueryNode>),
    Negation(Box<QueryNode>),
    DateRestriction { range: DateRange, child: Box<QueryNode> },
    SavedQuery { execution: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub root: QueryNode,
    pub secondary_id: Option<String>,
}

impl QueryNode {
    /// Concept elements in depth-first order.
    pub fn concepts(&self) -> Vec<&ConceptElement> {
        let mut out = Vec::new();
        self.collect_concepts(&mut out);
        out
    }

    fn collect_concepts<'a>(&'a self, out: &mut Vec<&'a ConceptElement>) {
        match self {
            QueryNode::Concept(c) => out.push(c),
            QueryNode::And(children) | QueryNode::Or(children) => {
                children.iter().for_each(|c| c.collect_concepts(out))
            }
            QueryNode::Negation(child) | QueryNode::DateRestriction { child, .. } => {
                child.collect_concepts(out)
            }
            QueryNode::SavedQuery { .. } => {}
        }
    }

    /// Execution ids of referenced saved queries.
    pub fn saved_queries(&self) -> Vec<&str> {
        match self {
            QueryNode::SavedQuery { execution } => vec![execution.as_str()],
            QueryNode::Concept(_) => Vec::new(),
            QueryNode::And(children) | QueryNode::Or(children) => {
                children.iter().flat_map(|c| c.saved_queries()).collect()
            }
            QueryNode::Negation(child) | QueryNode::DateRestriction { child, .. } => child.saved_queries(),
        }
    }

    pub fn depth(&self) -> usize {
        1 + match self {
            QueryNode::And(children) | QueryNode::Or(children) => {
                children.iter().map(QueryNode::depth).max().unwrap_or(0)
            }
            QueryNode::Negation(child) | QueryNode::DateRestriction { child, .. } => child.depth(),
            _ => 0,
        }
    }
}

struct Ctx<'a> {
    registry: &'a Registry,
    errors: Vec<String>,
}

impl Ctx<'_> {
    fn error(&mut self, path: &str, message: impl std::fmt::Display) {
        self.errors.push(format!("{path}: {message}"));
    }
}

fn field<'a>(obj: &'a Map<String, Json>, key: &str) -> Option<&'a Json> {
    obj.get(key).filter(|v| !v.is_null())
}

/// Parses a query document and validates it against the registry. Every
/// violation found is reported, not just the first.
pub fn parse_query(doc: &Json, registry: &Registry) -> Result<Query> {
    let mut ctx = Ctx {
        registry,
        errors: Vec::new(),
    };
    let query = parse_top(doc, &mut ctx);
    match query {
        Some(q) if ctx.errors.is_empty() => Ok(q),
        _ => {
            if ctx.errors.is_empty() {
                ctx.errors.push("$: invalid query".into());
            }
            Err(Error::Validation(ctx.errors))
        }
    }
}

fn parse_top(doc: &Json, ctx: &mut Ctx) -> Option<Query> {
    let Some(obj) = doc.as_object() else {
        ctx.error("$", "query must be an object");
        return None;
    };
    match obj.get("type").and_then(Json::as_str) {
        Some("CONCEPT_QUERY") => {}
        Some(other) => ctx.error("$.type", format_args!("unknown query type '{other}'")),
        None => ctx.error("$.type", "missing query type"),
    }
    let secondary_id = match field(obj, "secondaryId") {
        None => None,
        Some(Json::String(s)) => {
            if !ctx.registry.dataset().secondary_ids.iter().any(|d| &d.name == s) {
                ctx.error("$.secondaryId", format_args!("unknown secondary id '{s}'"));
            }
            Some(s.clone())
        }
        Some(_) => {
            ctx.error("$.secondaryId", "expected a string");
            None
        }
    };
    let root = match obj.get("root") {
        Some(root) => parse_node(root, "$.root", ctx),
        None => {
            ctx.error("$.root", "missing");
            None
        }
    };
    Some(Query {
        root: root?,
        secondary_id,
    })
}

fn parse_node(doc: &Json, path: &str, ctx: &mut Ctx) -> Option<QueryNode> {
    let Some(obj) = doc.as_object() else {
        ctx.error(path, "node must be an object");
        return None;
    };
    let kind = obj.get("type").and_then(Json::as_str);
    let child = |key: &str, ctx: &mut Ctx| -> Option<Box<QueryNode>> {
        let p = format!("{path}.{key}");
        match obj.get(key) {
            Some(c) => parse_node(c, &p, ctx).map(Box::new),
            None => {
                ctx.error(&p, "missing");
                None
            }
        }
    };
    match kind {
        Some("CONCEPT") => parse_concept(obj, path, ctx).map(QueryNode::Concept),
        Some(k @ ("AND" | "OR")) => {
            let p = format!("{path}.children");
            let items = match obj.get("children").and_then(Json::as_array) {
                Some(items) if !items.is_empty() => items,
                _ => {
                    ctx.error(&p, format_args!("{k} needs at least one child"));
                    return None;
                }
            };
            let children: Vec<Option<QueryNode>> = items
                .iter()
                .enumerate()
                .map(|(i, c)| parse_node(c, &format!("{p}[{i}]"), ctx))
                .collect();
            let children: Option<Vec<QueryNode>> = children.into_iter().collect();
            let children = children?;
            Some(if k == "AND" {
                QueryNode::And(children)
            } else {
                QueryNode::Or(children)
            })
        }
        Some("NEGATION") => child("child", ctx).map(QueryNode::Negation),
        Some("DATE_RESTRICTION") => {
            let range = parse_date_range(obj.get("dateRange"), &format!("{path}.dateRange"), ctx);
            let child = child("child", ctx);
            Some(QueryNode::DateRestriction {
                range: range?,
                child: child?,
            })
        }
        Some("SAVED_QUERY") => match obj.get("query").and_then(Json::as_str) {
            Some(id) if !id.is_empty() => Some(QueryNode::SavedQuery {
                execution: id.to_string(),
            }),
            _ => {
                ctx.error(&format!("{path}.query"), "expected an execution id");
                None
            }
        },
        Some(other) => {
            ctx.error(
                &format!("{path}.type"),
                format_args!("unknown node type '{other}'"),
            );
            None
        }
        None => {
            ctx.error(&format!("{path}.type"), "missing node type");
            None
        }
    }
}

fn parse_date_range(doc: Option<&Json>, path: &str, ctx: &mut Ctx) -> Option<DateRange> {
    let Some(obj) = doc.and_then(Json::as_object) else {
        ctx.error(path, "expected {\"min\": date, \"max\": date}");
        return None;
    };
    let mut bound = |key: &str| -> std::result::Result<Option<i32>, ()> {
        match field(obj, key) {
            None => Ok(None),
            Some(Json::String(s)) => parse_iso_day(s).map(Some).map_err(|_| {
                ctx.error(&format!("{path}.{key}"), format_args!("'{s}' is not a YYYY-MM-DD date"));
            }),
            Some(_) => {
                ctx.error(&format!("{path}.{key}"), "expected a YYYY-MM-DD date");
                Err(())
            }
        }
    };
    let (min, max) = (bound("min"), bound("max"));
    let (Ok(min), Ok(max)) = (min, max) else {
        return None;
    };
    if min.is_none() && max.is_none() {
        ctx.error(path, "at least one bound is required");
        return None;
    }
    match DateRange::new(min, max) {
        Ok(r) => Some(r),
        Err(e) => {
            ctx.error(path, e);
            None
        }
    }
}

fn parse_concept(obj: &Map<String, Json>, path: &str, ctx: &mut Ctx) -> Option<ConceptElement> {
    let registry = ctx.registry;
    let ids_path = format!("{path}.ids");
    let ids = match obj.get("ids").and_then(Json::as_array) {
        Some(ids) if !ids.is_empty() => ids,
        _ => {
            ctx.error(&ids_path, "expected a non-empty list of concept ids");
            return None;
        }
    };
    let mut concept = None;
    let mut nodes = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let p = format!("{ids_path}[{i}]");
        let Some(id) = id.as_str() else {
            ctx.error(&p, "expected a string");
            continue;
        };
        match registry.resolve_node(id) {
            Ok((c, node)) => {
                if concept.is_some_and(|prev| prev != c) {
                    ctx.error(&p, format_args!("'{id}' belongs to a different concept"));
                    continue;
                }
                concept = Some(c);
                if nodes.contains(&node) {
                    ctx.error(&p, format_args!("duplicate concept id '{id}'"));
                }
                nodes.push(node);
            }
            Err(_) => ctx.error(&p, format_args!("unknown concept id '{id}'")),
        }
    }
    let label = match field(obj, "label") {
        None => None,
        Some(Json::String(s)) => Some(s.clone()),
        Some(_) => {
            ctx.error(&format!("{path}.label"), "expected a string");
            None
        }
    };
    let tables_path = format!("{path}.tables");
    let tables_doc = match obj.get("tables").and_then(Json::as_array) {
        Some(t) if !t.is_empty() => t,
        _ => {
            ctx.error(&tables_path, "expected a non-empty list of tables");
            return None;
        }
    };
    let concept = concept?;
    let mut tables = Vec::new();
    let mut seen = HashSet::new();
    for (i, t) in tables_doc.iter().enumerate() {
        let p = format!("{tables_path}[{i}]");
        if let Some(table) = parse_table(t, &p, concept, &nodes, ctx) {
            if !seen.insert(table.connector) {
                ctx.error(&p, "connector listed twice");
            }
            tables.push(table);
        }
    }
    (tables.len() == tables_doc.len() && nodes.len() == ids.len()).then_some(ConceptElement {
        concept,
        ids: nodes,
        label,
        tables,
    })
}

fn parse_table(doc: &Json, path: &str, concept: usize, nodes: &[NodeId], ctx: &mut Ctx) -> Option<TableElement> {
    let registry = ctx.registry;
    let Some(obj) = doc.as_object() else {
        ctx.error(path, "table must be an object");
        return None;
    };
    let Some(id) = obj.get("id").and_then(Json::as_str) else {
        ctx.error(&format!("{path}.id"), "missing connector id");
        return None;
    };
    let connector_ref = match registry.resolve_connector(id) {
        Ok(r) if r.concept == concept => r,
        Ok(_) => {
            ctx.error(&format!("{path}.id"), format_args!("connector '{id}' belongs to a different concept"));
            return None;
        }
        Err(_) => {
            ctx.error(&format!("{path}.id"), format_args!("unknown connector id '{id}'"));
            return None;
        }
    };
    let connector = registry.connector(connector_ref);
    let connector_id = registry.connector_id(connector_ref);
    let mut ok = true;
    if connector.column.is_none() && nodes.iter().any(|n| *n != NodeId::ROOT) {
        ctx.error(
            &format!("{path}.id"),
            format_args!("connector '{id}' has no code column; only the concept itself can be selected"),
        );
        ok = false;
    }

    let date_column = match field(obj, "dateColumn") {
        None => 0,
        Some(Json::String(choice)) => {
            let bare = choice
                .strip_prefix(&format!("{}.", connector.table))
                .unwrap_or(choice);
            match connector
                .validity_dates
                .iter()
                .position(|v| v.label == *choice || v.column == bare)
            {
                Some(i) => i,
                None => {
                    ctx.error(
                        &format!("{path}.dateColumn"),
                        format_args!("'{choice}' is not a validity date of '{id}'"),
                    );
                    ok = false;
                    0
                }
            }
        }
        Some(_) => {
            ctx.error(&format!("{path}.dateColumn"), "expected a string");
            ok = false;
            0
        }
    };

    let mut filters = Vec::new();
    let items = match field(obj, "filters") {
        None => &[][..],
        Some(Json::Array(items)) => items.as_slice(),
        Some(_) => {
            ctx.error(&format!("{path}.filters"), "expected a list");
            ok = false;
            &[][..]
        }
    };
    for (i, f) in items.iter().enumerate() {
        let p = format!("{path}.filters[{i}]");
        let Some(fobj) = f.as_object() else {
            ctx.error(&p, "filter must be an object");
            ok = false;
            continue;
        };
        let Some(fid) = fobj.get("filter").and_then(Json::as_str) else {
            ctx.error(&format!("{p}.filter"), "missing filter id");
            ok = false;
            continue;
        };
        let Some(index) = fid
            .strip_prefix(&connector_id)
            .and_then(|r| r.strip_prefix('.'))
            .and_then(|name| connector.filters.iter().position(|d| d.name == name))
        else {
            ctx.error(&format!("{p}.filter"), format_args!("unknown filter id '{fid}'"));
            ok = false;
            continue;
        };
        let def = &connector.filters[index];
        if let Some(t) = fobj.get("type").and_then(Json::as_str) {
            if t != def.type_name() {
                ctx.error(
                    &format!("{p}.type"),
                    format_args!("filter '{fid}' is of type {}, not {t}", def.type_name()),
                );
                ok = false;
            }
        }
        if filters.iter().any(|e: &FilterEntry| e.filter == index) {
            ctx.error(&p, format_args!("filter '{fid}' applied twice"));
            ok = false;
        }
        match parse_filter_value(fobj.get("value"), &def.kind, &format!("{p}.value"), ctx) {
            Some(value) => filters.push(FilterEntry {
                filter: index,
                value,
            }),
            None => ok = false,
        }
    }

    let mut selects = Vec::new();
    let items = match field(obj, "selects") {
        None => &[][..],
        Some(Json::Array(items)) => items.as_slice(),
        Some(_) => {
            ctx.error(&format!("{path}.selects"), "expected a list");
            ok = false;
            &[][..]
        }
    };
    for (i, s) in items.iter().enumerate() {
        let p = format!("{path}.selects[{i}]");
        let sid = s.as_str().unwrap_or_default();
        match sid
            .strip_prefix(&connector_id)
            .and_then(|r| r.strip_prefix('.'))
            .and_then(|name| connector.selects.iter().position(|d| d.name == name))
        {
            Some(index) if selects.contains(&index) => {
                ctx.error(&p, format_args!("select '{sid}' requested twice"));
                ok = false;
            }
            Some(index) => selects.push(index),
            None => {
                match s.as_str() {
                    Some(sid) => ctx.error(&p, format_args!("unknown select id '{sid}'")),
                    None => ctx.error(&p, format_args!("select id must be a string, not {s}")),
                }
                ok = false;
            }
        }
    }
    ok.then_some(TableElement {
        connector: connector_ref,
        date_column,
        filters,
        selects,
    })
}

fn parse_filter_value(doc: Option<&Json>, kind: &FilterKind, path: &str, ctx: &mut Ctx) -> Option<FilterValue> {
    let Some(doc) = doc.filter(|d| !d.is_null()) else {
        ctx.error(path, "missing filter value");
        return None;
    };
    match kind {
        FilterKind::Select { labels, .. } => {
            let keys: Vec<String> = match doc {
                Json::String(s) => vec![s.clone()],
                Json::Array(items) if !items.is_empty() && items.iter().all(Json::is_string) => {
                    items.iter().filter_map(|i| i.as_str().map(str::to_string)).collect()
                }
                _ => {
                    ctx.error(path, "SELECT filter expects a key or a non-empty list of keys");
                    return None;
                }
            };
            let mut ok = true;
            for (i, k) in keys.iter().enumerate() {
                if !labels.is_empty() && !labels.contains_key(k) {
                    ctx.error(path, format_args!("'{k}' is not an option of this filter"));
                    ok = false;
                }
                if keys[..i].contains(k) {
                    ctx.error(path, format_args!("key '{k}' listed twice"));
                    ok = false;
                }
            }
            ok.then_some(FilterValue::Keys(keys))
        }
        FilterKind::Count { .. } | FilterKind::CountQuarters { .. } => {
            let (min, max) = range_bounds(doc, path, ctx, |v| v.as_u64().map(|n| n as i128))?;
            Some(FilterValue::Count {
                min: min.map(|v| v as u64),
                max: max.map(|v| v as u64),
            })
        }
        FilterKind::Range { .. } => {
            let (min, max) = range_bounds(doc, path, ctx, |v| {
                let text = match v {
                    Json::String(s) => s.clone(),
                    Json::Number(n) => match n.as_i64() {
                        Some(i) => i.to_string(),
                        None => format!("{}", n.as_f64()?),
                    },
                    _ => return None,
                };
                parse_fixed(&text, REAL_SCALE, false).ok().map(i128::from)
            })?;
            Some(FilterValue::Real { min, max })
        }
    }
}

fn range_bounds(
    doc: &Json,
    path: &str,
    ctx: &mut Ctx,
    parse: impl Fn(&Json) -> Option<i128>,
) -> Option<(Option<i128>, Option<i128>)> {
    let Some(obj) = doc.as_object() else {
        ctx.error(path, "expected {\"min\": …, \"max\": …}");
        return None;
    };
    let mut ok = true;
    let mut bound = |key: &str| match field(obj, key) {
        None => None,
        Some(v) => {
            let parsed = parse(v);
            if parsed.is_none() {
                ctx.error(&format!("{path}.{key}"), format_args!("invalid bound {v}"));
                ok = false;
            }
            parsed
        }
    };
    let (min, max) = (bound("min"), bound("max"));
    if !ok {
        return None;
    }
    if min.is_none() && max.is_none() {
        ctx.error(path, "at least one bound is required");
        return None;
    }
    if let (Some(a), Some(b)) = (min, max) {
        if a > b {
            ctx.error(path, "min exceeds max");
            return None;
        }
    }
    Some((min, max))
}

impl Query {
    /// Serializes back to the document format accepted by [`parse_query`].
    pub fn to_document(&self, registry: &Registry) -> Json {
        let mut doc = json!({"type": "CONCEPT_QUERY", "root": node_document(&self.root, registry)});
        if let Some(s) = &self.secondary_id {
            doc["secondaryId"] = json!(s);
        }
        doc
    }
}

fn bounds_json<T: Into<Json>>(min: Option<T>, max: Option<T>) -> Json {
    let mut obj = Map::new();
    if let Some(v) = min {
        obj.insert("min".into(), v.into());
    }
    if let Some(v) = max {
        obj.insert("max".into(), v.into());
    }
    Json::Object(obj)
}

fn node_document(node: &QueryNode, registry: &Registry) -> Json {
    match node {
        QueryNode::Concept(c) => {
            let tree = registry.concept(c.concept);
            let tables: Vec<Json> = c
                .tables
                .iter()
                .map(|t| {
                    let connector = registry.connector(t.connector);
                    let connector_id = registry.connector_id(t.connector);
                    let filters: Vec<Json> = t
                        .filters
                        .iter()
                        .map(|f| {
                            let def = &connector.filters[f.filter];
                            let value = match &f.value {
                                FilterValue::Keys(keys) if keys.len() == 1 => json!(keys[0]),
                                FilterValue::Keys(keys) => json!(keys),
                                FilterValue::Count { min, max } => bounds_json(*min, *max),
                                FilterValue::Real { min, max } => bounds_json(
                                    min.map(|v| format_fixed(v, REAL_SCALE, true)),
                                    max.map(|v| format_fixed(v, REAL_SCALE, true)),
                                ),
                            };
                            json!({
                                "type": def.type_name(),
                                "filter": format!("{connector_id}.{}", def.name),
                                "value": value,
                            })
                        })
                        .collect();
                    json!({
                        "id": connector_id,
                        "dateColumn": connector.validity_dates[t.date_column].label,
                        "filters": filters,
                        "selects": t.selects.iter()
                            .map(|s| format!("{connector_id}.{}", connector.selects[*s].name))
                            .collect::<Vec<_>>(),
                    })
                })
                .collect();
            let mut doc = json!({
                "type": "CONCEPT",
                "ids": c.ids.iter().map(|n| tree.node_id_string(*n)).collect::<Vec<_>>(),
                "tables": tables,
            });
            if let Some(label) = &c.label {
                doc["label"] = json!(label);
            }
            doc
        }
        QueryNode::And(children) => json!({
            "type": "AND",
            "children": children.iter().map(|c| node_document(c, registry)).collect::<Vec<_>>(),
        }),
        QueryNode::Or(children) => json!({
            "type": "OR",
            "children": children.iter().map(|c| node_document(c, registry)).collect::<Vec<_>>(),
        }),
        QueryNode::Negation(child) => json!({"type": "NEGATION", "child": node_document(child, registry)}),
        QueryNode::DateRestriction { range, child } => json!({
            "type": "DATE_RESTRICTION",
            "dateRange": bounds_json(range.min().map(format_day), range.max().map(format_day)),
            "child": node_document(child, registry),
        }),
        QueryNode::SavedQuery { execution } => json!({"type": "SAVED_QUERY", "query": execution}),
    }
}
