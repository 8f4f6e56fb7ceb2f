//! Brute-force reference interpreter.
//!
//! Works on uncompressed rows and reads the concept and query documents
//! directly: codes are classified by walking the tree from the root, date
//! sets are day bitmaps and every entity is evaluated by scanning all of
//! its rows. Nothing of the engine's planning, statistics or encodings is
//! used.

use std::collections::{HashMap, HashSet};

use chrono::{Datelike, NaiveDate};
use cohort_core::engine::{ResultLine, SavedTable, SelectValue};
use cohort_core::query::slug;
use cohort_core::registry::DatasetConfig;
use cohort_core::storage::{EventRow, TableSchema};
use cohort_core::types::{parse_iso_day, ColumnType, DateRange, Value};
use serde_json::Value as Json;

use crate::days::{span_of, DayBits, Span};

/// Rows of one table, split into imports.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub name: String,
    pub imports: Vec<Vec<EventRow>>,
}

/// A dataset as plain rows plus its documents.
#[derive(Debug, Clone)]
pub struct RawData {
    pub config: DatasetConfig,
    pub concepts: Vec<Json>,
    pub tables: Vec<RawTable>,
}

const NEG: i64 = i64::MIN;
const POS: i64 = i64::MAX;

/// `None` is unrestricted; an empty span has `lo > hi`.
type Restriction = Option<Span>;

fn restrict(outer: Restriction, inner: Span) -> Restriction {
    Some(match outer {
        None => inner,
        Some(o) => (o.0.max(inner.0), o.1.min(inner.1)),
    })
}

fn bare(column: &str) -> &str {
    column.rsplit('.').next().unwrap_or(column)
}

fn name_of(doc: &Json) -> String {
    doc.get("name")
        .and_then(Json::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| slug(doc["label"].as_str().unwrap_or_default()))
}

fn strings(v: &Json) -> Vec<String> {
    match v {
        Json::String(s) => vec![s.clone()],
        Json::Array(items) => items.iter().filter_map(|i| i.as_str().map(str::to_string)).collect(),
        _ => Vec::new(),
    }
}

fn condition_holds(cond: &Json, code: &str, aux: &dyn Fn(&str) -> Option<String>) -> bool {
    match cond["type"].as_str().unwrap_or_default() {
        "PREFIX" | "PREFIX_LIST" => {
            let list = if cond.get("prefixes").is_some() { &cond["prefixes"] } else { &cond["prefix"] };
            strings(list).iter().any(|p| code.starts_with(p.as_str()))
        }
        "PREFIX_RANGE" => {
            let min = cond["min"].as_str().unwrap_or_default();
            let max = cond["max"].as_str().unwrap_or_default();
            match code.get(..min.len()) {
                Some(head) => min <= head && head <= max,
                None => false,
            }
        }
        "EQUAL" => strings(&cond["values"]).iter().any(|v| v == code),
        "COLUMN_EQUAL" => {
            let column = bare(cond["column"].as_str().unwrap_or_default());
            aux(column).is_some_and(|v| strings(&cond["values"]).contains(&v))
        }
        "AND" => cond["conditions"].as_array().unwrap().iter().all(|c| condition_holds(c, code, aux)),
        "OR" => cond["conditions"].as_array().unwrap().iter().any(|c| condition_holds(c, code, aux)),
        "NOT" => !condition_holds(&cond["condition"], code, aux),
        other => panic!("unknown condition {other}"),
    }
}

/// Index path of the deepest node reached by always taking the first child
/// whose condition holds.
fn classify(concept: &Json, code: &str, aux: &dyn Fn(&str) -> Option<String>) -> Vec<usize> {
    let mut path = Vec::new();
    let mut node = concept;
    loop {
        let Some(children) = node.get("children").and_then(Json::as_array) else { break };
        match children.iter().position(|c| condition_holds(&c["condition"], code, aux)) {
            Some(i) => {
                path.push(i);
                node = &children[i];
            }
            None => break,
        }
    }
    path
}

/// Dotted name path of the node a code resolves to by naive descent, or
/// `None` when no child of the root matches.
pub fn naive_resolve(concept: &Json, code: &str, aux: &dyn Fn(&str) -> Option<String>) -> Option<String> {
    let path = classify(concept, code, aux);
    if path.is_empty() {
        return None;
    }
    let mut names = Vec::new();
    let mut node = concept;
    for i in path {
        node = &node["children"][i];
        names.push(name_of(node));
    }
    Some(names.join("."))
}

fn node_path(concept: &Json, names: &[&str]) -> Vec<usize> {
    let mut path = Vec::new();
    let mut node = concept;
    for name in names {
        let children = node["children"].as_array().expect("path below a leaf");
        let i = children
            .iter()
            .position(|c| name_of(c) == *name)
            .unwrap_or_else(|| panic!("unknown node {name}"));
        path.push(i);
        node = &children[i];
    }
    path
}

/// Scaled integer of a decimal literal, `10^4` units per one.
fn fixed4(v: &Json) -> i128 {
    let text = match v {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    };
    let (negative, text) = match text.strip_prefix('-') {
        Some(t) => (true, t.to_string()),
        None => (false, text),
    };
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let mut frac = frac.to_string();
    assert!(frac.len() <= 4, "too many fraction digits in {text}");
    while frac.len() < 4 {
        frac.push('0');
    }
    let n = int.parse::<i128>().unwrap() * 10_000 + frac.parse::<i128>().unwrap();
    if negative {
        -n
    } else {
        n
    }
}

fn numeric_scaled(v: &Value) -> Option<i128> {
    match v {
        Value::Integer(i) => Some(*i as i128 * 10_000),
        Value::Decimal(d) => Some(*d as i128),
        Value::Money(m) => Some(*m as i128 * 100),
        _ => None,
    }
}

fn raw_number(v: &Value) -> Option<i128> {
    match v {
        Value::Integer(i) => Some(*i as i128),
        Value::Decimal(d) => Some(*d as i128),
        Value::Money(m) => Some(*m as i128),
        _ => None,
    }
}

fn validity_span(v: Option<&Value>) -> Option<Span> {
    match v? {
        Value::Date(d) => Some((*d as i64, *d as i64)),
        Value::DateRange(r) => Some(span_of(r)),
        _ => None,
    }
}

fn quarter_index(day: i64) -> i64 {
    let date = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap() + chrono::Duration::days(day);
    date.year() as i64 * 4 + (date.month0() / 3) as i64
}

fn quarters(span: Span, out: &mut HashSet<i64>) {
    match span {
        (NEG, POS) => {}
        (NEG, d) | (d, POS) => {
            out.insert(quarter_index(d));
        }
        (lo, hi) => out.extend(quarter_index(lo)..=quarter_index(hi)),
    }
}

fn clip(span: Span, mask: Restriction) -> Option<Span> {
    let (lo, hi) = match mask {
        None => span,
        Some(m) => (span.0.max(m.0), span.1.min(m.1)),
    };
    (lo <= hi).then_some((lo, hi))
}

fn admits(mask: Restriction, v: Option<Span>) -> bool {
    match mask {
        None => true,
        Some(m) => m.0 <= m.1 && v.is_some_and(|v| v.0 <= m.1 && m.0 <= v.1),
    }
}

fn to_span(r: &DateRange) -> Span {
    span_of(r)
}

fn mask_bits(mask: Restriction) -> DayBits {
    let mut bits = DayBits::new();
    if let Some(m) = mask {
        bits.add(m);
    }
    bits
}

struct ScanResult {
    matched: Vec<usize>,
    satisfied: bool,
    dates: DayBits,
}

/// One evaluated CONCEPT table with what the selects need.
struct TableOutcome<'a> {
    connector: &'a Json,
    schema: &'a TableSchema,
    rows: Vec<&'a EventRow>,
    validity: usize,
    mask: Restriction,
    result: ScanResult,
    select_names: Vec<String>,
}

pub struct Oracle<'a> {
    data: &'a RawData,
    saved: &'a HashMap<String, SavedTable>,
    /// Rows per table and entity, in import order.
    by_entity: HashMap<&'a str, HashMap<&'a str, Vec<&'a EventRow>>>,
}

impl<'a> Oracle<'a> {
    pub fn new(data: &'a RawData, saved: &'a HashMap<String, SavedTable>) -> Self {
        let mut by_entity: HashMap<&str, HashMap<&str, Vec<&EventRow>>> = HashMap::new();
        for t in &data.tables {
            let rows = by_entity.entry(t.name.as_str()).or_default();
            for row in t.imports.iter().flatten() {
                rows.entry(row.entity.as_str()).or_default().push(row);
            }
        }
        Oracle { data, saved, by_entity }
    }

    fn schema(&self, table: &str) -> &'a TableSchema {
        self.data.config.tables.iter().find(|t| t.name == table).expect("table")
    }

    fn concept(&self, name: &str) -> &'a Json {
        self.data.concepts.iter().find(|c| name_of(c) == name).expect("concept")
    }

    fn rows(&self, table: &str, entity: &str) -> Vec<&'a EventRow> {
        self.by_entity
            .get(table)
            .and_then(|rows| rows.get(entity))
            .cloned()
            .unwrap_or_default()
    }

    fn entities(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in &self.data.tables {
            for row in t.imports.iter().flatten() {
                if seen.insert(row.entity.clone()) {
                    out.push(row.entity.clone());
                }
            }
        }
        out
    }

    /// Evaluates a query document over every entity.
    pub fn run(&self, query: &Json) -> Vec<ResultLine> {
        let secondary = query.get("secondaryId").and_then(Json::as_str);
        let mut tables = Vec::new();
        collect_tables(&query["root"], &mut tables);
        let grouped_tables: Vec<(&str, usize)> = tables
            .iter()
            .filter_map(|id| {
                let table = self.connector_doc(id).1;
                let schema = self.schema(table);
                let column = schema
                    .columns
                    .iter()
                    .position(|c| secondary.is_some() && c.secondary_id.as_deref() == secondary)?;
                Some((table, column))
            })
            .collect();

        let mut lines = Vec::new();
        for entity in self.entities() {
            let groups: Vec<Option<String>> = if secondary.is_some() {
                let mut groups: Vec<Option<String>> = Vec::new();
                let mut seen_tables = HashSet::new();
                for (table, column) in &grouped_tables {
                    if !seen_tables.insert(*table) {
                        continue;
                    }
                    for row in self.rows(table, &entity) {
                        let v = row.values[*column].as_ref().map(|v| v.to_string());
                        if !groups.contains(&v) {
                            groups.push(v);
                        }
                    }
                }
                if groups.is_empty() {
                    groups.push(None);
                }
                groups
            } else {
                vec![None]
            };
            for group in groups {
                let filter = secondary.map(|s| (s, group.clone()));
                let mut outcomes = Vec::new();
                let (ok, dates) = self.node(&query["root"], None, &entity, &filter, &mut outcomes);
                if !ok {
                    continue;
                }
                let mut values = Vec::new();
                for o in &outcomes {
                    for name in &o.select_names {
                        values.push(self.select(o, name));
                    }
                }
                lines.push(ResultLine {
                    entity: entity.clone(),
                    secondary: group,
                    dates: dates.to_dateset(),
                    values,
                });
            }
        }
        lines
    }

    /// Concept document, table and connector document of a connector id.
    fn connector_doc(&self, id: &str) -> (&'a Json, &'a str, &'a Json) {
        let parts: Vec<&str> = id.split('.').collect();
        let concept = self.concept(parts[1]);
        let connector = concept["connectors"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| name_of(c) == parts[2])
            .expect("connector");
        let table = connector
            .get("table")
            .and_then(Json::as_str)
            .or_else(|| connector.get("column").and_then(Json::as_str).and_then(|c| c.split_once('.')).map(|p| p.0))
            .or_else(|| connector["validityDates"][0]["column"].as_str().and_then(|c| c.split_once('.')).map(|p| p.0))
            .expect("connector table");
        (concept, table, connector)
    }

    fn node(
        &self,
        node: &Json,
        mask: Restriction,
        entity: &str,
        group: &Option<(&str, Option<String>)>,
        outcomes: &mut Vec<TableOutcome<'a>>,
    ) -> (bool, DayBits) {
        match node["type"].as_str().unwrap() {
            "CONCEPT" => {
                let mut ok = false;
                let mut dates = DayBits::new();
                for t in node["tables"].as_array().unwrap() {
                    let o = self.concept_table(node, t, mask, entity, group);
                    if o.result.satisfied {
                        ok = true;
                        dates = dates.union(&o.result.dates);
                    }
                    outcomes.push(o);
                }
                (ok, dates)
            }
            "AND" => {
                let results: Vec<(bool, DayBits)> = node["children"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|c| self.node(c, mask, entity, group, outcomes))
                    .collect();
                if results.iter().all(|r| r.0) {
                    let dates = results
                        .iter()
                        .skip(1)
                        .fold(results[0].1.clone(), |acc, r| acc.intersect(&r.1));
                    (true, dates)
                } else {
                    (false, DayBits::new())
                }
            }
            "OR" => {
                let mut ok = false;
                let mut dates = DayBits::new();
                for c in node["children"].as_array().unwrap() {
                    let (s, d) = self.node(c, mask, entity, group, outcomes);
                    if s {
                        ok = true;
                        dates = dates.union(&d);
                    }
                }
                (ok, dates)
            }
            "NEGATION" => {
                let (s, _) = self.node(&node["child"], mask, entity, group, outcomes);
                if s {
                    (false, DayBits::new())
                } else {
                    (true, mask_bits(mask))
                }
            }
            "DATE_RESTRICTION" => {
                let range = &node["dateRange"];
                let lo = range.get("min").and_then(Json::as_str).map_or(NEG, |d| parse_iso_day(d).unwrap() as i64);
                let hi = range.get("max").and_then(Json::as_str).map_or(POS, |d| parse_iso_day(d).unwrap() as i64);
                let inner = restrict(mask, (lo, hi));
                let (s, d) = self.node(&node["child"], inner, entity, group, outcomes);
                (s, d.intersect(&mask_bits_or_all(inner)))
            }
            "SAVED_QUERY" => {
                let id = node["query"].as_str().unwrap();
                match self.saved.get(id).and_then(|t| t.get(entity)) {
                    Some(set) => {
                        let mut bits = DayBits::new();
                        for r in set.ranges() {
                            if let Some(c) = clip(to_span(r), mask) {
                                bits.add(c);
                            }
                        }
                        (true, bits)
                    }
                    None => (false, DayBits::new()),
                }
            }
            other => panic!("unknown node type {other}"),
        }
    }

    fn concept_table(
        &self,
        node: &Json,
        element: &Json,
        mask: Restriction,
        entity: &str,
        group: &Option<(&str, Option<String>)>,
    ) -> TableOutcome<'a> {
        let (concept, table, connector) = self.connector_doc(element["id"].as_str().unwrap());
        let schema = self.schema(table);
        let col = |name: &str| schema.columns.iter().position(|c| c.name == bare(name)).expect("column");
        let code_column = connector.get("column").and_then(Json::as_str).map(col);
        let validity_dates = connector["validityDates"].as_array().unwrap();
        let validity = match element.get("dateColumn").and_then(Json::as_str) {
            Some(label) => validity_dates
                .iter()
                .find(|v| v["label"] == label || bare(v["column"].as_str().unwrap()) == label)
                .map(|v| col(v["column"].as_str().unwrap()))
                .expect("date column"),
            None => col(validity_dates[0]["column"].as_str().unwrap()),
        };
        let concept_name = name_of(concept);
        let requested: Vec<Vec<usize>> = node["ids"]
            .as_array()
            .unwrap()
            .iter()
            .map(|id| {
                let parts: Vec<&str> = id.as_str().unwrap().split('.').collect();
                assert_eq!(parts[1], concept_name, "one concept per node");
                node_path(concept, &parts[2..])
            })
            .collect();
        let any_root = requested.iter().any(Vec::is_empty);
        let group_column = group.as_ref().and_then(|(sid, _)| {
            schema.columns.iter().position(|c| c.secondary_id.as_deref() == Some(*sid))
        });

        let filter_docs = connector.get("filters").and_then(Json::as_array).cloned().unwrap_or_default();
        let filter_def = |id: &str| -> Json {
            let name = id.rsplit('.').next().unwrap();
            filter_docs.iter().find(|f| name_of(f) == name).cloned().expect("filter")
        };
        let filters: Vec<(Json, Json)> = element
            .get("filters")
            .and_then(Json::as_array)
            .map(|fs| fs.iter().map(|f| (filter_def(f["filter"].as_str().unwrap()), f["value"].clone())).collect())
            .unwrap_or_default();

        let rows = self.rows(table, entity);
        let mut matched = Vec::new();
        'rows: for (i, row) in rows.iter().enumerate() {
            if let (Some((_, g)), Some(c)) = (group, group_column) {
                if row.values[c].as_ref().map(|v| v.to_string()) != *g {
                    continue;
                }
            }
            if !any_root {
                let Some(column) = code_column else { continue };
                let Some(code) = &row.values[column] else { continue };
                let aux = |name: &str| {
                    schema
                        .columns
                        .iter()
                        .position(|c| c.name == name)
                        .and_then(|i| row.values[i].as_ref())
                        .map(|v| v.to_string())
                };
                let path = classify(concept, &code.to_string(), &aux);
                if !requested.iter().any(|r| path.starts_with(r)) {
                    continue;
                }
            }
            for (def, value) in &filters {
                let column = def.get("column").and_then(Json::as_str).map(col);
                match def["type"].as_str().unwrap() {
                    "SELECT" => {
                        let keys = strings(value);
                        let v = row.values[column.unwrap()].as_ref().map(|v| v.to_string());
                        if !v.is_some_and(|v| keys.contains(&v)) {
                            continue 'rows;
                        }
                    }
                    "RANGE" => {
                        let Some(v) = row.values[column.unwrap()].as_ref().and_then(numeric_scaled) else {
                            continue 'rows;
                        };
                        if value.get("min").is_some_and(|m| v < fixed4(m)) || value.get("max").is_some_and(|m| v > fixed4(m)) {
                            continue 'rows;
                        }
                    }
                    _ => {}
                }
            }
            if !admits(mask, validity_span(row.values[validity].as_ref())) {
                continue;
            }
            matched.push(i);
        }

        let bound = |value: &Json, key: &str| value.get(key).and_then(Json::as_u64);
        let in_bounds = |n: u64, value: &Json| {
            n >= bound(value, "min").unwrap_or(0) && bound(value, "max").is_none_or(|m| n <= m)
        };
        let mut satisfied = !matched.is_empty();
        for (def, value) in &filters {
            match def["type"].as_str().unwrap() {
                "COUNT" => {
                    let c = col(def["column"].as_str().unwrap());
                    let distinct = def.get("distinct").and_then(Json::as_bool).unwrap_or(false);
                    satisfied &= in_bounds(count(&rows, &matched, c, distinct), value);
                }
                "COUNT_QUARTERS" => {
                    let c = def.get("column").and_then(Json::as_str).map_or(validity, col);
                    satisfied &= in_bounds(quarter_count(&rows, &matched, c), value);
                }
                _ => {}
            }
        }
        let dates = if satisfied {
            event_dates(&rows, &matched, validity, mask)
        } else {
            DayBits::new()
        };
        let select_names = element
            .get("selects")
            .and_then(Json::as_array)
            .map(|s| s.iter().map(|id| id.as_str().unwrap().rsplit('.').next().unwrap().to_string()).collect())
            .unwrap_or_default();
        TableOutcome {
            connector,
            schema,
            rows,
            validity,
            mask,
            result: ScanResult {
                matched,
                satisfied,
                dates,
            },
            select_names,
        }
    }

    fn select(&self, o: &TableOutcome<'_>, name: &str) -> SelectValue {
        let def = o.connector["selects"]
            .as_array()
            .unwrap()
            .iter()
            .find(|s| name_of(s) == name)
            .expect("select");
        let col = |name: &str| o.schema.columns.iter().position(|c| c.name == bare(name)).expect("column");
        let column = def.get("column").and_then(Json::as_str).map(col);
        let matched = &o.result.matched;
        let kind = def["type"].as_str().unwrap();
        if matched.is_empty() {
            return if kind == "EXISTS" { SelectValue::Boolean(false) } else { SelectValue::Null };
        }
        let values = || matched.iter().filter_map(|&i| o.rows[i].values[column.unwrap()].as_ref());
        match kind {
            "EXISTS" => SelectValue::Boolean(true),
            "DISTINCT" => {
                let mut items: Vec<String> = Vec::new();
                for v in values() {
                    let s = v.to_string();
                    if !items.contains(&s) {
                        items.push(s);
                    }
                }
                if items.is_empty() {
                    SelectValue::Null
                } else {
                    SelectValue::List(items)
                }
            }
            "COUNT" => match column {
                None => SelectValue::Integer(matched.len() as i64),
                Some(c) => {
                    let distinct = def.get("distinct").and_then(Json::as_bool).unwrap_or(false);
                    SelectValue::Integer(count(&o.rows, matched, c, distinct) as i64)
                }
            },
            "COUNT_QUARTERS" => {
                SelectValue::Integer(quarter_count(&o.rows, matched, column.unwrap_or(o.validity)) as i64)
            }
            "SUM" => {
                let column_type: ColumnType = o.schema.columns[column.unwrap()].column_type;
                let nums: Vec<i128> = values().filter_map(raw_number).collect();
                if nums.is_empty() {
                    SelectValue::Null
                } else {
                    SelectValue::Number {
                        value: nums.iter().sum(),
                        column_type,
                    }
                }
            }
            "EVENT_DATES" => {
                let bits = event_dates(&o.rows, matched, o.validity, o.mask);
                if bits.is_empty() {
                    SelectValue::Null
                } else {
                    SelectValue::Dates(bits.to_dateset())
                }
            }
            other => panic!("unknown select {other}"),
        }
    }
}

fn mask_bits_or_all(mask: Restriction) -> DayBits {
    match mask {
        None => {
            let mut b = DayBits::new();
            b.add((NEG, POS));
            b
        }
        Some(m) if m.0 > m.1 => DayBits::new(),
        Some(m) => {
            let mut b = DayBits::new();
            b.add(m);
            b
        }
    }
}

fn collect_tables(node: &Json, out: &mut Vec<String>) {
    match node["type"].as_str().unwrap_or_default() {
        "CONCEPT" => {
            for t in node["tables"].as_array().unwrap() {
                out.push(t["id"].as_str().unwrap().to_string());
            }
        }
        "AND" | "OR" => node["children"].as_array().unwrap().iter().for_each(|c| collect_tables(c, out)),
        "NEGATION" | "DATE_RESTRICTION" => collect_tables(&node["child"], out),
        _ => {}
    }
}

fn count(rows: &[&EventRow], matched: &[usize], column: usize, distinct: bool) -> u64 {
    let values = matched.iter().filter_map(|&i| rows[i].values[column].as_ref());
    if distinct {
        values.map(|v| v.to_string()).collect::<HashSet<_>>().len() as u64
    } else {
        values.count() as u64
    }
}

fn quarter_count(rows: &[&EventRow], matched: &[usize], column: usize) -> u64 {
    let mut out = HashSet::new();
    for &i in matched {
        if let Some(span) = validity_span(rows[i].values[column].as_ref()) {
            quarters(span, &mut out);
        }
    }
    out.len() as u64
}

fn event_dates(rows: &[&EventRow], matched: &[usize], column: usize, mask: Restriction) -> DayBits {
    let mut bits = DayBits::new();
    for &i in matched {
        if let Some(span) = validity_span(rows[i].values[column].as_ref()).and_then(|s| clip(s, mask)) {
            bits.add(span);
        }
    }
    bits
}
