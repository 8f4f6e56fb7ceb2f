//! Random datasets, concept trees, saved tables and query documents.

use std::collections::HashMap;

use cohort_core::engine::{DataStore, DateSet, LoadedImport, SavedTable};
use cohort_core::registry::{DatasetConfig, Registry, SecondaryIdDef};
use cohort_core::storage::container::write_bucket;
use cohort_core::storage::{bucket_of, build_bucket, Bucket, ColumnDef, EventRow, TableSchema};
use cohort_core::types::{day_from_ymd, format_day, quarter_of, ColumnType, DateRange, Day, Value};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value as Json};

use crate::oracle::{RawData, RawTable};

pub const DATASET: &str = "synthetic";

fn column(name: &str, t: ColumnType) -> ColumnDef {
    ColumnDef::new(name, t)
}

fn secondary(name: &str, t: ColumnType, id: &str) -> ColumnDef {
    ColumnDef {
        secondary_id: Some(id.into()),
        ..ColumnDef::new(name, t)
    }
}

pub fn schemas() -> Vec<TableSchema> {
    use ColumnType::*;
    vec![
        TableSchema::new(
            "outpatient",
            vec![
                column("code", String),
                column("validity", DateRange),
                column("visit", Date),
                column("physician", String),
                column("amount", Money),
                column("kind", String),
                column("flag", Boolean),
            ],
        )
        .unwrap(),
        TableSchema::new(
            "inpatient",
            vec![
                column("code", String),
                column("begin", Date),
                column("end", Date),
                column("case_id", String),
                secondary("hospital", String, "hospital"),
                column("length", Integer),
                column("weight", Decimal),
                column("kind", String),
            ],
        )
        .unwrap(),
        TableSchema::new(
            "insurance",
            vec![
                column("period", DateRange),
                column("status", String),
                secondary("hospital", String, "hospital"),
            ],
        )
        .unwrap(),
    ]
}

const KINDS: [&str; 3] = ["primary", "secondary", "initial"];
const STATUSES: [&str; 3] = ["A", "B", "C"];

fn kind_labels() -> Json {
    json!({"primary": "Primary", "secondary": "Secondary", "initial": "Initial"})
}

fn icd_connectors() -> Json {
    json!([
        {
            "name": "outpatient", "label": "Outpatient", "table": "outpatient", "column": "outpatient.code",
            "validityDates": [{"label": "Validity", "column": "validity"}, {"label": "Visit", "column": "visit"}],
            "filters": [
                {"name": "kind", "label": "Kind", "type": "SELECT", "column": "kind", "labels": kind_labels()},
                {"name": "physicians", "label": "Physicians", "type": "COUNT", "column": "physician", "distinct": true},
                {"name": "quarters", "label": "Quarters", "type": "COUNT_QUARTERS"},
                {"name": "amount", "label": "Amount", "type": "RANGE", "column": "amount"},
                {"name": "visits", "label": "Visits", "type": "COUNT", "column": "physician"}
            ],
            "selects": [
                {"name": "codes", "label": "Codes", "type": "DISTINCT", "column": "code"},
                {"name": "visits", "label": "Visits", "type": "COUNT"},
                {"name": "physicians", "label": "Physicians", "type": "COUNT", "column": "physician", "distinct": true},
                {"name": "quarters", "label": "Quarters", "type": "COUNT_QUARTERS"},
                {"name": "amount", "label": "Amount", "type": "SUM", "column": "amount"},
                {"name": "dates", "label": "Dates", "type": "EVENT_DATES"},
                {"name": "exists", "label": "Exists", "type": "EXISTS"},
                {"name": "visit_quarters", "label": "Visit quarters", "type": "COUNT_QUARTERS", "column": "visit"},
                {"name": "flags", "label": "Flags", "type": "DISTINCT", "column": "flag"}
            ]
        },
        {
            "name": "inpatient", "label": "Inpatient", "table": "inpatient", "column": "code",
            "validityDates": [{"label": "Begin", "column": "begin"}, {"label": "End", "column": "end"}],
            "filters": [
                {"name": "kind", "label": "Kind", "type": "SELECT", "column": "kind", "labels": kind_labels()},
                {"name": "cases", "label": "Cases", "type": "COUNT", "column": "case_id", "distinct": true},
                {"name": "length", "label": "Length", "type": "RANGE", "column": "length"},
                {"name": "weight", "label": "Weight", "type": "RANGE", "column": "weight"},
                {"name": "quarters", "label": "Quarters", "type": "COUNT_QUARTERS", "column": "end"}
            ],
            "selects": [
                {"name": "codes", "label": "Codes", "type": "DISTINCT", "column": "code"},
                {"name": "hospitals", "label": "Hospitals", "type": "COUNT", "column": "hospital", "distinct": true},
                {"name": "length", "label": "Length", "type": "SUM", "column": "length"},
                {"name": "weight", "label": "Weight", "type": "SUM", "column": "weight"},
                {"name": "cases", "label": "Cases", "type": "COUNT", "column": "case_id", "distinct": true},
                {"name": "dates", "label": "Dates", "type": "EVENT_DATES"},
                {"name": "exists", "label": "Exists", "type": "EXISTS"}
            ]
        }
    ])
}

fn insured_concept() -> Json {
    json!({
        "name": "insured",
        "label": "Insured",
        "connectors": [{
            "name": "insurance", "label": "Insurance", "table": "insurance",
            "validityDates": [{"label": "Period", "column": "period"}],
            "filters": [{"name": "status", "label": "Status", "type": "SELECT", "column": "status",
                         "labels": {"A": "Active", "B": "Suspended", "C": "Closed"}}],
            "selects": [
                {"name": "exists", "label": "Exists", "type": "EXISTS"},
                {"name": "dates", "label": "Dates", "type": "EVENT_DATES"},
                {"name": "status", "label": "Status", "type": "DISTINCT", "column": "status"},
                {"name": "quarters", "label": "Quarters", "type": "COUNT_QUARTERS"}
            ]
        }]
    })
}

fn prefix(p: &str) -> Json {
    json!({"type": "PREFIX", "prefix": p})
}

/// A random diagnosis-code hierarchy exercising every condition type,
/// with overlapping siblings resolved by declaration order.
pub fn random_icd_tree<R: Rng>(rng: &mut R) -> Json {
    let mut root_children = Vec::new();
    for letter in ["A", "B", "G"] {
        let mut ranges = Vec::new();
        for decade in 0..3 {
            if !rng.gen_bool(0.8) {
                continue;
            }
            let mut groups = Vec::new();
            let mut digits: Vec<u32> = (0..10).collect();
            digits.shuffle(rng);
            for d in digits.into_iter().take(rng.gen_range(1..=3)) {
                let code = format!("{letter}{decade}{d}");
                let mut leaves = Vec::new();
                match rng.gen_range(0..4) {
                    0 => leaves.push(json!({"name": format!("{code}1"), "condition": prefix(&format!("{code}1"))})),
                    1 => leaves.push(json!({"name": format!("{code}_eq"),
                        "condition": {"type": "EQUAL", "values": [format!("{code}2"), format!("{code}25")]}})),
                    2 => leaves.push(json!({"name": format!("{code}_not9"),
                        "condition": {"type": "AND", "conditions": [prefix(&code), {"type": "NOT", "condition": prefix(&format!("{code}9"))}]}})),
                    _ => {
                        leaves.push(json!({"name": format!("{code}_primary"),
                            "condition": {"type": "AND", "conditions": [prefix(&format!("{code}3")),
                                {"type": "COLUMN_EQUAL", "column": "kind", "values": ["primary"]}]}}));
                        leaves.push(json!({"name": format!("{code}3"), "condition": prefix(&format!("{code}3"))}));
                    }
                }
                groups.push(json!({"name": code.clone(), "condition": prefix(&code), "children": leaves}));
            }
            ranges.push(json!({
                "name": format!("{letter}{decade}0-{letter}{decade}9"),
                "condition": {"type": "PREFIX_RANGE", "min": format!("{letter}{decade}0"), "max": format!("{letter}{decade}9")},
                "children": groups
            }));
        }
        let condition = if rng.gen_bool(0.5) {
            prefix(letter)
        } else {
            json!({"type": "PREFIX_RANGE", "min": format!("{letter}00"), "max": format!("{letter}29")})
        };
        let mut node = json!({"name": letter.to_lowercase(), "label": format!("Chapter {letter}"), "condition": condition});
        if !ranges.is_empty() {
            node["children"] = Json::Array(ranges);
        }
        root_children.push(node);
    }
    root_children.push(json!({"name": "mixed",
        "condition": {"type": "OR", "conditions": [prefix("A0"), {"type": "EQUAL", "values": ["B15", "Z99"]}]}}));
    root_children.push(json!({"name": "primary_g",
        "condition": {"type": "AND", "conditions": [prefix("G"), {"type": "COLUMN_EQUAL", "column": "outpatient.kind", "values": ["primary"]}]}}));
    root_children.shuffle(rng);
    json!({"name": "icd", "label": "ICD", "children": root_children, "connectors": icd_connectors()})
}

/// Dot paths of every node below the root.
pub fn node_paths(concept: &Json) -> Vec<String> {
    fn walk(node: &Json, prefix: &str, out: &mut Vec<String>) {
        for child in node.get("children").and_then(Json::as_array).into_iter().flatten() {
            let name = child["name"].as_str().unwrap();
            let path = if prefix.is_empty() { name.to_string() } else { format!("{prefix}.{name}") };
            out.push(path.clone());
            walk(child, &path, out);
        }
    }
    let mut out = Vec::new();
    walk(concept, "", &mut out);
    out
}

fn code_pool<R: Rng>(rng: &mut R) -> Vec<String> {
    let mut codes = Vec::new();
    for letter in ["A", "B", "G"] {
        for n in 0..30 {
            if rng.gen_bool(0.5) {
                let base = format!("{letter}{n:02}");
                codes.push(base.clone());
                for _ in 0..rng.gen_range(0..3) {
                    codes.push(format!("{base}{}", rng.gen_range(0..10)));
                }
                if rng.gen_bool(0.3) {
                    codes.push(format!("{base}25"));
                }
            }
        }
    }
    codes.extend(["Z99", "B15", "X1", "A"].map(String::from));
    codes
}

fn first_day() -> Day {
    day_from_ymd(2013, 1, 1)
}

fn last_day() -> Day {
    day_from_ymd(2018, 12, 31)
}

pub fn random_day<R: Rng>(rng: &mut R) -> Day {
    rng.gen_range(first_day()..=last_day())
}

fn quarter_range(day: Day) -> DateRange {
    let (y, q) = quarter_of(day);
    let start = day_from_ymd(y, (q - 1) * 3 + 1, 1);
    let end = if q == 4 { day_from_ymd(y + 1, 1, 1) } else { day_from_ymd(y, q * 3 + 1, 1) } - 1;
    DateRange::closed(start, end)
}

fn random_range<R: Rng>(rng: &mut R) -> DateRange {
    let d = random_day(rng);
    match rng.gen_range(0..20) {
        0..=11 => quarter_range(d),
        12..=15 => DateRange::closed(d, (d + rng.gen_range(0..60)).min(last_day())),
        16..=17 => DateRange::day(d),
        18 => DateRange::new(None, Some(d)).unwrap(),
        _ => DateRange::new(Some(d), None).unwrap(),
    }
}

fn maybe<R: Rng>(rng: &mut R, p_null: f64, value: impl FnOnce(&mut R) -> Value) -> Option<Value> {
    (!rng.gen_bool(p_null)).then(|| value(rng))
}

fn entity_id<R: Rng>(rng: &mut R, i: usize) -> String {
    if rng.gen_bool(0.1) {
        format!("X{i}")
    } else {
        format!("{}", 1000 + i * 3)
    }
}

/// A random dataset with at most `max_entities` entities and about
/// `max_events` events spread over three tables and several imports.
pub fn random_dataset<R: Rng>(rng: &mut R, max_entities: usize, max_events: usize) -> RawData {
    let tables = schemas();
    let config = DatasetConfig {
        name: DATASET.into(),
        entity_label: "result".into(),
        dates_label: "dates".into(),
        bucket_count: rng.gen_range(1..=6),
        secondary_ids: vec![SecondaryIdDef {
            name: "hospital".into(),
            label: "Hospital".into(),
        }],
        tables: tables.clone(),
    };
    let concepts = vec![random_icd_tree(rng), insured_concept()];
    let codes = code_pool(rng);
    let physicians: Vec<String> = (0..12).map(|i| format!("P{i}")).collect();
    let hospitals = ["H1", "H2", "H3"];

    let n = rng.gen_range(max_entities.min(20)..=max_entities);
    let per_entity = (max_events / n.max(1)).clamp(1, 60);
    let mut rows: [Vec<EventRow>; 3] = Default::default();
    for i in 0..n {
        let entity = entity_id(rng, i);
        let budget = rng.gen_range(0..=per_entity);
        let favourites: Vec<&String> = codes.choose_multiple(rng, 3).collect();
        for _ in 0..budget {
            let code = if rng.gen_bool(0.6) {
                favourites.choose(rng).map(|c| c.to_string())
            } else {
                codes.choose(rng).cloned()
            };
            let code = maybe(rng, 0.03, |_| Value::String(code.unwrap()));
            let kind = maybe(rng, 0.1, |rng| Value::String(KINDS.choose(rng).unwrap().to_string()));
            match rng.gen_range(0..10) {
                0..=5 => {
                    let range = random_range(rng);
                    let visit = range.min().or(range.max()).unwrap_or_else(|| random_day(rng));
                    rows[0].push(EventRow::new(
                        entity.clone(),
                        vec![
                            code,
                            maybe(rng, 0.03, |_| Value::DateRange(range)),
                            maybe(rng, 0.1, |_| Value::Date(visit)),
                            maybe(rng, 0.05, |rng| Value::String(physicians.choose(rng).unwrap().clone())),
                            maybe(rng, 0.1, |rng| Value::Money(rng.gen_range(0..50_000))),
                            kind,
                            maybe(rng, 0.2, |rng| Value::Boolean(rng.gen_bool(0.3))),
                        ],
                    ));
                }
                6..=8 => {
                    let begin = random_day(rng);
                    let end = (begin + rng.gen_range(0..40)).min(last_day());
                    rows[1].push(EventRow::new(
                        entity.clone(),
                        vec![
                            code,
                            maybe(rng, 0.03, |_| Value::Date(begin)),
                            maybe(rng, 0.1, |_| Value::Date(end)),
                            Some(Value::String(format!("C{}", rng.gen_range(0..8)))),
                            maybe(rng, 0.05, |rng| Value::String(hospitals.choose(rng).unwrap().to_string())),
                            maybe(rng, 0.15, |rng| Value::Integer(rng.gen_range(1..30))),
                            maybe(rng, 0.1, |rng| Value::Decimal(rng.gen_range(0..50_000))),
                            kind,
                        ],
                    ));
                }
                _ => rows[2].push(EventRow::new(
                    entity.clone(),
                    vec![
                        maybe(rng, 0.03, |rng| Value::DateRange(random_range(rng))),
                        Some(Value::String(STATUSES.choose(rng).unwrap().to_string())),
                        maybe(rng, 0.3, |rng| Value::String(hospitals.choose(rng).unwrap().to_string())),
                    ],
                )),
            }
        }
    }

    let raw_tables = tables
        .iter()
        .zip(rows)
        .map(|(schema, rows)| {
            let count = rng.gen_range(1..=3);
            let mut imports = vec![Vec::new(); count];
            for row in rows {
                imports[rng.gen_range(0..count)].push(row);
            }
            RawTable {
                name: schema.name.clone(),
                imports,
            }
        })
        .collect();
    RawData {
        config,
        concepts,
        tables: raw_tables,
    }
}

pub fn registry(data: &RawData) -> Registry {
    let mut registry = Registry::new(data.config.clone()).expect("generated dataset is valid");
    for c in &data.concepts {
        registry.add_concept(c.clone()).expect("generated concept is valid");
    }
    registry
}

/// Encodes every import into buckets, in import order.
pub fn buckets(data: &RawData) -> Vec<Bucket> {
    let count = data.config.bucket_count;
    let mut out = Vec::new();
    for table in &data.tables {
        let schema = data.config.table(&table.name).unwrap();
        for (i, rows) in table.imports.iter().enumerate() {
            let mut parts: Vec<Vec<EventRow>> = vec![Vec::new(); count as usize];
            for row in rows {
                parts[bucket_of(&row.entity, count) as usize].push(row.clone());
            }
            for (b, part) in parts.into_iter().enumerate() {
                if part.is_empty() {
                    continue;
                }
                let id = format!("{}.{i}", table.name);
                out.push(build_bucket(part, schema, &id, b as u32, count).expect("generated rows fit"));
            }
        }
    }
    out
}

/// Every bucket serialized as an import container.
pub fn containers(data: &RawData) -> Vec<Vec<u8>> {
    buckets(data).iter().map(write_bucket).collect()
}

pub fn store(data: &RawData, registry: &Registry) -> DataStore {
    let mut store = DataStore::new();
    for bucket in buckets(data) {
        store.add(LoadedImport::new(bucket, registry).expect("bucket matches registry"));
    }
    store
}

/// Entities of the dataset, each included with probability one third and
/// given zero to two random ranges.
pub fn random_saved<R: Rng>(rng: &mut R, data: &RawData) -> SavedTable {
    let mut table = SavedTable::new();
    for t in &data.tables {
        for row in t.imports.iter().flatten() {
            if table.contains_key(&row.entity) || !rng.gen_bool(0.33) {
                continue;
            }
            let set = DateSet::from_ranges((0..rng.gen_range(0..3)).map(|_| random_range(rng)));
            table.insert(row.entity.clone(), set);
        }
    }
    table
}

/// Generates query documents over a dataset from [`random_dataset`].
pub struct QueryGen<'a> {
    pub data: &'a RawData,
    pub saved: Vec<String>,
    pub max_depth: usize,
    icd_paths: Vec<String>,
}

fn bounds<R: Rng>(rng: &mut R, lo: i64, hi: i64, render: impl Fn(i64) -> Json) -> Json {
    let a = rng.gen_range(lo..=hi);
    let b = rng.gen_range(a..=hi);
    match rng.gen_range(0..3) {
        0 => json!({"min": render(a)}),
        1 => json!({"max": render(b)}),
        _ => json!({"min": render(a), "max": render(b)}),
    }
}

impl<'a> QueryGen<'a> {
    pub fn new(data: &'a RawData, saved: Vec<String>) -> Self {
        QueryGen {
            data,
            saved,
            max_depth: 4,
            icd_paths: node_paths(&data.concepts[0]),
        }
    }

    pub fn query<R: Rng>(&self, rng: &mut R) -> Json {
        let mut doc = json!({"type": "CONCEPT_QUERY", "root": self.node(rng, 1)});
        if rng.gen_bool(0.2) {
            doc["secondaryId"] = json!("hospital");
        }
        doc
    }

    fn node<R: Rng>(&self, rng: &mut R, depth: usize) -> Json {
        let leaf = depth >= self.max_depth;
        let pick = if leaf { rng.gen_range(0..10) } else { rng.gen_range(0..24) };
        match pick {
            0..=8 => self.concept(rng),
            9 if !self.saved.is_empty() => json!({"type": "SAVED_QUERY", "query": self.saved.choose(rng).unwrap()}),
            9 => self.concept(rng),
            10..=13 => json!({"type": "AND", "children": self.children(rng, depth)}),
            14..=17 => json!({"type": "OR", "children": self.children(rng, depth)}),
            18..=19 => json!({"type": "NEGATION", "child": self.node(rng, depth + 1)}),
            _ => {
                let a = random_day(rng) - 365;
                let b = rng.gen_range(a..=last_day() + 365);
                let range = match rng.gen_range(0..4) {
                    0 => json!({"min": format_day(a)}),
                    1 => json!({"max": format_day(b)}),
                    _ => json!({"min": format_day(a), "max": format_day(b)}),
                };
                json!({"type": "DATE_RESTRICTION", "dateRange": range, "child": self.node(rng, depth + 1)})
            }
        }
    }

    fn children<R: Rng>(&self, rng: &mut R, depth: usize) -> Vec<Json> {
        (0..rng.gen_range(1..=3)).map(|_| self.node(rng, depth + 1)).collect()
    }

    fn concept<R: Rng>(&self, rng: &mut R) -> Json {
        if rng.gen_bool(0.2) {
            return self.insured(rng);
        }
        let mut ids: Vec<String> = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let id = if rng.gen_bool(0.1) {
                format!("{DATASET}.icd")
            } else {
                format!("{DATASET}.icd.{}", self.icd_paths.choose(rng).unwrap())
            };
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let mut tables = Vec::new();
        let connectors = ["outpatient", "inpatient"];
        let which: &[&str] = match rng.gen_range(0..3) {
            0 => &connectors[..1],
            1 => &connectors[1..],
            _ => &connectors,
        };
        for connector in which {
            tables.push(self.table(rng, connector));
        }
        json!({"type": "CONCEPT", "ids": ids, "tables": tables})
    }

    fn table<R: Rng>(&self, rng: &mut R, connector: &str) -> Json {
        let prefix = format!("{DATASET}.icd.{connector}");
        let mut table = json!({"id": prefix});
        let (dates, filters, selects): (&[&str], Vec<(&str, Json)>, &[&str]) = match connector {
            "outpatient" => (
                &["Validity", "Visit", "visit"],
                vec![
                    ("kind", self.keys(rng, &KINDS)),
                    ("physicians", bounds(rng, 0, 4, |v| json!(v))),
                    ("quarters", bounds(rng, 0, 5, |v| json!(v))),
                    ("amount", bounds(rng, 0, 50_000, |v| json!(format!("{}.{:02}", v / 100, v % 100)))),
                    ("visits", bounds(rng, 0, 6, |v| json!(v))),
                ],
                &["codes", "visits", "physicians", "quarters", "amount", "dates", "exists", "visit_quarters", "flags"],
            ),
            _ => (
                &["Begin", "End"],
                vec![
                    ("kind", self.keys(rng, &KINDS)),
                    ("cases", bounds(rng, 0, 4, |v| json!(v))),
                    ("length", bounds(rng, 0, 30, |v| json!(v))),
                    ("weight", bounds(rng, 0, 50_000, |v| json!(format!("{}.{:04}", v / 10_000, v % 10_000)))),
                    ("quarters", bounds(rng, 0, 4, |v| json!(v))),
                ],
                &["codes", "hospitals", "length", "weight", "cases", "dates", "exists"],
            ),
        };
        if rng.gen_bool(0.5) {
            table["dateColumn"] = json!(dates.choose(rng).unwrap());
        }
        table["filters"] = filters
            .into_iter()
            .filter(|_| rng.gen_bool(0.25))
            .map(|(name, value)| json!({"filter": format!("{prefix}.{name}"), "value": value}))
            .collect();
        table["selects"] = selects
            .iter()
            .filter(|_| rng.gen_bool(0.3))
            .map(|s| json!(format!("{prefix}.{s}")))
            .collect();
        table
    }

    fn insured<R: Rng>(&self, rng: &mut R) -> Json {
        let prefix = format!("{DATASET}.insured.insurance");
        let mut table = json!({"id": prefix});
        if rng.gen_bool(0.3) {
            table["filters"] = json!([{"filter": format!("{prefix}.status"), "value": self.keys(rng, &STATUSES)}]);
        }
        table["selects"] = ["exists", "dates", "status", "quarters"]
            .iter()
            .filter(|_| rng.gen_bool(0.3))
            .map(|s| json!(format!("{prefix}.{s}")))
            .collect();
        json!({"type": "CONCEPT", "ids": [format!("{DATASET}.insured")], "tables": [table]})
    }

    fn keys<R: Rng>(&self, rng: &mut R, options: &[&str]) -> Json {
        let n = rng.gen_range(1..=2);
        let chosen: Vec<&&str> = options.choose_multiple(rng, n).collect();
        if chosen.len() == 1 && rng.gen_bool(0.5) {
            json!(chosen[0])
        } else {
            json!(chosen)
        }
    }
}

/// Saved tables keyed by the ids a [`QueryGen`] refers to.
pub fn saved_tables<R: Rng>(rng: &mut R, data: &RawData, count: usize) -> HashMap<String, SavedTable> {
    (0..count).map(|i| (format!("saved-{i}"), random_saved(rng, data))).collect()
}
