use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::error::{Error, Result};
use crate::query::defs::{check_column, slug, FilterDef, SelectDef};
use crate::storage::TableSchema;
use crate::types::ColumnType;

use super::condition::{AuxValues, Condition};
use super::trie::PrefixTrie;

/// Pre-order index of a node; also the lower end of its subtree interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);
}

#[derive(Debug, Clone)]
pub struct ConceptNode {
    pub name: String,
    pub label: String,
    pub description: String,
    /// `None` only for the root.
    pub condition: Option<Condition>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Inclusive upper end of the subtree interval.
    pub(crate) last_descendant: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityDate {
    pub label: String,
    pub column: String,
}

/// Binding of a concept to one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Connector {
    #[serde(default)]
    pub name: String,
    pub label: String,
    #[serde(default)]
    pub table: String,
    /// Code column; without one only the concept root can be selected.
    #[serde(default)]
    pub column: Option<String>,
    pub validity_dates: Vec<ValidityDate>,
    #[serde(default)]
    pub filters: Vec<FilterDef>,
    #[serde(default)]
    pub selects: Vec<SelectDef>,
}

/// Most specific node per dictionary code, computed once per loaded block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    entries: Vec<u32>,
}

const NO_MATCH: u32 = u32::MAX;
const DEFERRED: u32 = u32::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assigned {
    NoMatch,
    Node(NodeId),
    /// Depends on other columns of the event; resolve per event.
    Deferred,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, code: u32) -> Assigned {
        match self.entries[code as usize] {
            NO_MATCH => Assigned::NoMatch,
            DEFERRED => Assigned::Deferred,
            n => Assigned::Node(NodeId(n)),
        }
    }

    pub fn has_deferred(&self) -> bool {
        self.entries.contains(&DEFERRED)
    }
}

type CacheKey = (Box<str>, Vec<Option<String>>);
const CACHE_LIMIT: usize = 1 << 20;

#[derive(Debug)]
pub struct ConceptTree {
    /// `dataset.concept`
    pub id: String,
    pub name: String,
    pub label: String,
    pub description: String,
    nodes: Vec<ConceptNode>,
    /// Per node: trie from required child prefix to child ordinals.
    dispatch: Vec<PrefixTrie<Vec<u32>>>,
    paths: HashMap<String, NodeId>,
    pub connectors: Vec<Connector>,
    aux_columns: Vec<String>,
    cache: RwLock<HashMap<CacheKey, Option<NodeId>>>,
}

struct Probe {
    touched: Cell<bool>,
}

impl AuxValues for Probe {
    fn value(&self, _column: &str) -> Option<String> {
        self.touched.set(true);
        None
    }
}

fn text(obj: &serde_json::Map<String, Json>, key: &str) -> String {
    obj.get(key).and_then(Json::as_str).unwrap_or_default().to_string()
}

impl ConceptTree {
    /// Parses a concept descriptor: a root object with `name`, optional
    /// `label`/`description`, `connectors` and a `children` node tree.
    pub fn parse(doc: &Json, dataset: &str, tables: &[TableSchema]) -> Result<ConceptTree> {
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::parse("$", "concept must be an object"))?;
        let name = obj
            .get("name")
            .and_then(Json::as_str)
            .filter(|n| !n.is_empty() && !n.contains('.'))
            .ok_or_else(|| Error::parse("$.name", "missing or invalid concept name"))?
            .to_string();

        let mut nodes = vec![ConceptNode {
            name: name.clone(),
            label: obj.get("label").and_then(Json::as_str).unwrap_or(&name).to_string(),
            description: text(obj, "description"),
            condition: None,
            parent: None,
            children: Vec::new(),
            last_descendant: 0,
        }];
        let mut paths = HashMap::new();
        if let Some(children) = obj.get("children") {
            parse_children(children, "$.children", NodeId::ROOT, "", &mut nodes, &mut paths)?;
        }
        nodes[0].last_descendant = nodes.len() as u32 - 1;

        let mut connectors: Vec<Connector> = match obj.get("connectors") {
            None => Vec::new(),
            Some(c) => serde_path_to_error::deserialize(c).map_err(|e| {
                Error::parse(format!("$.connectors.{}", e.path()), e.inner().to_string())
            })?,
        };

        let dispatch = nodes
            .iter()
            .map(|node| {
                let mut trie: PrefixTrie<Vec<u32>> = PrefixTrie::new();
                for (ordinal, child) in node.children.iter().enumerate() {
                    let prefix = nodes[child.0 as usize]
                        .condition
                        .as_ref()
                        .expect("non-root nodes carry conditions")
                        .required_prefix();
                    trie.entry_or_insert_with(prefix.as_bytes(), Vec::new)
                        .push(ordinal as u32);
                }
                trie
            })
            .collect();

        let mut aux_columns = Vec::new();
        for node in &nodes {
            if let Some(c) = &node.condition {
                c.aux_columns(&mut aux_columns);
            }
        }

        let top_level: HashSet<&str> = nodes[0]
            .children
            .iter()
            .map(|c| nodes[c.0 as usize].name.as_str())
            .collect();
        let mut connector_names = HashSet::new();
        for (i, connector) in connectors.iter_mut().enumerate() {
            let path = format!("$.connectors[{i}]");
            resolve_connector(connector, tables, &aux_columns)
                .map_err(|m| Error::parse(&path, m))?;
            if top_level.contains(connector.name.as_str()) {
                return Err(Error::parse(
                    &path,
                    format!("connector name '{}' collides with a child node", connector.name),
                ));
            }
            if !connector_names.insert(connector.name.clone()) {
                return Err(Error::parse(
                    &path,
                    format!("duplicate connector name '{}'", connector.name),
                ));
            }
        }

        Ok(ConceptTree {
            id: format!("{dataset}.{name}"),
            label: nodes[0].label.clone(),
            description: nodes[0].description.clone(),
            name,
            nodes,
            dispatch,
            paths,
            connectors,
            aux_columns,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&ConceptNode> {
        self.nodes
            .get(id.0 as usize)
            .ok_or_else(|| Error::Id(format!("{}#{}", self.id, id.0)))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Inclusive DFS interval of a node's subtree.
    pub fn interval(&self, id: NodeId) -> Result<(u32, u32)> {
        Ok((id.0, self.node(id)?.last_descendant))
    }

    /// Looks up a node by its dotted path below the root (`g00-g99.g20-g26`);
    /// the empty path is the root.
    pub fn node_by_path(&self, path: &str) -> Option<NodeId> {
        if path.is_empty() {
            Some(NodeId::ROOT)
        } else {
            self.paths.get(path).copied()
        }
    }

    /// Full id (`dataset.concept.a.b`) of a node.
    pub fn node_id_string(&self, id: NodeId) -> String {
        let mut names = Vec::new();
        let mut cursor = Some(id);
        while let Some(n) = cursor {
            if n == NodeId::ROOT {
                break;
            }
            let node = &self.nodes[n.0 as usize];
            names.push(node.name.as_str());
            cursor = node.parent;
        }
        names.push(&self.id);
        names.reverse();
        names.join(".")
    }

    pub fn connector(&self, name: &str) -> Option<(usize, &Connector)> {
        self.connectors.iter().enumerate().find(|(_, c)| c.name == name)
    }

    /// Columns read by COLUMN_EQUAL conditions.
    pub fn aux_columns(&self) -> &[String] {
        &self.aux_columns
    }

    /// True iff `node` lies in the subtree of `ancestor` (reflexive).
    pub fn subtree_contains(&self, ancestor: NodeId, node: NodeId) -> Result<bool> {
        let (lo, hi) = self.interval(ancestor)?;
        self.node(node)?;
        Ok(lo <= node.0 && node.0 <= hi)
    }

    fn first_matching_child(&self, node: NodeId, code: &str, aux: &dyn AuxValues) -> Option<NodeId> {
        let mut candidates: Vec<u32> = Vec::new();
        for ordinals in self.dispatch[node.0 as usize].prefixes_of(code.as_bytes()) {
            candidates.extend_from_slice(ordinals);
        }
        candidates.sort_unstable();
        let children = &self.nodes[node.0 as usize].children;
        candidates.into_iter().map(|o| children[o as usize]).find(|child| {
            self.nodes[child.0 as usize]
                .condition
                .as_ref()
                .is_some_and(|c| c.matches(code, aux))
        })
    }

    fn resolve_uncached(&self, code: &str, aux: &dyn AuxValues) -> Option<NodeId> {
        let mut current = NodeId::ROOT;
        let mut deepest = None;
        while let Some(child) = self.first_matching_child(current, code, aux) {
            deepest = Some(child);
            current = child;
        }
        deepest
    }

    /// Deepest node whose root-to-node condition chain matches `code`;
    /// among overlapping siblings the first declared wins. Memoized per
    /// (code, auxiliary column values).
    pub fn resolve_code(&self, code: &str, aux: &dyn AuxValues) -> Option<NodeId> {
        let key: CacheKey = (
            code.into(),
            self.aux_columns.iter().map(|c| aux.value(c)).collect(),
        );
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return *hit;
        }
        let resolved = self.resolve_uncached(code, aux);
        let mut cache = self.cache.write().expect("cache lock");
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, resolved);
        resolved
    }

    /// Resolution without the memo table.
    pub fn resolve_code_cold(&self, code: &str, aux: &dyn AuxValues) -> Option<NodeId> {
        self.resolve_uncached(code, aux)
    }

    /// Resolves every dictionary entry; entries whose resolution consults an
    /// auxiliary column are marked deferred.
    pub fn build_assignment(&self, dictionary: &[String]) -> Assignment {
        let entries = dictionary
            .iter()
            .map(|code| {
                let probe = Probe {
                    touched: Cell::new(false),
                };
                let resolved = self.resolve_uncached(code, &probe);
                if probe.touched.get() {
                    DEFERRED
                } else {
                    resolved.map_or(NO_MATCH, |n| n.0)
                }
            })
            .collect();
        Assignment { entries }
    }

    /// Document for the concept browser.
    pub fn describe(&self) -> Json {
        fn node_json(tree: &ConceptTree, id: NodeId) -> Json {
            let node = &tree.nodes[id.0 as usize];
            json!({
                "id": tree.node_id_string(id),
                "name": node.name,
                "label": node.label,
                "description": node.description,
                "children": node.children.iter().map(|c| node_json(tree, *c)).collect::<Vec<_>>(),
            })
        }
        let connectors: Vec<Json> = self
            .connectors
            .iter()
            .map(|c| {
                let connector_id = format!("{}.{}", self.id, c.name);
                json!({
                    "id": connector_id,
                    "label": c.label,
                    "table": c.table,
                    "validityDates": c.validity_dates,
                    "filters": c.filters.iter().map(|f| {
                        let mut doc = serde_json::to_value(f).expect("filter serializes");
                        doc["id"] = json!(format!("{connector_id}.{}", f.name));
                        doc
                    }).collect::<Vec<_>>(),
                    "selects": c.selects.iter().map(|s| {
                        let mut doc = serde_json::to_value(s).expect("select serializes");
                        doc["id"] = json!(format!("{connector_id}.{}", s.name));
                        doc
                    }).collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut root = node_json(self, NodeId::ROOT);
        root["connectors"] = Json::Array(connectors);
        root
    }
}

fn parse_children(
    doc: &Json,
    path: &str,
    parent: NodeId,
    parent_path: &str,
    nodes: &mut Vec<ConceptNode>,
    paths: &mut HashMap<String, NodeId>,
) -> Result<()> {
    let items = doc
        .as_array()
        .ok_or_else(|| Error::parse(path, "children must be a list"))?;
    let mut sibling_names = HashSet::new();
    for (i, item) in items.iter().enumerate() {
        let here = format!("{path}[{i}]");
        let obj = item
            .as_object()
            .ok_or_else(|| Error::parse(&here, "node must be an object"))?;
        let name = obj
            .get("name")
            .and_then(Json::as_str)
            .filter(|n| !n.is_empty() && !n.contains('.'))
            .ok_or_else(|| Error::parse(format!("{here}.name"), "missing or invalid node name"))?
            .to_string();
        if !sibling_names.insert(name.clone()) {
            return Err(Error::parse(&here, format!("duplicate sibling name '{name}'")));
        }
        let condition = Condition::parse(
            obj.get("condition")
                .ok_or_else(|| Error::parse(format!("{here}.condition"), "missing condition"))?,
            &format!("{here}.condition"),
        )?;
        let id = NodeId(nodes.len() as u32);
        let node_path = if parent_path.is_empty() {
            name.clone()
        } else {
            format!("{parent_path}.{name}")
        };
        nodes.push(ConceptNode {
            label: obj.get("label").and_then(Json::as_str).unwrap_or(&name).to_string(),
            description: text(obj, "description"),
            name,
            condition: Some(condition),
            parent: Some(parent),
            children: Vec::new(),
            last_descendant: id.0,
        });
        nodes[parent.0 as usize].children.push(id);
        paths.insert(node_path.clone(), id);
        if let Some(children) = obj.get("children") {
            parse_children(children, &format!("{here}.children"), id, &node_path, nodes, paths)?;
        }
        nodes[id.0 as usize].last_descendant = nodes.len() as u32 - 1;
    }
    Ok(())
}

fn resolve_connector(
    connector: &mut Connector,
    tables: &[TableSchema],
    aux_columns: &[String],
) -> std::result::Result<(), String> {
    if connector.name.is_empty() {
        connector.name = slug(&connector.label);
    }
    if connector.table.is_empty() {
        let from_column = connector
            .column
            .as_deref()
            .or(connector.validity_dates.first().map(|v| v.column.as_str()))
            .and_then(|c| c.split_once('.'))
            .map(|(t, _)| t.to_string());
        connector.table = from_column.ok_or("connector names no table")?;
    }
    let schema = tables
        .iter()
        .find(|t| t.name == connector.table)
        .ok_or_else(|| format!("unknown table '{}'", connector.table))?;
    if let Some(column) = &connector.column {
        connector.column = Some(check_column(
            schema,
            column,
            |t| t == ColumnType::String,
            "code columns must be STRING",
        )?);
    }
    if connector.validity_dates.is_empty() {
        return Err("connector needs at least one validity date".into());
    }
    for v in &mut connector.validity_dates {
        v.column = check_column(schema, &v.column, ColumnType::is_date, "validity dates must be dates")?;
    }
    let mut names = HashSet::new();
    for f in &mut connector.filters {
        f.resolve(schema)?;
        if !names.insert(f.name.clone()) {
            return Err(format!("duplicate filter name '{}'", f.name));
        }
    }
    names.clear();
    for s in &mut connector.selects {
        s.resolve(schema)?;
        if !names.insert(s.name.clone()) {
            return Err(format!("duplicate select name '{}'", s.name));
        }
    }
    for column in aux_columns {
        if schema.column_index(column).is_none() {
            return Err(format!(
                "condition column '{column}' missing from table '{}'",
                schema.name
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::condition::NoAux;
    use crate::storage::ColumnDef;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn code1() -> Json {
        json!({
            "name": "icd",
            "children": [{
                "name": "g20-g26",
                "description": " Extrapiramidal and movement disorders",
                "condition": {"type": "PREFIX_RANGE", "min": "G20", "max": "G26"},
                "children": [{
                    "name": "g20",
                    "description": " Parkinson's disease",
                    "condition": {"type": "PREFIX", "prefix": "G20"},
                    "children": [{
                        "name": "g20_1",
                        "description": " Parkinson's disease with moderate to severe impairment ",
                        "condition": {"type": "PREFIX", "prefix": "G201"},
                        "children": [{
                            "name": "g20_11",
                            "description": " Parkinson's disease with moderate to severe impairment with fluctuations",
                            "condition": {"type": "PREFIX", "prefix": "G2011"}
                        }]
                    }]
                }]
            }]
        })
    }

    fn hospital_table() -> TableSchema {
        TableSchema::new(
            "hospital_diagnosis",
            vec![
                ColumnDef::new("icd_code", ColumnType::String),
                ColumnDef::new("case_begin", ColumnType::Date),
                ColumnDef::new("case_end", ColumnType::Date),
                ColumnDef::new("kind", ColumnType::String),
                ColumnDef::new("case_id", ColumnType::String),
            ],
        )
        .unwrap()
    }

    fn tree() -> ConceptTree {
        ConceptTree::parse(&code1(), "dataset", &[]).unwrap()
    }

    #[test]
    fn code1_paths_and_intervals() {
        let t = tree();
        let g20_11 = t.node_by_path("g20-g26.g20.g20_1.g20_11").unwrap();
        assert_eq!(t.node_id_string(g20_11), "dataset.icd.g20-g26.g20.g20_1.g20_11");
        let mut chain = vec![];
        let mut cursor = Some(g20_11);
        while let Some(n) = cursor.filter(|n| *n != NodeId::ROOT) {
            chain.push(t.node(n).unwrap().name.clone());
            cursor = t.node(n).unwrap().parent;
        }
        chain.reverse();
        assert_eq!(chain, ["g20-g26", "g20", "g20_1", "g20_11"]);
        assert_eq!(t.interval(NodeId::ROOT).unwrap(), (0, 4));
        assert_eq!(t.interval(t.node_by_path("g20-g26.g20").unwrap()).unwrap(), (2, 4));
    }

    #[test]
    fn single_node_interval() {
        let t = ConceptTree::parse(&json!({"name": "solo"}), "d", &[]).unwrap();
        assert_eq!(t.interval(NodeId::ROOT).unwrap(), (0, 0));
    }

    #[test]
    fn resolution_examples() {
        let t = tree();
        let id = |p: &str| t.node_by_path(p);
        assert_eq!(t.resolve_code("G2011", &NoAux), id("g20-g26.g20.g20_1.g20_11"));
        assert_eq!(t.resolve_code("G25", &NoAux), id("g20-g26"));
        assert_eq!(t.resolve_code("A00", &NoAux), None);
        assert_eq!(t.resolve_code("G2090", &NoAux), id("g20-g26.g20"));
        // cached answers equal cold ones
        assert_eq!(t.resolve_code("G2011", &NoAux), t.resolve_code_cold("G2011", &NoAux));
    }

    #[test]
    fn subtree_checks() {
        let t = tree();
        let g20_26 = t.node_by_path("g20-g26").unwrap();
        let g20 = t.node_by_path("g20-g26.g20").unwrap();
        let g20_11 = t.node_by_path("g20-g26.g20.g20_1.g20_11").unwrap();
        assert!(t.subtree_contains(g20_26, g20_11).unwrap());
        assert!(t.subtree_contains(g20, g20).unwrap());
        assert!(!t.subtree_contains(g20, g20_26).unwrap());
        assert!(matches!(t.subtree_contains(g20, NodeId(99)), Err(Error::Id(_))));
    }

    #[test]
    fn assignment_examples() {
        let t = tree();
        let dict: Vec<String> = ["A00", "G2011", "G25"].iter().map(|s| s.to_string()).collect();
        let a = t.build_assignment(&dict);
        assert_eq!(a.get(0), Assigned::NoMatch);
        assert_eq!(a.get(1), Assigned::Node(t.node_by_path("g20-g26.g20.g20_1.g20_11").unwrap()));
        assert_eq!(a.get(2), Assigned::Node(t.node_by_path("g20-g26").unwrap()));
        assert!(t.build_assignment(&[]).is_empty());
    }

    #[test]
    fn parses_code2_connector() {
        let mut doc = code1();
        doc["connectors"] = json!([{
            "label": "Hospital Diagnoses",
            "validityDates": [
                {"label": "Case begin", "column": "hospital_diagnosis.case_begin"},
                {"label": "Case end", "column": "hospital_diagnosis.case_end"}
            ],
            "column": "hospital_diagnosis.icd_code",
            "filters": [
                {"type": "SELECT", "label": "Diagnose kind", "column": "hospital_diagnosis.kind",
                 "labels": {"primary": "Primary", "secondary": "Secondary", "initial": "Initial"}},
                {"type": "COUNT", "distinct": true, "label": "Case number", "column": "hospital_diagnosis.case_id"}
            ],
            "selects": [
                {"label": "ICD-Codes", "type": "DISTINCT", "column": "hospital_diagnosis.icd_code"},
                {"label": "Number of Cases", "type": "COUNT", "distinct": true, "column": "hospital_diagnosis.case_id"}
            ]
        }]);
        let t = ConceptTree::parse(&doc, "dataset", &[hospital_table()]).unwrap();
        let (_, c) = t.connector("hospital_diagnoses").unwrap();
        assert_eq!(c.table, "hospital_diagnosis");
        assert_eq!(c.validity_dates.len(), 2);
        assert_eq!(c.validity_dates[0].label, "Case begin");
        assert_eq!(c.filters[0].type_name(), "SELECT");
        assert_eq!(c.filters[1].type_name(), "COUNT");
        assert_eq!(c.selects[1].name, "number_of_cases");

        doc["connectors"][0]["filters"][0]["column"] = json!("hospital_diagnosis.nope");
        let err = ConceptTree::parse(&doc, "dataset", &[hospital_table()]).unwrap_err();
        assert!(err.to_string().contains("dangling column reference"), "{err}");
    }

    #[test]
    fn unknown_condition_reports_path() {
        let mut doc = code1();
        doc["children"][0]["children"][0]["condition"]["type"] = json!("REGEX");
        let err = ConceptTree::parse(&doc, "dataset", &[]).unwrap_err().to_string();
        assert!(err.contains("$.children[0].children[0].condition.type"), "{err}");
    }

    /// Scans every child in declaration order.
    fn naive(t: &ConceptTree, node: NodeId, code: &str) -> Option<NodeId> {
        for child in &t.node(node).unwrap().children {
            let c = t.node(*child).unwrap().condition.as_ref().unwrap();
            if c.matches(code, &NoAux) {
                return Some(naive(t, *child, code).unwrap_or(*child));
            }
        }
        None
    }

    #[test]
    fn trie_dispatch_equals_naive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let letters = ["A", "B", "G", "I"];
        let mut children = Vec::new();
        for l in letters {
            let mut sub = Vec::new();
            for d in 0..10 {
                sub.push(json!({
                    "name": format!("{l}{d}"),
                    "condition": {"type": "PREFIX", "prefix": format!("{l}{d}")},
                    "children": (0..5).map(|e| json!({
                        "name": format!("{l}{d}{e}"),
                        "condition": if e % 2 == 0 {
                            json!({"type": "PREFIX", "prefix": format!("{l}{d}{e}")})
                        } else {
                            json!({"type": "PREFIX_RANGE", "min": format!("{l}{d}{e}0"), "max": format!("{l}{d}{e}5")})
                        }
                    })).collect::<Vec<_>>()
                }));
            }
            children.push(json!({
                "name": format!("{l}-range"),
                "condition": {"type": "PREFIX_RANGE", "min": format!("{l}00"), "max": format!("{l}79")},
                "children": sub
            }));
        }
        let t = ConceptTree::parse(&json!({"name": "x", "children": children}), "d", &[]).unwrap();
        for _ in 0..20_000 {
            let len = rng.gen_range(0..6);
            let mut code = letters[rng.gen_range(0..4)].to_string();
            for _ in 0..len {
                code.push(char::from(b'0' + rng.gen_range(0..10)));
            }
            assert_eq!(t.resolve_code(&code, &NoAux), naive(&t, NodeId::ROOT, &code), "{code}");
        }
    }

    #[test]
    fn column_conditions_are_deferred() {
        let doc = json!({
            "name": "icd",
            "children": [{
                "name": "primary_g20",
                "condition": {"type": "AND", "conditions": [
                    {"type": "PREFIX", "prefix": "G20"},
                    {"type": "COLUMN_EQUAL", "column": "kind", "values": ["primary"]}
                ]}
            }, {
                "name": "i10",
                "condition": {"type": "PREFIX", "prefix": "I10"}
            }]
        });
        let t = ConceptTree::parse(&doc, "d", &[]).unwrap();
        let a = t.build_assignment(&["G2090".into(), "I10".into(), "Z00".into()]);
        assert_eq!(a.get(0), Assigned::Deferred);
        assert_eq!(a.get(1), Assigned::Node(t.node_by_path("i10").unwrap()));
        assert_eq!(a.get(2), Assigned::NoMatch);
        let primary = |c: &str| (c == "kind").then(|| "primary".to_string());
        let secondary = |c: &str| (c == "kind").then(|| "secondary".to_string());
        assert_eq!(t.resolve_code("G2090", &primary), t.node_by_path("primary_g20"));
        assert_eq!(t.resolve_code("G2090", &secondary), None);
        assert_eq!(t.resolve_code("G2090", &primary), t.node_by_path("primary_g20"));
    }
}
