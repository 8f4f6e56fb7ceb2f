//! Dataset configuration and registered concepts: the namespace that query
//! documents refer to.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use crate::concepts::{ConceptTree, NodeId};
use crate::error::{Error, Result};
use crate::storage::TableSchema;

fn default_entity_label() -> String {
    "result".into()
}

fn default_dates_label() -> String {
    "dates".into()
}

fn default_bucket_count() -> u32 {
    100
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondaryIdDef {
    pub name: String,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetConfig {
    pub name: String,
    /// Header of the entity column in results.
    #[serde(default = "default_entity_label")]
    pub entity_label: String,
    /// Header of the date-set column in results.
    #[serde(default = "default_dates_label")]
    pub dates_label: String,
    #[serde(default = "default_bucket_count")]
    pub bucket_count: u32,
    #[serde(default)]
    pub secondary_ids: Vec<SecondaryIdDef>,
    pub tables: Vec<TableSchema>,
}

impl DatasetConfig {
    pub fn from_json(text: &str) -> Result<DatasetConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut config: DatasetConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::parse(format!("$.{}", e.path()), e.inner().to_string()))?;
        for s in &mut config.secondary_ids {
            if s.label.is_empty() {
                s.label = s.name.clone();
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains('.') {
            return Err(Error::parse("$.name", "dataset name must be non-empty and dot-free"));
        }
        if self.bucket_count == 0 {
            return Err(Error::parse("$.bucketCount", "must be positive"));
        }
        let mut names = HashSet::new();
        for table in &self.tables {
            table.validate()?;
            if !names.insert(table.name.as_str()) {
                return Err(Error::parse(
                    "$.tables",
                    format!("duplicate table '{}'", table.name),
                ));
            }
            for column in &table.columns {
                if let Some(id) = &column.secondary_id {
                    if !self.secondary_ids.iter().any(|s| &s.name == id) {
                        return Err(Error::parse(
                            format!("$.tables.{}.{}", table.name, column.name),
                            format!("undeclared secondary id '{id}'"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// A connector addressed by (concept index, connector index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConnectorRef {
    pub concept: usize,
    pub connector: usize,
}

#[derive(Debug, Clone)]
pub struct Registry {
    dataset: DatasetConfig,
    concepts: Vec<Arc<ConceptTree>>,
    /// Source documents, kept so the registry can be shipped and rebuilt.
    documents: Vec<Json>,
}

impl Registry {
    pub fn new(dataset: DatasetConfig) -> Result<Registry> {
        dataset.validate()?;
        Ok(Registry {
            dataset,
            concepts: Vec::new(),
            documents: Vec::new(),
        })
    }

    pub fn dataset(&self) -> &DatasetConfig {
        &self.dataset
    }

    pub fn concepts(&self) -> &[Arc<ConceptTree>] {
        &self.concepts
    }

    pub fn concept_documents(&self) -> &[Json] {
        &self.documents
    }

    /// Parses and registers a concept descriptor; returns its index.
    pub fn add_concept(&mut self, doc: Json) -> Result<usize> {
        let tree = ConceptTree::parse(&doc, &self.dataset.name, &self.dataset.tables)?;
        if self.concepts.iter().any(|c| c.name == tree.name) {
            return Err(Error::parse("$.name", format!("concept '{}' already registered", tree.name)));
        }
        self.concepts.push(Arc::new(tree));
        self.documents.push(doc);
        Ok(self.concepts.len() - 1)
    }

    pub fn concept(&self, index: usize) -> &Arc<ConceptTree> {
        &self.concepts[index]
    }

    fn split_concept<'a>(&self, id: &'a str) -> Option<(usize, &'a str)> {
        let rest = id.strip_prefix(self.dataset.name.as_str())?.strip_prefix('.')?;
        let (concept, tail) = rest.split_once('.').unwrap_or((rest, ""));
        let index = self.concepts.iter().position(|c| c.name == concept)?;
        Some((index, tail))
    }

    /// Resolves `dataset.concept[.node...]` to a tree node.
    pub fn resolve_node(&self, id: &str) -> Result<(usize, NodeId)> {
        let (concept, path) = self
            .split_concept(id)
            .ok_or_else(|| Error::Id(format!("unknown concept id '{id}'")))?;
        let node = self.concepts[concept]
            .node_by_path(path)
            .ok_or_else(|| Error::Id(format!("unknown concept id '{id}'")))?;
        Ok((concept, node))
    }

    /// Resolves `dataset.concept.connector`.
    pub fn resolve_connector(&self, id: &str) -> Result<ConnectorRef> {
        let (concept, name) = self
            .split_concept(id)
            .filter(|(_, tail)| !tail.is_empty() && !tail.contains('.'))
            .ok_or_else(|| Error::Id(format!("unknown connector id '{id}'")))?;
        let (connector, _) = self.concepts[concept]
            .connector(name)
            .ok_or_else(|| Error::Id(format!("unknown connector id '{id}'")))?;
        Ok(ConnectorRef { concept, connector })
    }

    pub fn connector(&self, r: ConnectorRef) -> &crate::concepts::Connector {
        &self.concepts[r.concept].connectors[r.connector]
    }

    pub fn connector_id(&self, r: ConnectorRef) -> String {
        format!("{}.{}", self.concepts[r.concept].id, self.connector(r).name)
    }

    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.dataset.table(name)
    }

    /// Document for the concept browser.
    pub fn describe(&self) -> Json {
        json!({
            "dataset": self.dataset.name,
            "secondaryIds": self.dataset.secondary_ids,
            "concepts": self.concepts.iter().map(|c| c.describe()).collect::<Vec<_>>(),
        })
    }

    /// Dataset plus concept documents; [`Registry::from_snapshot`] rebuilds it.
    pub fn snapshot(&self) -> Json {
        json!({"dataset": self.dataset, "concepts": self.documents})
    }

    pub fn from_snapshot(doc: &Json) -> Result<Registry> {
        let dataset = DatasetConfig::from_json(&doc["dataset"].to_string())?;
        let mut registry = Registry::new(dataset)?;
        for concept in doc["concepts"].as_array().into_iter().flatten() {
            registry.add_concept(concept.clone())?;
        }
        Ok(registry)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn dataset() -> DatasetConfig {
        DatasetConfig::from_json(
            r#"{"name": "dataset", "tables": [{"name": "hospital_diagnosis", "columns": [
                {"name": "icd_code", "type": "STRING"},
                {"name": "case_begin", "type": "DATE"},
                {"name": "case_end", "type": "DATE"},
                {"name": "kind", "type": "STRING"},
                {"name": "case_id", "type": "STRING"}]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn resolves_ids() {
        let mut r = Registry::new(dataset()).unwrap();
        r.add_concept(json!({
            "name": "icd",
            "connectors": [{"label": "Hospital Diagnoses", "column": "hospital_diagnosis.icd_code",
                "validityDates": [{"label": "Case begin", "column": "hospital_diagnosis.case_begin"}]}],
            "children": [{"name": "g00-g99", "condition": {"type": "PREFIX", "prefix": "G"}, "children": [
                {"name": "g20", "condition": {"type": "PREFIX", "prefix": "G20"}}]}]
        }))
        .unwrap();
        let (c, n) = r.resolve_node("dataset.icd.g00-g99.g20").unwrap();
        assert_eq!((c, n), (0, NodeId(2)));
        assert_eq!(r.resolve_node("dataset.icd").unwrap().1, NodeId::ROOT);
        assert!(r.resolve_node("dataset.icd.g30").is_err());
        assert!(r.resolve_node("other.icd.g00-g99").is_err());
        let conn = r.resolve_connector("dataset.icd.hospital_diagnoses").unwrap();
        assert_eq!(r.connector_id(conn), "dataset.icd.hospital_diagnoses");
        let rebuilt = Registry::from_snapshot(&r.snapshot()).unwrap();
        assert_eq!(rebuilt.describe(), r.describe());
    }

    #[test]
    fn defaults_and_validation() {
        let d = dataset();
        assert_eq!((d.entity_label.as_str(), d.dates_label.as_str(), d.bucket_count), ("result", "dates", 100));
        let err = DatasetConfig::from_json(r#"{"name": "d", "tables": [{"name": "t", "columns": [{"name": "a", "type": "TEXT"}]}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("tables[0].columns[0].type"), "{err}");
    }
}
