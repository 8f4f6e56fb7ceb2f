use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ColumnType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ColumnDef {
    pub name: String,
    #[serde(rename = "type")]
    pub column_type: ColumnType,
    /// Name of the dataset-level secondary id this column carries, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_id: Option<String>,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, column_type: ColumnType) -> Self {
        ColumnDef {
            name: name.into(),
            column_type,
            secondary_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>) -> Result<Self> {
        let schema = TableSchema {
            name: name.into(),
            columns,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let path = format!("tables.{}", self.name);
        if self.name.is_empty() {
            return Err(Error::parse(path, "table name is empty"));
        }
        if self.columns.is_empty() {
            return Err(Error::parse(path, "table has no columns"));
        }
        let mut seen = HashSet::new();
        for column in &self.columns {
            if !seen.insert(column.name.as_str()) {
                return Err(Error::parse(
                    path,
                    format!("duplicate column '{}'", column.name),
                ));
            }
        }
        let mut secondary = HashSet::new();
        for column in &self.columns {
            if let Some(id) = &column.secondary_id {
                if !secondary.insert(id.as_str()) {
                    return Err(Error::parse(
                        path,
                        format!("more than one column carries secondary id '{id}'"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn secondary_column(&self, secondary_id: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.secondary_id.as_deref() == Some(secondary_id))
    }

    /// FNV-1a over the canonical JSON form; stored in import containers.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("schema serializes");
        super::fnv1a64(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(TableSchema::new("t", vec![]).is_err());
        assert!(TableSchema::new(
            "t",
            vec![
                ColumnDef::new("a", ColumnType::Integer),
                ColumnDef::new("a", ColumnType::String)
            ]
        )
        .is_err());
        let ok = TableSchema::new("t", vec![ColumnDef::new("a", ColumnType::Integer)]).unwrap();
        assert_eq!(ok.column_index("a"), Some(0));
    }

    #[test]
    fn parses_json() {
        let schema: TableSchema = serde_json::from_str(
            r#"{"name":"inpatient","columns":[{"name":"icd_code","type":"STRING"},
                {"name":"case_id","type":"STRING","secondaryId":"case"}]}"#,
        )
        .unwrap();
        assert_eq!(schema.secondary_column("case"), Some(1));
        assert_eq!(schema.fingerprint(), schema.clone().fingerprint());
    }
}
