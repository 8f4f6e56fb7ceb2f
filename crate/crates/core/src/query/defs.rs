//! Filter and select definitions that operators attach to connectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::storage::TableSchema;
use crate::types::ColumnType;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FilterKind {
    /// Event-level: keep events whose column value is one of the chosen keys.
    Select {
        column: String,
        #[serde(default)]
        labels: BTreeMap<String, String>,
    },
    /// Aggregation-level: bounds on the number of (distinct) non-null values.
    Count {
        column: String,
        #[serde(default)]
        distinct: bool,
    },
    /// Event-level: numeric column within a range.
    Range { column: String },
    /// Aggregation-level: bounds on the number of distinct calendar quarters.
    /// Without a column, the connector's chosen validity date is used.
    CountQuarters {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDef {
    #[serde(default)]
    pub name: String,
    pub label: String,
    #[serde(flatten)]
    pub kind: FilterKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectKind {
    /// Distinct values in first-seen order.
    Distinct { column: String },
    /// Number of (distinct) non-null values; counts events without a column.
    Count {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
        #[serde(default)]
        distinct: bool,
    },
    CountQuarters {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
    /// Sum of a numeric column; null when no value is present.
    Sum { column: String },
    EventDates,
    Exists,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectDef {
    #[serde(default)]
    pub name: String,
    pub label: String,
    #[serde(flatten)]
    pub kind: SelectKind,
}

/// Identifier derived from a label: lowercase alphanumerics, everything else `_`.
pub fn slug(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Strips an optional `table.` qualifier from a column reference, checking
/// that it names `table`.
pub(crate) fn bare_column<'a>(reference: &'a str, table: &str) -> Result<&'a str, String> {
    match reference.split_once('.') {
        Some((t, column)) if t == table => Ok(column),
        Some((t, _)) => Err(format!(
            "column '{reference}' belongs to table '{t}', connector reads '{table}'"
        )),
        None => Ok(reference),
    }
}

pub(crate) fn check_column(
    schema: &TableSchema,
    reference: &str,
    accept: impl Fn(ColumnType) -> bool,
    what: &str,
) -> Result<String, String> {
    let column = bare_column(reference, &schema.name)?;
    let def = schema
        .columns
        .iter()
        .find(|c| c.name == column)
        .ok_or_else(|| format!("dangling column reference '{reference}'"))?;
    if !accept(def.column_type) {
        return Err(format!(
            "column '{reference}' has type {}, {what}",
            def.column_type
        ));
    }
    Ok(column.to_string())
}

impl FilterDef {
    /// Normalizes column references to bare names and checks their types.
    pub(crate) fn resolve(&mut self, schema: &TableSchema) -> Result<(), String> {
        if self.name.is_empty() {
            self.name = slug(&self.label);
        }
        match &mut self.kind {
            FilterKind::Select { column, .. } | FilterKind::Count { column, .. } => {
                *column = check_column(schema, column, |_| true, "")?;
            }
            FilterKind::Range { column } => {
                *column = check_column(schema, column, ColumnType::is_numeric, "RANGE needs a numeric column")?;
            }
            FilterKind::CountQuarters { column: Some(column) } => {
                *column = check_column(schema, column, ColumnType::is_date, "COUNT_QUARTERS needs a date column")?;
            }
            FilterKind::CountQuarters { column: None } => {}
        }
        Ok(())
    }

    pub fn type_name(&self) -> &'static str {
        match self.kind {
            FilterKind::Select { .. } => "SELECT",
            FilterKind::Count { .. } => "COUNT",
            FilterKind::Range { .. } => "RANGE",
            FilterKind::CountQuarters { .. } => "COUNT_QUARTERS",
        }
    }
}

impl SelectDef {
    pub(crate) fn resolve(&mut self, schema: &TableSchema) -> Result<(), String> {
        if self.name.is_empty() {
            self.name = slug(&self.label);
        }
        match &mut self.kind {
            SelectKind::Distinct { column } | SelectKind::Count { column: Some(column), .. } => {
                *column = check_column(schema, column, |_| true, "")?;
            }
            SelectKind::Sum { column } => {
                *column = check_column(schema, column, ColumnType::is_numeric, "SUM needs a numeric column")?;
            }
            SelectKind::CountQuarters { column: Some(column) } => {
                *column = check_column(schema, column, ColumnType::is_date, "COUNT_QUARTERS needs a date column")?;
            }
            SelectKind::Count { column: None, .. }
            | SelectKind::CountQuarters { column: None }
            | SelectKind::EventDates
            | SelectKind::Exists => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs() {
        assert_eq!(slug("Hospital Diagnoses"), "hospital_diagnoses");
        assert_eq!(slug("Number of Cases"), "number_of_cases");
        assert_eq!(slug(" ICD-Codes "), "icd_codes");
    }

    #[test]
    fn parses_code2_filters() {
        let f: FilterDef = serde_json::from_str(
            r#"{"type": "COUNT", "distinct": true, "label": "Case number", "column": "hospital_diagnosis.case_id"}"#,
        )
        .unwrap();
        assert_eq!(
            f.kind,
            FilterKind::Count {
                column: "hospital_diagnosis.case_id".into(),
                distinct: true
            }
        );
        let s: SelectDef =
            serde_json::from_str(r#"{"label": "ICD-Codes", "type": "DISTINCT", "column": "t.icd"}"#).unwrap();
        assert!(matches!(s.kind, SelectKind::Distinct { .. }));
    }
}
