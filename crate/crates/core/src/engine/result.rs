use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::types::{format_fixed, ColumnType};

use super::dateset::DateSet;

/// One output cell of a select.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "camelCase")]
pub enum SelectValue {
    Null,
    Integer(i64),
    /// A scaled sum; the column type determines rendering.
    Number { value: i128, column_type: ColumnType },
    List(Vec<String>),
    Dates(DateSet),
    Boolean(bool),
}

impl SelectValue {
    /// CSV cell text; absent values and empty collections are `-`.
    pub fn render(&self) -> String {
        match self {
            SelectValue::Null => "-".into(),
            SelectValue::Integer(v) => v.to_string(),
            SelectValue::Number { value, column_type } => {
                format_fixed(*value, column_type.scale(), *column_type == ColumnType::Decimal)
            }
            SelectValue::List(items) if items.is_empty() => "-".into(),
            SelectValue::List(items) => format!("[{}]", items.join(", ")),
            SelectValue::Dates(set) if set.is_empty() => "-".into(),
            SelectValue::Dates(set) => set.to_string(),
            SelectValue::Boolean(b) => b.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultLine {
    pub entity: String,
    /// Secondary-id group of the line; `None` also for the no-value group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<String>,
    pub dates: DateSet,
    pub values: Vec<SelectValue>,
}

/// Entity membership and dates of a finished execution, as consumed by
/// SAVED_QUERY nodes.
pub type SavedTable = HashMap<String, DateSet>;

/// Folds result lines into a saved-query table; the dates of all lines of
/// an entity are united.
pub fn saved_table<'a>(lines: impl IntoIterator<Item = &'a ResultLine>) -> SavedTable {
    let mut table = SavedTable::new();
    for line in lines {
        let entry = table.entry(line.entity.clone()).or_default();
        *entry = entry.union(&line.dates);
    }
    table
}
