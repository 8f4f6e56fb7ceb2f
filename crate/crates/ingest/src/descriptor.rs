use std::path::{Path, PathBuf};

use cohort_core::registry::DatasetConfig;
use cohort_core::storage::TableSchema;
use cohort_core::types::ColumnType;
use serde::{Deserialize, Serialize};

use crate::IngestError;

/// Maps one input column (or a pair, for ranges) to a table column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ColumnMapping {
    /// Table column.
    pub column: String,
    /// Input header. For DATE_RANGE columns without `sourceMax` the cell
    /// holds `min/max` (either side may be empty) or a single date.
    pub source: String,
    /// Input header of the range end, for DATE_RANGE columns split over
    /// two input columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_max: Option<String>,
    /// Date formats tried in order (chrono syntax); defaults to the
    /// descriptor's `dateFormats`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub formats: Vec<String>,
    /// Removes every `.` (e.g. `G20.11` to `G2011`).
    #[serde(default)]
    pub strip_dots: bool,
    #[serde(default)]
    pub uppercase: bool,
}

fn default_formats() -> Vec<String> {
    vec!["%Y-%m-%d".into()]
}

/// How a raw file becomes an import of one table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ImportDescriptor {
    pub table: String,
    /// Dataset definition, relative to the descriptor file.
    pub dataset: PathBuf,
    /// Default input file, relative to the descriptor file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    /// Defaults to the input file name without extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import_id: Option<String>,
    /// Input header holding the entity id.
    pub entity: String,
    /// Single-byte field delimiter; detected from the header when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<char>,
    /// Decimal numbers use `,` as decimal mark and `.` for grouping.
    #[serde(default)]
    pub decimal_comma: bool,
    #[serde(default = "default_formats")]
    pub date_formats: Vec<String>,
    #[serde(default = "default_range_separator")]
    pub range_separator: String,
    pub columns: Vec<ColumnMapping>,
}

fn default_range_separator() -> String {
    "/".into()
}

/// A descriptor together with the resolved target schema.
#[derive(Debug, Clone)]
pub struct ResolvedDescriptor {
    pub descriptor: ImportDescriptor,
    pub dataset: DatasetConfig,
    pub schema: TableSchema,
    /// Directory relative paths are resolved against.
    pub base: PathBuf,
}

impl ImportDescriptor {
    pub fn from_json(text: &str) -> Result<ImportDescriptor, IngestError> {
        serde_json::from_str(text).map_err(|e| IngestError::Invalid(vec![format!("descriptor: {e}")]))
    }

    /// Reads a descriptor and the dataset it references, then checks the
    /// mapping against the table schema.
    pub fn load(path: &Path, dataset_override: Option<&Path>) -> Result<ResolvedDescriptor, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        let descriptor = ImportDescriptor::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dataset_path = match dataset_override {
            Some(p) => p.to_path_buf(),
            None => base.join(&descriptor.dataset),
        };
        let dataset_text = std::fs::read_to_string(&dataset_path).map_err(|e| IngestError::io(&dataset_path, e))?;
        let dataset = DatasetConfig::from_json(&dataset_text)
            .map_err(|e| IngestError::Invalid(vec![format!("{}: {e}", dataset_path.display())]))?;
        descriptor.resolve(dataset, base)
    }

    pub fn resolve(self, dataset: DatasetConfig, base: PathBuf) -> Result<ResolvedDescriptor, IngestError> {
        let schema = dataset
            .table(&self.table)
            .cloned()
            .ok_or_else(|| IngestError::Invalid(vec![format!("dataset has no table '{}'", self.table)]))?;
        let mut problems = Vec::new();
        for def in &schema.columns {
            let n = self.columns.iter().filter(|m| m.column == def.name).count();
            if n != 1 {
                problems.push(format!("table column '{}' is mapped {n} times, expected once", def.name));
            }
        }
        for m in &self.columns {
            match schema.columns.iter().find(|c| c.name == m.column) {
                None => problems.push(format!("mapping names unknown table column '{}'", m.column)),
                Some(def) if m.source_max.is_some() && def.column_type != ColumnType::DateRange => {
                    problems.push(format!("'sourceMax' is only valid for DATE_RANGE, '{}' is {}", m.column, def.column_type))
                }
                _ => {}
            }
        }
        if self.entity.is_empty() {
            problems.push("entity column is empty".into());
        }
        if self.date_formats.is_empty() && self.columns.iter().any(|m| m.formats.is_empty()) {
            problems.push("no date formats given".into());
        }
        if let Some(d) = self.delimiter {
            if !d.is_ascii() {
                problems.push(format!("delimiter '{d}' is not a single byte"));
            }
        }
        if !problems.is_empty() {
            return Err(IngestError::Invalid(problems));
        }
        Ok(ResolvedDescriptor {
            descriptor: self,
            dataset,
            schema,
            base,
        })
    }
}
