use std::io::Write;
use std::path::{Path, PathBuf};

use cohort_core::storage::container::{write_bucket, FILE_EXTENSION};
use cohort_core::storage::{bucket_of, build_bucket, Bucket, EventRow};
use cohort_core::types::{parse_day, parse_fixed, ColumnType, DateRange, Day, Value};
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::Serialize;

use crate::descriptor::{ColumnMapping, ResolvedDescriptor};
use crate::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    /// Stop at the first bad row.
    #[default]
    Fail,
    /// Drop bad rows and count them.
    Skip,
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub on_error: OnError,
    /// Overrides the descriptor and detection.
    pub delimiter: Option<u8>,
    pub import_id: Option<String>,
    /// Collect every row error instead of stopping (validation).
    pub collect_all: bool,
    /// Skip the gzip comparison.
    pub no_gzip: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line in the input, the header being line 1.
    pub line: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.column {
            Some(c) => write!(f, "line {}: column '{c}': {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ColumnReport {
    pub name: String,
    pub column_type: ColumnType,
    /// Bytes of the input cells feeding the column.
    pub raw_bytes: u64,
    /// In-memory bytes of the encoded blocks over all buckets.
    pub encoded_bytes: u64,
    pub nulls: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub table: String,
    pub import_id: String,
    pub delimiter: String,
    pub input_bytes: u64,
    pub rows_read: u64,
    pub rows_loaded: u64,
    pub rows_skipped: u64,
    pub errors: Vec<RowError>,
    pub entities: u64,
    pub buckets: Vec<u32>,
    pub entity_raw_bytes: u64,
    pub columns: Vec<ColumnReport>,
    /// Encoded column blocks of all buckets.
    pub encoded_bytes: u64,
    /// Entity index of all buckets.
    pub index_bytes: u64,
    pub gzip_bytes: Option<u64>,
    pub containers: Vec<PathBuf>,
    pub container_bytes: u64,
    /// Header plus the first normalized rows as rendered values.
    pub preview: Vec<Vec<String>>,
}

fn percent_reduction(after: u64, before: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (1.0 - after as f64 / before as f64)
    }
}

impl Report {
    /// Encoded blocks relative to the input file.
    pub fn reduction(&self) -> f64 {
        percent_reduction(self.encoded_bytes, self.input_bytes)
    }

    /// Encoded blocks plus entity index relative to the input file.
    pub fn reduction_with_index(&self) -> f64 {
        percent_reduction(self.encoded_bytes + self.index_bytes, self.input_bytes)
    }

    pub fn gzip_reduction(&self) -> Option<f64> {
        self.gzip_bytes.map(|g| percent_reduction(g, self.input_bytes))
    }
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "table {}, import {} (delimiter {:?})", self.table, self.import_id, self.delimiter)?;
        writeln!(
            f,
            "{} rows read, {} loaded, {} skipped; {} entities in {} buckets",
            self.rows_read,
            self.rows_loaded,
            self.rows_skipped,
            self.entities,
            self.buckets.len()
        )?;
        writeln!(f, "{} errors", self.errors.len())?;
        for e in self.errors.iter().take(20) {
            writeln!(f, "  {e}")?;
        }
        if self.errors.len() > 20 {
            writeln!(f, "  ... {} more", self.errors.len() - 20)?;
        }
        writeln!(f, "{:<24} {:<11} {:>14} {:>14} {:>8}", "column", "type", "raw bytes", "encoded bytes", "reduced")?;
        for c in &self.columns {
            writeln!(
                f,
                "{:<24} {:<11} {:>14} {:>14} {:>7.1}%",
                c.name,
                c.column_type.to_string(),
                c.raw_bytes,
                c.encoded_bytes,
                percent_reduction(c.encoded_bytes, c.raw_bytes)
            )?;
        }
        writeln!(
            f,
            "input {} bytes; encoded columns {} bytes ({:.1}% reduction); with entity index {} bytes ({:.1}% reduction)",
            self.input_bytes,
            self.encoded_bytes,
            self.reduction(),
            self.encoded_bytes + self.index_bytes,
            self.reduction_with_index()
        )?;
        if let (Some(g), Some(r)) = (self.gzip_bytes, self.gzip_reduction()) {
            writeln!(f, "gzip of the input: {g} bytes ({r:.1}% reduction, no per-entity seeking)")?;
        }
        if !self.containers.is_empty() {
            writeln!(f, "{} containers written, {} bytes", self.containers.len(), self.container_bytes)?;
        }
        if !self.preview.is_empty() {
            writeln!(f, "preview:")?;
            for row in &self.preview {
                writeln!(f, "  {}", row.join(" | "))?;
            }
        }
        Ok(())
    }
}

/// The most frequent of `;`, `,` and tab in the header line; `;` on ties.
pub fn detect_delimiter(input: &[u8]) -> u8 {
    let header = input.split(|b| *b == b'\n').next().unwrap_or_default();
    [b';', b',', b'\t']
        .into_iter()
        .max_by_key(|d| (header.iter().filter(|b| *b == d).count(), *d == b';'))
        .unwrap_or(b';')
}

struct Source {
    mapping: ColumnMapping,
    column_type: ColumnType,
    index: usize,
    index_max: Option<usize>,
}

struct Parser<'a> {
    resolved: &'a ResolvedDescriptor,
}

impl Parser<'_> {
    fn date(&self, text: &str, mapping: &ColumnMapping) -> Result<Day, String> {
        let formats = if mapping.formats.is_empty() {
            &self.resolved.descriptor.date_formats
        } else {
            &mapping.formats
        };
        formats
            .iter()
            .find_map(|f| parse_day(text, f).ok())
            .ok_or_else(|| format!("'{text}' matches none of the date formats {formats:?}"))
    }

    fn optional_date(&self, text: &str, mapping: &ColumnMapping) -> Result<Option<Day>, String> {
        let text = text.trim();
        if text.is_empty() {
            Ok(None)
        } else {
            self.date(text, mapping).map(Some)
        }
    }

    fn cell(&self, source: &Source, record: &csv::StringRecord) -> Result<Option<Value>, String> {
        let text = record.get(source.index).unwrap_or_default().trim();
        let m = &source.mapping;
        let decimal_comma = self.resolved.descriptor.decimal_comma;
        if let Some(max_index) = source.index_max {
            let max_text = record.get(max_index).unwrap_or_default();
            let min = self.optional_date(text, m)?;
            let max = self.optional_date(max_text, m)?;
            if min.is_none() && max.is_none() {
                return Ok(None);
            }
            return DateRange::new(min, max).map(|r| Some(Value::DateRange(r))).map_err(|e| e.to_string());
        }
        if text.is_empty() {
            return Ok(None);
        }
        let value = match source.column_type {
            ColumnType::String => {
                let mut s = if m.strip_dots { text.replace('.', "") } else { text.to_string() };
                if m.uppercase {
                    s = s.to_uppercase();
                }
                Value::String(s)
            }
            ColumnType::Integer => Value::Integer(
                text.parse()
                    .map_err(|_| format!("'{text}' is not an integer"))?,
            ),
            ColumnType::Decimal => Value::Decimal(parse_fixed(text, 4, decimal_comma).map_err(|e| e.to_string())?),
            ColumnType::Money => Value::Money(parse_fixed(text, 2, decimal_comma).map_err(|e| e.to_string())?),
            ColumnType::Date => Value::Date(self.date(text, m)?),
            ColumnType::DateRange => {
                let separator = self.resolved.descriptor.range_separator.as_str();
                let range = match text.split_once(separator) {
                    Some((a, b)) => {
                        let (min, max) = (self.optional_date(a, m)?, self.optional_date(b, m)?);
                        if min.is_none() && max.is_none() {
                            return Ok(None);
                        }
                        DateRange::new(min, max).map_err(|e| e.to_string())?
                    }
                    None => DateRange::day(self.date(text, m)?),
                };
                Value::DateRange(range)
            }
            ColumnType::Boolean => Value::Boolean(match text.to_ascii_lowercase().as_str() {
                "true" | "t" | "1" | "yes" | "y" | "ja" | "j" => true,
                "false" | "f" | "0" | "no" | "n" | "nein" => false,
                _ => return Err(format!("'{text}' is not a boolean")),
            }),
        };
        Ok(Some(value))
    }
}

/// Parsed, partitioned and encoded import, not yet written.
pub struct Prepared {
    pub report: Report,
    pub buckets: Vec<Bucket>,
}

/// Parses and encodes `input` per the descriptor. Row problems end the
/// run (`OnError::Fail`, unless `collect_all`) or drop the row.
pub fn prepare(resolved: &ResolvedDescriptor, input: &[u8], default_import_id: &str, options: &Options) -> Result<Prepared, IngestError> {
    let descriptor = &resolved.descriptor;
    let schema = &resolved.schema;
    let delimiter = options
        .delimiter
        .or(descriptor.delimiter.map(|c| c as u8))
        .unwrap_or_else(|| detect_delimiter(input));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Invalid(vec![format!("unreadable header: {e}")]))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut problems = Vec::new();
    let entity_index = find(&descriptor.entity);
    if entity_index.is_none() {
        problems.push(format!("entity column '{}' is not in the input header", descriptor.entity));
    }
    let mut sources = Vec::new();
    for def in &schema.columns {
        let mapping = descriptor.columns.iter().find(|m| m.column == def.name).expect("resolved").clone();
        let index = find(&mapping.source);
        if index.is_none() {
            problems.push(format!("unknown source header '{}' (mapped to '{}')", mapping.source, def.name));
        }
        let index_max = match &mapping.source_max {
            Some(h) => {
                let i = find(h);
                if i.is_none() {
                    problems.push(format!("unknown source header '{h}' (mapped to '{}')", def.name));
                }
                i
            }
            None => None,
        };
        if let Some(index) = index {
            sources.push(Source {
                mapping,
                column_type: def.column_type,
                index,
                index_max,
            });
        }
    }
    if !problems.is_empty() {
        return Err(IngestError::Invalid(problems));
    }
    let entity_index = entity_index.expect("checked");
    let parser = Parser { resolved };

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut rows_read = 0u64;
    let mut raw = vec![0u64; sources.len()];
    let mut entity_raw = 0u64;
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line() + 1;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                rows_read += 1;
                errors.push(RowError {
                    line: e.position().map_or(line, |p| p.line()),
                    column: None,
                    message: e.to_string(),
                });
                if options.on_error == OnError::Fail && !options.collect_all {
                    break;
                }
                continue;
            }
        }
        rows_read += 1;
        let line = record.position().map_or(line, |p| p.line());
        let entity = record.get(entity_index).unwrap_or_default().trim();
        let mut row_errors = Vec::new();
        if entity.is_empty() {
            row_errors.push(RowError {
                line,
                column: Some(descriptor.entity.clone()),
                message: "missing entity id".into(),
            });
        }
        let mut values = Vec::with_capacity(sources.len());
        for s in &sources {
            match parser.cell(s, &record) {
                Ok(v) => values.push(v),
                Err(message) => row_errors.push(RowError {
                    line,
                    column: Some(s.mapping.column.clone()),
                    message,
                }),
            }
        }
        if !row_errors.is_empty() {
            errors.extend(row_errors);
            if options.on_error == OnError::Fail && !options.collect_all {
                break;
            }
            continue;
        }
        entity_raw += entity.len() as u64;
        for (i, s) in sources.iter().enumerate() {
            raw[i] += record.get(s.index).map_or(0, |c| c.len() as u64)
                + s.index_max.and_then(|j| record.get(j)).map_or(0, |c| c.len() as u64);
        }
        rows.push(EventRow::new(entity, values));
    }
    if options.on_error == OnError::Fail && !errors.is_empty() && !options.collect_all {
        return Err(IngestError::Rows(errors));
    }

    let preview = std::iter::once(
        std::iter::once(descriptor.entity.clone())
            .chain(schema.columns.iter().map(|c| c.name.clone()))
            .collect(),
    )
    .chain(rows.iter().take(5).map(|r| {
        std::iter::once(r.entity.clone())
            .chain(r.values.iter().map(|v| v.as_ref().map_or_else(String::new, Value::to_string)))
            .collect()
    }))
    .collect();

    let import_id = options
        .import_id
        .clone()
        .or(descriptor.import_id.clone())
        .unwrap_or_else(|| default_import_id.to_string());
    let bucket_count = resolved.dataset.bucket_count;
    let rows_loaded = rows.len() as u64;
    let mut parts: Vec<Vec<EventRow>> = vec![Vec::new(); bucket_count as usize];
    for row in rows {
        parts[bucket_of(&row.entity, bucket_count) as usize].push(row);
    }
    let buckets: Vec<Bucket> = parts
        .into_par_iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(b, p)| build_bucket(p, schema, &import_id, b as u32, bucket_count))
        .collect::<cohort_core::Result<_>>()
        .map_err(|e| IngestError::Invalid(vec![e.to_string()]))?;

    let columns = sources
        .iter()
        .enumerate()
        .map(|(i, s)| ColumnReport {
            name: s.mapping.column.clone(),
            column_type: s.column_type,
            raw_bytes: raw[i],
            encoded_bytes: buckets.iter().map(|b| b.block(i).heap_size() as u64).sum(),
            nulls: buckets.iter().map(|b| b.column_stats()[i].nulls).sum(),
        })
        .collect();
    let gzip_bytes = (!options.no_gzip).then(|| gzip_size(input));
    let report = Report {
        table: schema.name.clone(),
        import_id,
        delimiter: (delimiter as char).to_string(),
        input_bytes: input.len() as u64,
        rows_read,
        rows_loaded,
        rows_skipped: rows_read - rows_loaded,
        errors,
        entities: buckets.iter().map(|b| b.entities().len() as u64).sum(),
        buckets: buckets.iter().map(Bucket::bucket_id).collect(),
        entity_raw_bytes: entity_raw,
        columns,
        encoded_bytes: buckets.iter().map(|b| b.blocks_heap_size() as u64).sum(),
        index_bytes: buckets.iter().map(|b| b.index_heap_size() as u64).sum(),
        gzip_bytes,
        containers: Vec::new(),
        container_bytes: 0,
        preview,
    };
    Ok(Prepared { report, buckets })
}

pub fn gzip_size(input: &[u8]) -> u64 {
    let mut encoder = GzEncoder::new(Vec::new(), Compression::default());
    encoder.write_all(input).expect("writing to memory");
    encoder.finish().expect("writing to memory").len() as u64
}

/// File name of a bucket container.
pub fn container_name(import_id: &str, bucket: u32) -> String {
    format!("{import_id}.b{bucket:04}.{FILE_EXTENSION}")
}

/// Writes one container per bucket into `out` and records them in the report.
pub fn write_containers(prepared: &mut Prepared, out: &Path) -> Result<(), IngestError> {
    std::fs::create_dir_all(out).map_err(|e| IngestError::io(out, e))?;
    for bucket in &prepared.buckets {
        let path = out.join(container_name(bucket.import_id(), bucket.bucket_id()));
        let bytes = write_bucket(bucket);
        std::fs::write(&path, &bytes).map_err(|e| IngestError::io(&path, e))?;
        prepared.report.container_bytes += bytes.len() as u64;
        prepared.report.containers.push(path);
    }
    Ok(())
}
