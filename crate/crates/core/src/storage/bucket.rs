use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Value;

use super::column::{encode_column, ColumnBlock};
use super::schema::TableSchema;
use super::stats::{column_statistics, ColumnStats};

/// One input event: the owning entity plus one optional value per column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRow {
    pub entity: String,
    pub values: Vec<Option<Value>>,
}

impl EventRow {
    pub fn new(entity: impl Into<String>, values: Vec<Option<Value>>) -> Self {
        EventRow {
            entity: entity.into(),
            values,
        }
    }
}

/// Rows `[start, end)` of one entity inside a bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntitySpan {
    pub entity: String,
    pub start: u32,
    pub end: u32,
}

impl EntitySpan {
    pub fn rows(&self) -> Range<usize> {
        self.start as usize..self.end as usize
    }
}

/// The compressed events of one table import for one hash slice of entities.
#[derive(Debug, Clone)]
pub struct Bucket {
    pub(crate) table: String,
    pub(crate) import_id: String,
    pub(crate) bucket_id: u32,
    pub(crate) bucket_count: u32,
    pub(crate) schema: TableSchema,
    pub(crate) blocks: Vec<ColumnBlock>,
    pub(crate) column_stats: Vec<ColumnStats>,
    pub(crate) entities: Vec<EntitySpan>,
    pub(crate) index: HashMap<String, usize>,
    pub(crate) rows: usize,
}

/// Stable 64-bit FNV-1a of an entity id modulo the bucket count.
pub fn bucket_of(entity: &str, bucket_count: u32) -> u32 {
    (super::fnv1a64(entity.as_bytes()) % bucket_count as u64) as u32
}

/// Groups rows by entity (first-appearance order, input order within an
/// entity) and encodes each column.
pub fn build_bucket(
    rows: Vec<EventRow>,
    schema: &TableSchema,
    import_id: &str,
    bucket_id: u32,
    bucket_count: u32,
) -> Result<Bucket> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<EventRow>> = HashMap::new();
    for row in rows {
        let expected = bucket_of(&row.entity, bucket_count);
        if expected != bucket_id {
            return Err(Error::Partition {
                entity: row.entity,
                bucket: bucket_id,
                expected,
            });
        }
        if row.values.len() != schema.columns.len() {
            return Err(Error::Type(format!(
                "row of entity '{}' has {} values, table '{}' has {} columns",
                row.entity,
                row.values.len(),
                schema.name,
                schema.columns.len()
            )));
        }
        match groups.get_mut(&row.entity) {
            Some(group) => group.push(row),
            None => {
                order.push(row.entity.clone());
                groups.insert(row.entity.clone(), vec![row]);
            }
        }
    }

    let mut columns: Vec<Vec<Option<Value>>> = vec![Vec::new(); schema.columns.len()];
    let mut entities = Vec::with_capacity(order.len());
    let mut cursor = 0u32;
    for entity in order {
        let group = groups.remove(&entity).expect("grouped");
        let start = cursor;
        cursor += group.len() as u32;
        for row in group {
            for (column, value) in columns.iter_mut().zip(row.values) {
                column.push(value);
            }
        }
        entities.push(EntitySpan {
            entity,
            start,
            end: cursor,
        });
    }

    let blocks = columns
        .iter()
        .zip(&schema.columns)
        .map(|(values, def)| {
            encode_column(values, def.column_type)
                .map_err(|e| Error::Type(format!("column '{}': {e}", def.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let column_stats = blocks.iter().map(column_statistics).collect();

    Bucket::from_parts(
        schema.name.clone(),
        import_id.to_string(),
        bucket_id,
        bucket_count,
        schema.clone(),
        blocks,
        column_stats,
        entities,
    )
}

impl Bucket {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        table: String,
        import_id: String,
        bucket_id: u32,
        bucket_count: u32,
        schema: TableSchema,
        blocks: Vec<ColumnBlock>,
        column_stats: Vec<ColumnStats>,
        entities: Vec<EntitySpan>,
    ) -> Result<Self> {
        let rows = entities.last().map_or(0, |e| e.end as usize);
        let mut expected_start = 0;
        let mut index = HashMap::with_capacity(entities.len());
        for (i, span) in entities.iter().enumerate() {
            if span.start != expected_start || span.end <= span.start {
                return Err(Error::Format(format!(
                    "entity index is not a contiguous cover at '{}'",
                    span.entity
                )));
            }
            expected_start = span.end;
            if index.insert(span.entity.clone(), i).is_some() {
                return Err(Error::Format(format!("entity '{}' indexed twice", span.entity)));
            }
        }
        if blocks.len() != schema.columns.len() || column_stats.len() != blocks.len() {
            return Err(Error::Format("block count does not match schema".into()));
        }
        for (block, def) in blocks.iter().zip(&schema.columns) {
            if block.len() != rows || block.column_type() != def.column_type {
                return Err(Error::Format(format!("block for '{}' does not match", def.name)));
            }
        }
        Ok(Bucket {
            table,
            import_id,
            bucket_id,
            bucket_count,
            schema,
            blocks,
            column_stats,
            entities,
            index,
            rows,
        })
    }

    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn import_id(&self) -> &str {
        &self.import_id
    }

    pub fn bucket_id(&self) -> u32 {
        self.bucket_id
    }

    pub fn bucket_count(&self) -> u32 {
        self.bucket_count
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn blocks(&self) -> &[ColumnBlock] {
        &self.blocks
    }

    pub fn block(&self, column: usize) -> &ColumnBlock {
        &self.blocks[column]
    }

    pub fn column_stats(&self) -> &[ColumnStats] {
        &self.column_stats
    }

    pub fn entities(&self) -> &[EntitySpan] {
        &self.entities
    }

    /// Row range of an entity, if it has events in this bucket.
    pub fn rows_of(&self, entity: &str) -> Option<Range<usize>> {
        self.index.get(entity).map(|&i| self.entities[i].rows())
    }

    /// Point-reads one row across all columns.
    pub fn row(&self, row: usize) -> Result<Vec<Option<Value>>> {
        self.blocks.iter().map(|b| b.read_value(row)).collect()
    }

    /// Bytes held by the encoded column blocks.
    pub fn blocks_heap_size(&self) -> usize {
        self.blocks.iter().map(ColumnBlock::heap_size).sum()
    }

    /// Bytes held by the entity index (ids plus spans).
    pub fn index_heap_size(&self) -> usize {
        self.entities
            .iter()
            .map(|e| e.entity.len() + std::mem::size_of::<EntitySpan>())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::schema::ColumnDef;
    use crate::types::ColumnType;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schema() -> TableSchema {
        TableSchema::new(
            "t",
            vec![
                ColumnDef::new("n", ColumnType::Integer),
                ColumnDef::new("s", ColumnType::String),
            ],
        )
        .unwrap()
    }

    fn row(entity: &str, n: i64) -> EventRow {
        EventRow::new(
            entity,
            vec![Some(Value::Integer(n)), Some(Value::String(format!("v{n}")))],
        )
    }

    #[test]
    fn groups_entities_contiguously() {
        let bucket = build_bucket(vec![row("A", 1), row("B", 2), row("A", 3)], &schema(), "i", 0, 1).unwrap();
        assert_eq!(bucket.rows_of("A"), Some(0..2));
        assert_eq!(bucket.rows_of("B"), Some(2..3));
        assert_eq!(bucket.row(1).unwrap()[0], Some(Value::Integer(3)));
        assert_eq!(bucket.row(2).unwrap()[0], Some(Value::Integer(2)));
    }

    #[test]
    fn empty_bucket() {
        let bucket = build_bucket(vec![], &schema(), "i", 0, 1).unwrap();
        assert_eq!(bucket.row_count(), 0);
        assert!(bucket.entities().is_empty());
    }

    #[test]
    fn wrong_bucket_is_rejected() {
        let entity = (0..)
            .map(|i| format!("e{i}"))
            .find(|e| bucket_of(e, 4) != 1)
            .unwrap();
        let err = build_bucket(vec![row(&entity, 1)], &schema(), "i", 1, 4).unwrap_err();
        assert!(matches!(err, Error::Partition { .. }));
    }

    #[test]
    fn hash_is_stable() {
        // FNV-1a reference values.
        assert_eq!(crate::storage::fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(crate::storage::fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(bucket_of("a", 100), (0xaf63dc4c8601ec8cu64 % 100) as u32);
    }

    #[test]
    fn seek_equals_filter_by_entity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<EventRow> = (0..10_000)
            .map(|i| row(&format!("p{}", rng.gen_range(0..300)), i))
            .collect();
        let bucket = build_bucket(rows.clone(), &schema(), "i", 0, 1).unwrap();
        for span in bucket.entities() {
            let oracle: Vec<Vec<Option<Value>>> = rows
                .iter()
                .filter(|r| r.entity == span.entity)
                .map(|r| r.values.clone())
                .collect();
            let seen: Vec<Vec<Option<Value>>> = bucket
                .rows_of(&span.entity)
                .unwrap()
                .map(|r| bucket.row(r).unwrap())
                .collect();
            assert_eq!(seen, oracle);
        }
    }
}
