//! Preprocessed import container: one bucket of one table import.
//!
//! All integers are little-endian. Strings are a `u32` byte length followed
//! by UTF-8 bytes. A bit-packed vector is `i64 base, u8 width, u64 len,
//! u32 word count, u64 words`; a bitset is `u64 len, u32 word count, u64 words`.
//!
//! ```text
//! magic        8 bytes  "CQIMPORT"
//! version      u16      = 1
//! fingerprint  u64      FNV-1a of the schema JSON
//! bucket       u32, bucket count u32
//! table        string
//! import id    string
//! schema       string   (JSON)
//! rows         u64
//! entities     u32 count, then per entity: string id, u32 start, u32 end
//! columns      u32 count, then per column:
//!   stats      u8 flags (1 = min, 2 = max), i64 min, i64 max, u64 distinct, u64 nulls
//!   type       u8 (0 STRING, 1 INTEGER, 2 DECIMAL, 3 MONEY, 4 DATE, 5 DATE_RANGE, 6 BOOLEAN)
//!   presence   u8 (0 = all present, 1 = bitset follows) [bitset]
//!   encoding   u8 tag, then
//!              0 packed:      bit-packed vector
//!              1 dictionary:  u32 count, strings, bit-packed codes
//!              2 bits:        bitset
//!              3 range pair:  bit-packed mins, bit-packed maxes, bitset open-min, bitset open-max
//! checksum     u64      FNV-1a of every preceding byte
//! ```

use crate::error::{Error, Result};
use crate::types::ColumnType;

use super::bitpack::BitPacked;
use super::bitset::BitSet;
use super::bucket::{Bucket, EntitySpan};
use super::column::{ColumnBlock, Encoding};
use super::schema::TableSchema;
use super::stats::ColumnStats;
use super::fnv1a64;

pub const MAGIC: &[u8; 8] = b"CQIMPORT";
pub const VERSION: u16 = 1;
pub const FILE_EXTENSION: &str = "cqi";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn words(&mut self, words: &[u64]) {
        self.u32(words.len() as u32);
        for w in words {
            self.u64(*w);
        }
    }
    fn packed(&mut self, p: &BitPacked) {
        self.i64(p.base());
        self.u8(p.width());
        self.u64(p.len() as u64);
        self.words(p.words());
    }
    fn bits(&mut self, b: &BitSet) {
        self.u64(b.len() as u64);
        self.words(b.words());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
    fn words(&mut self) -> Result<Vec<u64>> {
        let n = self.u32()? as usize;
        if n > self.buf.len() / 8 {
            return Err(Error::Format("word count exceeds container".into()));
        }
        (0..n).map(|_| self.u64()).collect()
    }
    fn packed(&mut self) -> Result<BitPacked> {
        let base = self.i64()?;
        let width = self.u8()?;
        let len = self.u64()? as usize;
        let words = self.words()?;
        BitPacked::from_parts(base, width, len, words)
            .ok_or_else(|| Error::Format("inconsistent bit-packed vector".into()))
    }
    fn bits(&mut self) -> Result<BitSet> {
        let len = self.u64()? as usize;
        let words = self.words()?;
        BitSet::from_words(words, len).ok_or_else(|| Error::Format("inconsistent bitset".into()))
    }
}

fn type_tag(t: ColumnType) -> u8 {
    match t {
        ColumnType::String => 0,
        ColumnType::Integer => 1,
        ColumnType::Decimal => 2,
        ColumnType::Money => 3,
        ColumnType::Date => 4,
        ColumnType::DateRange => 5,
        ColumnType::Boolean => 6,
    }
}

fn tag_type(tag: u8) -> Result<ColumnType> {
    Ok(match tag {
        0 => ColumnType::String,
        1 => ColumnType::Integer,
        2 => ColumnType::Decimal,
        3 => ColumnType::Money,
        4 => ColumnType::Date,
        5 => ColumnType::DateRange,
        6 => ColumnType::Boolean,
        other => return Err(Error::Format(format!("unknown column type tag {other}"))),
    })
}

pub fn write_bucket(bucket: &Bucket) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u64(bucket.schema.fingerprint());
    w.u32(bucket.bucket_id);
    w.u32(bucket.bucket_count);
    w.str(&bucket.table);
    w.str(&bucket.import_id);
    w.str(&serde_json::to_string(&bucket.schema).expect("schema serializes"));
    w.u64(bucket.rows as u64);
    w.u32(bucket.entities.len() as u32);
    for span in &bucket.entities {
        w.str(&span.entity);
        w.u32(span.start);
        w.u32(span.end);
    }
    w.u32(bucket.blocks.len() as u32);
    for (block, stats) in bucket.blocks.iter().zip(&bucket.column_stats) {
        w.u8(stats.min.is_some() as u8 | (stats.max.is_some() as u8) << 1);
        w.i64(stats.min.unwrap_or(0));
        w.i64(stats.max.unwrap_or(0));
        w.u64(stats.distinct);
        w.u64(stats.nulls);
        w.u8(type_tag(block.column_type()));
        match block.presence() {
            None => w.u8(0),
            Some(p) => {
                w.u8(1);
                w.bits(p);
            }
        }
        match block.encoding() {
            Encoding::BitPacked(p) => {
                w.u8(0);
                w.packed(p);
            }
            Encoding::Dict { dictionary, codes } => {
                w.u8(1);
                w.u32(dictionary.len() as u32);
                for s in dictionary {
                    w.str(s);
                }
                w.packed(codes);
            }
            Encoding::Bits(b) => {
                w.u8(2);
                w.bits(b);
            }
            Encoding::RangePair {
                mins,
                maxes,
                open_min,
                open_max,
            } => {
                w.u8(3);
                w.packed(mins);
                w.packed(maxes);
                w.bits(open_min);
                w.bits(open_max);
            }
        }
    }
    let checksum = fnv1a64(&w.buf);
    w.u64(checksum);
    w.buf
}

pub fn read_bucket(bytes: &[u8]) -> Result<Bucket> {
    if bytes.len() < MAGIC.len() + 2 + 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not an import container (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if fnv1a64(body) != u64::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let fingerprint = r.u64()?;
    let bucket_id = r.u32()?;
    let bucket_count = r.u32()?;
    let table = r.str()?;
    let import_id = r.str()?;
    let schema: TableSchema = serde_json::from_str(&r.str()?)
        .map_err(|e| Error::Format(format!("schema: {e}")))?;
    if schema.fingerprint() != fingerprint {
        return Err(Error::Format("schema fingerprint mismatch".into()));
    }
    if bucket_count == 0 || bucket_id >= bucket_count {
        return Err(Error::Format("bucket id out of range".into()));
    }
    let rows = r.u64()? as usize;
    let entity_count = r.u32()? as usize;
    let mut entities = Vec::with_capacity(entity_count.min(body.len()));
    for _ in 0..entity_count {
        let entity = r.str()?;
        let start = r.u32()?;
        let end = r.u32()?;
        entities.push(EntitySpan { entity, start, end });
    }
    let column_count = r.u32()? as usize;
    let mut blocks = Vec::new();
    let mut stats = Vec::new();
    for _ in 0..column_count {
        let flags = r.u8()?;
        let min = r.i64()?;
        let max = r.i64()?;
        stats.push(ColumnStats {
            min: (flags & 1 != 0).then_some(min),
            max: (flags & 2 != 0).then_some(max),
            distinct: r.u64()?,
            nulls: r.u64()?,
        });
        let column_type = tag_type(r.u8()?)?;
        let presence = match r.u8()? {
            0 => None,
            1 => Some(r.bits()?),
            other => return Err(Error::Format(format!("bad presence flag {other}"))),
        };
        let encoding = match r.u8()? {
            0 => Encoding::BitPacked(r.packed()?),
            1 => {
                let n = r.u32()? as usize;
                let mut dictionary = Vec::with_capacity(n.min(body.len()));
                for _ in 0..n {
                    dictionary.push(r.str()?);
                }
                Encoding::Dict {
                    dictionary,
                    codes: r.packed()?,
                }
            }
            2 => Encoding::Bits(r.bits()?),
            3 => Encoding::RangePair {
                mins: r.packed()?,
                maxes: r.packed()?,
                open_min: r.bits()?,
                open_max: r.bits()?,
            },
            other => return Err(Error::Format(format!("unknown encoding tag {other}"))),
        };
        blocks.push(ColumnBlock::from_parts(column_type, rows, presence, encoding)?);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes".into()));
    }
    Bucket::from_parts(
        table,
        import_id,
        bucket_id,
        bucket_count,
        schema,
        blocks,
        stats,
        entities,
    )
}
