//! Per-column compressed blocks.
//!
//! Integers, fixed-point numbers and dates are bit-packed, strings are
//! dictionary-encoded against a sorted dictionary, booleans are a bitset and
//! date ranges are two packed bound columns plus openness bits. Nullability
//! is a separate presence bitset so that nulls never widen a packing.

use std::mem::size_of;

use crate::error::{Error, Result};
use crate::types::{ColumnType, DateRange, Day, Value};

use super::bitpack::{note_full_decode, BitPacked};
use super::bitset::BitSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Encoding {
    /// INTEGER, DECIMAL, MONEY and DATE.
    BitPacked(BitPacked),
    Dict {
        dictionary: Vec<String>,
        codes: BitPacked,
    },
    Bits(BitSet),
    RangePair {
        mins: BitPacked,
        maxes: BitPacked,
        open_min: BitSet,
        open_max: BitSet,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnBlock {
    column_type: ColumnType,
    rows: usize,
    /// `None` when every row is present.
    presence: Option<BitSet>,
    encoding: Encoding,
}

/// Encodes one column of typed optional values.
pub fn encode_column(values: &[Option<Value>], column_type: ColumnType) -> Result<ColumnBlock> {
    for (row, value) in values.iter().enumerate() {
        if let Some(value) = value {
            if value.column_type() != column_type {
                return Err(Error::Type(format!(
                    "row {row}: expected {column_type}, got {}",
                    value.column_type()
                )));
            }
        }
    }

    let presence = if values.iter().all(Option::is_some) {
        None
    } else {
        Some(BitSet::from_bools(values.iter().map(Option::is_some)))
    };

    let encoding = match column_type {
        ColumnType::Integer | ColumnType::Decimal | ColumnType::Money => {
            let ints: Vec<Option<i64>> = values
                .iter()
                .map(|v| v.as_ref().and_then(Value::as_scaled))
                .collect();
            Encoding::BitPacked(BitPacked::encode(&ints))
        }
        ColumnType::Date => {
            let ints: Vec<Option<i64>> = values
                .iter()
                .map(|v| match v {
                    Some(Value::Date(d)) => Some(*d as i64),
                    _ => None,
                })
                .collect();
            Encoding::BitPacked(BitPacked::encode(&ints))
        }
        ColumnType::String => {
            let mut dictionary: Vec<String> = values
                .iter()
                .filter_map(|v| match v {
                    Some(Value::String(s)) => Some(s.clone()),
                    _ => None,
                })
                .collect();
            dictionary.sort_unstable();
            dictionary.dedup();
            let codes: Vec<Option<i64>> = values
                .iter()
                .map(|v| match v {
                    Some(Value::String(s)) => Some(
                        dictionary
                            .binary_search(s)
                            .expect("dictionary holds every value") as i64,
                    ),
                    _ => None,
                })
                .collect();
            Encoding::Dict {
                dictionary,
                codes: BitPacked::encode(&codes),
            }
        }
        ColumnType::Boolean => Encoding::Bits(BitSet::from_bools(
            values.iter().map(|v| matches!(v, Some(Value::Boolean(true)))),
        )),
        ColumnType::DateRange => {
            let ranges: Vec<Option<DateRange>> = values
                .iter()
                .map(|v| match v {
                    Some(Value::DateRange(r)) => Some(*r),
                    _ => None,
                })
                .collect();
            let mins: Vec<Option<i64>> = ranges
                .iter()
                .map(|r| r.and_then(|r| r.min()).map(i64::from))
                .collect();
            let maxes: Vec<Option<i64>> = ranges
                .iter()
                .map(|r| r.and_then(|r| r.max()).map(i64::from))
                .collect();
            Encoding::RangePair {
                mins: BitPacked::encode(&mins),
                maxes: BitPacked::encode(&maxes),
                open_min: BitSet::from_bools(ranges.iter().map(|r| matches!(r, Some(r) if r.min().is_none()))),
                open_max: BitSet::from_bools(ranges.iter().map(|r| matches!(r, Some(r) if r.max().is_none()))),
            }
        }
    };

    Ok(ColumnBlock {
        column_type,
        rows: values.len(),
        presence,
        encoding,
    })
}

impl ColumnBlock {
    pub(crate) fn from_parts(
        column_type: ColumnType,
        rows: usize,
        presence: Option<BitSet>,
        encoding: Encoding,
    ) -> Result<Self> {
        let block = ColumnBlock {
            column_type,
            rows,
            presence,
            encoding,
        };
        block.check()?;
        Ok(block)
    }

    /// Structural invariants; used when blocks come from outside the encoder.
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("{} block: {m}", self.column_type)));
        if let Some(p) = &self.presence {
            if p.len() != self.rows {
                return bad("presence length mismatch");
            }
        }
        match (&self.encoding, self.column_type) {
            (
                Encoding::BitPacked(p),
                ColumnType::Integer | ColumnType::Decimal | ColumnType::Money | ColumnType::Date,
            ) => {
                if p.len() != self.rows {
                    return bad("value count mismatch");
                }
            }
            (Encoding::Dict { dictionary, codes }, ColumnType::String) => {
                if codes.len() != self.rows {
                    return bad("code count mismatch");
                }
                if dictionary.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("dictionary not sorted and unique");
                }
                for row in 0..self.rows {
                    if self.is_present(row) {
                        let code = codes.get(row);
                        if code < 0 || code as usize >= dictionary.len() {
                            return bad("code outside dictionary");
                        }
                    }
                }
            }
            (Encoding::Bits(b), ColumnType::Boolean) => {
                if b.len() != self.rows {
                    return bad("bit count mismatch");
                }
            }
            (
                Encoding::RangePair {
                    mins,
                    maxes,
                    open_min,
                    open_max,
                },
                ColumnType::DateRange,
            ) => {
                if [mins.len(), maxes.len(), open_min.len(), open_max.len()]
                    .iter()
                    .any(|l| *l != self.rows)
                {
                    return bad("range component length mismatch");
                }
                for row in 0..self.rows {
                    if self.is_present(row) && !open_min.get(row) && !open_max.get(row) && mins.get(row) > maxes.get(row) {
                        return bad("inverted range");
                    }
                }
            }
            _ => return bad("encoding does not match column type"),
        }
        Ok(())
    }

    pub fn column_type(&self) -> ColumnType {
        self.column_type
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub(crate) fn presence(&self) -> Option<&BitSet> {
        self.presence.as_ref()
    }

    #[inline]
    pub fn is_present(&self, row: usize) -> bool {
        self.presence.as_ref().is_none_or(|p| p.get(row))
    }

    /// Sorted dictionary of a string block.
    pub fn dictionary(&self) -> Option<&[String]> {
        match &self.encoding {
            Encoding::Dict { dictionary, .. } => Some(dictionary),
            _ => None,
        }
    }

    /// Dictionary code of a present string row.
    #[inline]
    pub fn code_at(&self, row: usize) -> Option<u32> {
        match &self.encoding {
            Encoding::Dict { codes, .. } if self.is_present(row) => Some(codes.get(row) as u32),
            _ => None,
        }
    }

    /// Integer representation of a present numeric or DATE row.
    #[inline]
    pub fn int_at(&self, row: usize) -> Option<i64> {
        match &self.encoding {
            Encoding::BitPacked(p) if self.is_present(row) => Some(p.get(row)),
            _ => None,
        }
    }

    /// Validity range of a present DATE or DATE_RANGE row.
    #[inline]
    pub fn range_at(&self, row: usize) -> Option<DateRange> {
        if !self.is_present(row) {
            return None;
        }
        match &self.encoding {
            Encoding::BitPacked(p) if self.column_type == ColumnType::Date => {
                Some(DateRange::day(p.get(row) as Day))
            }
            Encoding::RangePair {
                mins,
                maxes,
                open_min,
                open_max,
            } => {
                let lo = if open_min.get(row) { Day::MIN } else { mins.get(row) as Day };
                let hi = if open_max.get(row) { Day::MAX } else { maxes.get(row) as Day };
                Some(DateRange::from_bounds(lo, hi))
            }
            _ => None,
        }
    }

    /// Reads one row without decoding anything else in the block.
    pub fn read_value(&self, row: usize) -> Result<Option<Value>> {
        if row >= self.rows {
            return Err(Error::Index {
                row,
                len: self.rows,
            });
        }
        Ok(self.value_unchecked(row))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, row: usize) -> Option<Value> {
        if !self.is_present(row) {
            return None;
        }
        Some(match &self.encoding {
            Encoding::BitPacked(p) => {
                let v = p.get(row);
                match self.column_type {
                    ColumnType::Integer => Value::Integer(v),
                    ColumnType::Decimal => Value::Decimal(v),
                    ColumnType::Money => Value::Money(v),
                    ColumnType::Date => Value::Date(v as Day),
                    _ => unreachable!("checked at construction"),
                }
            }
            Encoding::Dict { dictionary, codes } => {
                Value::String(dictionary[codes.get(row) as usize].clone())
            }
            Encoding::Bits(bits) => Value::Boolean(bits.get(row)),
            Encoding::RangePair { .. } => Value::DateRange(self.range_at(row)?),
        })
    }

    /// Decodes the whole block.
    pub fn decode_all(&self) -> Vec<Option<Value>> {
        note_full_decode();
        (0..self.rows).map(|row| self.value_unchecked(row)).collect()
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_size(&self) -> usize {
        let presence = self.presence.as_ref().map_or(0, BitSet::heap_size);
        presence
            + match &self.encoding {
                Encoding::BitPacked(p) => p.heap_size(),
                Encoding::Dict { dictionary, codes } => {
                    codes.heap_size()
                        + dictionary
                            .iter()
                            .map(|s| s.len() + size_of::<String>())
                            .sum::<usize>()
                }
                Encoding::Bits(b) => b.heap_size(),
                Encoding::RangePair {
                    mins,
                    maxes,
                    open_min,
                    open_max,
                } => mins.heap_size() + maxes.heap_size() + open_min.heap_size() + open_max.heap_size(),
            }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::bitpack::full_decode_count;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strings(values: &[&str]) -> Vec<Option<Value>> {
        values.iter().map(|s| Some(Value::String(s.to_string()))).collect()
    }

    #[test]
    fn constant_integer_column() {
        let block = encode_column(&vec![Some(Value::Integer(5)); 3], ColumnType::Integer).unwrap();
        match block.encoding() {
            Encoding::BitPacked(p) => assert_eq!((p.base(), p.width(), p.len()), (5, 0, 3)),
            other => panic!("unexpected encoding {other:?}"),
        }
        assert_eq!(block.len(), 3);
    }

    #[test]
    fn sorted_dictionary_matches_sort_and_index_oracle() {
        let input = ["G2090", "G2000", "G2090"];
        let block = encode_column(&strings(&input), ColumnType::String).unwrap();

        let mut oracle: Vec<&str> = input.to_vec();
        oracle.sort();
        oracle.dedup();
        let oracle_codes: Vec<u32> = input
            .iter()
            .map(|s| oracle.iter().position(|d| d == s).unwrap() as u32)
            .collect();

        assert_eq!(block.dictionary().unwrap(), ["G2000", "G2090"]);
        assert_eq!(oracle, ["G2000", "G2090"]);
        let codes: Vec<u32> = (0..3).map(|r| block.code_at(r).unwrap()).collect();
        assert_eq!(codes, oracle_codes);
        assert_eq!(codes, [1, 0, 1]);
        assert_eq!(
            block.read_value(1).unwrap(),
            Some(Value::String("G2000".into()))
        );
    }

    #[test]
    fn nulls_read_back_as_null() {
        let block = encode_column(
            &[Some(Value::Integer(1)), None, Some(Value::Integer(9))],
            ColumnType::Integer,
        )
        .unwrap();
        assert_eq!(block.read_value(1).unwrap(), None);
        let all_null = encode_column(&[None, None], ColumnType::String).unwrap();
        assert_eq!(all_null.read_value(0).unwrap(), None);
        assert_eq!(all_null.dictionary().unwrap().len(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            encode_column(&[Some(Value::Integer(1)), Some(Value::Boolean(true))], ColumnType::Integer),
            Err(Error::Type(_))
        ));
        let block = encode_column(&[Some(Value::Integer(1))], ColumnType::Integer).unwrap();
        assert!(matches!(block.read_value(1), Err(Error::Index { row: 1, len: 1 })));
    }

    #[test]
    fn random_point_reads_equal_array_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut blocks = Vec::new();
        for _ in 0..20 {
            let n = rng.gen_range(1..500);
            let values: Vec<Option<Value>> = (0..n)
                .map(|_| {
                    rng.gen_bool(0.9)
                        .then(|| Value::String(format!("C{}", rng.gen_range(0..50))))
                })
                .collect();
            blocks.push((encode_column(&values, ColumnType::String).unwrap(), values));
            let ints: Vec<Option<Value>> = (0..n)
                .map(|_| rng.gen_bool(0.8).then(|| Value::Integer(rng.gen_range(-1000..1_000_000))))
                .collect();
            blocks.push((encode_column(&ints, ColumnType::Integer).unwrap(), ints));
        }
        let before = full_decode_count();
        for _ in 0..100_000 {
            let (block, oracle) = &blocks[rng.gen_range(0..blocks.len())];
            let row = rng.gen_range(0..oracle.len());
            assert_eq!(&block.read_value(row).unwrap(), &oracle[row]);
        }
        assert_eq!(full_decode_count(), before);
    }

    fn arb_value(ty: ColumnType) -> BoxedStrategy<Value> {
        match ty {
            ColumnType::String => "[A-Z][0-9]{0,4}".prop_map(Value::String).boxed(),
            ColumnType::Integer => any::<i64>().prop_map(Value::Integer).boxed(),
            ColumnType::Decimal => any::<i64>().prop_map(Value::Decimal).boxed(),
            ColumnType::Money => (-1_000_000i64..1_000_000).prop_map(Value::Money).boxed(),
            ColumnType::Date => (-30_000i32..30_000).prop_map(Value::Date).boxed(),
            ColumnType::Boolean => any::<bool>().prop_map(Value::Boolean).boxed(),
            ColumnType::DateRange => (
                prop::option::of(-30_000i32..30_000),
                prop::option::of(0i32..400),
            )
                .prop_map(|(lo, len)| {
                    let hi = match (lo, len) {
                        (Some(lo), Some(len)) => Some(lo + len),
                        (None, Some(len)) => Some(len),
                        _ => None,
                    };
                    Value::DateRange(DateRange::new(lo, hi).unwrap())
                })
                .boxed(),
        }
    }

    fn arb_column() -> impl Strategy<Value = (ColumnType, Vec<Option<Value>>)> {
        prop_oneof![
            Just(ColumnType::String),
            Just(ColumnType::Integer),
            Just(ColumnType::Decimal),
            Just(ColumnType::Money),
            Just(ColumnType::Date),
            Just(ColumnType::DateRange),
            Just(ColumnType::Boolean),
        ]
        .prop_flat_map(|ty| (Just(ty), prop::collection::vec(prop::option::of(arb_value(ty)), 0..100)))
    }

    proptest! {
        #[test]
        fn decode_encode_round_trip((ty, values) in arb_column()) {
            let block = encode_column(&values, ty).unwrap();
            prop_assert_eq!(block.decode_all(), values);
        }
    }
}
