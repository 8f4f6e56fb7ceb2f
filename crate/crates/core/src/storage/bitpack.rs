//! Frame-of-reference bit packing.
//!
//! Values are stored as `value - base` using the minimum number of bits that
//! covers `max - base`; a constant column packs to zero bits. Any row can be
//! extracted in constant time without touching the rest of the buffer.

use std::cell::Cell;
use std::mem::size_of;

thread_local! {
    static FULL_DECODES: Cell<u64> = const { Cell::new(0) };
}

/// Number of whole-block decodes performed on the current thread.
///
/// Point reads never increment this; only [`BitPacked::decode_all`] and the
/// block-level equivalents built on it do.
pub fn full_decode_count() -> u64 {
    FULL_DECODES.with(Cell::get)
}

pub(crate) fn note_full_decode() {
    FULL_DECODES.with(|c| c.set(c.get() + 1));
}

/// Bits needed to represent every value in `0..=range`.
pub fn bit_width(range: u64) -> u8 {
    (64 - range.leading_zeros()) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPacked {
    base: i64,
    width: u8,
    len: usize,
    words: Vec<u64>,
}

impl BitPacked {
    /// Packs `values`; `None` entries are stored as `base` and excluded from
    /// the width computation.
    pub fn encode(values: &[Option<i64>]) -> Self {
        let mut present = values.iter().flatten().copied();
        let Some(first) = present.next() else {
            return BitPacked {
                base: 0,
                width: 0,
                len: values.len(),
                words: Vec::new(),
            };
        };
        let (min, max) = present.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let width = bit_width(max.wrapping_sub(min) as u64);
        let mut packed = BitPacked {
            base: min,
            width,
            len: values.len(),
            words: vec![0; (values.len() * width as usize).div_ceil(64)],
        };
        if width > 0 {
            for (i, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    packed.put(i, v.wrapping_sub(min) as u64);
                }
            }
        }
        packed
    }

    pub fn encode_dense(values: &[i64]) -> Self {
        let wrapped: Vec<Option<i64>> = values.iter().copied().map(Some).collect();
        Self::encode(&wrapped)
    }

    pub(crate) fn from_parts(base: i64, width: u8, len: usize, words: Vec<u64>) -> Option<Self> {
        let expected = (len * width as usize).div_ceil(64);
        (width <= 64 && words.len() == expected).then_some(BitPacked {
            base,
            width,
            len,
            words,
        })
    }

    fn put(&mut self, index: usize, raw: u64) {
        let bit = index * self.width as usize;
        let (word, offset) = (bit / 64, bit % 64);
        self.words[word] |= raw << offset;
        if offset + self.width as usize > 64 {
            self.words[word + 1] |= raw >> (64 - offset);
        }
    }

    #[inline]
    pub fn get(&self, index: usize) -> i64 {
        debug_assert!(index < self.len);
        if self.width == 0 {
            return self.base;
        }
        let width = self.width as usize;
        let bit = index * width;
        let (word, offset) = (bit / 64, bit % 64);
        let mut raw = self.words[word] >> offset;
        if offset + width > 64 {
            raw |= self.words[word + 1] << (64 - offset);
        }
        if width < 64 {
            raw &= (1u64 << width) - 1;
        }
        self.base.wrapping_add(raw as i64)
    }

    /// Decodes every value. Counted by [`full_decode_count`].
    pub fn decode_all(&self) -> Vec<i64> {
        note_full_decode();
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn base(&self) -> i64 {
        self.base
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn heap_size(&self) -> usize {
        self.words.len() * size_of::<u64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_column_packs_to_zero_bits() {
        let p = BitPacked::encode_dense(&[5, 5, 5]);
        assert_eq!((p.base(), p.width(), p.len()), (5, 0, 3));
        assert_eq!(p.heap_size(), 0);
        assert_eq!(p.get(2), 5);
    }

    #[test]
    fn widths() {
        assert_eq!(bit_width(0), 0);
        assert_eq!(bit_width(1), 1);
        assert_eq!(bit_width(255), 8);
        assert_eq!(bit_width(256), 9);
        assert_eq!(bit_width(u64::MAX), 64);
        let p = BitPacked::encode_dense(&[i64::MIN, i64::MAX, 0]);
        assert_eq!(p.width(), 64);
        assert_eq!(p.get(0), i64::MIN);
        assert_eq!(p.get(1), i64::MAX);
        assert_eq!(p.get(2), 0);
    }

    #[test]
    fn nulls_do_not_widen() {
        let p = BitPacked::encode(&[Some(100), None, Some(103)]);
        assert_eq!((p.base(), p.width()), (100, 2));
        assert_eq!(p.get(2), 103);
    }

    #[test]
    fn point_reads_are_not_full_decodes() {
        let p = BitPacked::encode_dense(&[1, 2, 3, 4]);
        let before = full_decode_count();
        for i in 0..4 {
            p.get(i);
        }
        assert_eq!(full_decode_count(), before);
        p.decode_all();
        assert_eq!(full_decode_count(), before + 1);
    }

    proptest! {
        #[test]
        fn round_trip(values in prop::collection::vec(prop::option::of(any::<i64>()), 0..200)) {
            let p = BitPacked::encode(&values);
            for (i, v) in values.iter().enumerate() {
                if let Some(v) = v {
                    prop_assert_eq!(p.get(i), *v);
                }
            }
        }

        #[test]
        fn width_is_minimal(base in -1000i64..1000, offsets in prop::collection::vec(0u64..100_000, 1..50)) {
            let values: Vec<i64> = offsets.iter().map(|o| base + *o as i64).collect();
            let p = BitPacked::encode_dense(&values);
            let range = offsets.iter().max().unwrap() - offsets.iter().min().unwrap();
            let expected = if range == 0 { 0 } else { (range as f64 + 1.0).log2().ceil() as u8 };
            prop_assert_eq!(p.width(), expected);
        }
    }
}
