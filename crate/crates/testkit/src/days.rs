//! Day sets as plain bitmaps over a fixed window, with flags for ranges
//! that extend past either end.

use cohort_core::engine::DateSet;
use cohort_core::types::{day_from_ymd, DateRange};

pub fn window() -> (i32, i32) {
    (day_from_ymd(2010, 1, 1), day_from_ymd(2021, 12, 31))
}

const NEG: i64 = i64::MIN;
const POS: i64 = i64::MAX;

/// Inclusive bounds with `i64::MIN`/`i64::MAX` meaning open.
pub type Span = (i64, i64);

pub fn span_of(range: &DateRange) -> Span {
    (
        range.min().map_or(NEG, i64::from),
        range.max().map_or(POS, i64::from),
    )
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DayBits {
    bits: Vec<u64>,
    /// Contains every day before the window.
    pub before: bool,
    /// Contains every day after the window.
    pub after: bool,
}

impl Default for DayBits {
    fn default() -> Self {
        Self::new()
    }
}

impl DayBits {
    pub fn new() -> Self {
        let (lo, hi) = window();
        DayBits {
            bits: vec![0; ((hi - lo) as usize) / 64 + 1],
            before: false,
            after: false,
        }
    }

    fn len() -> usize {
        let (lo, hi) = window();
        (hi - lo + 1) as usize
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.bits[i / 64] |= 1 << (i % 64);
    }

    /// Adds the days of `span`. Closed bounds must lie inside the window.
    pub fn add(&mut self, span: Span) {
        if span.0 > span.1 {
            return;
        }
        let (w0, w1) = window();
        assert!(span.0 == NEG || (span.0 >= w0 as i64 && span.0 <= w1 as i64), "day outside window");
        assert!(span.1 == POS || (span.1 >= w0 as i64 && span.1 <= w1 as i64), "day outside window");
        if span.0 == NEG {
            self.before = true;
        }
        if span.1 == POS {
            self.after = true;
        }
        let lo = span.0.max(w0 as i64) - w0 as i64;
        let hi = span.1.min(w1 as i64) - w0 as i64;
        for i in lo..=hi {
            self.set(i as usize);
        }
    }

    pub fn union(&self, other: &DayBits) -> DayBits {
        DayBits {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect(),
            before: self.before || other.before,
            after: self.after || other.after,
        }
    }

    pub fn intersect(&self, other: &DayBits) -> DayBits {
        DayBits {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a & b).collect(),
            before: self.before && other.before,
            after: self.after && other.after,
        }
    }

    pub fn is_empty(&self) -> bool {
        !self.before && !self.after && self.bits.iter().all(|w| *w == 0)
    }

    /// Converts maximal runs of days into ranges; a run touching a window
    /// edge flagged as extending past it becomes open on that side.
    pub fn to_dateset(&self) -> DateSet {
        let (w0, _) = window();
        let n = Self::len();
        let mut ranges = Vec::new();
        let mut i = 0;
        while i < n {
            if !self.get(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i + 1 < n && self.get(i + 1) {
                i += 1;
            }
            let min = if start == 0 && self.before { None } else { Some(w0 + start as i32) };
            let max = if i == n - 1 && self.after { None } else { Some(w0 + i as i32) };
            ranges.push(DateRange::new(min, max).expect("ordered run"));
            i += 1;
        }
        DateSet::from_ranges(ranges)
    }
}
