use std::fmt;

use serde::{Deserialize, Serialize};

use crate::types::{DateRange, Day};

/// Sorted, disjoint, coalesced set of inclusive date ranges. Consecutive
/// ranges are separated by at least one uncovered day.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<DateRange>", into = "Vec<DateRange>")]
pub struct DateSet {
    ranges: Vec<DateRange>,
}

fn touches(a: &DateRange, b: &DateRange) -> bool {
    // `b` starts no later than one day after `a` ends.
    (b.lo() as i64) <= a.hi() as i64 + 1
}

impl DateSet {
    pub fn new() -> Self {
        DateSet::default()
    }

    pub fn from_range(range: DateRange) -> Self {
        DateSet { ranges: vec![range] }
    }

    pub fn from_ranges(ranges: impl IntoIterator<Item = DateRange>) -> Self {
        let mut ranges: Vec<DateRange> = ranges.into_iter().collect();
        ranges.sort_unstable_by_key(|r| (r.lo(), r.hi()));
        DateSet {
            ranges: coalesce_sorted(ranges),
        }
    }

    pub fn ranges(&self) -> &[DateRange] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn contains(&self, day: Day) -> bool {
        let i = self.ranges.partition_point(|r| r.hi() < day);
        self.ranges.get(i).is_some_and(|r| r.contains(day))
    }

    pub fn union(&self, other: &DateSet) -> DateSet {
        if other.is_empty() {
            return self.clone();
        }
        if self.is_empty() {
            return other.clone();
        }
        let mut merged = Vec::with_capacity(self.ranges.len() + other.ranges.len());
        let (mut a, mut b) = (self.ranges.iter().peekable(), other.ranges.iter().peekable());
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            if (x.lo(), x.hi()) <= (y.lo(), y.hi()) {
                merged.push(**x);
                a.next();
            } else {
                merged.push(**y);
                b.next();
            }
        }
        merged.extend(a.copied());
        merged.extend(b.copied());
        DateSet {
            ranges: coalesce_sorted(merged),
        }
    }

    pub fn intersect(&self, other: &DateSet) -> DateSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.ranges.len() && j < other.ranges.len() {
            let (a, b) = (&self.ranges[i], &other.ranges[j]);
            if let Some(x) = a.intersection(b) {
                out.push(x);
            }
            if a.hi() < b.hi() {
                i += 1;
            } else {
                j += 1;
            }
        }
        // Pieces of disjoint, non-adjacent inputs are themselves non-adjacent.
        DateSet { ranges: out }
    }

    /// Restricts the set to `range`.
    pub fn mask(&self, range: &DateRange) -> DateSet {
        DateSet {
            ranges: self
                .ranges
                .iter()
                .filter_map(|r| r.intersection(range))
                .collect(),
        }
    }

    pub fn insert(&mut self, range: DateRange) {
        *self = self.union(&DateSet::from_range(range));
    }
}

fn coalesce_sorted(sorted: Vec<DateRange>) -> Vec<DateRange> {
    let mut out: Vec<DateRange> = Vec::with_capacity(sorted.len());
    for r in sorted {
        match out.last_mut() {
            Some(last) if touches(last, &r) => {
                if r.hi() > last.hi() {
                    *last = DateRange::from_bounds(last.lo(), r.hi());
                }
            }
            _ => out.push(r),
        }
    }
    out
}

impl From<Vec<DateRange>> for DateSet {
    fn from(ranges: Vec<DateRange>) -> Self {
        DateSet::from_ranges(ranges)
    }
}

impl From<DateSet> for Vec<DateRange> {
    fn from(set: DateSet) -> Self {
        set.ranges
    }
}

impl FromIterator<DateRange> for DateSet {
    fn from_iter<T: IntoIterator<Item = DateRange>>(iter: T) -> Self {
        DateSet::from_ranges(iter)
    }
}

impl fmt::Display for DateSet {
    /// `{2015-07-16/2015-07-16, 2015-12-04/2015-12-04}`; open sides print empty.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, r) in self.ranges.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for DateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Date restriction in effect at a point of the query tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    All,
    Range(DateRange),
    /// Nested restrictions with no common day.
    Empty,
}

impl Mask {
    pub fn restrict(self, range: DateRange) -> Mask {
        match self {
            Mask::All => Mask::Range(range),
            Mask::Range(r) => r.intersection(&range).map_or(Mask::Empty, Mask::Range),
            Mask::Empty => Mask::Empty,
        }
    }

    /// Whether an event with this validity passes. Events without validity
    /// pass only when nothing is restricted.
    pub fn admits(&self, validity: Option<DateRange>) -> bool {
        match self {
            Mask::All => true,
            Mask::Range(m) => validity.is_some_and(|v| v.intersects(m)),
            Mask::Empty => false,
        }
    }

    pub fn clip(&self, range: DateRange) -> Option<DateRange> {
        match self {
            Mask::All => Some(range),
            Mask::Range(m) => range.intersection(m),
            Mask::Empty => None,
        }
    }

    pub fn apply(&self, set: &DateSet) -> DateSet {
        match self {
            Mask::All => set.clone(),
            Mask::Range(m) => set.mask(m),
            Mask::Empty => DateSet::new(),
        }
    }

    /// The restricted period as a set; empty when unrestricted.
    pub fn as_set(&self) -> DateSet {
        match self {
            Mask::Range(m) => DateSet::from_range(*m),
            Mask::All | Mask::Empty => DateSet::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{day_from_ymd, parse_iso_day};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn r(a: &str, b: &str) -> DateRange {
        DateRange::closed(parse_iso_day(a).unwrap(), parse_iso_day(b).unwrap())
    }

    #[test]
    fn union_identity() {
        let q1 = DateSet::from_range(r("2015-01-01", "2015-03-31"));
        assert_eq!(DateSet::new().union(&q1), q1);
    }

    #[test]
    fn quarters_coalesce_to_year() {
        let quarters = [
            r("2015-01-01", "2015-03-31"),
            r("2015-04-01", "2015-06-30"),
            r("2015-07-01", "2015-09-30"),
            r("2015-10-01", "2015-12-31"),
        ];
        let set = quarters
            .iter()
            .fold(DateSet::new(), |acc, q| acc.union(&DateSet::from_range(*q)));
        assert_eq!(set.to_string(), "{2015-01-01/2015-12-31}");
    }

    #[test]
    fn intersect_halves() {
        let a = DateSet::from_range(r("2015-01-01", "2015-06-30"));
        let b = DateSet::from_range(r("2015-06-01", "2015-12-31"));
        assert_eq!(a.intersect(&b).to_string(), "{2015-06-01/2015-06-30}");
    }

    #[test]
    fn open_sides_render_empty() {
        let set = DateSet::from_ranges([
            DateRange::new(None, Some(day_from_ymd(2014, 1, 1))).unwrap(),
            DateRange::new(Some(day_from_ymd(2015, 1, 1)), None).unwrap(),
        ]);
        assert_eq!(set.to_string(), "{/2014-01-01, 2015-01-01/}");
        assert_eq!(
            set.union(&DateSet::from_range(r("2014-01-02", "2014-12-31"))),
            DateSet::from_range(DateRange::ALL)
        );
    }

    #[test]
    fn serde_normalizes() {
        let set: DateSet = serde_json::from_str("[[20, 30], [10, 19], [null, 2]]").unwrap();
        assert_eq!(set.ranges().len(), 2);
        assert_eq!(serde_json::to_string(&set).unwrap(), "[[null,2],[10,30]]");
    }

    fn days(set: &DateSet, window: (i32, i32)) -> BTreeSet<i32> {
        (window.0..=window.1).filter(|d| set.contains(*d)).collect()
    }

    fn arb_set() -> impl Strategy<Value = DateSet> {
        prop::collection::vec((0i32..200, 0i32..20), 0..6).prop_map(|v| {
            DateSet::from_ranges(v.into_iter().map(|(lo, len)| DateRange::closed(lo, lo + len)))
        })
    }

    fn well_formed(set: &DateSet) -> bool {
        set.ranges()
            .windows(2)
            .all(|w| (w[1].lo() as i64) > w[0].hi() as i64 + 1)
    }

    proptest! {
        #[test]
        fn algebra_matches_day_sets(a in arb_set(), b in arb_set(), m in (0i32..220, 0i32..60)) {
            let window = (-5, 260);
            let (da, db) = (days(&a, window), days(&b, window));
            let u = a.union(&b);
            let i = a.intersect(&b);
            let mask = DateRange::closed(m.0, m.0 + m.1);
            let k = a.mask(&mask);
            prop_assert!(well_formed(&u) && well_formed(&i) && well_formed(&k));
            prop_assert_eq!(days(&u, window), da.union(&db).copied().collect::<BTreeSet<_>>());
            prop_assert_eq!(days(&i, window), da.intersection(&db).copied().collect::<BTreeSet<_>>());
            prop_assert_eq!(days(&k, window), da.iter().copied().filter(|d| mask.contains(*d)).collect::<BTreeSet<_>>());
        }
    }
}
