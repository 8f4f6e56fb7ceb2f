//! Column types, typed values and calendar helpers.
//!
//! Every non-text type reduces to integers: dates are days since 1970-01-01,
//! DECIMAL is fixed-point with four fractional digits and MONEY is in cents.

use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days since 1970-01-01.
pub type Day = i32;

pub const DECIMAL_SCALE: u32 = 4;
pub const MONEY_SCALE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ColumnType {
    String,
    Integer,
    Decimal,
    Money,
    Date,
    DateRange,
    Boolean,
}

impl ColumnType {
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            ColumnType::Integer | ColumnType::Decimal | ColumnType::Money
        )
    }

    pub fn is_date(self) -> bool {
        matches!(self, ColumnType::Date | ColumnType::DateRange)
    }

    /// Number of implied fractional digits of the integer representation.
    pub fn scale(self) -> u32 {
        match self {
            ColumnType::Decimal => DECIMAL_SCALE,
            ColumnType::Money => MONEY_SCALE,
            _ => 0,
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnType::String => "STRING",
            ColumnType::Integer => "INTEGER",
            ColumnType::Decimal => "DECIMAL",
            ColumnType::Money => "MONEY",
            ColumnType::Date => "DATE",
            ColumnType::DateRange => "DATE_RANGE",
            ColumnType::Boolean => "BOOLEAN",
        };
        f.write_str(s)
    }
}

/// Inclusive range of days; either side may be open.
///
/// Open sides are stored as `Day::MIN` / `Day::MAX` so that range arithmetic
/// needs no special cases.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DateRange {
    lo: Day,
    hi: Day,
}

impl DateRange {
    pub const ALL: DateRange = DateRange {
        lo: Day::MIN,
        hi: Day::MAX,
    };

    pub fn new(min: Option<Day>, max: Option<Day>) -> Result<Self> {
        let lo = min.unwrap_or(Day::MIN);
        let hi = max.unwrap_or(Day::MAX);
        if min == Some(Day::MIN) || max == Some(Day::MAX) {
            return Err(Error::Range("date out of representable range".into()));
        }
        if lo > hi {
            return Err(Error::Range(format!(
                "range start {} after end {}",
                format_day(lo),
                format_day(hi)
            )));
        }
        Ok(DateRange { lo, hi })
    }

    pub fn closed(min: Day, max: Day) -> Self {
        assert!(min <= max, "inverted date range");
        DateRange { lo: min, hi: max }
    }

    pub fn day(day: Day) -> Self {
        DateRange { lo: day, hi: day }
    }

    /// Builds from raw bounds where `Day::MIN`/`Day::MAX` mean open.
    pub(crate) fn from_bounds(lo: Day, hi: Day) -> Self {
        debug_assert!(lo <= hi);
        DateRange { lo, hi }
    }

    pub fn min(&self) -> Option<Day> {
        (self.lo != Day::MIN).then_some(self.lo)
    }

    pub fn max(&self) -> Option<Day> {
        (self.hi != Day::MAX).then_some(self.hi)
    }

    pub fn lo(&self) -> Day {
        self.lo
    }

    pub fn hi(&self) -> Day {
        self.hi
    }

    pub fn contains(&self, day: Day) -> bool {
        self.lo <= day && day <= self.hi
    }

    pub fn intersects(&self, other: &DateRange) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn intersection(&self, other: &DateRange) -> Option<DateRange> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(DateRange { lo, hi })
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(min) = self.min() {
            f.write_str(&format_day(min))?;
        }
        f.write_str("/")?;
        if let Some(max) = self.max() {
            f.write_str(&format_day(max))?;
        }
        Ok(())
    }
}

impl fmt::Debug for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for DateRange {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        (self.min(), self.max()).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DateRange {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let (min, max) = <(Option<Day>, Option<Day>)>::deserialize(deserializer)?;
        DateRange::new(min, max).map_err(serde::de::Error::custom)
    }
}

/// A typed, non-null cell value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Value {
    String(String),
    Integer(i64),
    /// Fixed-point, scaled by 10^4.
    Decimal(i64),
    /// Cents.
    Money(i64),
    Date(Day),
    DateRange(DateRange),
    Boolean(bool),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::String(_) => ColumnType::String,
            Value::Integer(_) => ColumnType::Integer,
            Value::Decimal(_) => ColumnType::Decimal,
            Value::Money(_) => ColumnType::Money,
            Value::Date(_) => ColumnType::Date,
            Value::DateRange(_) => ColumnType::DateRange,
            Value::Boolean(_) => ColumnType::Boolean,
        }
    }

    /// Integer representation for numeric values.
    pub fn as_scaled(&self) -> Option<i64> {
        match self {
            Value::Integer(v) | Value::Decimal(v) | Value::Money(v) => Some(*v),
            _ => None,
        }
    }

    /// The validity range of a date-typed value.
    pub fn as_date_range(&self) -> Option<DateRange> {
        match self {
            Value::Date(d) => Some(DateRange::day(*d)),
            Value::DateRange(r) => Some(*r),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    /// Canonical text form, used for output and for string comparisons in
    /// filters and column conditions.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::String(s) => f.write_str(s),
            Value::Integer(v) => write!(f, "{v}"),
            Value::Decimal(v) => f.write_str(&format_fixed(*v as i128, DECIMAL_SCALE, true)),
            Value::Money(v) => f.write_str(&format_fixed(*v as i128, MONEY_SCALE, false)),
            Value::Date(d) => f.write_str(&format_day(*d)),
            Value::DateRange(r) => write!(f, "{r}"),
            Value::Boolean(b) => write!(f, "{b}"),
        }
    }
}

/// Formats a scaled integer. With `trim`, trailing fractional zeros (and a
/// bare decimal point) are dropped.
pub fn format_fixed(value: i128, scale: u32, trim: bool) -> String {
    if scale == 0 {
        return value.to_string();
    }
    let factor = 10i128.pow(scale);
    let sign = if value < 0 { "-" } else { "" };
    let abs = value.unsigned_abs();
    let int = abs / factor as u128;
    let frac = abs % factor as u128;
    let mut frac = format!("{frac:0width$}", width = scale as usize);
    if trim {
        while frac.ends_with('0') {
            frac.pop();
        }
    }
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

/// Parses a decimal literal into an integer scaled by 10^scale.
///
/// More fractional digits than `scale` are rejected rather than rounded.
pub fn parse_fixed(text: &str, scale: u32, decimal_comma: bool) -> Result<i64> {
    let text = text.trim();
    let normalized;
    let text = if decimal_comma {
        normalized = text.replace('.', "").replace(',', ".");
        normalized.as_str()
    } else {
        text
    };
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let malformed = || Error::Type(format!("'{text}' is not a decimal number"));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(malformed());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(malformed());
    }
    if frac_part.len() > scale as usize {
        return Err(Error::Range(format!(
            "'{text}' has more than {scale} fractional digits"
        )));
    }
    let overflow = || Error::Range(format!("'{text}' does not fit a 64-bit fixed-point value"));
    let mut acc: i128 = 0;
    for b in int_part.bytes() {
        acc = acc * 10 + (b - b'0') as i128;
        if acc > i64::MAX as i128 + 1 {
            return Err(overflow());
        }
    }
    for i in 0..scale as usize {
        let digit = frac_part.as_bytes().get(i).map_or(0, |b| b - b'0');
        acc = acc * 10 + digit as i128;
        if acc > i64::MAX as i128 + 1 {
            return Err(overflow());
        }
    }
    let acc = if negative { -acc } else { acc };
    i64::try_from(acc).map_err(|_| overflow())
}

const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("epoch"),
};

pub fn day_from_date(date: NaiveDate) -> Day {
    (date - EPOCH).num_days() as Day
}

pub fn date_from_day(day: Day) -> NaiveDate {
    EPOCH + chrono::Duration::days(day as i64)
}

pub fn day_from_ymd(year: i32, month: u32, day: u32) -> Day {
    day_from_date(NaiveDate::from_ymd_opt(year, month, day).expect("valid calendar date"))
}

/// ISO-8601 (`YYYY-MM-DD`).
pub fn format_day(day: Day) -> String {
    date_from_day(day).format("%Y-%m-%d").to_string()
}

pub fn parse_iso_day(text: &str) -> Result<Day> {
    parse_day(text, "%Y-%m-%d")
}

pub fn parse_day(text: &str, format: &str) -> Result<Day> {
    NaiveDate::parse_from_str(text.trim(), format)
        .map(day_from_date)
        .map_err(|e| Error::Type(format!("'{text}' is not a date in format {format}: {e}")))
}

/// Calendar quarter of a day as `(year, 1..=4)`.
pub fn quarter_of(day: Day) -> (i32, u32) {
    let date = date_from_day(day);
    (date.year(), date.month().div_ceil(3))
}

/// Quarters touched by a range. An open side contributes only the quarter of
/// the closed side; a fully open range touches none.
pub fn quarters_of_range(range: &DateRange) -> Vec<(i32, u32)> {
    match (range.min(), range.max()) {
        (None, None) => Vec::new(),
        (Some(d), None) | (None, Some(d)) => vec![quarter_of(d)],
        (Some(lo), Some(hi)) => {
            let (mut y, mut q) = quarter_of(lo);
            let end = quarter_of(hi);
            let mut out = Vec::new();
            loop {
                out.push((y, q));
                if (y, q) >= end {
                    break;
                }
                if q == 4 {
                    y += 1;
                    q = 1;
                } else {
                    q += 1;
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_round_trip() {
        assert_eq!(parse_fixed("12.3456", 4, false).unwrap(), 123456);
        assert_eq!(parse_fixed("-0.5", 4, false).unwrap(), -5000);
        assert_eq!(parse_fixed("3", 2, false).unwrap(), 300);
        assert_eq!(parse_fixed("1.234,5", 2, true).unwrap(), 123450);
        assert_eq!(format_fixed(123456, 4, true), "12.3456");
        assert_eq!(format_fixed(-5000, 4, true), "-0.5");
        assert_eq!(format_fixed(20000, 4, true), "2");
        assert_eq!(format_fixed(1230, 2, false), "12.30");
        assert_eq!(format_fixed(-5, 2, false), "-0.05");
    }

    #[test]
    fn fixed_point_errors() {
        assert!(matches!(parse_fixed("1.23456", 4, false), Err(Error::Range(_))));
        assert!(matches!(
            parse_fixed("92233720368547758070", 2, false),
            Err(Error::Range(_))
        ));
        assert!(matches!(parse_fixed("abc", 2, false), Err(Error::Type(_))));
        assert!(matches!(parse_fixed("", 2, false), Err(Error::Type(_))));
        assert_eq!(
            parse_fixed("-922337203685477.5808", 4, false).unwrap(),
            i64::MIN
        );
    }

    #[test]
    fn days_and_quarters() {
        assert_eq!(day_from_ymd(1970, 1, 1), 0);
        let d = parse_iso_day("2015-07-16").unwrap();
        assert_eq!(format_day(d), "2015-07-16");
        assert_eq!(quarter_of(d), (2015, 3));
        assert_eq!(quarter_of(day_from_ymd(2015, 12, 31)), (2015, 4));
        let r = DateRange::closed(day_from_ymd(2014, 11, 1), day_from_ymd(2015, 4, 1));
        assert_eq!(quarters_of_range(&r), vec![(2014, 4), (2015, 1), (2015, 2)]);
        let open = DateRange::new(None, Some(day_from_ymd(2015, 2, 1))).unwrap();
        assert_eq!(quarters_of_range(&open), vec![(2015, 1)]);
        assert!(quarters_of_range(&DateRange::ALL).is_empty());
    }

    #[test]
    fn date_range_rendering() {
        let r = DateRange::new(Some(day_from_ymd(2015, 1, 1)), None).unwrap();
        assert_eq!(r.to_string(), "2015-01-01/");
        assert!(DateRange::new(Some(5), Some(4)).is_err());
    }
}
