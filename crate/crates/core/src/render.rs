//! CSV rendering of result lines.
//!
//! Cells: date sets as `{min/max, min/max}` with ISO dates (open sides
//! empty), lists as `[a, b]`, absent values as `-`. Lines are sorted by
//! entity id (numerically when both ids are integers), then by secondary id
//! with the no-value group last.

use std::cmp::Ordering;

use crate::engine::ResultLine;

pub const DEFAULT_SEPARATOR: u8 = b';';

fn entity_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i128>(), b.parse::<i128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

fn line_order(a: &ResultLine, b: &ResultLine) -> Ordering {
    entity_order(&a.entity, &b.entity).then_with(|| match (&a.secondary, &b.secondary) {
        (Some(x), Some(y)) => x.cmp(y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    })
}

/// Sorts lines into output order.
pub fn sort_lines(lines: &mut [ResultLine]) {
    lines.sort_by(line_order);
}

/// Renders a header and lines. `with_secondary` adds the secondary-id cell
/// after the entity; the header must already contain its label.
pub fn render_csv(header: &[String], lines: &[ResultLine], with_secondary: bool, separator: u8) -> Vec<u8> {
    let mut sorted: Vec<&ResultLine> = lines.iter().collect();
    sorted.sort_by(|a, b| line_order(a, b));
    let mut writer = csv::WriterBuilder::new()
        .delimiter(separator)
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    writer.write_record(header).expect("writing to memory");
    for line in sorted {
        let mut record = Vec::with_capacity(header.len());
        record.push(line.entity.clone());
        if with_secondary {
            record.push(line.secondary.clone().unwrap_or_else(|| "-".into()));
        }
        record.push(if line.dates.is_empty() {
            "-".into()
        } else {
            line.dates.to_string()
        });
        record.extend(line.values.iter().map(|v| v.render()));
        writer.write_record(&record).expect("writing to memory");
    }
    writer.into_inner().expect("flushing to memory")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DateSet, SelectValue};
    use crate::types::{parse_iso_day, DateRange};

    fn day(s: &str) -> DateRange {
        DateRange::day(parse_iso_day(s).unwrap())
    }

    #[test]
    fn figure_cells() {
        let line = ResultLine {
            entity: "1".into(),
            secondary: None,
            dates: DateSet::from_ranges([day("2015-12-04"), day("2015-07-16")]),
            values: vec![
                SelectValue::Null,
                SelectValue::List(vec!["G2090".into(), "G2000".into()]),
                SelectValue::Integer(2),
            ],
        };
        let header: Vec<String> = ["PID", "date", "a", "b", "c"].map(String::from).to_vec();
        let out = String::from_utf8(render_csv(&header, &[line], false, b';')).unwrap();
        assert_eq!(
            out,
            "PID;date;a;b;c\n1;{2015-07-16/2015-07-16, 2015-12-04/2015-12-04};-;[G2090, G2000];2\n"
        );
    }

    #[test]
    fn quoting_and_order() {
        let line = |e: &str, v: &str| ResultLine {
            entity: e.into(),
            secondary: None,
            dates: DateSet::new(),
            values: vec![SelectValue::List(vec![v.into()])],
        };
        let header: Vec<String> = ["id", "dates", "v"].map(String::from).to_vec();
        let lines = [line("10", "a;b"), line("9", "say \"x\""), line("x", "z")];
        let out = String::from_utf8(render_csv(&header, &lines, false, b';')).unwrap();
        assert_eq!(out, "id;dates;v\n9;-;\"[say \"\"x\"\"]\"\n10;-;\"[a;b]\"\nx;-;[z]\n");
    }

    #[test]
    fn secondary_groups_sort_null_last() {
        let line = |s: Option<&str>| ResultLine {
            entity: "1".into(),
            secondary: s.map(String::from),
            dates: DateSet::new(),
            values: vec![],
        };
        let header: Vec<String> = ["id", "case", "dates"].map(String::from).to_vec();
        let out = String::from_utf8(render_csv(&header, &[line(None), line(Some("b")), line(Some("a"))], true, b';')).unwrap();
        assert_eq!(out, "id;case;dates\n1;a;-\n1;b;-\n1;-;-\n");
    }
}
