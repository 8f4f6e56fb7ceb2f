//! The Parkinson cohort fixture: two claims tables, an ICD concept and the
//! query that selects patients with G20 diagnoses in 2015.
//!
//! Raw files use `;` as delimiter, German dates and dotted ICD codes, so the
//! fixture also goes through the ingest normalizations. [`write`] emits
//! every file except the golden `expected.csv`, which is maintained by hand.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde_json::{json, Value as Json};

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

fn german(d: NaiveDate) -> String {
    d.format("%d.%m.%Y").to_string()
}

fn quarter(year: i32, q: u32) -> (NaiveDate, NaiveDate) {
    let first = date(year, 3 * q - 2, 1);
    let next = if q == 4 { date(year + 1, 1, 1) } else { date(year, 3 * q + 1, 1) };
    (first, next - Duration::days(1))
}

struct Visit {
    pid: u32,
    code: &'static str,
    from: NaiveDate,
    to: NaiveDate,
    physician: &'static str,
}

struct Case {
    pid: u32,
    id: &'static str,
    code: &'static str,
    begin: NaiveDate,
    kind: &'static str,
    hospital: &'static str,
    length: Option<i64>,
}

/// Quarterly outpatient claims; `(quarter, physician, code)`.
fn quarterly(pid: u32, year: i32, visits: &[(u32, &'static str, &'static str)]) -> Vec<Visit> {
    visits
        .iter()
        .map(|&(q, physician, code)| {
            let (from, to) = quarter(year, q);
            Visit {
                pid,
                code,
                from,
                to,
                physician,
            }
        })
        .collect()
}

fn case(pid: u32, id: &'static str, code: &'static str, begin: NaiveDate, hospital: &'static str, length: Option<i64>) -> Case {
    Case {
        pid,
        id,
        code,
        begin,
        kind: "primary",
        hospital,
        length,
    }
}

fn outpatient() -> Vec<Visit> {
    const P: &str = "G20.90";
    let mut v = Vec::new();
    // 1: only an unrelated outpatient diagnosis
    v.extend(quarterly(1, 2015, &[(1, "A01", "I10")]));
    v.extend(quarterly(
        2,
        2015,
        &[
            (1, "A01", P),
            (1, "A02", P),
            (1, "A03", P),
            (2, "A01", P),
            (2, "A02", P),
            (2, "A03", P),
            (3, "A01", P),
            (3, "A02", P),
            (3, "A03", P),
            (4, "A01", P),
            (4, "A02", P),
        ],
    ));
    // 3: the 2014 claim lies outside the restriction
    v.extend(quarterly(3, 2014, &[(4, "A04", P)]));
    v.extend(quarterly(3, 2015, &[(3, "A04", P), (4, "A04", P)]));
    v.extend(quarterly(
        4,
        2015,
        &[
            (1, "A01", P),
            (1, "A02", "G20.10"),
            (1, "A05", P),
            (2, "A01", P),
            (2, "A02", "G20.10"),
            (2, "A05", P),
            (3, "A01", P),
            (3, "A02", P),
            (3, "A05", "G20.10"),
            (4, "A01", P),
            (4, "A02", P),
            (4, "A05", P),
        ],
    ));
    v.extend(quarterly(
        6,
        2015,
        &[(2, "A01", P), (3, "A01", "G20.10"), (3, "A06", P), (4, "A06", "G20.10")],
    ));
    v.extend(quarterly(7, 2015, &[(1, "A01", P)]));
    v.push(Visit {
        pid: 7,
        code: "G20.00",
        from: date(2015, 9, 18),
        to: date(2015, 9, 18),
        physician: "A07",
    });
    v.extend(quarterly(
        8,
        2015,
        &[
            (1, "A01", P),
            (1, "A02", "G20.1"),
            (2, "A03", P),
            (2, "A04", "G20.1"),
            (3, "A05", P),
            (3, "A01", P),
            (4, "A02", "G20.1"),
            (4, "A03", P),
            (4, "A04", P),
        ],
    ));
    v.extend(quarterly(9, 2015, &[(1, "A01", P), (2, "A01", P), (3, "A02", P), (4, "A01", P), (4, "A02", P)]));
    v.extend(quarterly(
        10,
        2015,
        &[
            (1, "A01", P),
            (1, "A02", P),
            (2, "A01", P),
            (2, "A03", P),
            (3, "A01", P),
            (3, "A02", P),
            (4, "A01", P),
            (4, "A02", P),
            (4, "A03", P),
        ],
    ));
    v.extend(quarterly(
        11,
        2015,
        &[
            (1, "A01", P),
            (1, "A02", "G20.00"),
            (1, "A03", "G20.10"),
            (1, "A04", P),
            (2, "A01", P),
            (2, "A02", "G20.00"),
            (3, "A01", P),
            (3, "A03", P),
            (4, "A01", "G20.10"),
            (4, "A02", P),
            (4, "A04", P),
        ],
    ));
    // not in the cohort: one quarter only, 2014 only, other diagnoses
    v.extend(quarterly(12, 2015, &[(2, "A01", P)]));
    v.extend(quarterly(13, 2014, &[(1, "A01", P), (2, "A01", P), (3, "A01", P), (4, "A01", P)]));
    v.extend(quarterly(14, 2015, &[(1, "A01", "G35"), (2, "A01", "G35"), (3, "A01", "G35"), (4, "A01", "G35")]));
    v
}

fn inpatient() -> Vec<Case> {
    const P: &str = "G20.90";
    let mut c = vec![
        case(1, "C0101", P, date(2015, 7, 16), "H01", Some(6)),
        case(1, "C0102", "G20.00", date(2015, 12, 4), "H02", Some(4)),
        case(4, "C0401", P, date(2015, 5, 20), "H01", Some(4)),
        case(5, "C0501", "G20.10", date(2015, 2, 5), "H01", Some(3)),
        case(5, "C0502", "G20.10", date(2015, 2, 10), "H02", Some(5)),
        case(7, "C0701", P, date(2015, 2, 10), "H03", Some(7)),
        case(7, "C0702", P, date(2015, 9, 18), "H03", Some(3)),
        case(8, "C0801", "G20.10", date(2015, 3, 3), "H01", Some(20)),
        case(8, "C0802", "G20.20", date(2015, 10, 10), "H02", Some(13)),
        // a secondary diagnosis, dropped by the diagnosis kind filter
        Case {
            kind: "secondary",
            ..case(8, "C0803", P, date(2015, 10, 11), "H02", Some(2))
        },
        case(10, "C1001", P, date(2015, 6, 12), "H04", Some(4)),
        case(11, "C1101", "G20.10", date(2015, 8, 22), "H02", None),
        // not in the cohort
        case(14, "C1401", "G35", date(2015, 3, 1), "H01", Some(2)),
        case(14, "C1402", "G35", date(2015, 4, 2), "H01", Some(3)),
        case(15, "C1501", P, date(2015, 6, 1), "H01", Some(5)),
        case(16, "C1601", P, date(2016, 1, 5), "H01", Some(2)),
        case(16, "C1602", P, date(2016, 2, 7), "H01", Some(2)),
    ];
    for (id, day) in [("C1701", 3), ("C1702", 9)] {
        c.push(Case {
            kind: "secondary",
            ..case(17, id, P, date(2015, day, 1), "H05", Some(1))
        });
    }
    c
}

pub fn dataset() -> Json {
    json!({
        "name": "dataset",
        "entityLabel": "PID",
        "datesLabel": "date",
        "bucketCount": 4,
        "tables": [
            {"name": "outpatient", "columns": [
                {"name": "icd_code", "type": "STRING"},
                {"name": "validity", "type": "DATE_RANGE"},
                {"name": "physician_id", "type": "STRING"}
            ]},
            {"name": "inpatient", "columns": [
                {"name": "icd_code", "type": "STRING"},
                {"name": "case_begin", "type": "DATE"},
                {"name": "case_end", "type": "DATE"},
                {"name": "kind", "type": "STRING"},
                {"name": "case_id", "type": "STRING"},
                {"name": "hospital_id", "type": "STRING"},
                {"name": "length_of_stay", "type": "INTEGER"}
            ]}
        ]
    })
}

pub fn concept() -> Json {
    json!({
        "name": "icd",
        "label": "ICD",
        "description": "ICD-10 diagnoses",
        "connectors": [
            {
                "name": "outpatient",
                "label": "Outpatient",
                "table": "outpatient",
                "column": "outpatient.icd_code",
                "validityDates": [{"label": "Validity", "column": "outpatient.validity"}],
                "filters": [
                    {"type": "COUNT_QUARTERS", "name": "quarters", "label": "ICD code in at least n quarters"}
                ],
                "selects": [
                    {"type": "DISTINCT", "name": "icd_codes", "label": "Outpatient ICD-Code", "column": "outpatient.icd_code"},
                    {"type": "COUNT", "name": "visits", "label": "Number of physician visits"},
                    {"type": "COUNT_QUARTERS", "name": "quarters", "label": "Number of quarters"},
                    {"type": "COUNT", "name": "physicians", "label": "Number of physicians visited", "column": "outpatient.physician_id", "distinct": true}
                ]
            },
            {
                "name": "hospital_diagnoses",
                "label": "Hospital Diagnoses",
                "table": "inpatient",
                "column": "inpatient.icd_code",
                "validityDates": [
                    {"label": "Case begin", "column": "inpatient.case_begin"},
                    {"label": "Case end", "column": "inpatient.case_end"}
                ],
                "filters": [
                    {"type": "SELECT", "name": "diagnosis_kind", "label": "Diagnose kind", "column": "inpatient.kind",
                     "labels": {"primary": "Primary", "secondary": "Secondary", "initial": "Initial"}},
                    {"type": "COUNT", "name": "case_number", "label": "Case number", "column": "inpatient.case_id", "distinct": true}
                ],
                "selects": [
                    {"type": "DISTINCT", "name": "icd_codes", "label": "List of inpatient ICD-Codes", "column": "inpatient.icd_code"},
                    {"type": "COUNT", "name": "hospitals", "label": "Number of hospitals visited", "column": "inpatient.hospital_id", "distinct": true},
                    {"type": "SUM", "name": "length_of_stay", "label": "Length of hospital stays", "column": "inpatient.length_of_stay"}
                ]
            }
        ],
        "children": [{
            "name": "g00-g99",
            "label": "G00-G99",
            "description": "Diseases of the nervous system",
            "condition": {"type": "PREFIX_RANGE", "min": "G00", "max": "G99"},
            "children": [{
                "name": "g20-g26",
                "label": "G20-G26",
                "description": " Extrapiramidal and movement disorders",
                "condition": {"type": "PREFIX_RANGE", "min": "G20", "max": "G26"},
                "children": [{
                    "name": "g20",
                    "label": "G20",
                    "description": " Parkinson's disease",
                    "condition": {"type": "PREFIX", "prefix": "G20"},
                    "children": [
                        {"name": "g20_0", "label": "G20.0", "condition": {"type": "PREFIX", "prefix": "G200"},
                         "description": " Parkinson's disease with no or slight impairment"},
                        {"name": "g20_1", "label": "G20.1", "condition": {"type": "PREFIX", "prefix": "G201"},
                         "description": " Parkinson's disease with moderate to severe impairment ",
                         "children": [
                            {"name": "g20_10", "label": "G20.10", "condition": {"type": "PREFIX", "prefix": "G2010"},
                             "description": " Parkinson's disease with moderate to severe impairment without fluctuations"},
                            {"name": "g20_11", "label": "G20.11", "condition": {"type": "PREFIX", "prefix": "G2011"},
                             "description": " Parkinson's disease with moderate to severe impairment with fluctuations"}
                         ]},
                        {"name": "g20_2", "label": "G20.2", "condition": {"type": "PREFIX", "prefix": "G202"},
                         "description": " Parkinson's disease with severe impairment"},
                        {"name": "g20_9", "label": "G20.9", "condition": {"type": "PREFIX", "prefix": "G209"},
                         "description": " Parkinson's disease, unspecified"}
                    ]
                }]
            }]
        }]
    })
}

/// G20 in 2015: at least two quarters with an outpatient diagnosis, or at
/// least two inpatient cases with a primary diagnosis.
pub fn query() -> Json {
    json!({
        "type": "CONCEPT_QUERY",
        "root": {
            "type": "DATE_RESTRICTION",
            "dateRange": {"min": "2015-01-01", "max": "2015-12-31"},
            "child": {
                "type": "CONCEPT",
                "ids": ["dataset.icd.g00-g99.g20-g26.g20"],
                "tables": [
                    {
                        "id": "dataset.icd.outpatient",
                        "filters": [{"filter": "dataset.icd.outpatient.quarters", "value": {"min": 2}}],
                        "selects": [
                            "dataset.icd.outpatient.icd_codes",
                            "dataset.icd.outpatient.visits",
                            "dataset.icd.outpatient.quarters",
                            "dataset.icd.outpatient.physicians"
                        ]
                    },
                    {
                        "id": "dataset.icd.hospital_diagnoses",
                        "filters": [
                            {"filter": "dataset.icd.hospital_diagnoses.diagnosis_kind", "value": "primary"},
                            {"filter": "dataset.icd.hospital_diagnoses.case_number", "value": {"min": 2}}
                        ],
                        "selects": [
                            "dataset.icd.hospital_diagnoses.icd_codes",
                            "dataset.icd.hospital_diagnoses.hospitals",
                            "dataset.icd.hospital_diagnoses.length_of_stay"
                        ]
                    }
                ]
            }
        }
    })
}

fn outpatient_descriptor() -> Json {
    json!({
        "table": "outpatient",
        "dataset": "dataset.json",
        "source": "outpatient.csv",
        "importId": "outpatient_2014_2015",
        "entity": "PID",
        "dateFormats": ["%d.%m.%Y"],
        "columns": [
            {"column": "icd_code", "source": "ICD", "stripDots": true, "uppercase": true},
            {"column": "validity", "source": "valid_from", "sourceMax": "valid_to"},
            {"column": "physician_id", "source": "physician"}
        ]
    })
}

fn inpatient_descriptor() -> Json {
    json!({
        "table": "inpatient",
        "dataset": "dataset.json",
        "source": "inpatient.csv",
        "importId": "inpatient_2015_2016",
        "entity": "PID",
        "dateFormats": ["%d.%m.%Y"],
        "columns": [
            {"column": "icd_code", "source": "ICD", "stripDots": true, "uppercase": true},
            {"column": "case_begin", "source": "admission"},
            {"column": "case_end", "source": "discharge"},
            {"column": "kind", "source": "diagnosis_kind"},
            {"column": "case_id", "source": "case"},
            {"column": "hospital_id", "source": "hospital"},
            {"column": "length_of_stay", "source": "days"}
        ]
    })
}

pub fn outpatient_csv() -> String {
    let mut out = String::from("PID;ICD;valid_from;valid_to;physician\n");
    for v in outpatient() {
        writeln!(out, "{};{};{};{};{}", v.pid, v.code, german(v.from), german(v.to), v.physician).unwrap();
    }
    out
}

pub fn inpatient_csv() -> String {
    let mut out = String::from("PID;case;ICD;diagnosis_kind;admission;discharge;hospital;days\n");
    for c in inpatient() {
        let end = c.begin + Duration::days(c.length.unwrap_or(0));
        let days = c.length.map(|d| d.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{};{};{};{};{};{};{};{}",
            c.pid,
            c.id,
            c.code,
            c.kind,
            german(c.begin),
            german(end),
            c.hospital,
            days
        )
        .unwrap();
    }
    out
}

fn pretty(doc: &Json) -> String {
    let mut text = serde_json::to_string_pretty(doc).expect("fixture serializes");
    text.push('\n');
    text
}

/// Every generated file with its name.
pub fn files() -> Vec<(&'static str, String)> {
    vec![
        ("dataset.json", pretty(&dataset())),
        ("icd.concept.json", pretty(&concept())),
        ("query.json", pretty(&query())),
        ("outpatient.csv", outpatient_csv()),
        ("inpatient.csv", inpatient_csv()),
        ("outpatient.import.json", pretty(&outpatient_descriptor())),
        ("inpatient.import.json", pretty(&inpatient_descriptor())),
    ]
}

pub fn write(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, content) in files() {
        std::fs::write(dir.join(name), content)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Datelike;

    #[test]
    fn quarters_cover_the_year() {
        assert_eq!(quarter(2015, 1), (date(2015, 1, 1), date(2015, 3, 31)));
        assert_eq!(quarter(2015, 4), (date(2015, 10, 1), date(2015, 12, 31)));
        assert_eq!(quarter(2016, 1).1.day(), 31);
    }
}
