use std::path::Path;
use std::process::Command;

use cohort_core::storage::container::read_bucket;
use cohort_core::storage::{ColumnDef, EventRow, TableSchema};
use cohort_core::synth::rows_to_text;
use cohort_core::types::{day_from_ymd, ColumnType, DateRange, Value};
use cohort_ingest::{prepare, write_containers, ImportDescriptor, IngestError, OnError, Options, ResolvedDescriptor};
use proptest::prelude::*;
use serde_json::json;

fn dataset(buckets: u32) -> serde_json::Value {
    json!({
        "name": "demo",
        "bucketCount": buckets,
        "tables": [{"name": "diagnoses", "columns": [
            {"name": "icd_code", "type": "STRING"},
            {"name": "validity", "type": "DATE_RANGE"},
            {"name": "visit", "type": "DATE"},
            {"name": "amount", "type": "MONEY"},
            {"name": "weight", "type": "DECIMAL"},
            {"name": "units", "type": "INTEGER"},
            {"name": "inpatient", "type": "BOOLEAN"}
        ]}]
    })
}

fn descriptor() -> serde_json::Value {
    json!({
        "table": "diagnoses",
        "dataset": "dataset.json",
        "entity": "PID",
        "decimalComma": true,
        "dateFormats": ["%d.%m.%Y", "%Y-%m-%d"],
        "columns": [
            {"column": "icd_code", "source": "ICD", "stripDots": true, "uppercase": true},
            {"column": "validity", "source": "from", "sourceMax": "to"},
            {"column": "visit", "source": "visit"},
            {"column": "amount", "source": "amount"},
            {"column": "weight", "source": "weight"},
            {"column": "units", "source": "units"},
            {"column": "inpatient", "source": "inpatient"}
        ]
    })
}

const SAMPLE: &str = "\
PID;ICD;from;to;visit;amount;weight;units;inpatient
1;G20.11;01.01.2015;31.03.2015;16.07.2015;1.234,50;0,5;2;ja
1;g20.90;01.04.2015;;2015-12-04;;;;nein
2;F32;;30.06.2015;;3,00;1;1;
";

fn write_setup(dir: &Path, buckets: u32, input: &str) {
    std::fs::write(dir.join("dataset.json"), dataset(buckets).to_string()).unwrap();
    std::fs::write(dir.join("import.json"), descriptor().to_string()).unwrap();
    std::fs::write(dir.join("diagnoses.csv"), input).unwrap();
}

fn resolved(dir: &Path) -> ResolvedDescriptor {
    ImportDescriptor::load(&dir.join("import.json"), None).unwrap()
}

#[test]
fn three_row_sample_gives_one_container() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path(), 1, SAMPLE);
    let mut prepared = prepare(&resolved(dir.path()), SAMPLE.as_bytes(), "diagnoses", &Options::default()).unwrap();
    write_containers(&mut prepared, &dir.path().join("out")).unwrap();
    let report = &prepared.report;
    assert_eq!(report.containers.len(), 1);
    assert!(report.to_string().contains("3 rows read, 3 loaded, 0 skipped"), "{report}");
    assert!(report.to_string().contains("0 errors"));
    assert_eq!(report.delimiter, ";");

    let bucket = read_bucket(&std::fs::read(&report.containers[0]).unwrap()).unwrap();
    assert_eq!(bucket.row_count(), 3);
    let first = bucket.row(0).unwrap();
    assert_eq!(first[0], Some(Value::String("G2011".into())));
    assert_eq!(
        first[1],
        Some(Value::DateRange(DateRange::closed(day_from_ymd(2015, 1, 1), day_from_ymd(2015, 3, 31))))
    );
    assert_eq!(first[3], Some(Value::Money(123_450)));
    assert_eq!(first[4], Some(Value::Decimal(5_000)));
    assert_eq!(first[6], Some(Value::Boolean(true)));
    let second = bucket.row(1).unwrap();
    assert_eq!(second[0], Some(Value::String("G2090".into())));
    assert_eq!(second[1], Some(Value::DateRange(DateRange::new(Some(day_from_ymd(2015, 4, 1)), None).unwrap())));
    assert_eq!(second[2], Some(Value::Date(day_from_ymd(2015, 12, 4))));
    assert_eq!(second[3], None);
}

#[test]
fn malformed_date_is_skipped_or_fails() {
    let dir = tempfile::tempdir().unwrap();
    let input = SAMPLE.replace("16.07.2015", "2015/07/16");
    write_setup(dir.path(), 1, &input);
    let r = resolved(dir.path());
    let skip = Options {
        on_error: OnError::Skip,
        ..Options::default()
    };
    let prepared = prepare(&r, input.as_bytes(), "diagnoses", &skip).unwrap();
    assert_eq!(prepared.buckets.len(), 1);
    assert!(prepared.report.to_string().contains("1 skipped"));
    assert_eq!(prepared.report.errors[0].line, 2);
    assert_eq!(prepared.report.errors[0].column.as_deref(), Some("visit"));

    match prepare(&r, input.as_bytes(), "diagnoses", &Options::default()) {
        Err(IngestError::Rows(errors)) => assert_eq!(errors.len(), 1),
        other => panic!("expected row errors, got {:?}", other.map(|p| p.report)),
    }
}

#[test]
fn validation_names_unknown_headers_and_previews_normalized_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path(), 4, SAMPLE);
    let r = resolved(dir.path());
    let report = prepare(&r, SAMPLE.as_bytes(), "diagnoses", &Options::default()).unwrap().report;
    assert_eq!(report.preview[1][1], "G2011");
    assert!(report.to_string().contains("G2011"));

    let renamed = SAMPLE.replacen("ICD", "DIAG", 1);
    match prepare(&r, renamed.as_bytes(), "diagnoses", &Options::default()) {
        Err(IngestError::Invalid(problems)) => assert!(problems[0].contains("'ICD'"), "{problems:?}"),
        _ => panic!("expected a header error"),
    }
}

#[test]
fn descriptor_must_map_every_column_once() {
    let mut d = descriptor();
    d["columns"].as_array_mut().unwrap().pop();
    let descriptor = ImportDescriptor::from_json(&d.to_string()).unwrap();
    let config = cohort_core::registry::DatasetConfig::from_json(&dataset(1).to_string()).unwrap();
    match descriptor.resolve(config, Default::default()) {
        Err(IngestError::Invalid(p)) => assert!(p[0].contains("'inpatient' is mapped 0 times"), "{p:?}"),
        _ => panic!("expected a mapping error"),
    }
}

#[test]
fn delimiter_detection() {
    assert_eq!(cohort_ingest::detect_delimiter(b"a,b,c\n1,2,3"), b',');
    assert_eq!(cohort_ingest::detect_delimiter(b"a\tb\n"), b'\t');
    assert_eq!(cohort_ingest::detect_delimiter(b"a;b,c;d\n"), b';');
    assert_eq!(cohort_ingest::detect_delimiter(b"single\n"), b';');
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path(), 3, SAMPLE);
    let r = resolved(dir.path());
    let mut a = prepare(&r, SAMPLE.as_bytes(), "x", &Options::default()).unwrap();
    let mut b = prepare(&r, SAMPLE.as_bytes(), "x", &Options::default()).unwrap();
    write_containers(&mut a, &dir.path().join("a")).unwrap();
    write_containers(&mut b, &dir.path().join("b")).unwrap();
    assert_eq!(a.report.containers.len(), b.report.containers.len());
    for (x, y) in a.report.containers.iter().zip(&b.report.containers) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ingest"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_setup(dir.path(), 2, SAMPLE);
    let descriptor = dir.path().join("import.json");
    let input = dir.path().join("diagnoses.csv");

    let ok = bin()
        .args(["preprocess", "--descriptor"])
        .arg(&descriptor)
        .arg("--input")
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("3 rows read"));

    let valid = bin().args(["validate", "--descriptor"]).arg(&descriptor).arg("--input").arg(&input).output().unwrap();
    assert_eq!(valid.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&valid.stdout).contains("0 errors"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, SAMPLE.replace("1;1;", "x;1;")).unwrap();
    let invalid = bin().args(["validate", "--descriptor"]).arg(&descriptor).arg("--input").arg(&bad).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&invalid.stdout).contains("1 errors"));

    let skipped = bin()
        .args(["preprocess", "--on-error", "skip", "--descriptor"])
        .arg(&descriptor)
        .arg("--input")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert_eq!(skipped.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&skipped.stdout).contains("1 skipped"));

    let missing = bin()
        .args(["validate", "--descriptor"])
        .arg(&descriptor)
        .arg("--input")
        .arg(dir.path().join("nope.csv"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

fn arb_row() -> impl Strategy<Value = EventRow> {
    (
        0u32..12,
        proptest::option::of("[A-Z][0-9]{2,4}"),
        proptest::option::of((15_000i32..18_000, 0i32..200, 0u8..4)),
        proptest::option::of(-100_000i64..100_000),
        proptest::option::of(any::<bool>()),
    )
        .prop_map(|(entity, code, range, money, flag)| {
            let range = range.map(|(lo, len, open)| match open {
                0 => DateRange::new(None, Some(lo)).unwrap(),
                1 => DateRange::new(Some(lo), None).unwrap(),
                _ => DateRange::closed(lo, lo + len),
            });
            EventRow::new(
                format!("e{entity}"),
                vec![
                    code.map(Value::String),
                    range.map(Value::DateRange),
                    money.map(Value::Money),
                    flag.map(Value::Boolean),
                ],
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocess_then_decode_reproduces_rows(rows in proptest::collection::vec(arb_row(), 0..60), buckets in 1u32..5) {
        let schema = TableSchema::new("t", vec![
            ColumnDef::new("code", ColumnType::String),
            ColumnDef::new("validity", ColumnType::DateRange),
            ColumnDef::new("amount", ColumnType::Money),
            ColumnDef::new("flag", ColumnType::Boolean),
        ]).unwrap();
        let text = rows_to_text(&rows, &schema, "pid", ',');
        let config = cohort_core::registry::DatasetConfig::from_json(
            &json!({"name": "d", "bucketCount": buckets, "tables": [schema]}).to_string()).unwrap();
        let columns: Vec<serde_json::Value> =
            ["code", "validity", "amount", "flag"].iter().map(|c| json!({"column": c, "source": c})).collect();
        let descriptor = ImportDescriptor::from_json(&json!({
            "table": "t", "dataset": "unused", "entity": "pid", "columns": columns
        }).to_string()).unwrap();
        let resolved = descriptor.resolve(config, Default::default()).unwrap();
        let prepared = prepare(&resolved, text.as_bytes(), "t", &Options { no_gzip: true, ..Options::default() }).unwrap();
        prop_assert_eq!(prepared.report.rows_loaded as usize, rows.len());
        for bucket in &prepared.buckets {
            let copy = read_bucket(&cohort_core::storage::container::write_bucket(bucket)).unwrap();
            for span in copy.entities() {
                let decoded: Vec<Vec<Option<Value>>> = span.rows().map(|r| copy.row(r).unwrap()).collect();
                let expected: Vec<Vec<Option<Value>>> =
                    rows.iter().filter(|r| r.entity == span.entity).map(|r| r.values.clone()).collect();
                prop_assert_eq!(decoded, expected);
            }
        }
    }
}
