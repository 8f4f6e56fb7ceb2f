//! Deterministic claims-like synthetic data for benchmarks and tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::storage::{ColumnDef, EventRow, TableSchema};
use crate::types::{day_from_ymd, ColumnType, DateRange, Value};

#[derive(Debug, Clone, Copy)]
pub struct ClaimsConfig {
    pub entities: usize,
    pub events: usize,
    pub seed: u64,
}

pub fn claims_schema() -> TableSchema {
    TableSchema::new(
        "claims",
        vec![
            ColumnDef::new("icd_code", ColumnType::String),
            ColumnDef::new("validity", ColumnType::DateRange),
            ColumnDef::new("treatment_date", ColumnType::Date),
            ColumnDef::new("physician_id", ColumnType::String),
            ColumnDef::new("amount", ColumnType::Money),
            ColumnDef::new("kind", ColumnType::String),
            ColumnDef::new("units", ColumnType::Integer),
            ColumnDef::new("inpatient", ColumnType::Boolean),
        ],
    )
    .expect("static schema is valid")
}

fn icd_codes(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut codes = Vec::new();
    for letter in ['E', 'F', 'G', 'I', 'J', 'K', 'M'] {
        for group in 0..100 {
            if rng.gen_bool(0.35) {
                codes.push(format!("{letter}{group:02}"));
                for sub in 0..rng.gen_range(0..6) {
                    codes.push(format!("{letter}{group:02}{sub}"));
                    if rng.gen_bool(0.3) {
                        codes.push(format!("{letter}{group:02}{sub}{}", rng.gen_range(0..10)));
                    }
                }
            }
        }
    }
    codes
}

/// Rows grouped by entity, events spread over 2013 to 2018. Code frequencies
/// are skewed as in real diagnosis data.
pub fn generate_claims(config: ClaimsConfig) -> Vec<EventRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let codes = icd_codes(&mut rng);
    let physicians: Vec<String> = (0..4000).map(|i| format!("LANR{:07}", 1_000_000 + i * 37)).collect();
    let kinds = ["primary", "secondary", "initial"];
    let start = day_from_ymd(2013, 1, 1);
    let quarters: Vec<DateRange> = (2013..=2018)
        .flat_map(|y| {
            [(1, 3, 31), (4, 6, 30), (7, 9, 30), (10, 12, 31)]
                .map(move |(m0, m1, d1)| DateRange::closed(day_from_ymd(y, m0, 1), day_from_ymd(y, m1, d1)))
        })
        .collect();

    let entities = config.entities.max(1);
    let mut rows = Vec::with_capacity(config.events);
    for e in 0..entities {
        let remaining = config.events - rows.len();
        let share = if e + 1 == entities {
            remaining
        } else {
            let mean = remaining / (entities - e);
            rng.gen_range(0..=(2 * mean).min(remaining))
        };
        let entity = format!("{}", 100_000 + e * 7);
        let home: Vec<&String> = physicians.choose_multiple(&mut rng, 3).collect();
        let favourite: Vec<&String> = (0..4)
            .map(|_| &codes[(rng.gen::<f64>().powi(3) * codes.len() as f64) as usize])
            .collect();
        for _ in 0..share {
            let code = if rng.gen_bool(0.7) {
                favourite.choose(&mut rng).unwrap().to_string()
            } else {
                codes[(rng.gen::<f64>().powi(2) * codes.len() as f64) as usize].clone()
            };
            let q = quarters[rng.gen_range(0..quarters.len())];
            let treatment = q.lo() + rng.gen_range(0..=(q.hi() - q.lo()));
            let physician = if rng.gen_bool(0.85) {
                home.choose(&mut rng).unwrap().to_string()
            } else {
                physicians.choose(&mut rng).unwrap().clone()
            };
            rows.push(EventRow::new(
                entity.clone(),
                vec![
                    Some(Value::String(code)),
                    Some(Value::DateRange(q)),
                    Some(Value::Date(treatment.max(start))),
                    Some(Value::String(physician)),
                    Some(Value::Money(rng.gen_range(500..25_000))),
                    rng.gen_bool(0.95).then(|| Value::String(kinds[rng.gen_range(0..3)].into())),
                    Some(Value::Integer(rng.gen_range(1..5))),
                    Some(Value::Boolean(rng.gen_bool(0.1))),
                ],
            ));
        }
    }
    rows
}

/// Delimiter-separated text of rows: a header, then one line per row with
/// the entity first. Ranges are written as `min/max`, nulls as empty cells.
pub fn rows_to_text(rows: &[EventRow], schema: &TableSchema, entity_column: &str, separator: char) -> String {
    let mut out = String::new();
    out.push_str(entity_column);
    for c in &schema.columns {
        out.push(separator);
        out.push_str(&c.name);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.entity);
        for v in &row.values {
            out.push(separator);
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_sized() {
        let config = ClaimsConfig {
            entities: 50,
            events: 2000,
            seed: 3,
        };
        let a = generate_claims(config);
        assert_eq!(a.len(), 2000);
        assert_eq!(a, generate_claims(config));
        let text = rows_to_text(&a[..2], &claims_schema(), "pid", ';');
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("pid;icd_code;validity;"));
    }
}
