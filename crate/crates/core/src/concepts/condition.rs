use serde_json::{json, Value as Json};

use crate::error::{Error, Result};

/// Access to the other columns of the event being classified.
pub trait AuxValues {
    fn value(&self, column: &str) -> Option<String>;
}

/// No auxiliary columns available.
pub struct NoAux;

impl AuxValues for NoAux {
    fn value(&self, _column: &str) -> Option<String> {
        None
    }
}

impl<F: Fn(&str) -> Option<String>> AuxValues for F {
    fn value(&self, column: &str) -> Option<String> {
        self(column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Prefix(Vec<String>),
    /// Compares the first `min.len()` bytes of the code against `min..=max`.
    PrefixRange {
        min: String,
        max: String,
    },
    Equal(Vec<String>),
    ColumnEqual {
        column: String,
        values: Vec<String>,
    },
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Not(Box<Condition>),
}

fn common_prefix<'a>(mut items: impl Iterator<Item = &'a str>) -> String {
    let Some(first) = items.next() else {
        return String::new();
    };
    let mut len = first.len();
    for item in items {
        len = first
            .bytes()
            .zip(item.bytes())
            .take(len)
            .take_while(|(a, b)| a == b)
            .count();
    }
    while !first.is_char_boundary(len) {
        len -= 1;
    }
    first[..len].to_string()
}

impl Condition {
    pub fn matches(&self, code: &str, aux: &dyn AuxValues) -> bool {
        match self {
            Condition::Prefix(prefixes) => prefixes.iter().any(|p| code.starts_with(p.as_str())),
            Condition::PrefixRange { min, max } => {
                let k = min.len();
                code.len() >= k && {
                    let head = &code.as_bytes()[..k];
                    min.as_bytes() <= head && head <= max.as_bytes()
                }
            }
            Condition::Equal(values) => values.iter().any(|v| v == code),
            Condition::ColumnEqual { column, values } => aux
                .value(column)
                .is_some_and(|v| values.iter().any(|x| *x == v)),
            Condition::And(conditions) => conditions.iter().all(|c| c.matches(code, aux)),
            Condition::Or(conditions) => conditions.iter().any(|c| c.matches(code, aux)),
            Condition::Not(condition) => !condition.matches(code, aux),
        }
    }

    /// A string every matching code starts with (possibly empty).
    pub fn required_prefix(&self) -> String {
        match self {
            Condition::Prefix(prefixes) => common_prefix(prefixes.iter().map(String::as_str)),
            Condition::PrefixRange { min, max } => common_prefix([min.as_str(), max.as_str()].into_iter()),
            Condition::Equal(values) => common_prefix(values.iter().map(String::as_str)),
            Condition::ColumnEqual { .. } | Condition::Not(_) => String::new(),
            Condition::And(conditions) => conditions
                .iter()
                .map(Condition::required_prefix)
                .max_by_key(String::len)
                .unwrap_or_default(),
            Condition::Or(conditions) => {
                let prefixes: Vec<String> = conditions.iter().map(Condition::required_prefix).collect();
                common_prefix(prefixes.iter().map(String::as_str))
            }
        }
    }

    /// Columns referenced by COLUMN_EQUAL anywhere in the condition.
    pub fn aux_columns(&self, out: &mut Vec<String>) {
        match self {
            Condition::ColumnEqual { column, .. } => {
                if !out.contains(column) {
                    out.push(column.clone());
                }
            }
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.aux_columns(out)),
            Condition::Not(c) => c.aux_columns(out),
            _ => {}
        }
    }

    pub fn parse(doc: &Json, path: &str) -> Result<Condition> {
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::parse(path, "condition must be an object"))?;
        let kind = obj
            .get("type")
            .and_then(Json::as_str)
            .ok_or_else(|| Error::parse(path, "condition without \"type\""))?;
        let strings = |key: &str| -> Result<Vec<String>> {
            match obj.get(key) {
                Some(Json::String(s)) => Ok(vec![s.clone()]),
                Some(Json::Array(items)) if !items.is_empty() => items
                    .iter()
                    .map(|i| {
                        i.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| Error::parse(format!("{path}.{key}"), "expected strings"))
                    })
                    .collect(),
                _ => Err(Error::parse(
                    format!("{path}.{key}"),
                    "expected a string or a non-empty list of strings",
                )),
            }
        };
        let string = |key: &str| -> Result<String> {
            obj.get(key)
                .and_then(Json::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::parse(format!("{path}.{key}"), "expected a string"))
        };
        let children = |key: &str| -> Result<Vec<Condition>> {
            let items = obj
                .get(key)
                .and_then(Json::as_array)
                .filter(|a| !a.is_empty())
                .ok_or_else(|| Error::parse(format!("{path}.{key}"), "expected a non-empty list"))?;
            items
                .iter()
                .enumerate()
                .map(|(i, c)| Condition::parse(c, &format!("{path}.{key}[{i}]")))
                .collect()
        };
        Ok(match kind {
            "PREFIX" | "PREFIX_LIST" => Condition::Prefix(if obj.contains_key("prefixes") {
                strings("prefixes")?
            } else {
                strings("prefix")?
            }),
            "PREFIX_RANGE" => {
                let min = string("min")?;
                let max = string("max")?;
                if min.len() != max.len() {
                    return Err(Error::parse(
                        path,
                        format!("malformed PREFIX_RANGE: '{min}' and '{max}' differ in length"),
                    ));
                }
                if min > max {
                    return Err(Error::parse(
                        path,
                        format!("malformed PREFIX_RANGE: '{min}' sorts after '{max}'"),
                    ));
                }
                Condition::PrefixRange { min, max }
            }
            "EQUAL" => Condition::Equal(strings("values")?),
            "COLUMN_EQUAL" => {
                let column = string("column")?;
                let column = column.rsplit('.').next().unwrap_or_default().to_string();
                Condition::ColumnEqual {
                    column,
                    values: strings("values")?,
                }
            }
            "AND" => Condition::And(children("conditions")?),
            "OR" => Condition::Or(children("conditions")?),
            "NOT" => Condition::Not(Box::new(Condition::parse(
                obj.get("condition")
                    .ok_or_else(|| Error::parse(format!("{path}.condition"), "missing"))?,
                &format!("{path}.condition"),
            )?)),
            other => {
                return Err(Error::parse(
                    format!("{path}.type"),
                    format!("unknown condition type '{other}'"),
                ))
            }
        })
    }

    pub fn to_json(&self) -> Json {
        match self {
            Condition::Prefix(p) if p.len() == 1 => json!({"type": "PREFIX", "prefix": p[0]}),
            Condition::Prefix(p) => json!({"type": "PREFIX", "prefix": p}),
            Condition::PrefixRange { min, max } => {
                json!({"type": "PREFIX_RANGE", "min": min, "max": max})
            }
            Condition::Equal(v) => json!({"type": "EQUAL", "values": v}),
            Condition::ColumnEqual { column, values } => {
                json!({"type": "COLUMN_EQUAL", "column": column, "values": values})
            }
            Condition::And(cs) => {
                json!({"type": "AND", "conditions": cs.iter().map(Condition::to_json).collect::<Vec<_>>()})
            }
            Condition::Or(cs) => {
                json!({"type": "OR", "conditions": cs.iter().map(Condition::to_json).collect::<Vec<_>>()})
            }
            Condition::Not(c) => json!({"type": "NOT", "condition": c.to_json()}),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cond(doc: Json) -> Condition {
        Condition::parse(&doc, "c").unwrap()
    }

    #[test]
    fn prefix_range_semantics() {
        let c = cond(json!({"type": "PREFIX_RANGE", "min": "G20", "max": "G26"}));
        assert!(c.matches("G20", &NoAux));
        assert!(c.matches("G2011", &NoAux));
        assert!(c.matches("G25", &NoAux));
        assert!(c.matches("G269", &NoAux));
        assert!(!c.matches("G27", &NoAux));
        assert!(!c.matches("G2", &NoAux));
        assert!(!c.matches("A00", &NoAux));
        assert_eq!(c.required_prefix(), "G2");
    }

    #[test]
    fn boolean_and_column_conditions() {
        let c = cond(json!({"type": "AND", "conditions": [
            {"type": "PREFIX", "prefix": "G20"},
            {"type": "NOT", "condition": {"type": "COLUMN_EQUAL", "column": "t.kind", "values": ["secondary"]}}
        ]}));
        let primary = |col: &str| (col == "kind").then(|| "primary".to_string());
        let secondary = |col: &str| (col == "kind").then(|| "secondary".to_string());
        assert!(c.matches("G2011", &primary));
        assert!(!c.matches("G2011", &secondary));
        assert_eq!(c.required_prefix(), "G20");
        let mut cols = Vec::new();
        c.aux_columns(&mut cols);
        assert_eq!(cols, vec!["kind"]);
        assert_eq!(Condition::parse(&c.to_json(), "c").unwrap(), c);
    }

    #[test]
    fn parse_errors_carry_paths() {
        let err = Condition::parse(&json!({"type": "FUZZY"}), "children[0].condition").unwrap_err();
        assert!(err.to_string().contains("children[0].condition.type"), "{err}");
        let err = Condition::parse(
            &json!({"type": "PREFIX_RANGE", "min": "G26", "max": "G20"}),
            "x",
        )
        .unwrap_err();
        assert!(err.to_string().contains("malformed PREFIX_RANGE"));
        assert!(Condition::parse(&json!({"type": "PREFIX_RANGE", "min": "G2", "max": "G26"}), "x").is_err());
    }

    #[test]
    fn or_prefix_is_common_prefix() {
        let c = cond(json!({"type": "OR", "conditions": [
            {"type": "PREFIX", "prefix": "G201"}, {"type": "EQUAL", "values": ["G2090", "G2091"]}
        ]}));
        assert_eq!(c.required_prefix(), "G20");
    }
}
