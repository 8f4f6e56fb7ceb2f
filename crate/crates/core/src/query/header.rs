use std::collections::HashMap;

use crate::registry::Registry;

use super::ast::Query;

/// Column headers of a result: entity, optional secondary id, dates, then
/// one per requested select in depth-first order of concept elements, table
/// listing order and select listing order. Labels occurring more than once
/// are prefixed with their connector's label.
pub fn result_header(query: &Query, registry: &Registry) -> Vec<String> {
    let dataset = registry.dataset();
    let mut header = vec![dataset.entity_label.clone()];
    if let Some(id) = &query.secondary_id {
        let label = dataset
            .secondary_ids
            .iter()
            .find(|s| &s.name == id)
            .map_or(id.as_str(), |s| s.label.as_str());
        header.push(label.to_string());
    }
    header.push(dataset.dates_label.clone());

    let mut selects: Vec<(String, &str)> = Vec::new();
    for concept in query.root.concepts() {
        for table in &concept.tables {
            let connector = registry.connector(table.connector);
            for s in &table.selects {
                selects.push((connector.selects[*s].label.clone(), connector.label.as_str()));
            }
        }
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (label, _) in &selects {
        *counts.entry(label.as_str()).or_default() += 1;
    }
    let mut labels: Vec<String> = selects
        .iter()
        .map(|(label, connector)| {
            if counts[label.as_str()] > 1 {
                format!("{connector} {label}")
            } else {
                label.clone()
            }
        })
        .collect();
    // The same connector can be queried under several concept elements.
    let mut seen: HashMap<String, usize> = HashMap::new();
    for label in &mut labels {
        let n = seen.entry(label.clone()).or_default();
        *n += 1;
        if *n > 1 {
            label.push_str(&format!(" ({n})"));
        }
    }
    header.extend(labels);
    header
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::ast::tests::{code3, registry};
    use crate::query::parse_query;
    use serde_json::json;

    #[test]
    fn code3_header() {
        let r = registry();
        let q = parse_query(&code3(), &r).unwrap();
        assert_eq!(result_header(&q, &r), ["result", "dates", "Number of Cases"]);
    }

    #[test]
    fn no_selects() {
        let r = registry();
        let mut doc = code3();
        doc["root"]["tables"][0]["selects"] = json!([]);
        let q = parse_query(&doc, &r).unwrap();
        assert_eq!(result_header(&q, &r), ["result", "dates"]);
    }

    #[test]
    fn duplicates_are_prefixed() {
        let r = registry();
        let concept = code3()["root"].clone();
        let doc = json!({"type": "CONCEPT_QUERY", "root": {"type": "OR", "children": [concept, concept]}});
        let q = parse_query(&doc, &r).unwrap();
        assert_eq!(
            result_header(&q, &r),
            [
                "result",
                "dates",
                "Hospital Diagnoses Number of Cases",
                "Hospital Diagnoses Number of Cases (2)"
            ]
        );
    }
}
