use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use cohort_core::concepts::ConceptTree;
use cohort_core::engine::{evaluate_all, plan, DataStore, ResultLine, SavedTable};
use cohort_core::query::parse_query;
use cohort_core::registry::Registry;
use cohort_testkit::gen::{self, QueryGen};
use cohort_testkit::oracle::naive_resolve;
use cohort_testkit::{run_engine, RawData};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

struct Fixture {
    data: RawData,
    registry: Registry,
    store: DataStore,
    saved: HashMap<String, SavedTable>,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let data = gen::random_dataset(&mut rng, 120, 3000);
        let registry = gen::registry(&data);
        let store = gen::store(&data, &registry);
        let saved = gen::saved_tables(&mut rng, &data, 2);
        Fixture {
            data,
            registry,
            store,
            saved,
        }
    })
}

fn query_gen(f: &Fixture) -> QueryGen<'_> {
    let mut ids: Vec<String> = f.saved.keys().cloned().collect();
    ids.sort();
    QueryGen::new(&f.data, ids)
}

fn node(f: &Fixture, seed: u64) -> Json {
    query_gen(f).query(&mut ChaCha8Rng::seed_from_u64(seed))["root"].clone()
}

fn run(f: &Fixture, root: Json) -> Vec<ResultLine> {
    run_engine(&f.registry, &f.store, &json!({"type": "CONCEPT_QUERY", "root": root}), &f.saved, true).unwrap()
}

fn entities(lines: &[ResultLine]) -> BTreeSet<String> {
    lines.iter().map(|l| l.entity.clone()).collect()
}

/// Removes or replaces a random member somewhere in the document.
fn mutate(doc: &mut Json, rng: &mut ChaCha8Rng) {
    match doc {
        Json::Object(map) if !map.is_empty() => {
            let keys: Vec<String> = map.keys().cloned().collect();
            let key = &keys[rng.gen_range(0..keys.len())];
            match rng.gen_range(0..4) {
                0 => {
                    map.remove(key);
                }
                1 => {
                    map.insert(key.clone(), [json!(null), json!(3), json!("x"), json!([]), json!({"min": 5, "max": 1})][rng.gen_range(0..5)].clone());
                }
                _ => mutate(map.get_mut(key).unwrap(), rng),
            }
        }
        Json::Array(items) if !items.is_empty() => {
            let i = rng.gen_range(0..items.len());
            if rng.gen_bool(0.3) {
                items.remove(i);
            } else {
                mutate(&mut items[i], rng);
            }
        }
        Json::String(s) => s.push('x'),
        _ => {}
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn query_documents_round_trip(seed in any::<u64>()) {
        let f = fixture();
        let doc = query_gen(f).query(&mut ChaCha8Rng::seed_from_u64(seed));
        let parsed = parse_query(&doc, &f.registry).unwrap();
        let again = parse_query(&parsed.to_document(&f.registry), &f.registry).unwrap();
        prop_assert_eq!(parsed, again);
    }

    #[test]
    fn accepted_documents_never_fail_downstream(seed in any::<u64>()) {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut doc = query_gen(f).query(&mut rng);
        for _ in 0..rng.gen_range(1..3) {
            mutate(&mut doc, &mut rng);
        }
        if let Ok(query) = parse_query(&doc, &f.registry) {
            // Saved-query references are resolved against finished executions
            // at submission time, not by the parser.
            if query.root.saved_queries().iter().any(|id| !f.saved.contains_key(*id)) {
                return Ok(());
            }
            let saved = f.saved.iter().map(|(k, v)| (k.clone(), std::sync::Arc::new(v.clone()))).collect();
            let plan = plan(&query, &f.registry, &saved).unwrap();
            evaluate_all(&plan, &f.store, true);
        }
    }

    #[test]
    fn or_branch_never_removes_and_branch_never_adds(a in any::<u64>(), b in any::<u64>()) {
        let f = fixture();
        let (x, y) = (node(f, a), node(f, b));
        let base = entities(&run(f, x.clone()));
        let wider = entities(&run(f, json!({"type": "OR", "children": [x.clone(), y.clone()]})));
        let narrower = entities(&run(f, json!({"type": "AND", "children": [x, y]})));
        prop_assert!(base.is_subset(&wider));
        prop_assert!(narrower.is_subset(&base));
    }

    #[test]
    fn de_morgan_on_entity_sets(a in any::<u64>(), b in any::<u64>()) {
        let f = fixture();
        let (x, y) = (node(f, a), node(f, b));
        let not = |n: &Json| json!({"type": "NEGATION", "child": n});
        let left = run(f, not(&json!({"type": "AND", "children": [x.clone(), y.clone()]})));
        let right = run(f, json!({"type": "OR", "children": [not(&x), not(&y)]}));
        prop_assert_eq!(entities(&left), entities(&right));
    }

    #[test]
    fn skipping_imports_never_changes_results(seed in any::<u64>()) {
        let f = fixture();
        let doc = query_gen(f).query(&mut ChaCha8Rng::seed_from_u64(seed));
        let with = run_engine(&f.registry, &f.store, &doc, &f.saved, true).unwrap();
        let without = run_engine(&f.registry, &f.store, &doc, &f.saved, false).unwrap();
        prop_assert_eq!(with, without);
    }

    #[test]
    fn bucket_count_does_not_change_results(seed in any::<u64>(), buckets in 1u32..12) {
        let f = fixture();
        let doc = query_gen(f).query(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut data = f.data.clone();
        data.config.bucket_count = buckets;
        let registry = gen::registry(&data);
        let store = gen::store(&data, &registry);
        let expected = run_engine(&f.registry, &f.store, &doc, &f.saved, true).unwrap();
        prop_assert_eq!(run_engine(&registry, &store, &doc, &f.saved, true).unwrap(), expected);
    }

    #[test]
    fn trie_resolution_equals_naive_descent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = gen::random_icd_tree(&mut rng);
        check_codes(&doc, &mut rng, 500);
    }
}

fn random_code(rng: &mut ChaCha8Rng) -> String {
    let letter = ["A", "B", "G", "Z", ""][rng.gen_range(0..5)];
    let digits = rng.gen_range(0..5);
    let mut code = letter.to_string();
    for _ in 0..digits {
        code.push(char::from(b'0' + rng.gen_range(0..10u8)));
    }
    code
}

fn check_codes(doc: &Json, rng: &mut ChaCha8Rng, count: usize) {
    let f = fixture();
    let tree = ConceptTree::parse(doc, gen::DATASET, &f.data.config.tables).unwrap();
    for _ in 0..count {
        let code = random_code(rng);
        let kind = ["primary", "secondary"][rng.gen_range(0..2)].to_string();
        let aux = |c: &str| (c == "kind").then(|| kind.clone());
        let expected = naive_resolve(doc, &code, &aux).map(|p| format!("{}.icd.{p}", gen::DATASET));
        let resolved = tree.resolve_code(&code, &aux).map(|n| tree.node_id_string(n));
        assert_eq!(resolved, expected, "code {code} kind {kind}");
        let cold = tree.resolve_code_cold(&code, &aux).map(|n| tree.node_id_string(n));
        assert_eq!(cold, expected, "cold resolution of {code}");
    }
}

#[test]
fn trie_resolution_equals_naive_descent_on_many_codes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let doc = gen::random_icd_tree(&mut rng);
    check_codes(&doc, &mut rng, 100_000);
}
