use cohort_testkit::check_equivalence;

#[test]
fn engine_agrees_with_reference_on_small_datasets() {
    for seed in 0..8 {
        let report = check_equivalence(seed, 60, 60, 1500);
        assert!(report.mismatch.is_none(), "{}", report.mismatch.unwrap());
        assert_eq!(report.queries, 60);
    }
}
