//! Every fast-path routine against an independent brute-force twin: losses
//! against direct nested-loop formula evaluations, kNN against a full sort,
//! rankings against per-query argsorts. Values must agree to 1e-12, index
//! structures exactly. The reference implementations live in common/.

mod common;

const INSTANCES: usize = 120;

#[test]
fn sum_margin_matches_nested_loops() {
    common::check_sum_margin(INSTANCES);
}

#[test]
fn max_margin_matches_full_scan() {
    common::check_max_margin(INSTANCES);
}

#[test]
fn nca_matches_direct_exponentials() {
    common::check_nca(INSTANCES);
}

#[test]
fn hal_matches_direct_exponentials() {
    common::check_hal(INSTANCES);
}

#[test]
fn knn_matches_full_sort() {
    common::check_knn(INSTANCES);
}

#[test]
fn rank_ground_truth_matches_argsort() {
    common::check_rank_ground_truth(INSTANCES);
}

#[test]
fn retrieval_report_matches_recount() {
    common::check_retrieval_report(INSTANCES);
}
