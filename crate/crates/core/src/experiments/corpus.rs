//! Assembly sources shipped with the crate.

/// Every corpus program as (name, source).
pub const PROGRAMS: &[(&str, &str)] = &[
    ("bitops", include_str!("../../corpus/bitops.s")),
    ("branch_dense", include_str!("../../corpus/branch_dense.s")),
    ("branch_loops", include_str!("../../corpus/branch_loops.s")),
    ("bubblesort", include_str!("../../corpus/bubblesort.s")),
    ("calls", include_str!("../../corpus/calls.s")),
    ("checksum", include_str!("../../corpus/checksum.s")),
    ("cp0_ops", include_str!("../../corpus/cp0_ops.s")),
    ("exctest", include_str!("../../corpus/exctest.s")),
    ("fib_iter", include_str!("../../corpus/fib_iter.s")),
    ("gcd", include_str!("../../corpus/gcd.s")),
    ("hazard_example", include_str!("../../corpus/hazard_example.s")),
    ("heapsort", include_str!("../../corpus/heapsort.s")),
    ("insertion_sort", include_str!("../../corpus/insertion_sort.s")),
    ("linked_list", include_str!("../../corpus/linked_list.s")),
    ("matmul", include_str!("../../corpus/matmul.s")),
    ("memops", include_str!("../../corpus/memops.s")),
    ("quicksort", include_str!("../../corpus/quicksort.s")),
    ("raw_chain", include_str!("../../corpus/raw_chain.s")),
    ("raw_loads", include_str!("../../corpus/raw_loads.s")),
    ("raw_muldiv", include_str!("../../corpus/raw_muldiv.s")),
    ("selection_sort", include_str!("../../corpus/selection_sort.s")),
    ("sieve", include_str!("../../corpus/sieve.s")),
    ("slot_fill", include_str!("../../corpus/slot_fill.s")),
    ("strings", include_str!("../../corpus/strings.s")),
];

pub fn source(name: &str) -> Option<&'static str> {
    PROGRAMS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}
