//! Criterion benchmarks live in `benches/`; this crate exports shared inputs.

use freecond::fixtures::{test_cases, TestCase};

pub fn bench_case() -> TestCase {
    test_cases().remove(0)
}
