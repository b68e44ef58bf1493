//! Criterion benchmarks for the aggregation strategies and the pair search live in `benches/`.
