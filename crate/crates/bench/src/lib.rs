//! Criterion benchmarks for `adaptive-sync`; see `benches/`.
