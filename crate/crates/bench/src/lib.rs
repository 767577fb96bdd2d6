//! Criterion benchmarks for the hot paths of `cdr-core` live under `benches/`.
