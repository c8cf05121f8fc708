//! Criterion benchmarks for the fitting routines; see `benches/`.
