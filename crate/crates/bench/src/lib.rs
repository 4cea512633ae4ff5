//! Criterion benchmarks for `vbsl-core`; see `benches/`.
