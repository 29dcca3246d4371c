//! Criterion benchmarks for the ser-duo kernels live under `benches/`.
