//! Criterion benchmarks for the winner-determination kernels live in `benches/`.
