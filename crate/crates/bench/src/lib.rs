//! Criterion benchmarks for the metric, graph and chunking kernels live in `benches/`.
