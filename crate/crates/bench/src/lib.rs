//! Criterion benchmarks for the deformation and rendering stages; see `benches/`.
