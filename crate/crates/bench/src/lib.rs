//! Criterion benchmarks for the training pipeline live in `benches/pipeline.rs`.
