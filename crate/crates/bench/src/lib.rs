//! Criterion benchmarks for the scoring and cache hot paths live in
//! `benches/`; this crate has no library code of its own.
