//! Benchmark-only crate; see `benches/hotpaths.rs`. Run with `cargo bench`.
