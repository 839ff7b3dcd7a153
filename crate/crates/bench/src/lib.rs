//! Benchmarks live in `benches/`; run them with `cargo bench -p evmfuzz-bench`.
