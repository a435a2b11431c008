//! Benchmarks live in `benches/`; run them with `cargo bench -p dino4d-bench`.
