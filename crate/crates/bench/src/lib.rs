//! No library code: this crate only hosts the criterion benchmarks.
