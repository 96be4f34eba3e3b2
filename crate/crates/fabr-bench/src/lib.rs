//! Microbenchmark host crate; see the benches directory.
