//! End-to-end acceptance checks live in `tests/acceptance.rs`.
