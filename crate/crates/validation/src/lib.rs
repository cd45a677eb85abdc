//! Acceptance checks for `cvm-track` live in `tests/acceptance.rs`.
