//! Acceptance suite only; see `tests/acceptance.rs`. Every test prints one
//! `AC<n> PASS|FAIL` line and then asserts it.
