//! Holds the workspace acceptance suite in `tests/acceptance.rs`, which
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.
