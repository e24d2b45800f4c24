//! Holds the end-to-end acceptance runner in `tests/acceptance.rs`. The
//! package sorts after the library and the CLI, so `cargo test --workspace`
//! runs every other suite before the long acceptance checks.
