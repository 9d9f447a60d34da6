//! Holds the acceptance suite in `tests/acceptance.rs`; there is no library
//! code. The suite lives in its own package so it runs after every other
//! test target of the workspace.
