//! End-to-end acceptance runs for `metasim`.
//!
//! Everything lives in `tests/acceptance.rs`; these runs train several models
//! each and are kept out of the core crate's test suite so a failing
//! experiment does not hide the unit and property results. Run them with
//! `cargo test -p metasim-validation`.
