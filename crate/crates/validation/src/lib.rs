//! Holds the `acceptance` test target only; run it with
//! `cargo test -p phasewave-validation --test acceptance`.
