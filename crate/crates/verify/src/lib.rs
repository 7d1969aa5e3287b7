//! Holds the `acceptance` test target, which exercises the other crates
//! end to end. Run it with `cargo test -p umaea-verify --test acceptance`.
