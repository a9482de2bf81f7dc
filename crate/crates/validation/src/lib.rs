//! Holds the `acceptance` test target; the criteria live in
//! `brw_cli::acceptance` so `brw verify` can run them too.
