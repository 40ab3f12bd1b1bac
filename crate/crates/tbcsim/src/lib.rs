//! Command-line front end and live server for `tbc-core`.

pub mod cli;
pub mod serve;
