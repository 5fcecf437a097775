//! Configuration, field files, run orchestration and the invariant suite for
//! the `tcsk` command-line tool.

pub mod checks;
pub mod config;
pub mod field_io;
pub mod run;
