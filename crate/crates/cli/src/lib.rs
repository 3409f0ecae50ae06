//! Report generation behind the `divens` command.

pub mod cli;
pub mod format;
pub mod report;
pub mod workspace;
