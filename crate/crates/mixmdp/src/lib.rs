//! IO, CLI and experiment harness on top of `mixmdp-core`.

pub mod cli;
pub mod harness;
pub mod io;
pub mod pipeline;
