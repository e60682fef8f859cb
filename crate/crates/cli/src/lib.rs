//! Command layer of the `maskpos` binary.

pub mod acceptance;
pub mod args;
pub mod commands;
