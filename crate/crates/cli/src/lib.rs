//! Library surface of the `flowcast` command-line tool: configuration,
//! pipeline plumbing, the subcommand implementations, and SVG chart
//! emission. The binary in `main.rs` is a thin argument-parsing wrapper.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod svg;
