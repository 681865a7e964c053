//! Command-line front end: scene files, subcommands and SVG output.

pub mod commands;
pub mod scenefile;
pub mod svg;
