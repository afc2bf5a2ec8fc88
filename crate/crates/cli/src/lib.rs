//! Command-line front end: configuration, CSV/SVG emission and the
//! invariant check suite.

pub mod checks;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod svg;
