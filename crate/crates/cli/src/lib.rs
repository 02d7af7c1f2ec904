//! Experiment runner for `powersim-core`: graph files, pipeline dispatch,
//! oracle verification and JSON/CSV reports.

pub mod experiment;
pub mod io;
