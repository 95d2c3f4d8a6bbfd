//! Command-line front end: configuration, experiment runner and the
//! acceptance battery behind `wienervar verify`.

pub mod config;
pub mod criteria;
pub mod runner;
