//! Operator-facing side of the control plane: document loading, headless
//! scenario runs, results persistence and the HTTP service.

pub mod cli;
pub mod files;
pub mod output;
pub mod service;
