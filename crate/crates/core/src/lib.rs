//! Quantum state diffusion engine for open systems with exponential-sum
//! bath memory, and the statistics pipeline for monitored fluorescence.

pub mod algebra;
pub mod analysis;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod kernel;
pub mod lsq;
pub mod models;
pub mod mqsd;
pub mod nmqsd;
pub mod oracle;
pub mod noise;
pub mod quad;

pub use error::{Error, Result};

/// One CSV line with every value at 17 significant digits.
pub(crate) fn csv_row(values: &[f64]) -> String {
    let mut line = values
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}
