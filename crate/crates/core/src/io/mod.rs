//! Text formats: pulse programs, configuration, datasets, population states
//! and run manifests.

pub mod config;
pub mod dataset;
pub mod dsl;
pub mod manifest;
pub mod state;

pub use config::{load_config, Config, ConfigError};
pub use dataset::{load_dataset, write_dataset};
pub use dsl::{parse_pulse_program, print_pulse_program, DslError};
pub use manifest::Manifest;
pub use state::{load_state, write_state};

use thiserror::Error;

/// Errors from the CSV readers; line numbers are 1-based.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("no data rows")]
    Empty,
    #[error("line {line}: expected header '{expected}', found '{found}'")]
    Header {
        line: u64,
        expected: String,
        found: String,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Records with their line numbers, skipping blank lines.
fn records(text: &str) -> Result<Vec<(u64, Vec<String>)>, TableError> {
    let mut out = Vec::new();
    for rec in csv_reader(text).records() {
        let rec = rec.map_err(|e| TableError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn number(line: u64, column: &str, field: &str) -> Result<f64, TableError> {
    field.parse::<f64>().map_err(|_| TableError::Row {
        line,
        message: format!("{column}: '{field}' is not a number"),
    })
}
