//! `duration_ns,amp_m1,amp_0,amp_p1[,sigma]` dynamics tables.

use std::fmt::Write as _;

use super::{number, records, TableError};
use crate::estimation::{DynamicsDataset, DynamicsRow, EstimationError};

pub const HEADER: &str = "duration_ns,amp_m1,amp_0,amp_p1";
pub const HEADER_SIGMA: &str = "duration_ns,amp_m1,amp_0,amp_p1,sigma";

pub fn load_dataset(text: &str) -> Result<DynamicsDataset, TableError> {
    let recs = records(text)?;
    let Some(((hline, header), rows)) = recs.split_first() else {
        return Err(TableError::Empty);
    };
    let joined = header.join(",");
    let with_sigma = match joined.as_str() {
        HEADER => false,
        HEADER_SIGMA => true,
        _ => {
            return Err(TableError::Header {
                line: *hline,
                expected: format!("{HEADER}[,sigma]"),
                found: joined,
            })
        }
    };
    if rows.is_empty() {
        return Err(TableError::Empty);
    }
    let width = header.len();
    let mut lines = Vec::with_capacity(rows.len());
    let mut parsed = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        let line = *line;
        if fields.len() != width {
            return Err(TableError::Row {
                line,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let sigma = if with_sigma && !fields[4].is_empty() {
            Some(number(line, "sigma", &fields[4])?)
        } else {
            None
        };
        parsed.push(DynamicsRow {
            duration: number(line, "duration_ns", &fields[0])?,
            a_minus: number(line, "amp_m1", &fields[1])?,
            a_zero: number(line, "amp_0", &fields[2])?,
            a_plus: number(line, "amp_p1", &fields[3])?,
            sigma,
        });
        lines.push(line);
    }
    DynamicsDataset::new(parsed).map_err(|e| {
        let row = match &e {
            EstimationError::InvalidValue { row, .. } | EstimationError::Unsorted { row } => *row,
            _ => 0,
        };
        TableError::Row {
            line: lines.get(row).copied().unwrap_or(*hline),
            message: e.to_string(),
        }
    })
}

/// Values are written in shortest round-trip form, so loading the output
/// reproduces the dataset exactly.
pub fn write_dataset(data: &DynamicsDataset) -> String {
    let with_sigma = data.rows.iter().any(|r| r.sigma.is_some());
    let mut out = String::from(if with_sigma { HEADER_SIGMA } else { HEADER });
    out.push('\n');
    for r in &data.rows {
        let _ = write!(out, "{},{},{},{}", r.duration, r.a_minus, r.a_zero, r.a_plus);
        if with_sigma {
            out.push(',');
            if let Some(s) = r.sigma {
                let _ = write!(out, "{s}");
            }
        }
        out.push('\n');
    }
    out
}
