//! `m_s,m_i,population` state tables. Levels not listed are empty.

use std::fmt::Write as _;

use super::{number, records, TableError};
use crate::rates::PopulationVector;
use crate::spin::LevelLabel;

pub const HEADER: &str = "m_s,m_i,population";

fn projection(line: u64, column: &str, field: &str) -> Result<i8, TableError> {
    match field {
        "-1" => Ok(-1),
        "0" => Ok(0),
        "1" | "+1" => Ok(1),
        _ => Err(TableError::Row {
            line,
            message: format!("{column}: '{field}' is not -1, 0 or +1"),
        }),
    }
}

pub fn load_state(text: &str) -> Result<PopulationVector, TableError> {
    let recs = records(text)?;
    let Some(((hline, header), rows)) = recs.split_first() else {
        return Err(TableError::Empty);
    };
    if header.join(",") != HEADER {
        return Err(TableError::Header {
            line: *hline,
            expected: HEADER.into(),
            found: header.join(","),
        });
    }
    if rows.is_empty() {
        return Err(TableError::Empty);
    }
    let mut values = [0.0; 9];
    let mut seen = [false; 9];
    for (line, fields) in rows {
        let line = *line;
        if fields.len() != 3 {
            return Err(TableError::Row {
                line,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let label = LevelLabel::new(projection(line, "m_s", &fields[0])?, projection(line, "m_i", &fields[1])?)
            .expect("projections checked");
        let k = label.index();
        if seen[k] {
            return Err(TableError::Row {
                line,
                message: format!("level {label} listed twice"),
            });
        }
        seen[k] = true;
        let v = number(line, "population", &fields[2])?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(TableError::Row {
                line,
                message: format!("population {v} must be finite and non-negative"),
            });
        }
        values[k] = v;
    }
    PopulationVector::new(values).map_err(|e| TableError::Row {
        line: rows.last().map_or(*hline, |r| r.0),
        message: e.to_string(),
    })
}

pub fn write_state(state: &PopulationVector) -> String {
    let mut out = format!("{HEADER}\n");
    for (k, label) in LevelLabel::ORDER.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", label.ms, label.mi, state.0[k]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let s = PopulationVector::new([0.05, 0.1, 0.5, 0.0, 0.02, 0.03, 0.1, 0.1, 0.1]).unwrap();
        assert_eq!(load_state(&write_state(&s)).unwrap(), s);
    }

    #[test]
    fn partial_listing() {
        let s = load_state("m_s,m_i,population\n0,0,0.9\n0,+1,0.05\n0,-1,0.05\n").unwrap();
        assert_eq!(s.ms0_lines(), [0.05, 0.9, 0.05]);
    }

    #[test]
    fn rejects() {
        assert_eq!(load_state("m_s,m_i,population\n"), Err(TableError::Empty));
        assert!(matches!(
            load_state("m_s,m_i,population\n0,0,0.5\n0,0,0.1\n"),
            Err(TableError::Row { line: 3, .. })
        ));
        assert!(matches!(
            load_state("m_s,m_i,population\n2,0,0.5\n"),
            Err(TableError::Row { line: 2, .. })
        ));
        assert!(matches!(
            load_state("m_s,m_i,population\n0,0,0.7\n0,1,0.7\n"),
            Err(TableError::Row { .. })
        ));
        assert!(matches!(load_state("a,b\n"), Err(TableError::Header { .. })));
    }
}
