//! Neutral raw-gaze CSV: `t_us,sx,sy,ox,oy,oz,px,py,pz,valid`.
//!
//! The 3D columns may be empty. `valid` accepts `1/0` or `true/false`.
//! Timestamps must not decrease.

use std::io::{Read, Write};

use thiserror::Error;

use crate::model::GazeSample;

pub const GAZELOG_HEADER: [&str; 10] = ["t_us", "sx", "sy", "ox", "oy", "oz", "px", "py", "pz", "valid"];

#[derive(Debug, Error)]
pub enum GazeLogError {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("missing or wrong header; expected {}", GAZELOG_HEADER.join(","))]
    Header,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn row_err(line: u64, message: impl Into<String>) -> GazeLogError {
    GazeLogError::Row { line, message: message.into() }
}

fn num(cell: &str, col: &str, line: u64) -> Result<f64, GazeLogError> {
    let v: f64 = cell.parse().map_err(|_| row_err(line, format!("{col}: {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(row_err(line, format!("{col}: not finite")));
    }
    Ok(v)
}

fn triple(cells: &[&str], name: &str, line: u64) -> Result<Option<[f64; 3]>, GazeLogError> {
    match cells.iter().filter(|c| c.is_empty()).count() {
        3 => Ok(None),
        0 => Ok(Some([num(cells[0], name, line)?, num(cells[1], name, line)?, num(cells[2], name, line)?])),
        _ => Err(row_err(line, format!("{name}: partially filled 3D columns"))),
    }
}

pub fn read_gazelog<R: Read>(reader: R) -> Result<Vec<GazeSample>, GazeLogError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(GAZELOG_HEADER.iter().copied()) {
        return Err(GazeLogError::Header);
    }
    let mut out = Vec::new();
    let mut last: Option<i64> = None;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let cells: Vec<&str> = rec.iter().collect();
        let t_us: i64 =
            cells[0].parse().map_err(|_| row_err(line, format!("t_us: {:?} is not an integer", cells[0])))?;
        if last.is_some_and(|l| t_us < l) {
            return Err(row_err(line, "t_us decreases"));
        }
        last = Some(t_us);
        let valid = match cells[9] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(row_err(line, format!("valid: {other:?} is not 0/1/true/false"))),
        };
        out.push(GazeSample {
            t_us,
            screen_x: num(cells[1], "sx", line)?,
            screen_y: num(cells[2], "sy", line)?,
            origin_3d: triple(&cells[3..6], "origin", line)?,
            pos_3d: triple(&cells[6..9], "pos", line)?,
            valid,
        });
    }
    Ok(out)
}

pub fn read_gazelog_file(path: &std::path::Path) -> Result<Vec<GazeSample>, GazeLogError> {
    read_gazelog(std::fs::File::open(path)?)
}

/// Writes samples with shortest round-trip float formatting, so reading the
/// file back yields bit-identical values.
pub fn write_gazelog<W: Write>(writer: W, samples: &[GazeSample]) -> Result<(), GazeLogError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(GAZELOG_HEADER)?;
    let opt = |v: Option<[f64; 3]>, i: usize| v.map(|a| a[i].to_string()).unwrap_or_default();
    for s in samples {
        w.write_record([
            s.t_us.to_string(),
            s.screen_x.to_string(),
            s.screen_y.to_string(),
            opt(s.origin_3d, 0),
            opt(s.origin_3d, 1),
            opt(s.origin_3d, 2),
            opt(s.pos_3d, 0),
            opt(s.pos_3d, 1),
            opt(s.pos_3d, 2),
            if s.valid { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_optional_geometry_and_flags() {
        let text = "t_us,sx,sy,ox,oy,oz,px,py,pz,valid\n\
                    0,10.5,20,,,,,,,1\n\
                    3333,11,21,0,0,0,1,2,600,true\n\
                    6666,0,0,,,,,,,0\n";
        let s = read_gazelog(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].origin_3d, None);
        assert_eq!(s[1].pos_3d, Some([1.0, 2.0, 600.0]));
        assert!(!s[2].valid);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "t_us,sx,sy,ox,oy,oz,px,py,pz,valid\n0,1,1,,,,,,,1\n5,x,1,,,,,,,1\n";
        match read_gazelog(bad.as_bytes()) {
            Err(GazeLogError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let back = "t_us,sx,sy,ox,oy,oz,px,py,pz,valid\n10,1,1,,,,,,,1\n5,1,1,,,,,,,1\n";
        assert!(matches!(read_gazelog(back.as_bytes()), Err(GazeLogError::Row { line: 3, .. })));
        let partial = "t_us,sx,sy,ox,oy,oz,px,py,pz,valid\n0,1,1,1,,,,,,1\n";
        assert!(read_gazelog(partial.as_bytes()).is_err());
        assert!(matches!(read_gazelog("a,b\n1,2\n".as_bytes()), Err(GazeLogError::Header)));
        assert!(read_gazelog("".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let s = vec![
            GazeSample::screen(0, 0.1 + 0.2, 1.0 / 3.0),
            GazeSample::screen(3333, 1e-7, 123456.789).with_geometry([0.5, -1.25, 0.0], [3.0, 4.0, 650.0]),
        ];
        let mut buf = Vec::new();
        write_gazelog(&mut buf, &s).unwrap();
        assert_eq!(read_gazelog(buf.as_slice()).unwrap(), s);
    }
}
