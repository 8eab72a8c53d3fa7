use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::fmt_f64;

pub const CSV_HEADER: [&str; 6] = ["t", "panas_mean", "sam_valence", "sam_arousal", "eda_mean", "label"];

const DERIVATIVE_HEADER: [&str; 2] = ["row", "dydt"];

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn check_header(reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    let found: Vec<&str> = header.iter().collect();
    for (i, want) in expected.iter().enumerate() {
        match found.get(i) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::Schema(format!(
                    "column {} is {got:?}, expected {want:?}",
                    i + 1
                )))
            }
            None => return Err(Error::Schema(format!("missing column {want:?}"))),
        }
    }
    if found.len() > expected.len() {
        return Err(Error::Schema(format!(
            "unexpected extra column {:?}",
            found[expected.len()]
        )));
    }
    Ok(())
}

fn parse_real(cell: &str, column: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        detail: format!("column {column}: {cell:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            detail: format!("column {column}: {cell:?} is not finite"),
        });
    }
    Ok(v)
}

/// Read a dataset with the exact header `t,panas_mean,sam_valence,sam_arousal,eda_mean,label`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    check_header(&mut reader, &CSV_HEADER)?;
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                detail: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let mut vals = [0.0; 6];
        for (i, cell) in record.iter().enumerate() {
            vals[i] = parse_real(cell, CSV_HEADER[i], line)?;
        }
        let label = match vals[5] {
            0.0 => 0,
            1.0 => 1,
            v => {
                return Err(Error::Parse {
                    line,
                    detail: format!("label {v} outside {{0, 1}}"),
                })
            }
        };
        samples.push(Sample {
            t: vals[0],
            e: [vals[1], vals[2], vals[3]],
            eda: vals[4],
            label,
        });
    }
    Dataset::new(samples)
}

pub fn write_csv(dataset: &Dataset, out: &mut impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for s in dataset.samples() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_f64(s.t),
            fmt_f64(s.e[0]),
            fmt_f64(s.e[1]),
            fmt_f64(s.e[2]),
            fmt_f64(s.eda),
            s.label
        )?;
    }
    w.flush()
}

/// Ground-truth derivatives, one per data row (rows numbered from 0).
pub fn write_derivatives(dydt: &[f64], out: &mut impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{}", DERIVATIVE_HEADER.join(","))?;
    for (i, d) in dydt.iter().enumerate() {
        writeln!(w, "{i},{}", fmt_f64(*d))?;
    }
    w.flush()
}

pub fn read_derivatives(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    check_header(&mut reader, &DERIVATIVE_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                detail: "expected 2 fields".into(),
            });
        }
        let row = record[0].trim().parse::<usize>().map_err(|_| Error::Parse {
            line,
            detail: format!("row index {:?} is not an integer", &record[0]),
        })?;
        if row != out.len() {
            return Err(Error::Parse {
                line,
                detail: format!("row index {row} out of sequence"),
            });
        }
        out.push(parse_real(&record[1], "dydt", line)?);
    }
    Ok(out)
}
