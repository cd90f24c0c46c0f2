use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{MetricsError, RunRecord};

pub const CSV_HEADER: [&str; 13] = [
    "run_id",
    "algo",
    "problem",
    "K",
    "rho",
    "t",
    "samples_total",
    "grad_norm_sq",
    "mse_to_opt",
    "obj_gap",
    "consensus_x",
    "consensus_y",
    "wall_ms",
];

/// 17 significant digits, enough to round-trip any `f64`.
fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(e: csv::Error) -> MetricsError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MetricsError::Io(io),
        other => MetricsError::Parse { line: 0, column: String::new(), message: format!("{other:?}") },
    }
}

pub fn write_csv_to<W: Write>(records: &[RunRecord], out: W) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_error)?;
    for r in records {
        let consensus_y = r.consensus_y.iter().map(|&v| float(v)).collect::<Vec<_>>().join(";");
        w.write_record([
            r.run_id.clone(),
            r.algo.clone(),
            r.problem.clone(),
            r.k.to_string(),
            float(r.rho),
            r.t.to_string(),
            r.samples_total.to_string(),
            float(r.grad_norm_sq),
            float(r.mse_to_opt),
            float(r.obj_gap),
            float(r.consensus_x),
            consensus_y,
            r.wall_ms.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(records: &[RunRecord], path: &Path) -> Result<(), MetricsError> {
    write_csv_to(records, BufWriter::new(File::create(path)?))
}

fn check_header(header: &csv::StringRecord) -> Result<(), MetricsError> {
    for (i, expected) in CSV_HEADER.iter().enumerate() {
        match header.get(i) {
            Some(found) if found == *expected => {}
            Some(found) => {
                return Err(MetricsError::Schema {
                    column: found.to_string(),
                    detail: format!("expected `{expected}` at position {}", i + 1),
                })
            }
            None => {
                return Err(MetricsError::Schema { column: expected.to_string(), detail: "missing column".into() })
            }
        }
    }
    if let Some(extra) = header.get(CSV_HEADER.len()) {
        return Err(MetricsError::Schema { column: extra.to_string(), detail: "unknown column".into() });
    }
    Ok(())
}

pub fn read_csv_from<R: Read>(input: R) -> Result<Vec<RunRecord>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    check_header(rdr.headers().map_err(csv_error)?)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != CSV_HEADER.len() {
            return Err(MetricsError::Parse {
                line,
                column: String::new(),
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
        }
        let bad = |col: usize, message: String| MetricsError::Parse { line, column: CSV_HEADER[col].into(), message };
        let num = |col: usize| -> Result<f64, MetricsError> { row[col].parse::<f64>().map_err(|e| bad(col, e.to_string())) };
        let int = |col: usize| -> Result<u64, MetricsError> { row[col].parse::<u64>().map_err(|e| bad(col, e.to_string())) };
        let consensus_y = if row[11].is_empty() {
            Vec::new()
        } else {
            row[11].split(';').map(|s| s.parse::<f64>().map_err(|e| bad(11, e.to_string()))).collect::<Result<_, _>>()?
        };
        out.push(RunRecord {
            run_id: row[0].to_string(),
            algo: row[1].to_string(),
            problem: row[2].to_string(),
            k: int(3)? as usize,
            rho: num(4)?,
            t: int(5)?,
            samples_total: int(6)?,
            grad_norm_sq: num(7)?,
            mse_to_opt: num(8)?,
            obj_gap: num(9)?,
            consensus_x: num(10)?,
            consensus_y,
            wall_ms: int(12)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<RunRecord>, MetricsError> {
    read_csv_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunRecord {
        RunRecord {
            run_id: "r".into(),
            algo: "dsmo".into(),
            problem: "synthetic".into(),
            k: 5,
            rho: 0.1 + 0.2,
            t: 3,
            samples_total: 60,
            grad_norm_sq: f64::NAN,
            mse_to_opt: 1e-300,
            obj_gap: -0.0,
            consensus_x: f64::MIN_POSITIVE,
            consensus_y: vec![1.0 / 3.0, 2.5],
            wall_ms: 0,
        }
    }

    #[test]
    fn header_only_for_empty() {
        let mut buf = Vec::new();
        write_csv_to(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn roundtrip_keeps_bits() {
        let mut buf = Vec::new();
        write_csv_to(&[sample()], &mut buf).unwrap();
        let back = read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(back, vec![sample()]);
        assert_eq!(back[0].rho.to_bits(), sample().rho.to_bits());
    }

    #[test]
    fn shuffled_columns_name_first_offender() {
        let mut cols = CSV_HEADER.to_vec();
        cols.swap(4, 6);
        let text = format!("{}\n", cols.join(","));
        match read_csv_from(text.as_bytes()) {
            Err(MetricsError::Schema { column, .. }) => assert_eq!(column, "samples_total"),
            other => panic!("{other:?}"),
        }
        let text = format!("{}\n", CSV_HEADER[..12].join(","));
        assert!(matches!(read_csv_from(text.as_bytes()), Err(MetricsError::Schema { column, .. }) if column == "wall_ms"));
    }

    #[test]
    fn bad_value_reports_line() {
        let mut buf = Vec::new();
        write_csv_to(&[sample(), sample()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replacen(",60,", ",sixty,", 2);
        match read_csv_from(text.as_bytes()) {
            Err(MetricsError::Parse { line, column, .. }) => assert_eq!((line, column.as_str()), (2, "samples_total")),
            other => panic!("{other:?}"),
        }
    }
}
