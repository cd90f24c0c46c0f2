//! LIBSVM sparse text format: `<label> <index>:<value> ...`, indices 1-based
//! and strictly increasing within a line.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LibsvmError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Binary-labelled dense dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labels: Vec<u8>,
    pub features: Vec<Vec<f64>>,
    pub n_features: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            n_features: self.n_features,
        }
    }
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> LibsvmError {
    LibsvmError::Parse { line, column, message: message.into() }
}

fn map_label(token: &str, line: usize, column: usize) -> Result<u8, LibsvmError> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, column, format!("label `{token}` is not numeric")))?;
    if v == 1.0 {
        Ok(1)
    } else if v == 0.0 || v == -1.0 {
        Ok(0)
    } else {
        Err(parse_err(line, column, format!("label `{token}` is not a binary label (0/1 or -1/+1)")))
    }
}

/// Parse a LIBSVM stream into a dense dataset. Blank lines are skipped; the
/// largest feature index seen defines the feature dimension.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset, LibsvmError> {
    let mut labels = Vec::new();
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut n_features = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut tokens = tokens_with_columns(&line);
        let Some((col, label_tok)) = tokens.next() else {
            continue;
        };
        labels.push(map_label(label_tok, lineno, col)?);
        let mut row = Vec::new();
        let mut last = 0usize;
        for (col, tok) in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, col, format!("token `{tok}` is missing ':'")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| parse_err(lineno, col, format!("index `{idx_s}` is not a positive integer")))?;
            if idx == 0 {
                return Err(parse_err(lineno, col, "indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_err(lineno, col, format!("index {idx} does not increase (previous {last})")));
            }
            let val: f64 = val_s.parse().map_err(|_| {
                parse_err(lineno, col + idx_s.len() + 1, format!("value `{val_s}` is not numeric"))
            })?;
            last = idx;
            row.push((idx, val));
        }
        n_features = n_features.max(last);
        sparse.push(row);
    }
    let features = sparse
        .into_iter()
        .map(|row| {
            let mut dense = vec![0.0; n_features];
            for (i, v) in row {
                dense[i - 1] = v;
            }
            dense
        })
        .collect();
    Ok(Dataset { labels, features, n_features })
}

/// Whitespace-separated tokens with their 1-based column.
fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0usize;
    std::iter::from_fn(move || {
        let trimmed = rest.trim_start();
        offset += rest.len() - trimmed.len();
        if trimmed.is_empty() {
            return None;
        }
        let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        let tok = &trimmed[..end];
        let col = line[..offset].chars().count() + 1;
        offset += end;
        rest = &trimmed[end..];
        Some((col, tok))
    })
}

pub fn read_libsvm(path: &std::path::Path) -> Result<Dataset, LibsvmError> {
    let f = std::fs::File::open(path)?;
    parse_libsvm(io::BufReader::new(f))
}

/// Write in LIBSVM format with labels `+1` / `-1`. Nonzero entries are
/// written, and the last column always is, so the dimension survives a round trip.
pub fn write_libsvm<W: Write>(data: &Dataset, mut out: W) -> io::Result<()> {
    let mut line = String::new();
    for (label, row) in data.labels.iter().zip(&data.features) {
        line.clear();
        line.push_str(if *label == 1 { "+1" } else { "-1" });
        for (i, v) in row.iter().enumerate() {
            if *v != 0.0 || i + 1 == data.n_features {
                let _ = write!(line, " {}:{}", i + 1, v);
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Features uniform in [-1, 1], labels from a noisy linear score.
pub fn synthetic_dataset(n: usize, n_features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n_features).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let mut labels = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..n_features).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let score: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3 * (rng.random::<f64>() - 0.5);
        labels.push(u8::from(score > 0.0));
        features.push(row);
    }
    Dataset { labels, features, n_features }
}
