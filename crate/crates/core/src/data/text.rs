use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::Dataset;
use crate::error::{Error, Result};

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

/// Parses LIBSVM text: `label idx:val idx:val …` with 1-based, strictly
/// increasing indices. Missing features are zero; labels are mapped to
/// `0..C` in increasing numeric order.
pub fn parse_libsvm(text: &str, name: &str) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let mut tokens = tokens_with_columns(content);
        let (col, label_tok) = tokens.next().expect("non-empty line");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| Error::parse(lineno, col, format!("bad label '{label_tok}'")))?;
        if !label.is_finite() {
            return Err(Error::parse(lineno, col, "label is not finite"));
        }
        let mut row = Vec::new();
        let mut last = 0;
        for (col, tok) in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, col, format!("expected idx:val, got '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(lineno, col, format!("bad index '{idx}'")))?;
            if idx == 0 {
                return Err(Error::parse(lineno, col, "indices are 1-based"));
            }
            if idx <= last {
                return Err(Error::parse(lineno, col, "indices must be strictly increasing"));
            }
            let val_col = col + tok.find(':').expect("split above") + 1;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::parse(lineno, val_col, format!("bad value '{val}'")))?;
            if !val.is_finite() {
                return Err(Error::parse(lineno, val_col, "value is not finite"));
            }
            last = idx;
            row.push((idx, val));
        }
        max_index = max_index.max(last);
        raw_labels.push(label);
        rows.push(row);
    }
    let mut distinct = raw_labels.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let labels = raw_labels
        .iter()
        .map(|l| distinct.binary_search_by(|d| d.total_cmp(l)).expect("present"))
        .collect();
    let mut y = DMatrix::zeros(rows.len(), max_index);
    for (i, row) in rows.iter().enumerate() {
        for &(idx, val) in row {
            y[(i, idx - 1)] = val;
        }
    }
    Dataset::new(y, Some(labels), name)
}

/// Whitespace-separated tokens with their 1-based starting columns.
fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s + 1, &line[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out.into_iter()
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text, &dataset_name(path))
}

/// Writes LIBSVM text, skipping zero entries; labels are written 1-based.
pub fn save_libsvm(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for i in 0..dataset.len() {
        let label = dataset.labels.as_ref().map_or(0, |l| l[i]) + 1;
        write!(w, "{label}").map_err(io)?;
        for j in 0..dataset.dim() {
            let v = dataset.y[(i, j)];
            if v != 0.0 {
                write!(w, " {}:{v:?}", j + 1).map_err(io)?;
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes `y1,…,yD[,label]`.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::InvalidSize(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (1..=dataset.dim()).map(|j| format!("y{j}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.y.row(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &dataset.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`save_csv`]; a final `label` column is optional.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(0, 0, format!("{other:?}")),
    })?;
    let header = r.headers().map_err(|e| Error::parse(1, 0, e.to_string()))?.clone();
    let has_label = header.iter().next_back() == Some("label");
    let d = header.len() - has_label as usize;
    if d == 0 {
        return Err(Error::parse(1, 1, "no observation columns"));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, 0, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::parse(
                line,
                0,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        for (j, field) in rec.iter().enumerate().take(d) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, j + 1, format!("bad value '{field}'")))?;
            values.push(v);
        }
        if has_label {
            let field = &rec[d];
            labels.push(
                field
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(line, d + 1, format!("bad label '{field}'")))?,
            );
        }
    }
    let n = values.len() / d;
    let y = DMatrix::from_row_slice(n, d, &values);
    Dataset::new(y, has_label.then_some(labels), dataset_name(path))
}
