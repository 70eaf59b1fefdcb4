//! CSV ingestion and atomic file output.
//!
//! Labeled files have the header `y,x1,...,xd` with 1-based integer classes;
//! unlabeled files have the header `x1,...,xd`. Floats are written with the
//! shortest representation that parses back to the same value, so a write
//! followed by a read is exact.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, StringRecord, Trim};

use crate::dataset::{LabeledDataset, UnlabeledDataset};
use crate::error::{Error, Result};

struct RawLabeled {
    covariates: Vec<f64>,
    labels: Vec<u64>,
    label_lines: Vec<u64>,
    dim: usize,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn schema_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn record_line(record: &StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn check_header(path: &Path, header: &StringRecord, labeled: bool) -> Result<usize> {
    let mut fields = header.iter();
    if labeled && fields.next() != Some("y") {
        return Err(schema_error(path, 1, "first column must be named y"));
    }
    let mut dim = 0;
    for (i, name) in fields.enumerate() {
        let expected = format!("x{}", i + 1);
        if name != expected {
            return Err(schema_error(
                path,
                1,
                format!(
                    "column {} is named {name:?}, expected {expected:?}",
                    i + 1 + usize::from(labeled)
                ),
            ));
        }
        dim += 1;
    }
    if dim == 0 {
        return Err(schema_error(path, 1, "header names no covariate columns"));
    }
    Ok(dim)
}

fn parse_float(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, format!("{field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("{field:?} is not finite")));
    }
    Ok(v)
}

fn read_rows(path: &Path, labeled: bool) -> Result<RawLabeled> {
    let file = std::fs::File::open(path)?;
    let mut reader = ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no header",
            path.display()
        )));
    }
    let dim = check_header(path, &header, labeled)?;
    let width = dim + usize::from(labeled);
    let mut raw = RawLabeled {
        covariates: Vec::new(),
        labels: Vec::new(),
        label_lines: Vec::new(),
        dim,
    };
    let mut record = StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(parse_error(path, line, e.to_string()));
            }
        }
        let line = record_line(&record);
        if record.len() != width {
            return Err(parse_error(
                path,
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut fields = record.iter();
        if labeled {
            let field = fields.next().unwrap_or_default();
            let y: i64 = field.parse().map_err(|_| {
                parse_error(path, line, format!("label {field:?} is not an integer"))
            })?;
            if y < 1 {
                return Err(schema_error(
                    path,
                    line,
                    format!("label {y} is outside 1..K"),
                ));
            }
            raw.labels.push(y as u64);
            raw.label_lines.push(line);
        }
        for field in fields {
            raw.covariates.push(parse_float(path, line, field)?);
        }
    }
    if raw.covariates.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no data rows",
            path.display()
        )));
    }
    Ok(raw)
}

fn build_labeled(path: &Path, raw: RawLabeled, num_classes: usize) -> Result<LabeledDataset> {
    let mut labels = Vec::with_capacity(raw.labels.len());
    for (&y, &line) in raw.labels.iter().zip(&raw.label_lines) {
        if y as usize > num_classes {
            return Err(schema_error(
                path,
                line,
                format!("label {y} is outside 1..{num_classes}"),
            ));
        }
        labels.push(y as usize - 1);
    }
    LabeledDataset::new(raw.covariates, labels, raw.dim, num_classes)
}

/// Reads a labeled CSV. With `num_classes = None`, K is the largest label.
pub fn load_csv_labeled(path: &Path, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let raw = read_rows(path, true)?;
    let k = num_classes.unwrap_or_else(|| raw.labels.iter().copied().max().unwrap_or(1) as usize);
    build_labeled(path, raw, k)
}

/// Reads several labeled CSVs over one shared class range and dimension.
/// With `num_classes = None`, K is the largest label across all files.
pub fn load_csv_labeled_many<P: AsRef<Path>>(
    paths: &[P],
    num_classes: Option<usize>,
) -> Result<Vec<LabeledDataset>> {
    let raws = paths
        .iter()
        .map(|p| read_rows(p.as_ref(), true))
        .collect::<Result<Vec<_>>>()?;
    let k = num_classes.unwrap_or_else(|| {
        raws.iter()
            .flat_map(|r| r.labels.iter().copied())
            .max()
            .unwrap_or(1) as usize
    });
    let dim = raws.first().map_or(0, |r| r.dim);
    let mut out = Vec::with_capacity(raws.len());
    for (p, raw) in paths.iter().zip(raws) {
        if raw.dim != dim {
            return Err(schema_error(
                p.as_ref(),
                1,
                format!("{} covariate columns, other sources have {dim}", raw.dim),
            ));
        }
        out.push(build_labeled(p.as_ref(), raw, k)?);
    }
    Ok(out)
}

pub fn load_csv_unlabeled(path: &Path) -> Result<UnlabeledDataset> {
    let raw = read_rows(path, false)?;
    UnlabeledDataset::new(raw.covariates, raw.dim)
}

fn header_line(out: &mut String, dim: usize, labeled: bool) {
    let mut cols: Vec<String> = Vec::with_capacity(dim + 1);
    if labeled {
        cols.push("y".into());
    }
    cols.extend((1..=dim).map(|i| format!("x{i}")));
    out.push_str(&cols.join(","));
    out.push('\n');
}

fn push_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

pub fn labeled_csv_string(data: &LabeledDataset) -> String {
    let mut out = String::new();
    header_line(&mut out, data.dim(), true);
    for (i, &y) in data.labels().iter().enumerate() {
        let _ = write!(out, "{},", y + 1);
        push_row(&mut out, data.row(i));
        out.push('\n');
    }
    out
}

pub fn unlabeled_csv_string(data: &UnlabeledDataset) -> String {
    let mut out = String::new();
    header_line(&mut out, data.dim(), false);
    for row in data.rows() {
        push_row(&mut out, row);
        out.push('\n');
    }
    out
}

pub fn write_csv_labeled(path: &Path, data: &LabeledDataset) -> Result<()> {
    write_atomic(path, labeled_csv_string(data).as_bytes())
}

pub fn write_csv_unlabeled(path: &Path, data: &UnlabeledDataset) -> Result<()> {
    write_atomic(path, unlabeled_csv_string(data).as_bytes())
}

/// Writes to a temporary file beside `path` and renames it into place, so a
/// failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
