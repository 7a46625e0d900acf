use std::path::Path;

use super::Dataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn csv_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads one sample per row, condition columns first.
///
/// `d` is the number of trailing `Y` columns; with `has_condition` the
/// remaining leading columns form `x` and there must be at least one. A first
/// row containing any non-numeric field is treated as a header. Row order is
/// preserved.
pub fn load_csv(path: impl AsRef<Path>, d: usize, has_condition: bool) -> Result<Dataset> {
    let path = path.as_ref();
    if d == 0 {
        return Err(Error::invalid("csv: d must be positive"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, 0, e.to_string()))?;

    let mut width: Option<usize> = None;
    let mut values = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parsed: Vec<Option<f64>> = rec.iter().map(|f| f.parse::<f64>().ok()).collect();
        if i == 0 && parsed.iter().any(Option::is_none) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(csv_err(
                path,
                line,
                format!("expected {w} fields, found {}", rec.len()),
            ));
        }
        for (j, v) in parsed.iter().enumerate() {
            match v {
                Some(v) if v.is_finite() => values.push(*v),
                _ => {
                    return Err(csv_err(
                        path,
                        line,
                        format!("field {} ({:?}) is not a finite number", j + 1, &rec[j]),
                    ))
                }
            }
        }
        rows += 1;
    }
    let Some(w) = width else {
        return Err(csv_err(path, 0, "file contains no data rows"));
    };
    let k = if has_condition {
        if w <= d {
            return Err(csv_err(
                path,
                1,
                format!("{w} columns leave no condition columns for d = {d}"),
            ));
        }
        w - d
    } else {
        if w != d {
            return Err(csv_err(path, 1, format!("expected {d} columns, found {w}")));
        }
        0
    };
    let all = Tensor::matrix(rows, w, values)?;
    if k == 0 {
        return Dataset::new(None, all);
    }
    let mut xs = Vec::with_capacity(rows * k);
    let mut ys = Vec::with_capacity(rows * d);
    for row in all.iter_rows() {
        xs.extend_from_slice(&row[..k]);
        ys.extend_from_slice(&row[k..]);
    }
    Dataset::new(Some(Tensor::matrix(rows, k, xs)?), Tensor::matrix(rows, d, ys)?)
}

/// Writes a dataset with a `x_0..,y_0..` header. Values use Rust's shortest
/// round-trip formatting, so [`load_csv`] reads back identical doubles.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e.to_string()))?;
    let k = data.dim_x();
    let header: Vec<String> = (0..k)
        .map(|i| format!("x_{i}"))
        .chain((0..data.dim_y()).map(|i| format!("y_{i}")))
        .collect();
    let io = |e: csv::Error| csv_err(path, 0, e.to_string());
    w.write_record(&header).map_err(io)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(x) = &data.x {
            rec.extend(x.row(i).iter().map(f64::to_string));
        }
        rec.extend(data.y.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
