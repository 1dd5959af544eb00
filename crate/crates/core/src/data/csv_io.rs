use std::fs::File;
use std::path::Path;

use super::{DataError, RawSeries};
use crate::tensor::Tensor;

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DataError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DataError::Csv {
            path: path.to_path_buf(),
            detail: format!("{other:?}"),
        },
    }
}

fn is_number(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok()
}

/// Reads a rectangular numeric CSV.
///
/// A first row containing any non-numeric cell is taken as a header. A
/// first column whose first data cell is not numeric is taken as a
/// timestamp column and kept aside. Rows are reported 1-based as they
/// appear in the file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect::<Vec<String>>());
    }
    if rows.is_empty() {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    let width = rows[0].len();
    let has_header = !rows[0].iter().skip(1).all(|c| is_number(c)) || (width == 1 && !is_number(&rows[0][0]));
    let first_data = usize::from(has_header);
    if rows.len() <= first_data {
        return Err(DataError::Empty(path.to_path_buf()));
    }
    let has_time = width > 1 && !is_number(&rows[first_data][0]);
    let skip = usize::from(has_time);
    let channels = width - skip;
    if channels == 0 {
        return Err(DataError::Invalid("no numeric columns".into()));
    }
    let names: Vec<String> = if has_header {
        rows[0][skip..].to_vec()
    } else {
        (0..channels).map(|i| format!("c{i}")).collect()
    };

    let mut values = Vec::with_capacity((rows.len() - first_data) * channels);
    let mut stamps = Vec::new();
    for (i, row) in rows.iter().enumerate().skip(first_data) {
        if row.len() != width {
            return Err(DataError::Ragged {
                row: i + 1,
                expected: width,
                found: row.len(),
            });
        }
        if has_time {
            stamps.push(row[0].clone());
        }
        for (j, cell) in row[skip..].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                row: i + 1,
                column: names[j].clone(),
                value: cell.clone(),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    row: i + 1,
                    column: names[j].clone(),
                    value: cell.clone(),
                });
            }
            values.push(v);
        }
    }
    let len = values.len() / channels;
    let values = Tensor::new([len, channels], values).map_err(|e| DataError::Invalid(e.to_string()))?;
    Ok(RawSeries {
        names,
        values,
        timestamps: has_time.then_some(stamps),
    })
}

/// Writes a header row of channel names followed by the values.
pub fn write_csv(path: impl AsRef<Path>, series: &RawSeries) -> Result<(), DataError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let c = series.channels();
    let mut header = Vec::with_capacity(c + 1);
    if series.timestamps.is_some() {
        header.push("date".to_string());
    }
    header.extend(series.names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (t, row) in series.values.data().chunks_exact(c).enumerate() {
        let mut rec = Vec::with_capacity(c + 1);
        if let Some(ts) = &series.timestamps {
            rec.push(ts[t].clone());
        }
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
