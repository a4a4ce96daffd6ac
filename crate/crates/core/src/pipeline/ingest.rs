//! Loading of observed matrix time series.
//!
//! A layout descriptor says where the matrices live and which file axis is the
//! row (`p`) and column (`q`) dimension. Two shapes are supported: one CSV
//! file per time point holding a `p x q` block, or a single long CSV with
//! `(time, row, column, value)` columns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `log(x + 1)` entrywise, then lag-one differences along time.
    #[default]
    LogDiff,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// One file per time point, in time order; rows are the `p` axis.
    MatrixFiles {
        files: Vec<PathBuf>,
        #[serde(default)]
        header: bool,
        #[serde(default)]
        row_labels: bool,
    },
    /// A long table; the named columns give time, row and column labels.
    /// Labels are sorted (numerically when every label parses as a number).
    Long {
        file: PathBuf,
        time: String,
        row: String,
        column: String,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    pub source: Source,
    #[serde(default)]
    pub transform: Transform,
}

impl Layout {
    pub fn load(path: &Path) -> Result<Layout> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: invalid layout: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RealData {
    pub dataset: Dataset,
    pub row_labels: Vec<String>,
    pub column_labels: Vec<String>,
    /// Time labels after the transform (the first point is lost to differencing).
    pub time_labels: Vec<String>,
}

fn parse_cell(raw: &str, file: &Path, row: usize, col: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        Error::Data(format!(
            "{}: row {row}, column {col}: non-numeric cell {raw:?}",
            file.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "{}: row {row}, column {col}: non-finite value {raw:?}",
            file.display()
        )));
    }
    Ok(v)
}

fn reader(path: &Path, header: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn read_matrix(path: &Path, header: bool, row_labels: bool) -> Result<(DMatrix<f64>, Vec<String>, Vec<String>)> {
    let mut rdr = reader(path, header)?;
    let skip = usize::from(row_labels);
    let mut col_names = Vec::new();
    if header {
        col_names = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .skip(skip)
            .map(str::to_string)
            .collect();
    }
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        // 1-based line numbers as seen in an editor.
        let line = r + 1 + usize::from(header);
        let cells: Vec<&str> = rec.iter().collect();
        if cells.len() <= skip {
            return Err(Error::Data(format!("{}: row {line}: no values", path.display())));
        }
        let w = cells.len() - skip;
        match width {
            None => width = Some(w),
            Some(expected) if expected != w => {
                return Err(Error::Data(format!(
                    "{}: row {line}: ragged row with {w} values, expected {expected}",
                    path.display()
                )))
            }
            _ => {}
        }
        if row_labels {
            names.push(cells[0].to_string());
        }
        for (c, raw) in cells[skip..].iter().enumerate() {
            values.push(parse_cell(raw, path, line, c + 1 + skip)?);
        }
    }
    let width = width.ok_or_else(|| Error::Data(format!("{}: no data rows", path.display())))?;
    let rows = values.len() / width;
    if header && col_names.len() != width {
        return Err(Error::Data(format!(
            "{}: header has {} columns, rows have {width}",
            path.display(),
            col_names.len()
        )));
    }
    Ok((DMatrix::from_row_slice(rows, width, &values), names, col_names))
}

fn sort_labels(labels: Vec<String>) -> Vec<String> {
    let mut labels = labels;
    if labels.iter().all(|l| l.trim().parse::<f64>().is_ok()) {
        labels.sort_by(|a, b| {
            let (x, y): (f64, f64) = (a.trim().parse().unwrap(), b.trim().parse().unwrap());
            x.total_cmp(&y)
        });
    } else {
        labels.sort();
    }
    labels
}

/// Matrices in time order with time, row and column labels.
type Series = (Vec<DMatrix<f64>>, Vec<String>, Vec<String>, Vec<String>);

fn read_long(path: &Path, names: [&str; 4]) -> Result<Series> {
    let mut rdr = reader(path, true)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut idx = [0usize; 4];
    for (slot, name) in idx.iter_mut().zip(names) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!("{}: no column named {name:?}", path.display()))
        })?;
    }
    let mut cells: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = r + 2;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: row {line}: ragged row with {} fields, expected {}",
                path.display(),
                rec.len(),
                headers.len()
            )));
        }
        let key = (rec[idx[0]].to_string(), rec[idx[1]].to_string(), rec[idx[2]].to_string());
        let v = parse_cell(&rec[idx[3]], path, line, idx[3] + 1)?;
        times.push(key.0.clone());
        rows.push(key.1.clone());
        cols.push(key.2.clone());
        if cells.insert(key.clone(), v).is_some() {
            return Err(Error::Data(format!(
                "{}: row {line}: duplicate cell (time {}, row {}, column {})",
                path.display(),
                key.0,
                key.1,
                key.2
            )));
        }
    }
    let dedup = |v: Vec<String>| {
        let mut v = sort_labels(v);
        v.dedup();
        v
    };
    let (times, rows, cols) = (dedup(times), dedup(rows), dedup(cols));
    let mut mats = Vec::with_capacity(times.len());
    for t in &times {
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                let key = (t.clone(), r.clone(), c.clone());
                m[(i, j)] = *cells.get(&key).ok_or_else(|| {
                    Error::Data(format!(
                        "{}: missing cell (time {t}, row {r}, column {c})",
                        path.display()
                    ))
                })?;
            }
        }
        mats.push(m);
    }
    Ok((mats, times, rows, cols))
}

/// Applies `log(x + 1)` and lag-one differencing. Errors carry the time index
/// and 1-based matrix coordinates of the offending entry.
pub fn log_diff(mats: &[DMatrix<f64>], labels: &[String]) -> Result<Vec<DMatrix<f64>>> {
    let mut logged = Vec::with_capacity(mats.len());
    for (t, m) in mats.iter().enumerate() {
        if let Some((k, &x)) = m.iter().enumerate().find(|(_, x)| **x <= -1.0) {
            let (i, j) = (k % m.nrows(), k / m.nrows());
            let at = labels.get(t).map(String::as_str).unwrap_or("?");
            return Err(Error::Data(format!(
                "time {at}: row {}, column {}: value {x} <= -1, log(x + 1) undefined",
                i + 1,
                j + 1
            )));
        }
        logged.push(m.map(|x| (x + 1.0).ln()));
    }
    Ok(logged.windows(2).map(|w| &w[1] - &w[0]).collect())
}

/// Reads the series described by `layout`; relative paths resolve against `dir`.
pub fn ingest_real(dir: &Path, layout: &Layout) -> Result<RealData> {
    let (mats, times, rows, cols) = match &layout.source {
        Source::MatrixFiles {
            files,
            header,
            row_labels,
        } => {
            if files.is_empty() {
                return Err(Error::Config("layout lists no files".into()));
            }
            let mut mats = Vec::with_capacity(files.len());
            let mut row_names = Vec::new();
            let mut col_names = Vec::new();
            for f in files {
                let path = dir.join(f);
                let (m, r, c) = read_matrix(&path, *header, *row_labels)?;
                if let Some(first) = mats.first() {
                    let first: &DMatrix<f64> = first;
                    if first.shape() != m.shape() {
                        return Err(Error::Data(format!(
                            "{}: shape {}x{} differs from {}x{} at time 0",
                            path.display(),
                            m.nrows(),
                            m.ncols(),
                            first.nrows(),
                            first.ncols()
                        )));
                    }
                } else {
                    row_names = r;
                    col_names = c;
                }
                mats.push(m);
            }
            let (p, q) = mats[0].shape();
            if row_names.is_empty() {
                row_names = (1..=p).map(|i| i.to_string()).collect();
            }
            if col_names.is_empty() {
                col_names = (1..=q).map(|j| j.to_string()).collect();
            }
            let times = files.iter().map(|f| f.display().to_string()).collect();
            (mats, times, row_names, col_names)
        }
        Source::Long {
            file,
            time,
            row,
            column,
            value,
        } => read_long(&dir.join(file), [time, row, column, value])?,
    };
    let (samples, time_labels) = match layout.transform {
        Transform::LogDiff => (log_diff(&mats, &times)?, times[1.min(times.len())..].to_vec()),
        Transform::None => (mats, times),
    };
    if samples.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 observations after the transform, got {}",
            samples.len()
        )));
    }
    Ok(RealData {
        dataset: Dataset::new(samples)?,
        row_labels: rows,
        column_labels: cols,
        time_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        fs::write(dir.join(name), body).unwrap();
        PathBuf::from(name)
    }

    fn files_layout(files: Vec<PathBuf>) -> Layout {
        Layout {
            source: Source::MatrixFiles {
                files,
                header: false,
                row_labels: false,
            },
            transform: Transform::LogDiff,
        }
    }

    #[test]
    fn forty_points_give_thirty_nine() {
        let dir = tempfile::tempdir().unwrap();
        let files: Vec<PathBuf> = (0..40)
            .map(|t| write(dir.path(), &format!("y{t}.csv"), &format!("{t},1,2\n3,{},0\n", t * t)))
            .collect();
        let data = ingest_real(dir.path(), &files_layout(files)).unwrap();
        assert_eq!(data.dataset.n(), 39);
        assert_eq!((data.dataset.p(), data.dataset.q()), (2, 3));
        let x = &data.dataset.samples()[0];
        assert!((x[(0, 0)] - (2f64.ln() - 1f64.ln())).abs() < 1e-15);
        assert_eq!(x[(1, 2)], 0.0);
    }

    #[test]
    fn constant_series_differences_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let files: Vec<PathBuf> = (0..3).map(|t| write(dir.path(), &format!("c{t}.csv"), "0,5\n7,1\n")).collect();
        let data = ingest_real(dir.path(), &files_layout(files)).unwrap();
        assert!(data.dataset.samples().iter().all(|m| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn bad_values_report_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "a.csv", "1,2\n3,4\n");
        let b = write(dir.path(), "b.csv", "1,x\n3,4\n");
        let err = ingest_real(dir.path(), &files_layout(vec![a.clone(), b])).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data(_)));
        assert!(msg.contains("b.csv") && msg.contains("row 1") && msg.contains("column 2"), "{msg}");

        let c = write(dir.path(), "c.csv", "1,2\n3,-1\n");
        let msg = ingest_real(dir.path(), &files_layout(vec![a.clone(), c])).unwrap_err().to_string();
        assert!(msg.contains("row 2, column 2"), "{msg}");

        let d = write(dir.path(), "d.csv", "1,2\n3\n");
        let msg = ingest_real(dir.path(), &files_layout(vec![a.clone(), d])).unwrap_err().to_string();
        assert!(msg.contains("ragged") && msg.contains("row 2"), "{msg}");

        let e = write(dir.path(), "e.csv", "1,2,3\n3,4,5\n");
        assert!(matches!(ingest_real(dir.path(), &files_layout(vec![a, e])), Err(Error::Data(_))));
    }

    #[test]
    fn long_layout_matches_matrix_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut long = String::from("year,region,product,value\n");
        let mut files = Vec::new();
        for t in 0..4 {
            let mut body = String::new();
            for i in 0..2 {
                let row: Vec<String> = (0..3).map(|j| ((t + 1) * (i + 2) + j * t).to_string()).collect();
                for (j, v) in row.iter().enumerate() {
                    long.push_str(&format!("{},{},{},{v}\n", 2000 + t, i + 1, j + 1));
                }
                body.push_str(&row.join(","));
                body.push('\n');
            }
            files.push(write(dir.path(), &format!("m{t}.csv"), &body));
        }
        let long_file = write(dir.path(), "long.csv", &long);
        let a = ingest_real(dir.path(), &files_layout(files)).unwrap();
        let layout = Layout {
            source: Source::Long {
                file: long_file,
                time: "year".into(),
                row: "region".into(),
                column: "product".into(),
                value: "value".into(),
            },
            transform: Transform::LogDiff,
        };
        let b = ingest_real(dir.path(), &layout).unwrap();
        assert_eq!(a.dataset.samples(), b.dataset.samples());
        assert_eq!(b.time_labels, vec!["2001", "2002", "2003"]);
    }

    #[test]
    fn layout_json() {
        let layout: Layout = serde_json::from_str(
            r#"{"source": {"kind": "matrix_files", "files": ["a.csv"], "header": true}, "transform": "none"}"#,
        )
        .unwrap();
        assert_eq!(layout.transform, Transform::None);
        assert!(serde_json::from_str::<Layout>(r#"{"source": {"kind": "long", "file": "x"}}"#).is_err());
    }
}
