//! CSV ingestion and export of datasets.
//!
//! Header `f0,…,f{n_f-1},label` in index mode or `f0,…,f{n_f-1},c0,…,c{n_c-1}`
//! in one-hot mode. Values are written with Rust's shortest round-trip
//! formatting, so save followed by load reproduces every bit.

use std::io::Read;
use std::path::Path;

use layertime_core::data::{one_hot, one_hot_class, Dataset, Provenance};
use layertime_core::linalg::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// One integer class column.
    Index,
    /// `n_c` columns holding a one-hot row.
    OneHot,
}

#[derive(Debug, thiserror::Error)]
pub enum DataIoError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    /// `row` counts data rows from 1; the header is row 0.
    #[error("{path}, row {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn parse_field(path: &str, row: usize, col: usize, field: &str) -> Result<f64, DataIoError> {
    let v: f64 = field.trim().parse().map_err(|_| DataIoError::Parse {
        path: path.into(),
        row,
        message: format!("column {col}: `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(DataIoError::Parse {
            path: path.into(),
            row,
            message: format!("column {col}: non-finite value `{field}`"),
        });
    }
    Ok(v)
}

/// Reads a dataset with `n_f` features and `n_c` classes.
pub fn load_csv(
    path: &Path,
    n_f: usize,
    n_c: usize,
    mode: LabelMode,
    normalize: bool,
) -> Result<Dataset, DataIoError> {
    let name = path.display().to_string();
    let io_err = |source| DataIoError::Io {
        path: name.clone(),
        source,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err)?;
    let sha256 = hex::encode(Sha256::digest(&bytes));

    let label_cols = match mode {
        LabelMode::Index => 1,
        LabelMode::OneHot => n_c,
    };
    let width = n_f + label_cols;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header_len = reader
        .headers()
        .map_err(|e| DataIoError::Parse {
            path: name.clone(),
            row: 0,
            message: e.to_string(),
        })?
        .len();
    if header_len != width {
        return Err(DataIoError::Parse {
            path: name.clone(),
            row: 0,
            message: format!("header has {header_len} columns, expected {width}"),
        });
    }

    let mut features = Vec::new();
    let mut classes = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataIoError::Parse {
            path: name.clone(),
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataIoError::Parse {
                path: name.clone(),
                row,
                message: format!("{} fields, expected {width}", record.len()),
            });
        }
        for (col, field) in record.iter().take(n_f).enumerate() {
            features.push(parse_field(&name, row, col, field)?);
        }
        let class = match mode {
            LabelMode::Index => {
                let field = record[n_f].trim();
                let k: usize = field.parse().map_err(|_| DataIoError::Parse {
                    path: name.clone(),
                    row,
                    message: format!("label `{field}` is not a class index"),
                })?;
                if k >= n_c {
                    return Err(DataIoError::Parse {
                        path: name.clone(),
                        row,
                        message: format!("class index {k} is out of range for {n_c} classes"),
                    });
                }
                k
            }
            LabelMode::OneHot => {
                let vals = record
                    .iter()
                    .skip(n_f)
                    .enumerate()
                    .map(|(j, f)| parse_field(&name, row, n_f + j, f))
                    .collect::<Result<Vec<_>, _>>()?;
                one_hot_class(&vals).ok_or_else(|| DataIoError::Parse {
                    path: name.clone(),
                    row,
                    message: "label columns are not one-hot".into(),
                })?
            }
        };
        classes.push(class);
    }
    if classes.is_empty() {
        return Err(DataIoError::Invalid {
            path: name,
            message: "no data rows".into(),
        });
    }
    let mut features = Matrix::from_vec(classes.len(), n_f, features);
    if normalize {
        normalize_columns(&mut features);
    }
    Dataset::new(
        features,
        one_hot(&classes, n_c),
        None,
        Provenance::Loaded {
            path: name.clone(),
            sha256,
        },
    )
    .map_err(|e| DataIoError::Invalid {
        path: name,
        message: e.to_string(),
    })
}

/// Min-max scales each column to `[0, 1]`; constant columns become 0.
pub fn normalize_columns(m: &mut Matrix) {
    for j in 0..m.cols() {
        let (lo, hi) = (0..m.rows()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            (lo.min(m[(i, j)]), hi.max(m[(i, j)]))
        });
        let span = hi - lo;
        for i in 0..m.rows() {
            m[(i, j)] = if span > 0.0 { (m[(i, j)] - lo) / span } else { 0.0 };
        }
    }
}

/// Writes `ds` in the given label mode.
pub fn save_csv(ds: &Dataset, path: &Path, mode: LabelMode) -> anyhow::Result<()> {
    let mut header: Vec<String> = (0..ds.n_features()).map(|j| format!("f{j}")).collect();
    match mode {
        LabelMode::Index => header.push("label".into()),
        LabelMode::OneHot => header.extend((0..ds.n_classes()).map(|j| format!("c{j}"))),
    }
    let classes = ds.classes();
    crate::artifacts::write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&header)?;
        for (k, &class) in classes.iter().enumerate() {
            let mut row: Vec<String> = ds.features.row(k).iter().map(|v| v.to_string()).collect();
            match mode {
                LabelMode::Index => row.push(class.to_string()),
                LabelMode::OneHot => row.extend(ds.labels.row(k).iter().map(|v| v.to_string())),
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    })
}
