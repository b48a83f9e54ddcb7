//! CSV stream loading: numeric feature columns followed by one label column.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stream::DatasetStream;
use crate::tensor::Tensor2D;

/// Options for [`load_stream`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Field delimiter (`b','` by default).
    pub delimiter: u8,
    /// Min–max scale every feature column into [0, 1], with the bounds
    /// fitted on the initial training segment only so the online phase
    /// leaks nothing backwards.
    pub scale_features: bool,
    /// Fraction of the stream forming the initial segment; used as the
    /// scaling-fit window when `scale_features` is set.
    pub initial_fraction: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            scale_features: false,
            initial_fraction: 0.05,
        }
    }
}

/// Reads a headerless CSV file where every column except the last is a
/// finite numeric feature and the last column is a class label. Labels are
/// mapped to dense indices in order of first appearance. The stream name is
/// the file stem.
pub fn load_stream(path: impl AsRef<Path>, options: &LoadOptions) -> Result<DatasetStream> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stream".to_string());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(options.delimiter)
        .from_path(path)
        .map_err(map_csv_error)?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();

    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(map_csv_error)?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(i + 1);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: format!(
                    "expected at least one feature column and a label, found {} field(s)",
                    record.len()
                ),
            });
        }
        let feature_count = record.len() - 1;
        if let Some(first) = rows.first() {
            if feature_count != first.len() {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "row has {} feature column(s), expected {}",
                        feature_count,
                        first.len()
                    ),
                });
            }
        }
        let mut row = Vec::with_capacity(feature_count);
        for (col, field) in record.iter().take(feature_count).enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {} is not a number: {:?}", col + 1, field),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {} is not finite: {:?}", col + 1, field),
                });
            }
            row.push(value);
        }
        let label_field = record.get(feature_count).unwrap_or("").trim().to_string();
        if label_field.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty label field".to_string(),
            });
        }
        let next = class_names.len();
        let label = *class_index.entry(label_field.clone()).or_insert_with(|| {
            class_names.push(label_field);
            next
        });
        rows.push(row);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(Error::input(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    if class_names.len() < 2 {
        return Err(Error::input(format!(
            "{} contains a single class; a stream needs at least two",
            path.display()
        )));
    }

    let mut features = Tensor2D::from_rows(&rows)?;
    if options.scale_features {
        scale_in_place(&mut features, options.initial_fraction)?;
    }
    DatasetStream::new(name, features, labels, class_names)
}

/// Min–max scales each column using bounds from the first
/// `floor(rows * fraction)` rows. Columns constant over the fit window map
/// to zero everywhere.
fn scale_in_place(features: &mut Tensor2D, fraction: f64) -> Result<()> {
    if !fraction.is_finite() || fraction <= 0.0 || fraction >= 1.0 {
        return Err(Error::config(format!(
            "scaling-fit fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let fit_rows = (features.rows() as f64 * fraction).floor() as usize;
    if fit_rows == 0 {
        return Err(Error::input(
            "stream is too short to fit feature scaling on its initial segment",
        ));
    }
    let cols = features.cols();
    let mut lo = vec![f64::INFINITY; cols];
    let mut hi = vec![f64::NEG_INFINITY; cols];
    for row in features.iter_rows().take(fit_rows) {
        for (c, &v) in row.iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
    }
    for r in 0..features.rows() {
        let row = features.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            let range = hi[c] - lo[c];
            *v = if range == 0.0 {
                0.0
            } else {
                (*v - lo[c]) / range
            };
        }
    }
    Ok(())
}

fn map_csv_error(e: csv::Error) -> Error {
    let line = match e.kind() {
        csv::ErrorKind::Utf8 { pos, .. } | csv::ErrorKind::UnequalLengths { pos, .. } => {
            pos.as_ref().map(|p| p.line() as usize)
        }
        _ => None,
    };
    match (line, e) {
        (Some(line), e) => Error::Parse {
            line,
            message: e.to_string(),
        },
        (None, e) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::input(format!("malformed CSV: {other:?}")),
        },
    }
}
