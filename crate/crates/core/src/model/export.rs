//! Spatial filter matrices of both encoders, and their CSV form.

use std::path::Path;
use std::str::FromStr;

use super::StaFlowParams;
use crate::error::{csv_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Filter-by-channel matrices `[S1][C]` of the first convolution of each encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights<T> {
    pub state: Option<Vec<Vec<T>>>,
    pub flow: Option<Vec<Vec<T>>>,
}

fn squeeze<T: Scalar>(kernel: &Tensor<T>) -> Vec<Vec<T>> {
    // [S1, 1, C, 1]
    let c = kernel.shape()[2];
    kernel.data().chunks(c).map(<[T]>::to_vec).collect()
}

impl<T: Scalar> StaFlowParams<T> {
    pub fn export_spatial_weights(&self) -> SpatialWeights<T> {
        SpatialWeights {
            state: self.state.as_ref().map(|e| squeeze(&e.spatial)),
            flow: self.flow.as_ref().map(|e| squeeze(&e.spatial)),
        }
    }
}

/// One row per filter: `filter,<channel names...>` header, then the filter
/// index and its weights. Values use the shortest exact decimal form, so the
/// file reads back bitwise.
pub fn write_weights_csv<T: Scalar>(path: &Path, matrix: &[Vec<T>], channel_names: Option<&[String]>) -> Result<()> {
    let c = matrix.first().map_or(0, Vec::len);
    if let Some(names) = channel_names {
        if names.len() != c {
            return Err(Error::Usage(format!("{} channel names for {c} channels", names.len())));
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["filter".to_string()];
    match channel_names {
        Some(n) => header.extend(n.iter().cloned()),
        None => header.extend((0..c).map(|i| format!("ch{i}"))),
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in matrix.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a matrix written by [`write_weights_csv`]; returns it with the channel names.
pub fn read_weights_csv<T: Scalar + FromStr>(path: &Path) -> Result<(Vec<Vec<T>>, Vec<String>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let names: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        if rec.len() != names.len() + 1 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                detail: format!("{} fields, expected {}", rec.len(), names.len() + 1),
            });
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.parse::<T>()
                    .map_err(|_| Error::Parse { file: path.to_path_buf(), line, detail: format!("bad number {f:?}") })
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    Ok((rows, names))
}
