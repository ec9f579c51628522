//! JSON file formats for tensors, models and run manifests.
//!
//! Tensor: `{"dims": [..], "data": [..]}` with data in natural order (first
//! index fastest). Model: `{"dims": [..], "rank": R, "factors": [[..], ..]}`
//! with each factor stored column-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{PcpError, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{DenseTensor, Matrix};

/// Integral values are written as JSON integers so count files survive a
/// read/write cycle byte for byte.
fn number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        Value::from(v as i64)
    } else {
        Value::from(v)
    }
}

#[derive(Deserialize)]
struct TensorFile {
    dims: Vec<usize>,
    data: Vec<f64>,
}

pub fn tensor_from_str(s: &str) -> Result<DenseTensor> {
    let f: TensorFile = serde_json::from_str(s)?;
    DenseTensor::new(f.dims, f.data)
}

pub fn tensor_to_string(t: &DenseTensor) -> String {
    let v = serde_json::json!({
        "dims": t.dims(),
        "data": t.data().iter().map(|&x| number(x)).collect::<Vec<_>>(),
    });
    v.to_string()
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let f: TensorFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    DenseTensor::new(f.dims, f.data)
}

/// Reads a tensor and checks that every entry is a non-negative integer.
pub fn read_counts(path: &Path) -> Result<DenseTensor> {
    let t = read_tensor(path)?;
    t.validate_counts()?;
    Ok(t)
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(tensor_to_string(t).as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dims: Vec<usize>,
    rank: usize,
    factors: Vec<Vec<f64>>,
}

pub fn model_from_str(s: &str) -> Result<KruskalModel> {
    model_from_file(serde_json::from_str(s)?)
}

fn model_from_file(f: ModelFile) -> Result<KruskalModel> {
    if f.factors.len() != f.dims.len() {
        return Err(PcpError::LengthMismatch {
            what: "factor list",
            expected: f.dims.len(),
            found: f.factors.len(),
        });
    }
    let factors = f
        .dims
        .iter()
        .zip(&f.factors)
        .map(|(&n, data)| {
            if data.len() != n * f.rank {
                return Err(PcpError::LengthMismatch {
                    what: "factor entries",
                    expected: n * f.rank,
                    found: data.len(),
                });
            }
            Ok(Matrix::from_column_slice(n, f.rank, data))
        })
        .collect::<Result<Vec<_>>>()?;
    KruskalModel::new(factors)
}

pub fn model_to_string(m: &KruskalModel) -> String {
    let f = ModelFile {
        dims: m.dims(),
        rank: m.rank(),
        factors: m.factors().iter().map(|a| a.as_slice().to_vec()).collect(),
    };
    serde_json::to_string(&f).expect("plain data")
}

pub fn read_model(path: &Path) -> Result<KruskalModel> {
    model_from_file(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_model(path: &Path, m: &KruskalModel) -> Result<()> {
    std::fs::write(path, model_to_string(m) + "\n")?;
    Ok(())
}

/// Record written next to the outputs of every command-line run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub exit_code: i32,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
