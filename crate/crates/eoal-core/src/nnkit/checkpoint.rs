//! Debug checkpoint format: one CSV row per named tensor,
//! `name,rows,cols,v0,v1,...` with row-major values. Not a stability
//! guarantee, just a diffable dump for inspection.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::matrix::Matrix;
use crate::scalar::{real, Scalar};

use super::Linear;

/// An owned named parameter tensor (vectors are `1 x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> NamedTensor<T> {
    pub fn from_linear(prefix: &str, layer: &Linear<T>) -> Self {
        NamedTensor {
            name: format!("{prefix}.weight"),
            rows: layer.weight.rows(),
            cols: layer.weight.cols(),
            values: layer.weight.data().to_vec(),
        }
    }

    pub fn from_bias(prefix: &str, layer: &Linear<T>) -> Self {
        NamedTensor {
            name: format!("{prefix}.bias"),
            rows: 1,
            cols: layer.bias.len(),
            values: layer.bias.clone(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix<T>> {
        Matrix::from_vec(self.rows, self.cols, self.values.clone())
    }
}

pub fn write_checkpoint<T: Scalar>(path: &Path, tensors: &[NamedTensor<T>]) -> Result<()> {
    let mut out = String::new();
    for t in tensors {
        if t.values.len() != t.rows * t.cols {
            return Err(Error::shape(format!(
                "tensor {} claims {}x{} but holds {} values",
                t.name,
                t.rows,
                t.cols,
                t.values.len()
            )));
        }
        out.push_str(&format!("{},{},{}", t.name, t.rows, t.cols));
        for v in &t.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<NamedTensor<T>>> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut tensors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let mut fields = line.split(',');
        let err = |msg: String| Error::Parse {
            path: display.clone(),
            row,
            message: msg,
        };
        let name = fields
            .next()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| err("missing tensor name".into()))?
            .to_string();
        let rows: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("bad row count".into()))?;
        let cols: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("bad column count".into()))?;
        let values: Vec<T> = fields
            .map(|s| {
                s.parse::<f64>()
                    .map(real)
                    .map_err(|_| err(format!("non-numeric value `{s}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != rows * cols {
            return Err(err(format!(
                "expected {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        tensors.push(NamedTensor {
            name,
            rows,
            cols,
            values,
        });
    }
    Ok(tensors)
}
