//! Dense row-major `f64` tensors. Rank 0 (scalar), 1, and 2 cover everything
//! the lab's feedforward networks need.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Row count below which matrix products stay on one thread; parallel
/// dispatch overhead dominates for the lab's minibatch-sized operands.
#[cfg(feature = "parallel")]
const PAR_MIN_ROWS: usize = 64;

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor_new",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// The single value of a rank-0 (or one-element) tensor.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Shape {
                op: "scalar_value",
                detail: format!("tensor of shape {:?} is not a scalar", self.shape),
            })
        }
    }

    pub fn rows(&self) -> Result<usize> {
        self.dims2().map(|(r, _)| r)
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.shape.len() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(Error::Shape {
                op: "dims2",
                detail: format!("expected rank 2, got shape {:?}", self.shape),
            })
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// Matrix product, parallelised over output rows when the `parallel`
    /// feature is on and the operand is large enough. Each output element is
    /// a sequential dot product, so results are bit-identical to
    /// [`Tensor::matmul_serial`] regardless of thread count.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        #[cfg(feature = "parallel")]
        {
            let (m, _) = self.dims2()?;
            if m >= PAR_MIN_ROWS {
                return self.matmul_parallel(other);
            }
        }
        self.matmul_serial(other)
    }

    pub fn matmul_serial(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("[{m}x{k}] . [{k2}x{n}]"),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            matmul_row(&self.data[i * k..(i + 1) * k], &other.data, n, &mut out[i * n..(i + 1) * n]);
        }
        Tensor::matrix(m, n, out)
    }

    #[cfg(feature = "parallel")]
    pub fn matmul_parallel(&self, other: &Tensor) -> Result<Tensor> {
        use rayon::prelude::*;
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("[{m}x{k}] . [{k2}x{n}]"),
            });
        }
        let mut out = vec![0.0; m * n];
        out.par_chunks_mut(n)
            .zip(self.data.par_chunks(k))
            .for_each(|(out_row, a_row)| matmul_row(a_row, &other.data, n, out_row));
        Tensor::matrix(m, n, out)
    }

    /// Vertical concatenation of two matrices with equal column counts.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        let (r1, c1) = self.dims2()?;
        let (r2, c2) = other.dims2()?;
        if c1 != c2 {
            return Err(Error::Shape {
                op: "concat_rows",
                detail: format!("{c1} vs {c2} columns"),
            });
        }
        let mut data = Vec::with_capacity((r1 + r2) * c1);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor::matrix(r1 + r2, c1, data)
    }
}

fn matmul_row(a_row: &[f64], b: &[f64], n: usize, out_row: &mut [f64]) {
    for (l, &a) in a_row.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let b_row = &b[l * n..(l + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += a * bv;
        }
    }
}
