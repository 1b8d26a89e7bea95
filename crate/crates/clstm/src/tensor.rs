//! Dense row-major tensors over `f64` and the handful of operations the
//! model needs: matrix-vector products, elementwise maps and arithmetic.

use crate::error::{Error, Result};

/// Dense n-dimensional array, row-major, 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dimension("Tensor::new", &[n], &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dimension("Tensor::from_rows", &[c], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![r, c],
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Element of a 2-D tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Row slice of a 2-D tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn check_same_shape(context: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::dimension(context, &a.shape, &b.shape));
    }
    Ok(())
}

/// `A x` for a 2-D `A` of shape `[r, c]` and a vector `x` of length `c`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || x.shape.len() != 1 || a.shape[1] != x.shape[0] {
        return Err(Error::dimension("matvec", &a.shape, &x.shape));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; r];
    for i in 0..r {
        let row = &a.data[i * c..(i + 1) * c];
        out[i] = dot(row, &x.data);
    }
    Ok(Tensor::from_vec(out))
}

/// `A^T v` for a 2-D `A` of shape `[r, c]` and a vector `v` of length `r`.
pub fn matvec_t(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    if a.shape.len() != 2 || v.shape.len() != 1 || a.shape[0] != v.shape[0] {
        return Err(Error::dimension("matvec_t", &a.shape, &v.shape));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; c];
    for i in 0..r {
        let row = &a.data[i * c..(i + 1) * c];
        let vi = v.data[i];
        for k in 0..c {
            out[k] += row[k] * vi;
        }
    }
    Ok(Tensor::from_vec(out))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid_scalar(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("add", a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

pub fn multiply(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("multiply", a, b)?;
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// `acc += x` over flat slices.
pub fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}
