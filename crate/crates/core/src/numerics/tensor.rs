//! Dense row-major tensors of `f64`.

use crate::error::{Error, Result};

/// Dense n-dimensional real array stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::Dimension("tensor needs at least one dimension".into()));
    }
    let mut n: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::Dimension(format!("zero-sized dimension in {dims:?}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::Dimension(format!("dimensions {dims:?} overflow")))?;
    }
    Ok(n)
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = checked_len(&dims)?;
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = checked_len(dims).expect("zeros: invalid dims");
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(dims);
        t.data.iter_mut().for_each(|v| *v = value);
        t
    }

    /// Builds a `rows × cols` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Tensor::new(vec![n], values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        let n = checked_len(&dims)?;
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            d => Err(Error::Dimension(format!("expected a matrix, got dims {d:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    pub fn cols(&self) -> usize {
        self.dims[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn at2_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let c = self.cols();
        &mut self.data[i * c + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    fn same_dims(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "{op}: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_dims(other, "add")?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_dims(other, "sub")?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_dims(other, "add_assign")?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &Tensor) -> Result<()> {
        self.same_dims(other, "axpy")?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += s * b);
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_dims(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (r, k) = self.shape2()?;
        let (k2, c) = other.shape2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: {r}x{k} · {k2}x{c}"
            )));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * c..(i + 1) * c];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * c..(p + 1) * c];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![r, c], out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (k, r) = self.shape2()?;
        let (k2, c) = other.shape2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "t_matmul: ({k}x{r})ᵀ · {k2}x{c}"
            )));
        }
        let mut out = vec![0.0; r * c];
        for p in 0..k {
            let a_row = &self.data[p * r..(p + 1) * r];
            let b_row = &other.data[p * c..(p + 1) * c];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * c..(i + 1) * c];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![r, c], out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (r, k) = self.shape2()?;
        let (c, k2) = other.shape2()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_t: {r}x{k} · ({c}x{k2})ᵀ"
            )));
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..c {
                let b_row = &other.data[j * k..(j + 1) * k];
                out[i * c + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        Tensor::new(vec![r, c], out)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let c = parts
            .first()
            .ok_or_else(|| Error::Dimension("vstack of nothing".into()))?
            .shape2()?
            .1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = p.shape2()?;
            if pc != c {
                return Err(Error::Dimension(format!("vstack: {pc} vs {c} columns")));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![rows, c], data)
    }

    /// Rows `start..end` of a matrix.
    pub fn row_slice(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        if start >= end || end > r {
            return Err(Error::Dimension(format!("row slice {start}..{end} of {r}")));
        }
        Tensor::new(vec![end - start, c], self.data[start * c..end * c].to_vec())
    }

    /// Gathers the listed rows of a matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Dimension(format!("row {i} out of {r}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![idx.len(), c], data)
    }

    /// Mean over rows of a matrix, giving a vector of length `cols`.
    pub fn mean_rows(&self) -> Result<Vec<f64>> {
        let (r, c) = self.shape2()?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        Ok(out)
    }
}

/// Complex tensor stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    dims: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(dims: Vec<usize>, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        let n = checked_len(&dims)?;
        if re.len() != n || im.len() != n {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {n} values per plane, got {} and {}",
                re.len(),
                im.len()
            )));
        }
        Ok(ComplexTensor { dims, re, im })
    }

    pub fn from_real(t: &Tensor) -> Self {
        ComplexTensor {
            dims: t.dims.clone(),
            re: t.data.clone(),
            im: vec![0.0; t.data.len()],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    pub fn planes_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn real_part(&self) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.re.clone(),
        }
    }

    pub fn imag_part(&self) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.im.clone(),
        }
    }

    pub fn abs(&self) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.re.iter().zip(&self.im).map(|(r, i)| r.hypot(*i)).collect(),
        }
    }

    /// Per-element argument in `(-π, π]`.
    pub fn arg(&self) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.re.iter().zip(&self.im).map(|(r, i)| i.atan2(*r)).collect(),
        }
    }
}
