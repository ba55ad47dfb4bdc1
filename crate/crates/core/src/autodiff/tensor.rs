use crate::autodiff::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ValueCount {
                shape,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "tensor shapes must be positive: {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, S::one())
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `[rows.len(), width]` matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::RaggedRows);
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), width], data)
    }

    pub fn row_vector(values: Vec<S>) -> Result<Self> {
        Self::new(vec![1, values.len()], values)
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| S::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> S {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Row count when viewed as a matrix (leading dims collapsed).
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get2(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::of(self.data.len() as f64)
    }

    pub fn sq_norm(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let c = self.cols();
        Self {
            shape: vec![end - start, c],
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn stack_rows(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyConcat)?;
        let c = first.cols();
        let mut data = Vec::with_capacity(parts.iter().map(Self::numel).sum());
        for p in parts {
            if p.shape.len() != 2 || p.cols() != c {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            data.extend_from_slice(&p.data);
        }
        let rows = data.len() / c;
        Self::new(vec![rows, c], data)
    }
}

/// `a[m,k] · b[k,n]`.
pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g[m,n] · bᵀ` where `b` is `[k,n]`; result `[m,k]`.
pub(crate) fn matmul_bt<S: Scalar>(g: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * k];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// `aᵀ · g` where `a` is `[m,k]` and `g` is `[m,n]`; result `[k,n]`.
pub(crate) fn matmul_at<S: Scalar>(a: &[S], g: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); k * n];
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == S::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0, 2], vec![]).is_err());
        assert!(Tensor::<f64>::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn transposed_kernels_agree_with_plain_matmul() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3x4
        let c = matmul(&a, &b, 2, 3, 4);
        // c·bᵀ via matmul_bt equals c · transpose(b)
        let mut bt = vec![0.0; 12];
        for r in 0..3 {
            for col in 0..4 {
                bt[col * 3 + r] = b[r * 4 + col];
            }
        }
        assert_eq!(matmul_bt(&c, &b, 2, 3, 4), matmul(&c, &bt, 2, 4, 3));
        let mut at = vec![0.0; 6];
        for r in 0..2 {
            for col in 0..3 {
                at[col * 2 + r] = a[r * 3 + col];
            }
        }
        assert_eq!(matmul_at(&a, &c, 2, 3, 4), matmul(&at, &c, 3, 2, 4));
    }
}
